import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from utils.analysis import RunData
from utils.errors import DatasetSchemaError
from utils.tes_ingest import TesHistogram

DATASET_COLUMNS = [
    "run_id",
    "n",
    "herald_prob",
    "herald_prob_err_lo",
    "herald_prob_err_hi",
    "fidelity",
    "fidelity_err_lo",
    "fidelity_err_hi",
    "mean_photons",
]

# first data row of a CSV with a header
_FIRST_LINE = 2


def _line_numbers(mask: pd.Series) -> List[int]:
    return [int(i) + _FIRST_LINE for i in np.flatnonzero(mask.to_numpy())]


class DataProcessor:
    """Loads and validates the CSV inputs of the toolkit"""

    def __init__(self):
        self.config = Config()
        self.data_cache = {}

    def load_data(self, filepath: str) -> pd.DataFrame:
        """Load a CSV file with caching"""
        if filepath in self.data_cache:
            return self.data_cache[filepath].copy()

        if not os.path.exists(filepath):
            raise FileNotFoundError(f"Data file not found: {filepath}")

        df = pd.read_csv(filepath, comment="#", skipinitialspace=True)
        df.columns = [str(c).strip() for c in df.columns]

        self.data_cache[filepath] = df
        return df.copy()

    # ------------------------------------------------------------------
    # Heralding datasets
    # ------------------------------------------------------------------

    def load_dataset(self, filepath: str) -> List[RunData]:
        """Read a multi-run heralding dataset, one row per (run_id, n)"""
        df = self.load_data(filepath)
        missing = [c for c in DATASET_COLUMNS if c not in df.columns]
        if missing:
            raise DatasetSchemaError(f"{filepath}: missing columns {missing}", line_numbers=[1])

        df["run_id"] = df["run_id"].astype(str).str.strip()
        numeric = DATASET_COLUMNS[1:]
        converted = df[numeric].apply(pd.to_numeric, errors="coerce")
        unparsable = converted.isna() & df[numeric].notna()
        if unparsable.any(axis=None):
            raise DatasetSchemaError(
                f"{filepath}: non-numeric values", line_numbers=_line_numbers(unparsable.any(axis=1))
            )
        df[numeric] = converted

        self._check_dataset(df, filepath)

        runs = []
        for run_id, group in df.groupby("run_id", sort=False):
            group = group.sort_values("n")
            runs.append(
                RunData(
                    run_id=run_id,
                    n=group["n"].to_numpy(dtype=int),
                    herald_prob=group["herald_prob"].to_numpy(dtype=float),
                    herald_prob_err_lo=group["herald_prob_err_lo"].to_numpy(dtype=float),
                    herald_prob_err_hi=group["herald_prob_err_hi"].to_numpy(dtype=float),
                    fidelity=group["fidelity"].to_numpy(dtype=float),
                    fidelity_err_lo=group["fidelity_err_lo"].to_numpy(dtype=float),
                    fidelity_err_hi=group["fidelity_err_hi"].to_numpy(dtype=float),
                    mean_photons=float(group["mean_photons"].iloc[0]),
                )
            )
        return runs

    def _check_dataset(self, df: pd.DataFrame, filepath: str) -> None:
        checks: Dict[str, pd.Series] = {
            "n must be a non-negative integer": df["n"].isna()
            | (df["n"] < 0)
            | (df["n"] != df["n"].round()),
            "herald_prob must lie in [0, 1]": ~df["herald_prob"].between(0.0, 1.0),
            "fidelity must lie in [0, 1] or be empty": df["fidelity"].notna()
            & ~df["fidelity"].between(0.0, 1.0),
            "mean_photons must be positive": ~(df["mean_photons"] > 0.0),
            "uncertainties must be non-negative": (
                df[["herald_prob_err_lo", "herald_prob_err_hi", "fidelity_err_lo", "fidelity_err_hi"]] < 0.0
            ).any(axis=1),
            "run_id must not be empty": df["run_id"].isin(["", "nan"]),
            "duplicate (run_id, n)": df.duplicated(["run_id", "n"], keep="first"),
        }
        for message, mask in checks.items():
            if mask.any():
                raise DatasetSchemaError(f"{filepath}: {message}", line_numbers=_line_numbers(mask))

        spread = df.groupby("run_id")["mean_photons"].transform(lambda s: s.max() - s.min())
        inconsistent = spread > 1e-12 * df["mean_photons"].abs()
        if inconsistent.any():
            raise DatasetSchemaError(
                f"{filepath}: mean_photons differs within a run",
                line_numbers=_line_numbers(inconsistent),
            )

    @staticmethod
    def dataset_frame(runs: Sequence[RunData]) -> pd.DataFrame:
        """Inverse of load_dataset"""
        frames = [
            pd.DataFrame(
                {
                    "run_id": run.run_id,
                    "n": run.n,
                    "herald_prob": run.herald_prob,
                    "herald_prob_err_lo": run.herald_prob_err_lo,
                    "herald_prob_err_hi": run.herald_prob_err_hi,
                    "fidelity": run.fidelity,
                    "fidelity_err_lo": run.fidelity_err_lo,
                    "fidelity_err_hi": run.fidelity_err_hi,
                    "mean_photons": run.mean_photons,
                }
            )
            for run in runs
        ]
        return pd.concat(frames, ignore_index=True)[DATASET_COLUMNS]

    # ------------------------------------------------------------------
    # TES inputs
    # ------------------------------------------------------------------

    def load_values(self, filepath: str) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Columns value[, count]; returns the values and the counts if present"""
        df = self.load_data(filepath)
        if "value" not in df.columns:
            raise DatasetSchemaError(f"{filepath}: missing column 'value'", line_numbers=[1])

        values = pd.to_numeric(df["value"], errors="coerce")
        bad = values.isna()
        if bad.any():
            raise DatasetSchemaError(f"{filepath}: non-numeric value", line_numbers=_line_numbers(bad))

        if "count" not in df.columns:
            return values.to_numpy(dtype=float), None

        counts = pd.to_numeric(df["count"], errors="coerce")
        bad = counts.isna() | (counts < 0) | (counts != counts.round())
        if bad.any():
            raise DatasetSchemaError(
                f"{filepath}: counts must be non-negative integers", line_numbers=_line_numbers(bad)
            )
        return values.to_numpy(dtype=float), counts.to_numpy(dtype=int)

    def load_histogram(
        self, filepath: str, bins: int = 200, value_range: Optional[Tuple[float, float]] = None
    ) -> TesHistogram:
        """
        A histogram from bin centers and counts, or from raw pulse areas when
        the file has no count column.
        """
        values, counts = self.load_values(filepath)
        if counts is None:
            return TesHistogram.from_events(values, bins=bins, value_range=value_range)

        if values.size < 2 or np.any(np.diff(values) <= 0.0):
            raise DatasetSchemaError(
                f"{filepath}: histogram bin centers must be strictly increasing (at least two bins)"
            )
        midpoints = 0.5 * (values[1:] + values[:-1])
        first = values[0] - (midpoints[0] - values[0])
        last = values[-1] + (values[-1] - midpoints[-1])
        return TesHistogram.from_arrays(np.concatenate([[first], midpoints, [last]]), counts)

    def load_events(self, filepath: str) -> np.ndarray:
        """Pulse areas; a count column repeats each value"""
        values, counts = self.load_values(filepath)
        return values if counts is None else np.repeat(values, counts)

    def load_series(self, filepath: str) -> np.ndarray:
        return self.load_values(filepath)[0]

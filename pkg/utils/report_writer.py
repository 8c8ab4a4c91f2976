import json
import os
import platform
from typing import Dict, Optional

import numpy as np
import pandas as pd
import scipy

from config import Config
from utils import __version__


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def software_versions() -> Dict[str, str]:
    return {
        "toolkit": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


class ReportWriter:
    """Writes plot-ready CSV tables and JSON reports; identical inputs give identical bytes"""

    def __init__(self, output_dir: Optional[str] = None):
        self.config = Config()
        self.output_dir = output_dir or self.config.OUTPUT_DIR

    def _path(self, filename: str, extension: str) -> str:
        # Ensure filename has the expected extension
        if not filename.endswith(extension):
            filename += extension

        os.makedirs(self.output_dir, exist_ok=True)
        return os.path.join(self.output_dir, filename)

    def write_csv(self, df: pd.DataFrame, filename: str) -> str:
        """Write a table with full float precision and empty cells for NaN"""
        output_path = self._path(filename, ".csv")
        df.to_csv(output_path, index=False, float_format="%.17g", lineterminator="\n")
        return output_path

    def write_json(self, payload: Dict, filename: str, metadata: Optional[Dict] = None) -> str:
        output_path = self._path(filename, ".json")
        document = dict(payload)
        if metadata is not None:
            document = {"metadata": {**metadata, "versions": software_versions()}, **document}
        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(_jsonable(document), f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
        return output_path

"""
Transition-edge-sensor calibration.

Pulse-area histograms are fitted with one Gaussian per photon number; the
acceptance windows between neighbouring centres turn pulse areas into
photon-number counts with asymmetric error bars.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import allantools
import numpy as np
import pandas as pd
from scipy import optimize, stats
from scipy.signal import find_peaks

from config import Config
from utils.errors import MixtureFitError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TesHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.bin_edges.ndim != 1 or self.counts.ndim != 1:
            raise ValueError("bin edges and counts must be vectors")
        if self.bin_edges.size != self.counts.size + 1:
            raise ValueError(
                f"need len(edges) == len(counts) + 1, got {self.bin_edges.size} and {self.counts.size}"
            )
        if self.counts.size == 0:
            raise ValueError("histogram has no bins")
        if np.any(np.diff(self.bin_edges) <= 0.0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(self.counts < 0) or np.any(self.counts != np.round(self.counts)):
            raise ValueError("counts must be non-negative integers")

    @classmethod
    def from_arrays(cls, bin_edges, counts) -> "TesHistogram":
        return cls(
            bin_edges=np.asarray(bin_edges, dtype=float),
            counts=np.asarray(counts, dtype=float),
        )

    @classmethod
    def from_events(cls, events, bins=200, value_range: Optional[Tuple[float, float]] = None) -> "TesHistogram":
        counts, edges = np.histogram(np.asarray(events, dtype=float), bins=bins, range=value_range)
        return cls.from_arrays(edges, counts)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def occupied_bins(self) -> int:
        return int(np.count_nonzero(self.counts))

    @property
    def range(self) -> Tuple[float, float]:
        return float(self.bin_edges[0]), float(self.bin_edges[-1])


class GaussianComponent(NamedTuple):
    weight: float
    center: float
    width: float


def _window_mass(components: Sequence[GaussianComponent], boundaries: np.ndarray) -> np.ndarray:
    # mass[i, w]: probability weight of component i inside window w
    centers = np.array([c.center for c in components])[:, None]
    widths = np.array([c.width for c in components])[:, None]
    weights = np.array([c.weight for c in components])[:, None]
    cdf = stats.norm.cdf((boundaries[None, :] - centers) / widths)
    return weights * np.diff(cdf, axis=1)


@dataclass(frozen=True, eq=False)
class MixtureFit:
    """Gaussian response per photon number 0..n_peaks-1 with acceptance windows"""

    components: List[GaussianComponent]
    acceptance_windows: List[Tuple[float, float]]
    misassign_in: np.ndarray
    misassign_out: np.ndarray
    residual: float = float("nan")

    @classmethod
    def from_components(
        cls,
        components: Sequence[GaussianComponent],
        low: float,
        high: float,
        residual: float = float("nan"),
    ) -> "MixtureFit":
        components = [GaussianComponent(*map(float, c)) for c in components]
        if not components:
            raise ValueError("a mixture needs at least one component")
        centers = np.array([c.center for c in components])
        if np.any(np.diff(centers) <= 0.0):
            raise ValueError("component centers must be strictly increasing")
        if any(c.width <= 0.0 for c in components) or any(c.weight < 0.0 for c in components):
            raise ValueError("component widths must be > 0 and weights >= 0")
        if sum(c.weight for c in components) > 1.0 + 1e-9:
            raise ValueError("component weights sum to more than 1")
        if not low < high:
            raise ValueError(f"window range must be increasing, got ({low}, {high})")

        boundaries = np.concatenate([[low], 0.5 * (centers[1:] + centers[:-1]), [high]])
        windows = list(zip(boundaries[:-1].tolist(), boundaries[1:].tolist()))
        misassign_in, misassign_out = _misassignment(components, boundaries)
        return cls(
            components=components,
            acceptance_windows=windows,
            misassign_in=misassign_in,
            misassign_out=misassign_out,
            residual=float(residual),
        )

    @property
    def n_peaks(self) -> int:
        return len(self.components)

    @property
    def boundaries(self) -> np.ndarray:
        return np.array([w[0] for w in self.acceptance_windows] + [self.acceptance_windows[-1][1]])

    def to_dict(self) -> Dict:
        return {
            "components": [c._asdict() for c in self.components],
            "acceptance_windows": [list(w) for w in self.acceptance_windows],
            "misassign_in": self.misassign_in.tolist(),
            "misassign_out": self.misassign_out.tolist(),
            "residual": None if np.isnan(self.residual) else self.residual,
        }

    @classmethod
    def from_dict(cls, payload: Dict) -> "MixtureFit":
        try:
            components = [GaussianComponent(**c) for c in payload["components"]]
            low = payload["acceptance_windows"][0][0]
            high = payload["acceptance_windows"][-1][1]
        except (KeyError, IndexError, TypeError) as e:
            raise ValueError(f"malformed mixture description: {e}") from e
        residual = payload.get("residual")
        return cls.from_components(
            components, low, high, residual=float("nan") if residual is None else residual
        )


def _misassignment(components: Sequence[GaussianComponent], boundaries: np.ndarray):
    # outer windows are open-ended for the tail integrals
    open_boundaries = boundaries.astype(float).copy()
    open_boundaries[0], open_boundaries[-1] = -np.inf, np.inf
    mass = _window_mass(components, open_boundaries)

    weights = np.array([c.weight for c in components])
    own = np.diag(mass)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(weights > 0.0, 1.0 - own / weights, 0.0)
        window_total = mass.sum(axis=0)
        into = np.where(window_total > 0.0, (window_total - own) / window_total, 0.0)
    return np.clip(into, 0.0, 1.0), np.clip(out, 0.0, 1.0)


def misassignment_probabilities(fit: MixtureFit) -> Tuple[np.ndarray, np.ndarray]:
    """
    (misassign_in, misassign_out) per photon number: the chance that a click
    in a window came from another photon number, and the chance that an event
    of that photon number fell outside its window.
    """
    return _misassignment(fit.components, fit.boundaries)


# ---------------------------------------------------------------------------
# Mixture fitting
# ---------------------------------------------------------------------------


def _initial_centers(hist: TesHistogram, n_peaks: int, prominence: float) -> np.ndarray:
    peak_height = hist.counts.max()
    peaks, properties = find_peaks(hist.counts / peak_height, prominence=prominence)
    if peaks.size >= n_peaks:
        strongest = np.sort(peaks[np.argsort(properties["prominences"])[::-1][:n_peaks]])
        return hist.centers[strongest]

    logger.warning(
        "Found %d peaks above prominence %.3g, expected %d; seeding from quantiles",
        peaks.size,
        prominence,
        n_peaks,
    )
    cumulative = np.cumsum(hist.counts) / hist.total
    levels = (np.arange(n_peaks) + 0.5) / n_peaks
    return hist.centers[np.searchsorted(cumulative, levels)]


def _stick_breaking(fractions: np.ndarray) -> np.ndarray:
    """Weights w_k = v_k prod_{j<k} (1 - v_j); any v in [0, 1] gives sum(w) <= 1"""
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - fractions)[:-1]])
    return fractions * remaining


def _stick_fractions(weights: np.ndarray) -> np.ndarray:
    remaining = 1.0 - np.concatenate([[0.0], np.cumsum(weights)[:-1]])
    return weights / remaining


def _expected_counts(params: np.ndarray, edges: np.ndarray, total: float, n_peaks: int) -> np.ndarray:
    fractions, centers, widths = params[:n_peaks], params[n_peaks : 2 * n_peaks], params[2 * n_peaks :]
    weights = _stick_breaking(fractions)
    cdf = stats.norm.cdf((edges[None, :] - centers[:, None]) / widths[:, None])
    return total * (weights[:, None] * np.diff(cdf, axis=1)).sum(axis=0)


def fit_mixture(
    hist: TesHistogram,
    n_peaks: int,
    prominence: float = Config.TES_PROMINENCE,
) -> MixtureFit:
    """
    Weighted least-squares fit of n_peaks Gaussians to the bin counts,
    seeded from the most prominent local maxima.
    """
    n_peaks = int(n_peaks)
    if n_peaks < 1:
        raise ValueError(f"n_peaks must be >= 1, got {n_peaks}")
    if hist.occupied_bins < 3 * n_peaks:
        raise ValueError(
            f"{hist.occupied_bins} occupied bins cannot constrain {n_peaks} Gaussian components "
            f"(need at least {3 * n_peaks})"
        )

    low, high = hist.range
    bin_width = float(np.min(np.diff(hist.bin_edges)))
    centers = np.sort(_initial_centers(hist, n_peaks, prominence))
    if n_peaks > 1:
        spacing = float(np.min(np.diff(centers)))
    else:
        spacing = float(np.sqrt(np.average((hist.centers - centers[0]) ** 2, weights=hist.counts))) * 4
    widths = np.full(n_peaks, max(spacing / 4.0, bin_width))
    fractions = _stick_fractions(np.full(n_peaks, 0.99 / n_peaks))

    start = np.concatenate([fractions, centers, widths])
    lower = np.concatenate([np.zeros(n_peaks), np.full(n_peaks, low), np.full(n_peaks, bin_width / 10.0)])
    upper = np.concatenate([np.ones(n_peaks), np.full(n_peaks, high), np.full(n_peaks, high - low)])
    start = np.clip(start, lower, upper)

    sigma = np.sqrt(np.maximum(hist.counts, 1.0))

    def residuals(params):
        return (_expected_counts(params, hist.bin_edges, hist.total, n_peaks) - hist.counts) / sigma

    result = optimize.least_squares(residuals, start, jac="2-point", bounds=(lower, upper), method="trf")
    diagnostics = {
        "status": int(result.status),
        "message": str(result.message),
        "nfev": int(result.nfev),
        "params": result.x.tolist(),
    }
    if not result.success:
        raise MixtureFitError(f"Gaussian mixture fit did not converge: {result.message}", diagnostics)

    fractions, centers, widths = np.split(result.x, 3)
    weights = _stick_breaking(fractions)
    order = np.argsort(centers)
    weights, centers, widths = weights[order], centers[order], widths[order]

    if np.any(widths < bin_width):
        raise MixtureFitError(
            f"component width collapsed below the bin width {bin_width:.4g}: {widths.tolist()}",
            diagnostics,
        )
    if np.any(np.diff(centers) <= 0.0):
        raise MixtureFitError("two components converged onto the same center", diagnostics)

    components = [GaussianComponent(*c) for c in zip(weights, centers, widths)]
    fit = MixtureFit.from_components(components, low, high, residual=2.0 * float(result.cost))
    logger.info(
        "Fitted %d components: centers=%s, widths=%s",
        n_peaks,
        np.array2string(centers, precision=4),
        np.array2string(widths, precision=4),
    )
    return fit


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountRecord:
    """Photon-number counts with asymmetric uncertainties on the rates"""

    counts: np.ndarray
    rates: np.ndarray
    err_lo: np.ndarray
    err_hi: np.ndarray
    total: int
    overflow: int
    confidence: float

    def to_dict(self) -> Dict:
        return {
            "counts": [int(c) for c in self.counts],
            "rates": self.rates.tolist(),
            "err_lo": self.err_lo.tolist(),
            "err_hi": self.err_hi.tolist(),
            "total": int(self.total),
            "overflow": int(self.overflow),
            "confidence": self.confidence,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "n": np.arange(self.counts.size),
                "count": self.counts,
                "rate": self.rates,
                "err_lo": self.err_lo,
                "err_hi": self.err_hi,
            }
        )


def assign_counts(
    events, fit: MixtureFit, confidence: float = Config.TES_CONFIDENCE
) -> CountRecord:
    """
    Bin pulse areas into acceptance windows. A value on a shared boundary
    goes to the lower window; values outside the histogram range are
    overflow. Rates are fractions of all events. The statistical part of the
    uncertainty is a Wilson interval for a Bernoulli success probability; the
    misassignment part is p*misassign_in below and p*out/(1-out) above,
    added in quadrature.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    events = np.asarray(events, dtype=float).ravel()
    boundaries = fit.boundaries
    n_windows = fit.n_peaks

    window = np.searchsorted(boundaries, events, side="left") - 1
    window[events == boundaries[0]] = 0
    outside = (events < boundaries[0]) | (events > boundaries[-1]) | ~np.isfinite(events)
    overflow = int(np.count_nonzero(outside))
    if overflow:
        logger.warning("%d of %d events fall outside every acceptance window", overflow, events.size)

    counts = np.bincount(window[~outside], minlength=n_windows)[:n_windows]
    total = int(events.size)
    if total == 0:
        zeros = np.zeros(n_windows)
        return CountRecord(counts.astype(int), zeros, zeros.copy(), zeros.copy(), 0, 0, confidence)

    rates = counts / total
    stat_lo, stat_hi = np.empty(n_windows), np.empty(n_windows)
    for i, k in enumerate(counts):
        interval = stats.binomtest(int(k), total).proportion_ci(confidence_level=confidence, method="wilson")
        stat_lo[i] = rates[i] - interval.low
        stat_hi[i] = interval.high - rates[i]

    out = np.minimum(fit.misassign_out, 1.0 - 1e-12)
    sys_lo = rates * fit.misassign_in
    sys_hi = rates * out / (1.0 - out)
    return CountRecord(
        counts=counts.astype(int),
        rates=rates,
        err_lo=np.hypot(np.maximum(stat_lo, 0.0), sys_lo),
        err_hi=np.hypot(np.maximum(stat_hi, 0.0), sys_hi),
        total=total,
        overflow=overflow,
        confidence=float(confidence),
    )


# ---------------------------------------------------------------------------
# Drift
# ---------------------------------------------------------------------------


def allan_variance(series, block_sizes: Sequence[int]) -> np.ndarray:
    """
    Non-overlapping two-sample Allan variance for each block size: half the
    mean squared difference of consecutive block averages.
    """
    series = np.asarray(series, dtype=float).ravel()
    blocks = np.asarray(block_sizes)
    if blocks.size == 0:
        raise ValueError("no block sizes given")
    if np.any(blocks < 1) or np.any(blocks != np.round(blocks)):
        raise ValueError("block sizes must be positive integers")
    blocks = blocks.astype(int)
    too_long = blocks[2 * blocks > series.size]
    if too_long.size:
        raise ValueError(
            f"series of length {series.size} is too short for block sizes {too_long.tolist()} "
            "(need at least two blocks each)"
        )

    if np.ptp(series) == 0.0:
        return np.zeros(blocks.size)

    unique = np.unique(blocks)
    taus, deviations, _, _ = allantools.adev(series, rate=1.0, data_type="freq", taus=unique.astype(float))
    by_block = dict(zip(np.round(taus).astype(int).tolist(), (deviations**2).tolist()))
    for block in unique.tolist():
        if block not in by_block:
            # adev drops block sizes with a single difference term
            first, second = series[:block].mean(), series[block : 2 * block].mean()
            by_block[block] = 0.5 * (second - first) ** 2
    return np.array([by_block[int(b)] for b in blocks])


def allan_frame(series, block_sizes: Sequence[int]) -> pd.DataFrame:
    variance = allan_variance(series, block_sizes)
    return pd.DataFrame(
        {"block_size": np.asarray(block_sizes, dtype=int), "allan_variance": variance, "allan_deviation": np.sqrt(variance)}
    )

"""
Parameter sweeps, gain optimisation, feasibility limits and fitting of the
source/detector parameters (K, eta_i, eta_s) to measured heralding data.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import optimize

from config import Config
from utils.distributions import (
    LossModel,
    ModeSpectrum,
    mu_from_schmidt_number,
    schmidt_coefficients,
    schmidt_residual,
)
from utils.errors import ConfigError, ConvergenceError, DatasetSchemaError, NumericalError
from utils.herald import herald_probability, herald_statistics, mean_detected_photons

logger = logging.getLogger(__name__)

FIDELITY_KINDS = {
    "single_mode": "fidelity_single_mode",
    "photon_number": "fidelity_photon_number",
}

# arm whose detected mean photon number ties a run to its optical gain
MEAN_PHOTON_ARMS = ("idler", "signal")


def _parallel_map(func: Callable, items: Sequence, workers: Optional[int] = None) -> List:
    workers = Config.THREADS if workers is None else int(workers)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _fidelity_attribute(kind: str) -> str:
    if kind not in FIDELITY_KINDS:
        raise ValueError(f"fidelity kind must be one of {sorted(FIDELITY_KINDS)}, got {kind!r}")
    return FIDELITY_KINDS[kind]


def _arm_eta(loss: LossModel, arm: str) -> float:
    if arm not in MEAN_PHOTON_ARMS:
        raise ValueError(f"mean-photon arm must be one of {MEAN_PHOTON_ARMS}, got {arm!r}")
    return loss.eta_idler if arm == "idler" else loss.eta_signal


# ---------------------------------------------------------------------------
# Spectrum templates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumTemplate:
    """Shape of the Schmidt spectrum; the optical gain is supplied per evaluation"""

    mode_decay: float = 0.0
    k_max: int = Config.K_MAX
    equal_weights: bool = False
    report_residual: bool = field(default=True, compare=False)

    @classmethod
    def single_mode(cls) -> "SpectrumTemplate":
        return cls(mode_decay=0.0, k_max=1)

    @classmethod
    def from_schmidt_number(
        cls, schmidt: float, k_max: int = Config.K_MAX, report_residual: bool = True
    ) -> "SpectrumTemplate":
        return cls(
            mode_decay=mu_from_schmidt_number(schmidt),
            k_max=k_max,
            report_residual=report_residual,
        )

    @classmethod
    def equal(cls, n_modes: int) -> "SpectrumTemplate":
        return cls(mode_decay=0.0, k_max=int(n_modes), equal_weights=True)

    @cached_property
    def lambdas(self) -> np.ndarray:
        if self.equal_weights:
            if self.k_max < 1:
                raise ValueError(f"number of modes must be >= 1, got {self.k_max}")
            return np.full(self.k_max, 1.0 / np.sqrt(self.k_max))
        return schmidt_coefficients(self.mode_decay, self.k_max, report=self.report_residual)

    def at_gain(self, gain: float) -> ModeSpectrum:
        if self.equal_weights:
            return ModeSpectrum.from_lambdas(gain, self.lambdas, residual_mass=0.0)
        return ModeSpectrum.from_lambdas(
            gain,
            self.lambdas,
            mode_decay=self.mode_decay,
            residual_mass=schmidt_residual(self.mode_decay, self.k_max),
        )

    def describe(self) -> Dict:
        return {
            "mode_decay": self.mode_decay,
            "k_max": self.k_max,
            "equal_weights": self.equal_weights,
        }


def gain_for_mean_photons(template: SpectrumTemplate, eta: float, mean: float) -> float:
    """Optical gain at which eta * sum_k sinh^2(B lambda_k) equals ``mean``"""
    eta, mean = float(eta), float(mean)
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1] to match a photon number, got {eta}")
    if not mean >= 0.0:
        raise ValueError(f"mean photon number must be >= 0, got {mean}")
    if mean == 0.0:
        return 0.0

    lambdas = template.lambdas

    def excess(gain: float) -> float:
        return eta * float(np.sum(np.sinh(gain * lambdas) ** 2)) - mean

    upper = 1.0
    while excess(upper) < 0.0:
        upper *= 2.0
        if upper > 1e3:
            raise ConvergenceError(
                f"no gain reaches mean photon number {mean} at eta={eta}",
                state={"upper": upper},
            )
    return float(optimize.brentq(excess, 0.0, upper, xtol=1e-14))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Heralding probability and fidelities on a (gain, n) grid; rows index the gain"""

    gain_grid: np.ndarray
    n_list: np.ndarray
    per_n_prob: np.ndarray
    per_n_fidelity_single: np.ndarray
    per_n_fidelity_photon_number: np.ndarray
    mean_photons: np.ndarray
    mean_photons_signal: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        """Long format, one row per (B, n), ordered by B then n"""
        n_gain, n_count = self.per_n_prob.shape
        return pd.DataFrame(
            {
                "B": np.repeat(self.gain_grid, n_count),
                "mean_photons_idler": np.repeat(self.mean_photons, n_count),
                "mean_photons_signal": np.repeat(self.mean_photons_signal, n_count),
                "n": np.tile(self.n_list, n_gain),
                "p_n": self.per_n_prob.ravel(),
                "F_single": self.per_n_fidelity_single.ravel(),
                "F_photon_number": self.per_n_fidelity_photon_number.ravel(),
            }
        )

    def maxima(self) -> pd.DataFrame:
        """Grid maximum of p_n for every n"""
        rows = []
        for j, n in enumerate(self.n_list):
            i = int(np.argmax(self.per_n_prob[:, j]))
            rows.append({"n": int(n), "B": float(self.gain_grid[i]), "p_n": float(self.per_n_prob[i, j])})
        return pd.DataFrame(rows)


def _check_gain_grid(gains) -> np.ndarray:
    gains = np.atleast_1d(np.asarray(gains, dtype=float))
    if gains.ndim != 1 or gains.size == 0:
        raise ValueError("gain grid must be a non-empty vector")
    if np.any(~np.isfinite(gains)) or np.any(gains < 0.0):
        raise ValueError("gains must be finite and >= 0")
    if np.any(np.diff(gains) <= 0.0):
        raise ValueError("gain grid must be strictly increasing")
    return gains


def _check_n_list(n_list) -> np.ndarray:
    n_list = np.atleast_1d(np.asarray(n_list))
    if n_list.size == 0:
        raise ValueError("photon-number list must not be empty")
    if np.any(n_list < 0) or np.any(n_list != np.round(n_list)):
        raise ValueError("photon numbers must be non-negative integers")
    return n_list.astype(int)


def sweep_gain(
    template: SpectrumTemplate,
    loss: LossModel,
    gains,
    n_list,
    workers: Optional[int] = None,
) -> SweepResult:
    """Tabulate p_n and both fidelities at every (B, n)"""
    gains = _check_gain_grid(gains)
    n_list = _check_n_list(n_list)
    n_max = int(n_list.max())
    template.lambdas  # resolved before worker threads share the template

    def evaluate(gain: float):
        spec = template.at_gain(gain)
        stats_ = herald_statistics(spec, loss, n_max)
        return (
            stats_.herald_prob[n_list],
            stats_.fidelity_single_mode[n_list],
            stats_.fidelity_photon_number[n_list],
            mean_detected_photons(spec, loss.eta_idler),
            mean_detected_photons(spec, loss.eta_signal),
        )

    logger.info(
        "Sweeping %d gains x %d photon numbers (eta_s=%.3f, eta_i=%.3f)",
        gains.size,
        n_list.size,
        loss.eta_signal,
        loss.eta_idler,
    )
    rows = _parallel_map(evaluate, list(gains), workers)

    return SweepResult(
        gain_grid=gains,
        n_list=n_list,
        per_n_prob=np.array([r[0] for r in rows]),
        per_n_fidelity_single=np.array([r[1] for r in rows]),
        per_n_fidelity_photon_number=np.array([r[2] for r in rows]),
        mean_photons=np.array([r[3] for r in rows]),
        mean_photons_signal=np.array([r[4] for r in rows]),
    )


# ---------------------------------------------------------------------------
# Gain optimisation
# ---------------------------------------------------------------------------


class GainOptimum(NamedTuple):
    gain: float
    probability: float


def _is_unimodal(values: np.ndarray) -> bool:
    steps = np.diff(values)
    scale = max(float(np.max(np.abs(values))), np.finfo(float).tiny)
    signs = np.sign(steps[np.abs(steps) > 1e-12 * scale])
    # rising then falling: the sign sequence never goes back up
    return bool(np.all(np.diff(signs) <= 0))


def max_herald_probability(
    template: SpectrumTemplate,
    loss: LossModel,
    n: int,
    grid_points: int = Config.GAIN_GRID_POINTS,
    xtol: float = Config.GAIN_XTOL,
) -> GainOptimum:
    """
    Gain B* maximising p_n and the maximum p*.

    A grid pre-scan on (0, B_hi], with B_hi putting 4n photons on average into
    the idler detector, brackets the maximum; golden-section search refines it.
    If the pre-scan is not unimodal the grid maximum is returned.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"photon number must be >= 1, got {n}")
    if loss.eta_idler <= 0.0:
        raise ValueError("eta_idler = 0 never heralds n >= 1 photons")

    def prob(gain: float) -> float:
        return herald_probability(template.at_gain(gain), loss, n)

    upper = gain_for_mean_photons(template, loss.eta_idler, 4.0 * n)
    for _ in range(8):
        grid = np.linspace(0.0, upper, grid_points + 1)[1:]
        values = np.array([prob(g) for g in grid])
        best = int(np.argmax(values))
        if best < grid.size - 1:
            break
        upper *= 2.0
    else:
        raise ConvergenceError(
            f"heralding probability for n={n} still rising at B={upper:.4g}",
            state={"upper": upper, "grid_points": grid_points},
        )

    if not _is_unimodal(values):
        logger.warning(
            "p_%d(B) is not unimodal on (0, %.4g]; returning the grid maximum", n, upper
        )
        return GainOptimum(float(grid[best]), float(values[best]))

    bracket = (float(grid[best - 1]) if best > 0 else 0.0, float(grid[best]), float(grid[best + 1]))
    try:
        result = optimize.minimize_scalar(
            lambda g: -prob(g),
            bracket=bracket,
            method="golden",
            options={"xtol": xtol},
        )
    except ValueError as e:
        # flat top: neighbouring grid values tie with the maximum
        logger.warning("Golden-section bracket rejected (%s); using grid maximum", e)
        return GainOptimum(float(grid[best]), float(values[best]))

    if not getattr(result, "success", True):
        raise ConvergenceError(
            f"golden-section search for n={n} did not converge",
            state={"bracket": list(bracket), "nit": int(result.nit), "x": float(result.x)},
        )
    if -result.fun < values[best]:
        return GainOptimum(float(grid[best]), float(values[best]))
    return GainOptimum(float(result.x), float(-result.fun))


def _gain_at_probability(
    template: SpectrumTemplate, loss: LossModel, n: int, p_target: float, optimum: GainOptimum
) -> float:
    # lowest gain on the rising branch where p_n reaches p_target
    if p_target >= optimum.probability:
        return optimum.gain
    if p_target <= 0.0:
        return 0.0
    return float(
        optimize.brentq(
            lambda g: herald_probability(template.at_gain(g), loss, n) - p_target,
            0.0,
            optimum.gain,
            xtol=1e-14,
        )
    )


def _tradeoff_point(
    template: SpectrumTemplate,
    loss: LossModel,
    n: int,
    p_target: float,
    kind: str,
    optimum: GainOptimum,
    samples: int,
):
    attribute = _fidelity_attribute(kind)
    p_target = float(p_target)
    if p_target > optimum.probability * (1.0 + 1e-9):
        raise ValueError(
            f"heralding probability {p_target:.6g} is not achievable for n={n}; "
            f"the maximum is {optimum.probability:.6g} at B={optimum.gain:.6g}"
        )

    low = _gain_at_probability(template, loss, n, p_target, optimum)
    candidates = np.linspace(low, optimum.gain, samples) if low < optimum.gain else np.array([low])
    best_gain, best_fidelity = low, -np.inf
    for gain in candidates:
        value = getattr(herald_statistics(template.at_gain(gain), loss, n), attribute)[n]
        if np.isfinite(value) and value > best_fidelity:
            best_gain, best_fidelity = float(gain), float(value)
    return best_gain, best_fidelity


def max_fidelity_at_probability(
    template: SpectrumTemplate,
    loss: LossModel,
    n: int,
    p_target: float,
    kind: str = "single_mode",
    samples: int = 17,
) -> float:
    """Largest fidelity on the low-gain branch among gains with p_n >= p_target"""
    optimum = max_herald_probability(template, loss, n)
    return _tradeoff_point(template, loss, n, p_target, kind, optimum, samples)[1]


def tradeoff_curve(
    template: SpectrumTemplate,
    loss: LossModel,
    n: int,
    targets: Iterable[float],
    kind: str = "single_mode",
    samples: int = 17,
) -> pd.DataFrame:
    """Fidelity versus heralding probability along the low-gain branch"""
    optimum = max_herald_probability(template, loss, n)
    rows = []
    for p_target in targets:
        gain, fidelity = _tradeoff_point(template, loss, n, p_target, kind, optimum, samples)
        rows.append({"n": int(n), "p_target": float(p_target), "B": gain, "fidelity": fidelity})
    return pd.DataFrame(rows, columns=["n", "p_target", "B", "fidelity"])


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    target_fidelity: float
    eta_idler: float
    rep_rate: float
    rate_floor: float
    n_values: np.ndarray
    per_n_max_rate: np.ndarray
    per_n_gain: np.ndarray
    max_feasible_n: int

    def to_dict(self) -> Dict:
        return {
            "target_fidelity": self.target_fidelity,
            "eta_idler": self.eta_idler,
            "rep_rate": self.rep_rate,
            "rate_floor": self.rate_floor,
            "n_values": [int(n) for n in self.n_values],
            "per_n_max_rate": [float(r) for r in self.per_n_max_rate],
            "per_n_gain": [float(g) for g in self.per_n_gain],
            "max_feasible_n": int(self.max_feasible_n),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"n": self.n_values, "B": self.per_n_gain, "max_rate": self.per_n_max_rate}
        )


def _feasible_rate(
    template: SpectrumTemplate, loss: LossModel, n: int, fidelity_floor: float, rep_rate: float
):
    optimum = max_herald_probability(template, loss, n)

    def fidelity(gain: float) -> float:
        value = herald_statistics(template.at_gain(gain), loss, n).fidelity_single_mode[n]
        return float(value) if np.isfinite(value) else 0.0

    if fidelity(optimum.gain) >= fidelity_floor:
        return optimum.gain, rep_rate * optimum.probability

    # fidelity falls with gain, so the boundary sits on the rising branch of p_n
    low = optimum.gain * 1e-3
    if fidelity(low) < fidelity_floor:
        return 0.0, 0.0
    boundary = optimize.brentq(lambda g: fidelity(g) - fidelity_floor, low, optimum.gain, xtol=1e-12)
    return float(boundary), rep_rate * herald_probability(template.at_gain(boundary), loss, n)


def feasibility(
    rep_rate: float,
    eta_idler: float,
    fidelity_floor: float,
    rate_floor: float,
    n_range: Iterable[int],
    template: Optional[SpectrumTemplate] = None,
) -> FeasibilityReport:
    """
    Highest event rate per n with single-mode fidelity at least
    ``fidelity_floor``, for a lossless signal arm.
    """
    rep_rate, rate_floor, fidelity_floor = float(rep_rate), float(rate_floor), float(fidelity_floor)
    if rep_rate <= 0.0:
        raise ValueError(f"repetition rate must be > 0, got {rep_rate}")
    if rate_floor < 0.0:
        raise ValueError(f"rate floor must be >= 0, got {rate_floor}")
    if not 0.0 <= fidelity_floor <= 1.0:
        raise ValueError(f"fidelity floor must lie in [0, 1], got {fidelity_floor}")

    template = template or SpectrumTemplate.single_mode()
    loss = LossModel(eta_signal=1.0, eta_idler=eta_idler)
    n_values = _check_n_list(list(n_range))
    if np.any(n_values < 1):
        raise ValueError("feasibility is defined for n >= 1")

    gains, rates = [], []
    for n in n_values:
        gain, rate = _feasible_rate(template, loss, int(n), fidelity_floor, rep_rate)
        logger.debug("n=%d: B=%.6g, rate=%.6g/s", n, gain, rate)
        gains.append(gain)
        rates.append(rate)

    rates = np.asarray(rates)
    passing = n_values[rates >= rate_floor]
    return FeasibilityReport(
        target_fidelity=fidelity_floor,
        eta_idler=float(eta_idler),
        rep_rate=rep_rate,
        rate_floor=rate_floor,
        n_values=n_values,
        per_n_max_rate=rates,
        per_n_gain=np.asarray(gains),
        max_feasible_n=int(passing.max()) if passing.size else 0,
    )


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunData:
    """One measurement run at a fixed pump power; fidelity entries may be NaN"""

    run_id: str
    n: np.ndarray
    herald_prob: np.ndarray
    herald_prob_err_lo: np.ndarray
    herald_prob_err_hi: np.ndarray
    fidelity: np.ndarray
    fidelity_err_lo: np.ndarray
    fidelity_err_hi: np.ndarray
    mean_photons: float

    def __post_init__(self):
        if self.n.size == 0:
            raise DatasetSchemaError(f"run {self.run_id!r} has no observations")
        if np.any(self.n < 0):
            raise DatasetSchemaError(f"run {self.run_id!r} has negative photon numbers")
        if not self.mean_photons > 0.0:
            raise DatasetSchemaError(
                f"run {self.run_id!r} needs a positive mean photon number, got {self.mean_photons}"
            )


@dataclass(frozen=True)
class FitResult:
    schmidt_number: float
    eta_idler: float
    eta_signal: float
    run_ids: List[str]
    per_run_gain: List[float]
    residual: float
    iterations: int
    converged: bool
    n_starts: int
    mean_photon_arm: str = "idler"

    def to_dict(self) -> Dict:
        return asdict(self)


def _weighted_residuals(model, observed, err_lo, err_hi) -> np.ndarray:
    mask = np.isfinite(observed)
    model, observed = model[mask], observed[mask]
    sigma = 0.5 * (err_lo[mask] + err_hi[mask])
    weighted = np.isfinite(sigma) & (sigma > 0.0)

    residuals = np.empty(observed.size)
    residuals[weighted] = (model[weighted] - observed[weighted]) / sigma[weighted]
    # without uncertainties compare on a log scale; probabilities span decades
    unweighted = ~weighted
    with np.errstate(divide="ignore", invalid="ignore"):
        residuals[unweighted] = np.log(model[unweighted]) - np.log(observed[unweighted])
    return np.nan_to_num(residuals, nan=1e3, posinf=1e3, neginf=-1e3)


def _run_residuals(run: RunData, template: SpectrumTemplate, loss: LossModel, arm: str):
    gain = gain_for_mean_photons(template, _arm_eta(loss, arm), run.mean_photons)
    stats_ = herald_statistics(template.at_gain(gain), loss, int(run.n.max()))
    residuals = np.concatenate(
        [
            _weighted_residuals(
                stats_.herald_prob[run.n], run.herald_prob, run.herald_prob_err_lo, run.herald_prob_err_hi
            ),
            _weighted_residuals(
                stats_.fidelity_photon_number[run.n], run.fidelity, run.fidelity_err_lo, run.fidelity_err_hi
            ),
        ]
    )
    return gain, residuals


_PENALTY = 1e12


def fit_objective(
    theta: Sequence[float], runs: Sequence[RunData], k_max: int = Config.K_MAX, arm: str = "idler"
) -> float:
    """Weighted sum of squared residuals at theta = (K, eta_i, eta_s)"""
    if arm not in MEAN_PHOTON_ARMS:
        raise ConfigError(f"mean-photon arm must be one of {MEAN_PHOTON_ARMS}, got {arm!r}")
    schmidt, eta_idler, eta_signal = (float(v) for v in theta)
    if not (schmidt >= 1.0 and 0.0 < eta_idler <= 1.0 and 0.0 < eta_signal <= 1.0):
        return _PENALTY
    template = SpectrumTemplate.from_schmidt_number(schmidt, k_max, report_residual=False)
    loss = LossModel(eta_signal=eta_signal, eta_idler=eta_idler)
    try:
        return float(sum(np.sum(_run_residuals(run, template, loss, arm)[1] ** 2) for run in runs))
    except (NumericalError, ValueError) as e:
        logger.debug("Objective penalised at %s: %s", theta, e)
        return _PENALTY


def _simplex_settled(result) -> bool:
    """True when the final Nelder-Mead simplex has collapsed onto one point"""
    simplex, values = result.final_simplex
    x_spread = float(np.max(np.abs(simplex[1:] - simplex[0])))
    f_spread = float(np.max(np.abs(values[1:] - values[0])))
    f_scale = max(1.0, abs(float(values[0])))
    return x_spread <= Config.FIT_SETTLED_XTOL and f_spread <= Config.FIT_SETTLED_FTOL * f_scale


def _start_grid() -> List[tuple]:
    return [
        (schmidt, eta_i, eta_s)
        for schmidt in Config.FIT_START_SCHMIDT
        for eta_i in Config.FIT_START_ETA
        for eta_s in Config.FIT_START_ETA
    ]


def fit_parameters(
    runs: Sequence[RunData],
    k_max: int = Config.K_MAX,
    starts: Optional[Sequence[Sequence[float]]] = None,
    max_iter: int = Config.FIT_MAX_ITER,
    workers: Optional[int] = None,
    arm: str = "idler",
) -> FitResult:
    """
    Fit (K, eta_i, eta_s) by Nelder-Mead from a grid of starting points.

    Each run's optical gain is not a free parameter: it is solved for so that
    the model reproduces the run's measured mean photon number in ``arm``.
    """
    if arm not in MEAN_PHOTON_ARMS:
        raise ConfigError(f"mean-photon arm must be one of {MEAN_PHOTON_ARMS}, got {arm!r}")
    runs = list(runs)
    if not runs:
        raise DatasetSchemaError("no runs to fit")
    if len({run.run_id for run in runs}) != len(runs):
        raise DatasetSchemaError("run ids must be unique")
    if len(runs) < 2:
        raise ConfigError(
            "a single run leaves (K, eta_i, eta_s) under-determined; at least 2 runs are required"
        )
    for run in runs:
        if run.n.size < 3:
            logger.warning("Run %r has only %d observed photon numbers", run.run_id, run.n.size)

    starts = [tuple(float(v) for v in s) for s in (starts or _start_grid())]
    bounds = [
        (1.0, Config.FIT_SCHMIDT_UPPER),
        (Config.FIT_ETA_LOWER, 1.0),
        (Config.FIT_ETA_LOWER, 1.0),
    ]

    def minimize_from(x0):
        return optimize.minimize(
            fit_objective,
            np.asarray(x0),
            args=(runs, k_max, arm),
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": max_iter, "xatol": Config.FIT_XATOL, "fatol": Config.FIT_FATOL},
        )

    def run_start(start):
        result = minimize_from(start)
        iterations = int(result.nit)
        # a fresh simplex at the stalled point, when the objective noise kept the old one open
        for _ in range(Config.FIT_RESTARTS):
            if result.success or _simplex_settled(result):
                break
            result = minimize_from(result.x)
            iterations += int(result.nit)
        return result, iterations

    logger.info("Fitting %d runs from %d starting points", len(runs), len(starts))
    results = _parallel_map(run_start, starts, workers)
    best, iterations = min(results, key=lambda item: item[0].fun)
    if best.fun >= _PENALTY:
        raise ConvergenceError(
            "every starting point stayed outside the region where the model can be evaluated",
            state={"x": [float(v) for v in best.x], "fun": float(best.fun), "nit": iterations},
        )
    converged = bool(best.success) or _simplex_settled(best)
    if not converged:
        raise ConvergenceError(
            f"Nelder-Mead did not converge after {iterations} iterations: {best.message}",
            state={"x": [float(v) for v in best.x], "fun": float(best.fun), "nit": iterations},
        )
    if not best.success:
        logger.info("Iteration limit reached with a settled simplex; accepting %s", best.x)

    schmidt, eta_idler, eta_signal = (float(v) for v in best.x)
    template = SpectrumTemplate.from_schmidt_number(schmidt, k_max)
    arm_eta = eta_idler if arm == "idler" else eta_signal
    gains = [gain_for_mean_photons(template, arm_eta, run.mean_photons) for run in runs]
    logger.info(
        "Fit: K=%.4f, eta_i=%.4f, eta_s=%.4f, residual=%.4g", schmidt, eta_idler, eta_signal, best.fun
    )
    return FitResult(
        schmidt_number=schmidt,
        eta_idler=eta_idler,
        eta_signal=eta_signal,
        run_ids=[run.run_id for run in runs],
        per_run_gain=gains,
        residual=float(best.fun),
        iterations=iterations,
        converged=converged,
        n_starts=len(starts),
        mean_photon_arm=arm,
    )


def fitted_curves(fit: FitResult, runs: Sequence[RunData], k_max: int = Config.K_MAX, n_max: Optional[int] = None) -> pd.DataFrame:
    """Model p_n and fidelities per run at the fitted parameters, for overplotting"""
    template = SpectrumTemplate.from_schmidt_number(fit.schmidt_number, k_max)
    loss = LossModel(eta_signal=fit.eta_signal, eta_idler=fit.eta_idler)
    frames = []
    for run, gain in zip(runs, fit.per_run_gain):
        top = int(run.n.max()) if n_max is None else int(n_max)
        stats_ = herald_statistics(template.at_gain(gain), loss, top)
        frames.append(
            pd.DataFrame(
                {
                    "run_id": run.run_id,
                    "B": gain,
                    "mean_photons": run.mean_photons,
                    "n": np.arange(top + 1),
                    "p_n": stats_.herald_prob,
                    "F_single": stats_.fidelity_single_mode,
                    "F_photon_number": stats_.fidelity_photon_number,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def synthesize_dataset(
    schmidt: float,
    eta_idler: float,
    eta_signal: float,
    gains: Sequence[float],
    n_prob: Sequence[int] = tuple(range(1, 8)),
    n_fidelity: Sequence[int] = tuple(range(1, 5)),
    noise: float = 0.0,
    seed: int = Config.SEED,
    k_max: int = Config.K_MAX,
    arm: str = "idler",
) -> List[RunData]:
    """
    Runs generated from the model, one per gain, with multiplicative Gaussian
    noise of relative size ``noise``. Error bars are the relative noise level
    (1% when noiseless). Mean photon numbers, detected in ``arm``, are exact.
    """
    rng = np.random.default_rng(seed)
    template = SpectrumTemplate.from_schmidt_number(schmidt, k_max)
    loss = LossModel(eta_signal=eta_signal, eta_idler=eta_idler)
    arm_eta = _arm_eta(loss, arm)
    n = _check_n_list(n_prob)
    relative = noise if noise > 0.0 else 0.01

    runs = []
    for index, gain in enumerate(gains):
        spec = template.at_gain(gain)
        stats_ = herald_statistics(spec, loss, int(n.max()))
        prob = stats_.herald_prob[n]
        fidelity = np.where(np.isin(n, n_fidelity), stats_.fidelity_photon_number[n], np.nan)
        if noise > 0.0:
            prob = prob * (1.0 + noise * rng.standard_normal(n.size))
            fidelity = np.clip(fidelity * (1.0 + noise * rng.standard_normal(n.size)), 0.0, 1.0)
        runs.append(
            RunData(
                run_id=f"run{index + 1}",
                n=n.copy(),
                herald_prob=prob,
                herald_prob_err_lo=relative * prob,
                herald_prob_err_hi=relative * prob,
                fidelity=fidelity,
                fidelity_err_lo=relative * fidelity,
                fidelity_err_hi=relative * fidelity,
                mean_photons=mean_detected_photons(spec, arm_eta),
            )
        )
    return runs

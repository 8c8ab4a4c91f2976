"""
Joint signal/idler photon-number statistics and heralded-state quality.

The heralded state is diagonal in the photon-number basis of every Schmidt
mode, so the fidelity to |n> in the dominant mode reduces to a ratio of
probabilities computed from per-mode joint tables.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np
from scipy import stats
from scipy.signal import convolve2d

from config import Config
from utils.distributions import (
    LossModel,
    ModeSpectrum,
    lossy_thermal_vacuum_prob,
    phase_type_pmf,
)
from utils.errors import TruncationError, UndefinedFidelityError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class JointPmf:
    """Truncated joint distribution p(n_signal, n_idler)"""

    table: np.ndarray
    tail_mass: float

    def __post_init__(self):
        if np.any(self.table < -1e-15):
            raise ValueError("joint probabilities must be non-negative")
        total = float(self.table.sum()) + self.tail_mass
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"joint table plus tail sums to {total!r}, expected 1")

    @property
    def n_trunc(self) -> int:
        return int(self.table.shape[0] - 1)

    def signal_marginal(self) -> np.ndarray:
        return self.table.sum(axis=1)

    def idler_marginal(self) -> np.ndarray:
        return self.table.sum(axis=0)


@dataclass(frozen=True)
class HeraldReport:
    target_n: int
    herald_prob: float
    fidelity_single_mode: float
    fidelity_photon_number: float
    mean_idler_detected: float
    mean_signal_detected: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class HeraldStatistics:
    """Heralding probabilities and fidelities for n = 0..n_max at one gain"""

    herald_prob: np.ndarray
    fidelity_single_mode: np.ndarray
    fidelity_photon_number: np.ndarray

    @property
    def n_max(self) -> int:
        return int(self.herald_prob.size - 1)


# ---------------------------------------------------------------------------
# Per-mode joint tables
# ---------------------------------------------------------------------------


def _pair_number_cutoff(x: float, eps: float) -> int:
    # smallest m_max with x^(m_max+1) below eps, plus one for rounding headroom
    if x <= 0.0:
        return 0
    m_max = int(math.ceil(math.log(eps) / math.log(x))) + 1
    if m_max > Config.MAX_PHOTON_NUMBER:
        raise TruncationError(
            f"pair-number truncation {m_max} exceeds FOCK_MAX_PHOTON_NUMBER "
            f"({Config.MAX_PHOTON_NUMBER}) for tanh^2 r = {x!r}",
            suggested_n_trunc=m_max,
        )
    return m_max


def _joint_block(
    x: float, loss: LossModel, n_out: int, eps: float = Config.TRUNCATION_EPS
) -> np.ndarray:
    """
    p(a, b) for a, b = 0..n_out of one mode with tanh^2 r = x after loss.

    The corner is exact up to ``eps`` regardless of n_out since the sum over
    generated pair numbers m runs to the adaptive cutoff.
    """
    m_max = _pair_number_cutoff(x, eps)
    pairs = np.arange(m_max + 1)
    weights = (1.0 - x) * x**pairs if x > 0.0 else np.array([1.0])

    detected = np.arange(n_out + 1)[:, None]
    signal = stats.binom.pmf(detected, pairs[None, :], loss.eta_signal)
    idler = stats.binom.pmf(detected, pairs[None, :], loss.eta_idler)
    return (signal * weights) @ idler.T


def joint_lossy_pmf(
    tanh_param: float,
    loss: LossModel,
    n_trunc: int = None,
    eps: float = Config.TRUNCATION_EPS,
) -> JointPmf:
    """Joint detected photon numbers of one two-mode squeezed mode under loss"""
    tanh_param = float(tanh_param)
    if not 0.0 <= tanh_param < 1.0:
        raise ValueError(f"tanh parameter must lie in [0, 1), got {tanh_param}")

    x = tanh_param**2
    suggested = _pair_number_cutoff(x, eps)
    if n_trunc is None:
        n_trunc = suggested

    table = _joint_block(x, loss, int(n_trunc), eps)
    tail = max(1.0 - float(table.sum()), 0.0)
    if tail >= eps:
        raise TruncationError(
            f"joint table truncated at n={n_trunc} leaves tail mass {tail:.3e} "
            f"(>= {eps:.1e}); use n_trunc >= {suggested}",
            suggested_n_trunc=suggested,
        )
    return JointPmf(table=table, tail_mass=tail)


def _active_modes(spec: ModeSpectrum) -> np.ndarray:
    # the dominant mode is always kept; others only if they carry photons
    keep = spec.vacuum_probs <= 1.0 - Config.VACUUM_CUTOFF
    keep[0] = True
    return np.flatnonzero(keep)


def multimode_joint_pmf(
    spec: ModeSpectrum,
    loss: LossModel,
    n_trunc: int,
    eps: float = Config.TRUNCATION_EPS,
) -> np.ndarray:
    """
    Joint table of total detected signal/idler photons over all modes,
    for n_s, n_i = 0..n_trunc. The corner of a convolution only involves the
    corners of its factors, so the entries are exact.
    """
    n_trunc = int(n_trunc)
    joint = np.zeros((n_trunc + 1, n_trunc + 1))
    joint[0, 0] = 1.0
    for k in _active_modes(spec):
        block = _joint_block(float(spec.tanh_params[k]) ** 2, loss, n_trunc, eps)
        joint = convolve2d(joint, block)[: n_trunc + 1, : n_trunc + 1]
    return joint


# ---------------------------------------------------------------------------
# Heralding
# ---------------------------------------------------------------------------


def _herald_pmf(spec: ModeSpectrum, loss: LossModel, n_max: int) -> np.ndarray:
    modes = _active_modes(spec)
    lossy_q = lossy_thermal_vacuum_prob(spec.vacuum_probs[modes], loss.eta_idler)
    return phase_type_pmf(lossy_q, n_max=n_max).probs


def herald_probability(spec: ModeSpectrum, loss: LossModel, n: int) -> float:
    """Probability that the idler detector registers exactly n photons"""
    n = int(n)
    if n < 0:
        raise ValueError(f"photon number must be >= 0, got {n}")
    return float(_herald_pmf(spec, loss, n)[n])


def herald_statistics(
    spec: ModeSpectrum,
    loss: LossModel,
    n_max: int,
    eps: float = Config.TRUNCATION_EPS,
) -> HeraldStatistics:
    """
    Heralding probability, single-mode fidelity and photon-number fidelity for
    every target n = 0..n_max. Fidelities are NaN where the heralding
    probability is below FOCK_P_MIN.
    """
    n_max = int(n_max)
    if n_max < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")

    probs = _herald_pmf(spec, loss, n_max)
    modes = _active_modes(spec)

    blocks = [_joint_block(float(spec.tanh_params[k]) ** 2, loss, n_max, eps) for k in modes]

    # signal = 0 rows of the non-target modes, convolved over the idler count
    others_dark = np.zeros(n_max + 1)
    others_dark[0] = 1.0
    joint = blocks[0]
    for block in blocks[1:]:
        others_dark = np.convolve(others_dark, block[0, :])[: n_max + 1]
        joint = convolve2d(joint, block)[: n_max + 1, : n_max + 1]

    target = blocks[0]
    single = np.full(n_max + 1, np.nan)
    photon_number = np.full(n_max + 1, np.nan)
    for n in range(n_max + 1):
        if probs[n] < Config.P_MIN:
            continue
        overlap = sum(target[n, n - i] * others_dark[i] for i in range(n + 1))
        single[n] = min(overlap / probs[n], 1.0)
        photon_number[n] = min(joint[n, n] / probs[n], 1.0)

    return HeraldStatistics(
        herald_prob=probs,
        fidelity_single_mode=single,
        fidelity_photon_number=photon_number,
    )


def _fidelity(spec: ModeSpectrum, loss: LossModel, n: int, attribute: str) -> float:
    n = int(n)
    if n < 0:
        raise ValueError(f"photon number must be >= 0, got {n}")
    stats_ = herald_statistics(spec, loss, n)
    if stats_.herald_prob[n] < Config.P_MIN:
        raise UndefinedFidelityError(
            f"heralding probability {stats_.herald_prob[n]:.3e} for n={n} is below "
            f"{Config.P_MIN:.0e}; fidelity is undefined"
        )
    return float(getattr(stats_, attribute)[n])


def fidelity_single_mode(spec: ModeSpectrum, loss: LossModel, n: int) -> float:
    """Fidelity of the heralded signal to |n> in the dominant Schmidt mode"""
    return _fidelity(spec, loss, n, "fidelity_single_mode")


def fidelity_photon_number(spec: ModeSpectrum, loss: LossModel, n: int) -> float:
    """P(total detected signal = n | idler herald = n), blind to the spectral mode"""
    return _fidelity(spec, loss, n, "fidelity_photon_number")


def mean_detected_photons(spec: ModeSpectrum, eta: float) -> float:
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return eta * float(np.sum(np.sinh(spec.squeezings) ** 2))


def herald_report(spec: ModeSpectrum, loss: LossModel, n: int) -> HeraldReport:
    stats_ = herald_statistics(spec, loss, n)
    return HeraldReport(
        target_n=int(n),
        herald_prob=float(stats_.herald_prob[n]),
        fidelity_single_mode=float(stats_.fidelity_single_mode[n]),
        fidelity_photon_number=float(stats_.fidelity_photon_number[n]),
        mean_idler_detected=mean_detected_photons(spec, loss.eta_idler),
        mean_signal_detected=mean_detected_photons(spec, loss.eta_signal),
    )

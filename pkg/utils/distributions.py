"""
Photon-number distributions of multimode two-mode squeezed vacuum.

Every Schmidt mode k carries a geometric (thermal) photon-number distribution
with vacuum probability q_k = 1 - tanh(r_k)^2. Detectors that do not resolve
the spectral modes see the convolution of these geometric distributions,
which is evaluated here as a discrete phase-type distribution.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln

from config import Config
from utils.errors import NearDegenerateError, TruncationError

logger = logging.getLogger(__name__)


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not 0.0 <= mu <= Config.MU_MAX:
        raise ValueError(f"mode decay mu must lie in [0, 1), got {mu}")
    return mu


def _check_eta(eta: float, name: str = "eta") -> float:
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {eta}")
    return eta


def _check_vacuum_probs(q) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.ndim != 1 or q.size == 0:
        raise ValueError("vacuum probabilities must be a non-empty vector")
    if np.any(~np.isfinite(q)) or np.any(q <= 0.0) or np.any(q > 1.0):
        raise ValueError(
            f"vacuum probabilities must lie in (0, 1]; got min={q.min()}, max={q.max()} "
            "(q = 0 means an infinite mean photon number)"
        )
    return q


# ---------------------------------------------------------------------------
# Schmidt spectrum
# ---------------------------------------------------------------------------


def schmidt_residual(mu: float, k_max: int) -> float:
    """Schmidt mass sum_{k > k_max} lambda_k^2 dropped by the truncation"""
    mu = _check_mu(mu)
    return mu ** (2 * int(k_max))


def schmidt_coefficients(
    mu: float, k_max: int = Config.K_MAX, report: bool = True
) -> np.ndarray:
    """Exponentially decaying Schmidt coefficients sqrt(1 - mu^2) mu^(k-1)"""
    mu = _check_mu(mu)
    k_max = int(k_max)
    if k_max < 1:
        raise ValueError(f"k_max must be a positive integer, got {k_max}")

    lambdas = np.sqrt(1.0 - mu**2) * mu ** np.arange(k_max, dtype=float)

    residual = schmidt_residual(mu, k_max)
    if report and residual >= 1e-12:
        logger.warning(
            "Schmidt truncation at k_max=%d drops %.3e of the spectral weight (mu=%.6f)",
            k_max,
            residual,
            mu,
        )
    return lambdas


def schmidt_number(lambdas, tol: float = Config.NORMALIZATION_TOL) -> float:
    """Effective number of spectral modes K = 1 / sum(lambda_k^4)"""
    lambdas = np.asarray(lambdas, dtype=float)
    norm = float(np.sum(lambdas**2))
    if abs(norm - 1.0) > tol:
        raise ValueError(
            f"Schmidt coefficients are not normalized: sum(lambda^2) = {norm!r} "
            f"(tolerance {tol})"
        )
    return 1.0 / float(np.sum(lambdas**4))


def mu_from_schmidt_number(schmidt: float) -> float:
    """Invert K = (1 + mu^2) / (1 - mu^2) for the mode decay mu"""
    schmidt = float(schmidt)
    if not schmidt >= 1.0:
        raise ValueError(f"Schmidt number must be >= 1, got {schmidt}")
    return math.sqrt((schmidt - 1.0) / (schmidt + 1.0))


@dataclass(frozen=True, eq=False)
class ModeSpectrum:
    """Per-mode squeezing of a multimode source at a given optical gain"""

    optical_gain: float
    mode_decay: Optional[float]
    k_max: int
    lambdas: np.ndarray
    squeezings: np.ndarray
    tanh_params: np.ndarray
    vacuum_probs: np.ndarray
    residual_mass: float = 0.0

    @classmethod
    def from_lambdas(
        cls,
        gain: float,
        lambdas: Sequence[float],
        mode_decay: Optional[float] = None,
        residual_mass: Optional[float] = None,
    ) -> "ModeSpectrum":
        gain = float(gain)
        if not gain >= 0.0:
            raise ValueError(f"optical gain must be >= 0, got {gain}")

        lambdas = np.asarray(lambdas, dtype=float)
        if lambdas.ndim != 1 or lambdas.size == 0 or np.any(lambdas < 0.0):
            raise ValueError("Schmidt coefficients must be a non-empty non-negative vector")
        if residual_mass is None:
            residual_mass = max(0.0, 1.0 - float(np.sum(lambdas**2)))

        squeezings = gain * lambdas
        # sech^2 keeps q > 0 where 1 - tanh^2 would round to zero
        vacuum_probs = 1.0 / np.cosh(squeezings) ** 2

        return cls(
            optical_gain=gain,
            mode_decay=mode_decay,
            k_max=int(lambdas.size),
            lambdas=lambdas,
            squeezings=squeezings,
            tanh_params=np.tanh(squeezings),
            vacuum_probs=vacuum_probs,
            residual_mass=float(residual_mass),
        )

    @classmethod
    def from_gain(
        cls, gain: float, mu: float, k_max: int = Config.K_MAX
    ) -> "ModeSpectrum":
        lambdas = schmidt_coefficients(mu, k_max)
        return cls.from_lambdas(
            gain, lambdas, mode_decay=float(mu), residual_mass=schmidt_residual(mu, k_max)
        )

    @classmethod
    def equal_modes(cls, gain: float, n_modes: int) -> "ModeSpectrum":
        n_modes = int(n_modes)
        if n_modes < 1:
            raise ValueError(f"number of modes must be >= 1, got {n_modes}")
        return cls.from_lambdas(gain, np.full(n_modes, 1.0 / math.sqrt(n_modes)))

    @property
    def schmidt_number(self) -> float:
        return schmidt_number(self.lambdas, tol=max(Config.NORMALIZATION_TOL, 2 * self.residual_mass))


@dataclass(frozen=True)
class LossModel:
    """Signal and idler arm transmissions"""

    eta_signal: float = 1.0
    eta_idler: float = 1.0

    def __post_init__(self):
        _check_eta(self.eta_signal, "eta_signal")
        _check_eta(self.eta_idler, "eta_idler")


@dataclass(frozen=True, eq=False)
class Pmf:
    """Truncated photon-number distribution with its missing tail mass"""

    probs: np.ndarray
    tail_mass: float

    def __post_init__(self):
        if np.any(self.probs < -1e-15) or np.any(self.probs > 1.0 + 1e-15):
            raise ValueError("probabilities must lie in [0, 1]")
        total = float(np.sum(self.probs)) + self.tail_mass
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"PMF plus tail mass sums to {total!r}, expected 1")

    @property
    def n_trunc(self) -> int:
        return int(self.probs.size - 1)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def __getitem__(self, n: int) -> float:
        return float(self.probs[n])


# ---------------------------------------------------------------------------
# Photon-number distributions
# ---------------------------------------------------------------------------


def _phase_type_step(state: np.ndarray, q: np.ndarray, a: np.ndarray) -> np.ndarray:
    # state @ M for the upper-bidiagonal M with diagonal 1 - q and superdiagonal q
    nxt = state * a
    nxt[1:] += state[:-1] * q[:-1]
    return nxt


def phase_type_pmf(
    vacuum_probs,
    n_max: Optional[int] = None,
    eps: float = Config.TRUNCATION_EPS,
) -> Pmf:
    """
    Photon-number distribution of all modes together, p_n = alpha M^(n+K-1) M_0.

    Without ``n_max`` the distribution is extended until the remaining tail
    mass drops below ``eps``. The tail is the mass still held by the transient
    states of the chain, so it is known exactly rather than as 1 - sum(p).
    """
    q = _check_vacuum_probs(vacuum_probs)
    a = 1.0 - q
    n_modes = q.size

    state = np.zeros(n_modes)
    state[0] = 1.0
    for _ in range(n_modes - 1):
        state = _phase_type_step(state, q, a)

    limit = Config.MAX_PHOTON_NUMBER if n_max is None else int(n_max)
    if limit < 0:
        raise ValueError(f"n_max must be >= 0, got {n_max}")

    probs = []
    tail = 1.0
    for n in range(limit + 1):
        probs.append(state[-1] * q[-1])
        state = _phase_type_step(state, q, a)
        tail = float(state.sum())
        if n_max is None and tail < eps:
            break
    else:
        if n_max is None:
            raise TruncationError(
                f"photon-number tail {tail:.3e} still above {eps:.1e} at n={limit}",
                suggested_n_trunc=None,
            )

    return Pmf(probs=np.asarray(probs), tail_mass=max(tail, 0.0))


def geometric_pmf(q: float, n_max: int) -> np.ndarray:
    """Thermal photon-number distribution q (1 - q)^n for n = 0..n_max"""
    q = float(_check_vacuum_probs([q])[0])
    return q * (1.0 - q) ** np.arange(int(n_max) + 1, dtype=float)


def negative_binomial_pmf(q: float, n_modes: int, n: int) -> float:
    """K equal geometric modes: C(n+K-1, n) (1-q)^n q^K"""
    q = float(_check_vacuum_probs([q])[0])
    if int(n_modes) != n_modes or n_modes < 1:
        raise ValueError(f"number of modes must be a positive integer, got {n_modes}")
    if int(n) != n or n < 0:
        raise ValueError(f"photon number must be a non-negative integer, got {n}")
    return float(stats.nbinom.pmf(int(n), int(n_modes), q))


def distinct_q_pmf(
    vacuum_probs, n: int, threshold: float = Config.DEGENERACY_THRESHOLD
) -> float:
    """
    Closed form for pairwise distinct vacuum probabilities.

    p(n) = prod(q) * sum_j (1-q_j)^(n+K-1) / prod_{m != j} (q_m - q_j)

    For q sorted in decreasing order the signed denominator equals
    (-1)^(K-j) prod_{m != j} |q_j - q_m| with j counted from 1.
    """
    q = _check_vacuum_probs(vacuum_probs)
    if int(n) != n or n < 0:
        raise ValueError(f"photon number must be a non-negative integer, got {n}")
    n_modes = q.size

    diffs = q[None, :] - q[:, None]  # diffs[j, m] = q_m - q_j
    off_diagonal = ~np.eye(n_modes, dtype=bool)
    if n_modes > 1:
        closest = float(np.min(np.abs(diffs[off_diagonal])))
        if closest < threshold:
            raise NearDegenerateError(
                f"vacuum probabilities differ by only {closest:.3e} (< {threshold:.1e}); "
                "the alternating closed form is unstable here, use phase_type_pmf"
            )

    denominators = np.prod(np.where(off_diagonal, diffs, 1.0), axis=1)
    terms = (1.0 - q) ** (int(n) + n_modes - 1) / denominators
    return float(np.prod(q) * np.sum(terms))


def poisson_limit(n: int) -> float:
    """Infinitely many equal modes at mean n: e^-n n^n / n!"""
    return float(stats.poisson.pmf(int(n), float(n))) if n > 0 else 1.0


def single_mode_max_probability(n: int) -> float:
    """Largest heralding probability of n photons from one thermal mode"""
    n = int(n)
    if n == 0:
        return 1.0
    return math.exp(n * math.log(n) - (n + 1) * math.log(n + 1))


def equal_mode_fidelity_ceiling(n_modes: int, n: int) -> float:
    """(K-1)! n! / (K+n-1)! for K equal modes without loss"""
    return math.exp(gammaln(n_modes) + gammaln(n + 1) - gammaln(n_modes + n))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def apply_binomial_loss(probs, eta: float) -> np.ndarray:
    """Pass a photon-number distribution through a beam splitter of transmission eta"""
    eta = _check_eta(eta)
    probs = np.asarray(probs, dtype=float)
    photons = np.arange(probs.size)
    transfer = stats.binom.pmf(photons[:, None], photons[None, :], eta)
    return transfer @ probs


def lossy_thermal_vacuum_prob(q, eta: float):
    """Vacuum probability of a thermal state after transmission eta"""
    eta = _check_eta(eta)
    q_arr = _check_vacuum_probs(q)
    # rounding can push near-vacuum modes past 1
    result = np.minimum(q_arr / (q_arr + eta - q_arr * eta), 1.0)
    if np.ndim(q) == 0:
        return float(result[0])
    return result


def lossy_squeezing(r: float, eta: float) -> float:
    """Effective squeezing parameter of a thermal mode after transmission eta"""
    r = float(r)
    eta = _check_eta(eta)
    if r < 0.0:
        raise ValueError(f"squeezing parameter must be >= 0, got {r}")
    if eta == 0.0:
        raise ValueError("eta = 0 leaves vacuum; the effective squeezing is undefined")
    t2 = math.tanh(r) ** 2
    return math.atanh(math.sqrt(eta * t2 / (1.0 + (eta - 1.0) * t2)))

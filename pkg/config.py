import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _float_list(value: str):
    return tuple(float(v) for v in value.split(",") if v.strip())


class Config:
    """Toolkit configuration class"""

    # Spectral model
    K_MAX = int(os.environ.get("FOCK_K_MAX", 35))

    # Numerical tolerances
    TRUNCATION_EPS = float(os.environ.get("FOCK_TRUNCATION_EPS", 1e-12))
    NORMALIZATION_TOL = float(os.environ.get("FOCK_NORMALIZATION_TOL", 1e-9))
    DEGENERACY_THRESHOLD = float(os.environ.get("FOCK_DEGENERACY_THRESHOLD", 1e-6))
    VACUUM_CUTOFF = float(os.environ.get("FOCK_VACUUM_CUTOFF", 1e-14))
    P_MIN = float(os.environ.get("FOCK_P_MIN", 1e-300))
    MAX_PHOTON_NUMBER = int(os.environ.get("FOCK_MAX_PHOTON_NUMBER", 200000))
    MU_MAX = 1.0 - 1e-9

    # Gain optimisation
    GAIN_GRID_POINTS = int(os.environ.get("FOCK_GAIN_GRID_POINTS", 64))
    GAIN_XTOL = float(os.environ.get("FOCK_GAIN_XTOL", 1e-10))

    # Fitting
    FIT_START_SCHMIDT = _float_list(os.environ.get("FIT_START_SCHMIDT", "1,1.5,2,3"))
    FIT_START_ETA = _float_list(os.environ.get("FIT_START_ETA", "0.3,0.6,0.9"))
    FIT_MAX_ITER = int(os.environ.get("FIT_MAX_ITER", 4000))
    FIT_XATOL = float(os.environ.get("FIT_XATOL", 1e-6))
    FIT_FATOL = float(os.environ.get("FIT_FATOL", 1e-8))
    # a simplex this tight counts as converged even when maxiter stops it
    FIT_SETTLED_XTOL = float(os.environ.get("FIT_SETTLED_XTOL", 1e-5))
    FIT_SETTLED_FTOL = float(os.environ.get("FIT_SETTLED_FTOL", 1e-6))
    FIT_RESTARTS = int(os.environ.get("FIT_RESTARTS", 1))
    FIT_SCHMIDT_UPPER = float(os.environ.get("FIT_SCHMIDT_UPPER", 10.0))
    FIT_ETA_LOWER = 1e-3

    # TES ingestion
    TES_PROMINENCE = float(os.environ.get("FOCK_TES_PROMINENCE", 0.05))
    TES_CONFIDENCE = float(os.environ.get("FOCK_TES_CONFIDENCE", 0.6827))

    # Runtime
    THREADS = int(os.environ.get("FOCK_THREADS", 1))
    SEED = int(os.environ.get("FOCK_SEED", 0))
    LOG_LEVEL = os.environ.get("FOCK_LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"

    # File paths
    OUTPUT_DIR = os.environ.get("FOCK_OUTPUT_DIR", "results")

    # Sweep presets: single-mode curves at three idler transmissions, multimode at three Schmidt numbers
    SWEEP_PRESETS = {
        "single_mode_eta100": {
            "name": "Single mode, idler transmission 1.0",
            "description": "Heralding probability and fidelity versus squeezing",
            "mu": 0.0,
            "eta_idler": 1.0,
            "eta_signal": 1.0,
            "gain_range": (0.01, 3.0, 300),
            "n": (1, 2, 5),
        },
        "single_mode_eta090": {
            "name": "Single mode, idler transmission 0.9",
            "description": "Heralding probability and fidelity versus squeezing",
            "mu": 0.0,
            "eta_idler": 0.9,
            "eta_signal": 1.0,
            "gain_range": (0.01, 3.0, 300),
            "n": (1, 2, 5),
        },
        "single_mode_eta050": {
            "name": "Single mode, idler transmission 0.5",
            "description": "Heralding probability and fidelity versus squeezing",
            "mu": 0.0,
            "eta_idler": 0.5,
            "eta_signal": 1.0,
            "gain_range": (0.01, 3.0, 300),
            "n": (1, 2, 5),
        },
        "schmidt_k100": {
            "name": "Schmidt number 1.0",
            "description": "Multimode heralding versus optical gain",
            "schmidt_number": 1.0,
            "eta_idler": 0.9,
            "eta_signal": 1.0,
            "gain_range": (0.01, 3.0, 150),
            "n": (1, 2, 5),
        },
        "schmidt_k150": {
            "name": "Schmidt number 1.5",
            "description": "Multimode heralding versus optical gain",
            "schmidt_number": 1.5,
            "eta_idler": 0.9,
            "eta_signal": 1.0,
            "gain_range": (0.01, 3.0, 150),
            "n": (1, 2, 5),
        },
        "schmidt_k200": {
            "name": "Schmidt number 2.0",
            "description": "Multimode heralding versus optical gain",
            "schmidt_number": 2.0,
            "eta_idler": 0.9,
            "eta_signal": 1.0,
            "gain_range": (0.01, 3.0, 150),
            "n": (1, 2, 5),
        },
    }

    # Realistic-limits defaults
    FEASIBILITY_DEFAULTS = {
        "rep_rate": 1e8,
        "eta_idler": 0.9,
        "fidelity_floor": 0.9,
        "rate_floor": 0.1,
        "n_max": 12,
    }

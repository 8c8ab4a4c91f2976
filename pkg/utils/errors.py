from typing import Dict, List, Optional


class FockError(Exception):
    """Base class for toolkit errors; carries the CLI exit code"""

    exit_code = 1

    def to_dict(self) -> Dict:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(FockError, ValueError):
    """Invalid run configuration"""

    exit_code = 2


class DatasetSchemaError(FockError, ValueError):
    """Input CSV does not follow the expected schema"""

    exit_code = 2

    def __init__(self, message: str, line_numbers: Optional[List[int]] = None):
        super().__init__(message)
        self.line_numbers = list(line_numbers or [])

    def to_dict(self) -> Dict:
        payload = super().to_dict()
        payload["line_numbers"] = self.line_numbers
        return payload


class NearDegenerateError(FockError, ValueError):
    """Vacuum probabilities too close for the distinct-mode closed form"""

    exit_code = 2


class NumericalError(FockError, RuntimeError):
    exit_code = 3


class TruncationError(NumericalError):
    """Photon-number truncation leaves too much probability mass behind"""

    def __init__(self, message: str, suggested_n_trunc: Optional[int] = None):
        super().__init__(message)
        self.suggested_n_trunc = suggested_n_trunc

    def to_dict(self) -> Dict:
        payload = super().to_dict()
        payload["suggested_n_trunc"] = self.suggested_n_trunc
        return payload


class ConvergenceError(NumericalError):
    """Optimiser stopped without meeting its tolerances"""

    def __init__(self, message: str, state: Optional[Dict] = None):
        super().__init__(message)
        self.state = dict(state or {})

    def to_dict(self) -> Dict:
        payload = super().to_dict()
        payload["state"] = self.state
        return payload


class UndefinedFidelityError(NumericalError):
    """Heralding probability too small for the fidelity to be defined"""


class MixtureFitError(NumericalError):
    """Gaussian mixture fit to a TES histogram failed"""

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def to_dict(self) -> Dict:
        payload = super().to_dict()
        payload["diagnostics"] = self.diagnostics
        return payload

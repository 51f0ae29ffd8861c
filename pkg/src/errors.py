"""
ETDG Errors
Exception types raised by the discretization, matrix-function and stability layers
"""


class EtdgError(Exception):
    """Base class for every error raised by the package"""


class MeshError(EtdgError, ValueError):
    """Invalid mesh, domain or grading request"""


class FluxError(EtdgError, ValueError):
    """Unsupported or inconsistent numerical flux choice"""


class StencilError(EtdgError, ValueError):
    """Operator cannot be written as a translation-invariant block stencil"""


class KrylovConvergenceError(EtdgError, RuntimeError):
    """Arnoldi projection failed to reach the requested tolerance"""


class LinearSolveError(EtdgError, RuntimeError):
    """Implicit stage solve broke down or missed its residual target"""


class BracketError(EtdgError, ValueError):
    """Time-step bracket does not straddle a stability transition"""


class MultipleCrossingError(EtdgError, RuntimeError):
    """Stability verdict changes more than once over the searched bracket"""


class ConfigError(EtdgError, ValueError):
    """Malformed experiment or project configuration"""

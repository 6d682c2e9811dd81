"""
Exception hierarchy for the quasi-static fracture simulator.

Library code raises these; runner.execute_function turns them into
{"success": False, "error": ...} result dicts and cli.main into exit codes.
"""


class FractureError(Exception):
    """Base class for every error raised by the simulator"""


class InvalidGeometryError(FractureError):
    """Non-positive dimensions, degenerate meshes or unusable tip frames"""


class InvalidPartitionError(FractureError):
    """Boundary intervals with gaps, overlaps or unknown labels"""


class InvalidReferenceError(FractureError):
    """Edge or node id that does not exist in the mesh"""


class InvalidCrackError(FractureError):
    """Crack set that is not a continuum, or an irreversibility breach"""


class InvalidLoadError(FractureError):
    """Load samples that are not finite or not ordered in time"""


class InvalidScheduleError(FractureError):
    """Time step outside (0, 1] or a malformed minimizer strategy"""


class NumericalFailureError(FractureError):
    """Linear solver did not reach the requested residual"""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientDataError(FractureError):
    """Too few degrees of freedom inside a fitting annulus"""


class CrackGeometryError(FractureError):
    """No mesh edge continues the crack in the requested direction"""


class PreconditionError(FractureError):
    """Audit called on a run that does not satisfy its hypotheses"""


class BudgetExceededError(FractureError):
    """Brute-force enumeration refused because it would be too large"""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConfigError(FractureError):
    """Run configuration that cannot be parsed or validated"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class MissingArtifactError(FractureError):
    """Recorded run directory lacks a file the audit needs"""

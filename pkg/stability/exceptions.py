"""
Error hierarchy of the stability laboratory.

Every error carries a machine-readable ``code`` (recorded in stage results and
in the StageLog audit table) and the process ``exit_code`` used by the
``run`` command.
"""


class LabError(Exception):
    code = "lab"
    exit_code = 1

    def __init__(self, message="", **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def as_dict(self):
        return {"code": self.code, "message": self.message}


class ParameterError(LabError, ValueError):
    """Invalid sizes, ranges or step sizes."""
    code = "parameter"
    exit_code = 2


class ShapeError(LabError, ValueError):
    """Profile length does not match the grid."""
    code = "shape"
    exit_code = 2


class ConfigValidationError(ParameterError):
    code = "config"

    def __init__(self, keys, problems=None):
        self.keys = sorted(keys)
        self.problems = problems or {}
        listing = ", ".join(
            f"{k} ({self.problems[k]})" if k in self.problems else k for k in self.keys
        )
        super().__init__(f"Invalid configuration keys: {listing}")

    def as_dict(self):
        data = super().as_dict()
        data["keys"] = self.keys
        return data


class ShearValidationError(ParameterError):
    code = "shear"


class MonotonicityError(ParameterError):
    code = "monotone"


class SolverError(LabError, RuntimeError):
    code = "solver"
    exit_code = 3


class NoRootError(SolverError):
    """No root with negative imaginary part in the scan rectangle."""
    code = "no_root"

    def __init__(self, message, landscape=None):
        super().__init__(message)
        # (re_axis, im_axis, |m| values) of the scan, kept for diagnosis
        self.landscape = landscape


class IterationError(SolverError):
    code = "iteration"


class DegeneracyError(SolverError):
    code = "degenerate"


class ResolutionError(SolverError):
    code = "resolution"


class DivergenceError(SolverError):
    code = "divergence"

    def __init__(self, message, last_state=None, time=None):
        super().__init__(message)
        self.last_state = last_state
        self.time = time

    def as_dict(self):
        data = super().as_dict()
        data["time"] = self.time
        return data


class FittingError(SolverError):
    code = "fitting"


class SchemaError(LabError):
    """A stage result is missing keys of the frozen report schema."""
    code = "schema"


class AcceptanceError(LabError):
    code = "acceptance"
    exit_code = 4

    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("; ".join(self.failures))

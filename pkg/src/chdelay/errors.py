"""Exception hierarchy.

Every exception carries a stable ``code`` used by the command line front end
when it emits machine-readable error documents.
"""

from __future__ import annotations


class ChDelayError(Exception):
    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        out = {"code": self.code, "message": str(self)}
        out.update({k: v for k, v in self.context.items() if v is not None})
        return out


# -- nonlinearities ---------------------------------------------------------

class NonConvergence(ChDelayError):
    code = "NonConvergence"


class QuadratureFailure(ChDelayError):
    code = "QuadratureFailure"


# -- grid / linear algebra --------------------------------------------------

class NonFiniteField(ChDelayError):
    code = "NonFiniteField"


class NonPositiveConductivity(ChDelayError):
    code = "NonPositiveConductivity"


class CgBreakdown(ChDelayError):
    code = "CgBreakdown"


class CgNoConvergence(ChDelayError):
    code = "CgNoConvergence"


# -- time stepping ----------------------------------------------------------

class SolverError(ChDelayError):
    """Base class for failures raised while marching a trajectory."""

    code = "SolverError"


class HistoryGap(SolverError):
    code = "HistoryGap"


class NewtonNoConvergence(SolverError):
    code = "NewtonNoConvergence"


class IndefiniteJacobian(SolverError):
    code = "IndefiniteJacobian"


class PicardNoConvergence(SolverError):
    code = "PicardNoConvergence"


class LostPositivity(SolverError):
    code = "LostPositivity"


class InvalidInitialData(ChDelayError):
    code = "InvalidInitialData"


# -- audits -----------------------------------------------------------------

class AuditFailure(ChDelayError):
    code = "AuditFailure"


class InvalidScenario(ChDelayError):
    code = "InvalidScenario"


# -- configuration / files --------------------------------------------------

class ParseError(ChDelayError):
    code = "ParseError"


class ValidationError(ChDelayError):
    code = "ValidationError"

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = list(problems)
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "message": "invalid configuration",
            "problems": [{"key": p, "message": m} for p, m in self.problems],
        }


class FormatError(ChDelayError):
    code = "FormatError"

"""Exception hierarchy.

Every error raised on bad model input derives from :class:`ModelError`, which is
itself a ``ValueError`` so callers that only care about "bad input" can catch
that. The CLI maps ``ModelError`` to exit code 2.
"""


class ModelError(ValueError):
    """Base class for inadmissible model or scenario input."""

    code = "ModelError"

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


class NonPositiveHorizon(ModelError):
    code = "NonPositiveHorizon"


class NodeOutOfRange(ModelError):
    code = "NodeOutOfRange"


class KernelNotNormalized(ModelError):
    code = "KernelNotNormalized"


class EmptySupport(ModelError):
    code = "EmptySupport"


class UnsnappedAtom(ModelError):
    code = "UnsnappedAtom"


class NonFiniteVol(ModelError):
    code = "NonFiniteVol"


class NonFiniteRate(ModelError):
    code = "NonFiniteRate"


class NonFiniteField(ModelError):
    code = "NonFiniteField"


class NegativeJumpProbability(ModelError):
    code = "NegativeJumpProbability"


class LossOutOfRange(ModelError):
    code = "LossOutOfRange"


class TotalExpectedLossAtAtom(ModelError):
    code = "TotalExpectedLossAtAtom"


class ScenarioParseError(ModelError):
    """Scenario file could not be parsed; carries 1-based line/column when known."""

    code = "ScenarioParseError"

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class PathFailure(RuntimeError):
    """One or more simulated paths failed; ``failures`` maps path index to error."""

    def __init__(self, failures):
        self.failures = dict(failures)
        idx = sorted(self.failures)
        shown = ", ".join(f"{i}: {self.failures[i]}" for i in idx[:5])
        more = f" (+{len(idx) - 5} more)" if len(idx) > 5 else ""
        super().__init__(f"{len(idx)} path(s) failed: {shown}{more}")

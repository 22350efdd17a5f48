"""Exception hierarchy.

Every error carries a short ``kind`` string that the CLI prints verbatim.
Candidate rejections are exceptions too; ``solve`` catches them per root and
reports them as diagnostics instead of failing the whole instance.
"""


class P4PError(Exception):
    kind = "error"


class DegenerateDivisor(P4PError, ValueError):
    kind = "degenerate-divisor"


class EigenFailure(P4PError, ArithmeticError):
    kind = "eigen-failure"


class NotCoplanar(P4PError, ValueError):
    kind = "not-coplanar"


class DegenerateScene(P4PError, ValueError):
    kind = "degenerate"


class RankDeficient(DegenerateScene):
    kind = "degenerate"


class SingularC(DegenerateScene):
    kind = "degenerate"


class DegenerateInstance(DegenerateScene):
    kind = "degenerate"


class DeflationFailed(P4PError, ArithmeticError):
    kind = "deflation-failed"


class GenerationExhausted(P4PError, RuntimeError):
    kind = "generation-exhausted"


class CandidateRejected(P4PError):
    """A real root of the univariate polynomial that is not a physical pose."""

    kind = "rejected"

    def __init__(self, message: str = "", beta: float = float("nan")):
        super().__init__(message or self.kind)
        self.beta = beta


class NegativeFocalSquared(CandidateRejected):
    kind = "negative-focal-squared"


class DenominatorVanishes(CandidateRejected):
    kind = "denominator-vanishes"


class RowsInconsistent(CandidateRejected):
    kind = "rows-inconsistent"


class CheiralityFailed(CandidateRejected):
    kind = "cheirality-failed"


class DistortionSingular(CandidateRejected):
    kind = "distortion-singular"

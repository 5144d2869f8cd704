"""Exception types shared across the package."""

from __future__ import annotations


class LQGameError(Exception):
    """Base class for every error raised by lqgame."""


class InvalidInputError(LQGameError, ValueError):
    """Input data violates a documented precondition."""


class ParseError(InvalidInputError):
    """A problem document does not match the schema.

    ``path`` is a dotted field path such as ``"A.rational[0][1].den"``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ValidationError(InvalidInputError):
    """A problem failed validation; ``violations`` lists every breach."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"problem is invalid: {lines}")


class NumericOverflowError(LQGameError, ArithmeticError):
    """A computation produced non-finite values.

    ``time`` is the model time at which it happened; ``path_index`` is set
    for Monte Carlo failures.
    """

    def __init__(self, message: str, time: float | None = None, path_index: int | None = None):
        self.time = time
        self.path_index = path_index
        where = []
        if time is not None:
            where.append(f"s={time:.6g}")
        if path_index is not None:
            where.append(f"path={path_index}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class RegularityError(LQGameError):
    """Refusal to build a strategy from a Riccati solution that is not regular."""

    def __init__(self, failed: list[str], report=None):
        self.failed = list(failed)
        self.report = report
        super().__init__("Riccati solution is not regular; failed: " + ", ".join(self.failed))

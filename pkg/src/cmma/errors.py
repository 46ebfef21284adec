"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CmmaError(Exception):
    """Base class for every error raised by this package."""


class DataError(CmmaError, ValueError):
    """Input data violates a schema or domain invariant."""


class ParseError(DataError):
    """A row of an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class RankDeficiencyError(CmmaError, ValueError):
    """A design matrix does not have full column rank."""

    def __init__(self, column: int, stage: str | None = None, name: str | None = None):
        self.column = column
        self.stage = stage
        self.name = name
        label = f"column {column}" + (f" ({name})" if name else "")
        where = f" in {stage} stage" if stage else ""
        super().__init__(f"rank-deficient design{where}: {label} is linearly dependent on earlier columns")


class UnderIdentificationError(CmmaError, ValueError):
    """Fewer usable instruments than endogenous regressors."""


class NumericError(CmmaError, ArithmeticError):
    """A numerical routine failed or produced an out-of-range quantity."""


class InsufficientTrialsError(CmmaError, ValueError):
    """Too few trials for the requested trial-level regression."""


class RelevanceError(CmmaError):
    """The relevance diagnostic failed and the caller did not override it."""

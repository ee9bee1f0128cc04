"""Exception types shared across the package.

Every error raised on a documented failure path is a subclass of
PatchworkError so callers (and the CLI) can map them to exit codes.
"""


class PatchworkError(Exception):
    pass


class DimensionMismatch(PatchworkError):
    pass


class NonFiniteParameter(PatchworkError):
    pass


class EmptyInput(PatchworkError):
    pass


class NonUnitNormal(PatchworkError):
    pass


class MemoryBudgetExceeded(PatchworkError):
    pass


class DegenerateGradient(PatchworkError):
    pass


class NonFiniteGradient(PatchworkError):
    pass


class NumericalDegeneracy(PatchworkError):
    pass


class DegenerateArrangement(PatchworkError):
    pass


class DegenerateMesh(PatchworkError):
    pass


class DegenerateBBox(PatchworkError):
    pass


class ParseError(PatchworkError):
    pass


class UnsupportedFormat(PatchworkError):
    pass


class VersionMismatch(PatchworkError):
    pass


class CorruptCheckpoint(PatchworkError):
    pass

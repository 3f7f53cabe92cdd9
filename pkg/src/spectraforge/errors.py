"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`SpectraForgeError`; the CLI prints the class name as the
machine-parsable error tag.
"""


class SpectraForgeError(Exception):
    pass


class FormatError(SpectraForgeError):
    """Malformed file header or manifest."""


class DataError(SpectraForgeError):
    """Non-finite or out-of-domain values."""


class IoError(SpectraForgeError):
    pass


class SpecError(SpectraForgeError):
    """Invalid argument, range, or configuration."""


class ShapeError(SpecError):
    pass


class StratifyError(SpectraForgeError):
    pass


class HoldoutError(SpectraForgeError):
    pass


class DegenerateScaleError(SpectraForgeError):
    pass


class NumericsError(SpectraForgeError):
    pass


class DivergedError(NumericsError):
    pass


class StatsError(SpectraForgeError):
    pass


class DegenerateError(SpectraForgeError):
    pass

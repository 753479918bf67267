"""Exception types raised across painsig.

Every error derives from :class:`PainsigError` so callers (the CLI in
particular) can catch the whole family in one place.
"""


class PainsigError(Exception):
    """Base class for all painsig errors."""


# dataio
class MissingFile(PainsigError, FileNotFoundError):
    pass


class MalformedRow(PainsigError, ValueError):
    def __init__(self, line_no, reason):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class DuplicateSegmentId(PainsigError, ValueError):
    pass


class NonPositiveFs(PainsigError, ValueError):
    pass


class InvalidBpm(PainsigError, ValueError):
    pass


class InvalidFs(PainsigError, ValueError):
    pass


class AgeOutOfSchemeRange(PainsigError, ValueError):
    def __init__(self, subject_id, age):
        self.subject_id = subject_id
        self.age = age
        super().__init__(f"subject {subject_id!r} aged {age} is outside 20-65")


# qrs / features
class SegmentTooShort(PainsigError, ValueError):
    pass


class NoQrsFound(PainsigError):
    pass


class InsufficientPeaks(PainsigError, ValueError):
    pass


class InsufficientIbis(PainsigError, ValueError):
    pass


class NoComputableWindow(PainsigError):
    pass


# classic_ml
class SingularCovariance(PainsigError, ArithmeticError):
    pass


class DegenerateClass(PainsigError, ValueError):
    pass


class DimensionMismatch(PainsigError, ValueError):
    pass


class NotConverged(PainsigError, RuntimeWarning):
    """Emitted as a warning; the (flagged) model is still returned."""


# mtl_nn
class InvalidEpsilon(PainsigError, ValueError):
    pass


class ShapeMismatch(PainsigError, ValueError):
    pass


class MissingTaskLabels(PainsigError, ValueError):
    pass


class NonFiniteLoss(PainsigError, FloatingPointError):
    pass


# evaluation
class GroupTooSmall(PainsigError, ValueError):
    pass


class EmptyConfusion(PainsigError, ValueError):
    pass


# render
class SignalTooShort(PainsigError, ValueError):
    pass

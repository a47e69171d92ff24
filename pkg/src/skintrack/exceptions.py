"""Exception hierarchy shared by every skintrack module."""


class SkinTrackError(Exception):
    """Base class for all errors raised by skintrack."""


class DecodeError(SkinTrackError):
    """An image file exists but could not be decoded."""


class EmptyRoi(SkinTrackError):
    """No pixel centre falls inside the region of interest."""


class ImageTooSmall(SkinTrackError, ValueError):
    pass


class IndexOutOfGrid(SkinTrackError, IndexError):
    pass


class MissingAnnotation(SkinTrackError):
    """Colour-card normalisation was requested without card corners."""


class ZeroMeanImage(SkinTrackError, ZeroDivisionError):
    pass


class EmptyDescriptorSet(SkinTrackError, ValueError):
    pass


class InsufficientMatches(SkinTrackError):
    pass


class NoConsensus(SkinTrackError):
    """RANSAC could not find an inlier set large enough to trust."""


class SampleTooSmall(SkinTrackError, ValueError):
    pass


class ZeroVariance(SkinTrackError, ValueError):
    pass


class ZeroVarianceDifferences(ZeroVariance):
    pass


class AllDifferencesZero(SkinTrackError, ValueError):
    pass


class LengthMismatch(SkinTrackError, ValueError):
    pass


class ZeroBaselineMean(SkinTrackError, ZeroDivisionError):
    pass


class ParseError(SkinTrackError):
    """A manifest or layout file is not well-formed."""


class ValidationError(SkinTrackError):
    """A manifest parsed but violates one of its invariants."""

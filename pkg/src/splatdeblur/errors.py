"""Exception types shared across the toolkit."""


class SplatDeblurError(Exception):
    """Base class for all toolkit errors."""


class AngleAtCutLocus(SplatDeblurError):
    """Rotation angle within tolerance of pi; the log map is not unique."""


class DimensionMismatch(SplatDeblurError):
    """Operands have incompatible shapes."""


class NonPositiveThreshold(SplatDeblurError):
    """Event threshold must be strictly positive."""


class EmptySequence(SplatDeblurError):
    """An operation requiring at least one element got none."""


class WrongChannelCount(SplatDeblurError):
    """Image has an unexpected number of channels."""


class CountMismatch(SplatDeblurError):
    """Sequences that must pair up elementwise have different lengths."""


class TargetExceedsCloud(SplatDeblurError):
    """Requested more samples than there are points."""


class InsufficientPointsInRadius(SplatDeblurError):
    """Too few points inside the sampling radius."""


class DegeneratePointmap(SplatDeblurError):
    """Pointmap has no usable pixels (all depths non-positive)."""


class InsufficientCorrespondences(SplatDeblurError):
    """Not enough 2D-3D correspondences for pose estimation."""


class NoConsensus(SplatDeblurError):
    """RANSAC found no hypothesis with an acceptable inlier ratio."""


class DisconnectedGraph(SplatDeblurError):
    """View graph must be connected for global alignment."""


class LengthMismatch(SplatDeblurError):
    """Trajectories being compared have different lengths."""


class ImageTooSmall(SplatDeblurError):
    """Image is smaller than the metric's window."""


class IoFailure(SplatDeblurError):
    """File could not be read or written."""

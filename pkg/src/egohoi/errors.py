"""Exception hierarchy shared by every module."""


class EgoHoiError(Exception):
    """Base class for all toolkit errors."""


class NonPositiveDepth(EgoHoiError):
    pass


class NonFiniteResidual(EgoHoiError):
    pass


class SingularNormalEquations(EgoHoiError):
    pass


class InsufficientCorrespondences(EgoHoiError):
    pass


class BehindCamera(EgoHoiError):
    pass


class NoConvergence(EgoHoiError):
    pass


class InsufficientViews(EgoHoiError):
    pass


class DegenerateRays(EgoHoiError):
    pass


class EmptyHeatmap(EgoHoiError):
    pass


class SideExceedsFrame(EgoHoiError):
    pass


class DimensionMismatch(EgoHoiError):
    pass


class SingleClassDataset(EgoHoiError):
    pass


class NoVisibleKeypoints(EgoHoiError):
    pass


class DegenerateRange(EgoHoiError):
    pass


class LengthMismatch(EgoHoiError):
    pass


class MissingPair(EgoHoiError):
    pass


class ManifestGap(EgoHoiError):
    pass


class SchemaError(EgoHoiError):
    pass

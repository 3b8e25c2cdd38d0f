"""Exception hierarchy shared by all qcforge modules."""


class QCError(Exception):
    """Base class for every validation error raised by qcforge."""


# -- NIfTI -------------------------------------------------------------------


class NiftiError(QCError):
    pass


class NotNifti(NiftiError):
    pass


class TruncatedHeader(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class BadDim(NiftiError):
    pass


class TruncatedPayload(NiftiError):
    pass


class NonFiniteVoxel(NiftiError):
    pass


class IoFailure(QCError):
    pass


# -- BIDS --------------------------------------------------------------------


class MalformedPath(QCError):
    pass


class SidecarError(QCError):
    pass


class RootUnreadable(QCError):
    pass


class MissingCoreParam(QCError):
    pass


# -- metrics -----------------------------------------------------------------


class MetricError(QCError):
    """A single image-quality metric could not be computed."""


class EmptyMask(MetricError):
    pass


class ZeroAirVariance(MetricError):
    pass


class ZeroDenominator(MetricError):
    pass


class AllZeroImage(MetricError):
    pass


class NoValidAxis(MetricError):
    pass


class GridMismatch(MetricError):
    pass


class EmptyUnion(MetricError):
    pass


class AllConstantVoxels(MetricError):
    pass


class ZeroRankVariance(MetricError):
    pass


# -- outlier screening -------------------------------------------------------


class TooFewValues(QCError):
    pass


class DegenerateSample(QCError):
    pass


# -- ledgers / CLI -----------------------------------------------------------


class InconsistentLedger(QCError):
    pass


class ConfigError(QCError):
    pass


class MissingStageInput(QCError):
    pass

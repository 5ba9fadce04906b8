"""Exception and warning types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInput(PipelineError):
    """An operation received an empty signal or sequence."""


class EmptySignal(PipelineError):
    """Signal extraction produced no samples (e.g. no valid ROI anywhere)."""


class EmptyTrack(PipelineError):
    """A landmark track contains no valid frame at all."""


class NoRoi(PipelineError):
    """No ROI can be derived for a frame (invalid landmark)."""


class OutOfFrame(PipelineError):
    """A projected point falls outside the target frame bounds."""


class PatchTooSmall(PipelineError):
    """An image patch is smaller than the optical-flow neighbourhood."""


class InvalidTimestep(PipelineError):
    """A non-positive frame interval was supplied."""


class TooShort(PipelineError):
    """A window has too few samples for the requested operation."""


class DegenerateWindow(PipelineError):
    """A window is constant and has no spectral content."""


class NoEstimate(PipelineError):
    """No valid source estimate is available for a window."""


class SingleClassFold(PipelineError):
    """A training fold contains only one class label."""


class NotTrained(PipelineError):
    """A model was used before it was trained."""


class CannotSplit(PipelineError):
    """Cross-validation split is impossible (fewer than 2 subjects)."""


class InsufficientData(PipelineError):
    """Not enough replication for a repeated-measures analysis."""


class NoPairs(PipelineError):
    """Estimate and reference sequences share no pooled segments."""


class Undefined(PipelineError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


class DatasetError(PipelineError):
    """A session directory fails validation."""


class DegenerateFrame(UserWarning):
    """A constant frame was normalized to all zeros."""


class ZeroVarianceFeature(UserWarning):
    """A feature had zero variance on the training fold; scale forced to 1."""


class UniformFallback(UserWarning):
    """All SNRs were zero; fusion fell back to uniform weights."""

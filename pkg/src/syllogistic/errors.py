class SyllogisticError(Exception):
    """Base class for errors raised by this package."""


class ModelError(SyllogisticError):
    """Bad checkpoint, bad config, or an invalid forward-pass request."""


class CheckpointError(ModelError):
    pass


class DatasetError(SyllogisticError):
    """Invalid scheme, template, term, or dataset file."""


class MetricError(SyllogisticError, ValueError):
    """Scores requested for tokens or inputs that cannot produce them."""


class InterventionError(SyllogisticError, ValueError):
    """An ill-formed sweep, path-patch or ablation request."""

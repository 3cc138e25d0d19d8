"""Exception hierarchy shared by every module."""


class ShapkError(Exception):
    """Base class for all errors raised by shapk."""


class ConfigurationError(ShapkError, ValueError):
    """Invalid argument, configuration, or model/input dimension mismatch."""


class LoadError(ShapkError):
    """A model, dataset, or suite file could not be parsed or validated."""


class OracleScaleError(ShapkError):
    """Exact enumeration was requested for too many features."""


class EstimatorError(ShapkError):
    """An estimator produced a non-finite replicate."""


class DegenerateSampleError(EstimatorError):
    """A sampled KernelSHAP design stayed singular after one retry."""

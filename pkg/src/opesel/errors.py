"""Exception types raised across the package."""


class EmptyRequestError(ValueError):
    """A sampling routine was asked for zero items."""


class FullSupportError(ValueError):
    """A logged propensity is zero, so importance ratios are undefined."""


class DegenerateSplitError(RuntimeError):
    """Subsampling left one of the two partitions empty."""


class DegenerateRateError(ValueError):
    """The expected subsampling rate at a context is numerically 0 or 1."""


class TrainingError(RuntimeError):
    """Gradient-based training produced non-finite values."""


class StaleCacheError(RuntimeError):
    """A forward cache was used with parameters it was not computed from."""


class NotApplicableError(ValueError):
    """The requested procedure cannot run on the given data."""


class InsufficientDataError(ValueError):
    """Too few records to compute the requested statistic."""


class ConfigError(ValueError):
    """An experiment config file is malformed or incomplete."""

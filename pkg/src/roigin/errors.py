"""Exception and warning types shared across the package."""


class RoiginError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(RoiginError, ValueError):
    """Operands have incompatible shapes; message carries both shapes."""


class NonFinite(RoiginError, ValueError):
    """A NaN or Inf appeared where only finite values are allowed."""


class ZeroVariance(RoiginError, ValueError):
    """A time-series row is constant, so its correlation is undefined."""


class InvalidThreshold(RoiginError, ValueError):
    """Edge keep fraction outside (0, 1]."""


class BadEdgeIndex(RoiginError, ValueError):
    """Edge endpoint outside the node range."""


class ZeroProjection(RoiginError, ValueError):
    """Pooling projection vector has (near-)zero norm."""


class BadK(RoiginError, ValueError):
    """Top-k count outside the valid [1, N-1] range for the ranking loss."""


class EmptyInput(RoiginError, ValueError):
    """An operation received an empty collection it cannot summarize."""


class ConfigError(RoiginError, ValueError):
    """Invalid configuration; message names the offending field."""


class Diverged(RoiginError, RuntimeError):
    """Training produced a non-finite loss."""


class RankDeficientWarning(UserWarning):
    """Covariate design matrix was singular; collinear columns were dropped."""


class DegenerateVarianceWarning(UserWarning):
    """Predictions are constant; correlation reported as 0."""

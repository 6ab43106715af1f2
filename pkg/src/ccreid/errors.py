"""Exception types shared across the package.

Every error raised on purpose by this package derives from ReIDError so
callers can catch the whole family at once.  The CLI maps configuration
problems to exit code 1 and numeric runtime failures to exit code 2.
"""


class ReIDError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ReIDError):
    """Base class for errors caused by bad configuration or bad files."""


class NumericRuntimeError(ReIDError):
    """Base class for errors caused by degenerate numeric state at runtime."""


# --- configuration / input shape family -----------------------------------

class InvalidConfigError(ConfigurationError):
    """A config object or config file violates its documented constraints."""


class DatasetFormatError(ConfigurationError):
    """A dataset file is malformed, truncated, or has the wrong version."""


class CheckpointFormatError(ConfigurationError):
    """A checkpoint file is malformed, truncated, or has the wrong version."""


class DimensionMismatchError(ConfigurationError):
    """Two operands that must share a dimension do not."""


class ShapeMismatchError(ConfigurationError):
    """Parameter, gradient, or optimizer tensors disagree in shape."""


class EmptyInputError(ConfigurationError):
    """An operation that needs at least one element received none."""


class EmptyTemplateBankError(ConfigurationError):
    """Augmentation was requested with an empty style template bank."""


class SyntheticInputError(ConfigurationError):
    """A synthetic sample was passed where an original is required."""


class UnknownClusterError(ConfigurationError):
    """A cluster id is outside the range of the current labeling or memory."""


class EmptyClusterError(ConfigurationError):
    """Memory initialization received a cluster with no features."""


class EmptyBatchError(ConfigurationError):
    """A memory update received an empty feature batch."""


class WrongBatchSizeError(ConfigurationError):
    """A memory update received a batch of the wrong size."""


class InvalidEpsError(ConfigurationError):
    """Clustering received a non-positive neighborhood radius."""


class InvalidTemperatureError(ConfigurationError):
    """A contrastive loss received a non-positive temperature."""


class MalformedGroupError(ConfigurationError):
    """A training batch's group structure is inconsistent."""


class NoValidMatchError(ConfigurationError):
    """Some query has no valid gallery match under the chosen protocol."""

    def __init__(self, message, identity_ids=()):
        super().__init__(message)
        self.identity_ids = tuple(identity_ids)


# --- numeric runtime family ------------------------------------------------

class ZeroVectorError(NumericRuntimeError):
    """A (near-)zero vector reached an operation that needs a direction."""


class SupportViolationError(NumericRuntimeError):
    """KL divergence saw p > 0 where q = 0."""


class NotScalarRootError(NumericRuntimeError):
    """backward() was called on a node whose value is not a scalar."""


class NonFiniteGradientError(NumericRuntimeError):
    """An optimizer step received a NaN or infinite gradient."""


class NonFiniteLossError(NumericRuntimeError):
    """A loss value came out NaN or infinite during training."""


class TooFewClustersError(NumericRuntimeError):
    """Clustering produced fewer clusters than a batch needs."""

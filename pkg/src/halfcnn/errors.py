"""Exception hierarchy shared by every halfcnn module."""


class HalfCNNError(Exception):
    """Base class for all errors raised by halfcnn."""


class ShapeError(HalfCNNError, ValueError):
    """Channel counts or array shapes do not agree."""


class DimensionError(HalfCNNError, ValueError):
    """Spatial sizes are not divisible or a region falls outside a tensor."""


class ConfigError(HalfCNNError, ValueError):
    """A network or layer configuration violates its invariants."""


class InputError(HalfCNNError, ValueError):
    """Bad user-supplied values (windows, maps, fixations, objective)."""


class DegenerateError(HalfCNNError, ValueError):
    """A sample or component carries no usable signal (empty mask, zero weights)."""


class UsageError(HalfCNNError, RuntimeError):
    """API misuse: empty batch, stale cache."""


class FormatError(HalfCNNError, ValueError):
    """A file does not follow the expected on-disk format."""


class CheckpointError(FormatError):
    pass


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class LengthMismatchError(CheckpointError):
    pass

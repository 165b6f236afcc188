"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents are inconsistent with an operation's contract."""


class LayoutError(ValueError):
    """A layout transform was asked to run on indivisible extents."""


class ContractError(RuntimeError):
    """An API was called outside its stated precondition."""


class ConfigError(ValueError):
    """A model configuration violates one of its invariants."""


class ValidationError(ValueError):
    """Runtime data (e.g. class-index targets) is out of range."""


class TrainingError(RuntimeError):
    """The training loop hit a non-recoverable state (e.g. non-finite loss)."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CheckpointMagicError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """The file carries an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ended before the declared payload was read."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor does not match the receiving model's shape."""

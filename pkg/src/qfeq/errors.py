"""Exception hierarchy shared by all qfeq subsystems.

Every error raised on purpose by the library derives from :class:`QfeqError`
so callers (and the CLI) can distinguish library failures from bugs.  The CLI
maps each subclass to a stable process exit code.
"""


class QfeqError(Exception):
    """Base class for all qfeq errors."""

    exit_code = 1


class ConfigurationError(QfeqError):
    """Invalid configuration value or inconsistent parameter combination."""

    exit_code = 2


class LengthError(QfeqError):
    """Sequence length violates an operation's contract."""

    exit_code = 4


class ShapeError(QfeqError):
    """Array shape inconsistent with the model or operation."""

    exit_code = 4


class RangeError(QfeqError):
    """Invalid numeric range, e.g. quantizer bounds with a >= c."""

    exit_code = 2


class ModeError(QfeqError):
    """Operation invoked with the wrong scheme mode (ptq vs taq)."""

    exit_code = 2


class StateError(QfeqError):
    """Object is in the wrong representation/state for the operation."""

    exit_code = 4


class SynchronizationError(QfeqError):
    """Cross-correlation peak too weak to align receive and transmit data."""

    exit_code = 4


class TrainingError(QfeqError):
    """Training diverged or could not produce finite parameters."""

    exit_code = 5


class AccumulatorOverflowError(QfeqError):
    """Fixed-point accumulation exceeded the 32-bit accumulator contract."""

    exit_code = 5


class PairingError(QfeqError):
    """Experiment records cannot be paired (mismatched powers or seeds)."""

    exit_code = 4


class MissingPrerequisiteError(QfeqError):
    """A pipeline stage was invoked before its input artifacts exist."""

    exit_code = 3


class DataFormatError(QfeqError):
    """Persisted file is corrupt, has a bad magic/version, or a stale hash."""

    exit_code = 4

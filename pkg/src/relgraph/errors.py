"""Exception hierarchy shared by every relgraph module."""


class RelgraphError(Exception):
    """Base class for all errors raised by relgraph."""


class ManifestParseError(RelgraphError):
    pass


class SchemaViolation(RelgraphError):
    """A loaded or generated database breaks a schema invariant.

    ``table`` and ``row`` locate the offending data when known.
    """

    def __init__(self, message, table=None, row=None):
        super().__init__(message)
        self.table = table
        self.row = row


class IoError(RelgraphError, OSError):
    pass


class InvalidSpec(RelgraphError, ValueError):
    pass


class UnknownColumn(RelgraphError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown column"


class EmptyCorpus(RelgraphError, ValueError):
    pass


class RowOutOfRange(RelgraphError, IndexError):
    pass


class MaskTargetNotInRow(RelgraphError, ValueError):
    pass


class DimensionMismatch(RelgraphError, ValueError):
    pass


class InvalidSeedNode(RelgraphError, IndexError):
    pass


class TokenOutOfRange(RelgraphError, ValueError):
    pass


class SequenceTooLong(RelgraphError, ValueError):
    pass


class TargetTooLong(RelgraphError, ValueError):
    pass


class LengthMismatch(RelgraphError, ValueError):
    pass


class MissingGradients(RelgraphError):
    pass


class ChecksumError(RelgraphError):
    pass


class EmptyTrainSplit(RelgraphError, ValueError):
    pass


class InvalidMaskSpec(RelgraphError, ValueError):
    pass


class MissingPhase1State(RelgraphError):
    pass


class EmptySplit(RelgraphError, ValueError):
    pass


class MissingVariant(RelgraphError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing variant"


class MissingCheckpoint(RelgraphError, FileNotFoundError):
    pass


class ConfigError(RelgraphError, ValueError):
    pass

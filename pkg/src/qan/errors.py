"""Exception hierarchy shared across the workbench."""


class QanError(Exception):
    """Base class for all workbench errors."""


class ShapeError(QanError, ValueError):
    """Operands have incompatible shapes or dimensions."""


class EmptyInputError(QanError, ValueError):
    """An operation received a sequence with no usable positions."""


class ConfigError(QanError, ValueError):
    """Invalid hyperparameter, variant, or configuration value."""


class DataError(QanError):
    """Base class for corpus, file-format, and checkpoint problems."""


class CorpusParseError(DataError):
    """Malformed corpus file (XML or JSONL)."""


class LabelError(DataError):
    """A gold label outside the known label set."""


class FormatError(DataError):
    """A binary artifact (vector store, checkpoint) violates its format."""


class CheckpointError(FormatError):
    """Checkpoint file is corrupt, truncated, or incompatible."""


class MissingVectorError(DataError):
    """A precomputed-vector lookup failed for a token id."""


class NoGoldAnswerError(DataError):
    """A thread has no Good answer where one is required."""


class TemplateError(QanError, ValueError):
    """A prompt template is missing a required placeholder."""


class TransportError(QanError):
    """A remote completion call failed after retries; safe to resume."""

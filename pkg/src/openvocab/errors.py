"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DataFormatError -> 3,
NumericError -> 4.
"""


class OpenVocabError(Exception):
    """Base class for all package errors."""


class ConfigError(OpenVocabError):
    """Invalid configuration or precondition on user-supplied parameters."""


class ShapeError(OpenVocabError):
    """Array dimensions do not satisfy an operation's contract."""


class DataFormatError(OpenVocabError):
    """Malformed file content (bad magic, truncation, non-finite payload)."""


class NumericError(OpenVocabError):
    """Non-finite values where finite ones are required (diverged training,
    zero-norm embeddings, degenerate batches)."""


class DegenerateBatchError(NumericError):
    """All points of an embedding set coincide; relational loss undefined."""


class EvaluationError(OpenVocabError):
    """Evaluation requested on empty or inconsistent inputs."""

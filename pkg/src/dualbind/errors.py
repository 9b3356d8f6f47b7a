"""Exception hierarchy shared by every module."""


class DualBindError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DualBindError, ValueError):
    pass


class VocabularyError(DualBindError, KeyError):
    """A word outside the closed vocabulary was encountered."""

    def __init__(self, word):
        self.word = word
        super().__init__(f"word not in vocabulary: {word!r}")

    def __str__(self):
        return self.args[0]


class ConfigurationError(DualBindError, ValueError):
    pass


class FormatError(DualBindError, ValueError):
    """A file did not match its declared binary or text layout."""


class NumericError(DualBindError, ArithmeticError):
    pass

"""Exception hierarchy shared by every stage of the toolkit."""


class MeeqaError(Exception):
    """Base class for all toolkit errors."""


class MalformedInputError(MeeqaError, ValueError):
    """Raised when an input record cannot be interpreted.

    ``lineno`` is set when the record came from a JSONL file.
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class MissingAnnotationError(MeeqaError, ValueError):
    pass


class MalformedAnnotationError(MeeqaError, ValueError):
    pass


class OutOfRangeError(MeeqaError, IndexError):
    pass


class QuestionTooLongError(MeeqaError, ValueError):
    pass


class InvalidSpanError(MeeqaError, ValueError):
    pass


class VocabularyError(MeeqaError, ValueError):
    pass


class DegenerateMaskError(MeeqaError, ValueError):
    pass


class LabelError(MeeqaError, ValueError):
    pass


class NumericError(MeeqaError, ArithmeticError):
    """A non-finite value appeared in the computation graph.

    ``trace`` lists op names from the loss down to the offending node.
    """

    def __init__(self, message, trace=()):
        if trace:
            message = f"{message} (trace: {' <- '.join(trace)})"
        super().__init__(message)
        self.trace = tuple(trace)


class ConfigError(MeeqaError, ValueError):
    pass


class NoCandidateError(MeeqaError, ValueError):
    pass


class AlignmentError(MeeqaError, ValueError):
    pass

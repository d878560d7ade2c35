"""Exception hierarchy.

Every error class carries the process exit code the CLI maps it to, so a
failing stage can be told apart from the shell.
"""


class LogPatternError(Exception):
    exit_code = 1


class ParseError(LogPatternError):
    exit_code = 3

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class MalformedLine(ParseError):
    pass


class EmptyEventType(ParseError):
    pass


class NoArguments(ParseError):
    pass


class InvalidUtf8(ParseError):
    pass


class DuplicateLogId(ParseError):
    pass


class EmptyCorpus(LogPatternError):
    exit_code = 3


class ArtifactIOError(LogPatternError):
    exit_code = 4


class MissingArtifact(LogPatternError):
    exit_code = 5


class DimensionMismatch(LogPatternError):
    exit_code = 6


class LineageMismatch(LogPatternError):
    exit_code = 12


class NonFiniteLoss(LogPatternError):
    exit_code = 7

    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"non-finite loss at step {step}" + (f": {detail}" if detail else ""))


class UnknownToken(LogPatternError):
    exit_code = 8

    def __init__(self, token):
        self.token = token
        super().__init__(f"token not in vocabulary: {token!r}")


class IndexOutOfRange(LogPatternError, IndexError):
    exit_code = 8


class InvalidSpec(LogPatternError):
    exit_code = 9


class SingleClassCorpus(LogPatternError):
    exit_code = 10


class GateFailed(LogPatternError):
    exit_code = 11

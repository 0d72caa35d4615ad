"""Exception hierarchy shared by every morphfit module."""


class MorphfitError(Exception):
    """Base class; the CLI maps subclasses to distinct ``kind`` tags."""

    kind = "error"


class ParseError(MorphfitError, ValueError):
    kind = "parse"

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(MorphfitError, ValueError):
    kind = "validation"


class CorrespondenceError(ValidationError):
    """Meshes disagree on vertex count or topology."""

    kind = "correspondence"

    def __init__(self, message, index):
        self.index = index
        super().__init__(message)


class DegenerateError(MorphfitError, ValueError):
    """Input is numerically degenerate (rank deficiency, zero scale...)."""

    kind = "degenerate"


class InsufficientDataError(ValidationError):
    kind = "insufficient"

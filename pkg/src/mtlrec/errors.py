"""Exception hierarchy shared by every pipeline stage.

The CLI maps each class to a process exit code.
"""


class MtlError(Exception):
    exit_code = 1


class ConfigError(MtlError, ValueError):
    exit_code = 2


class MissingArtifactError(MtlError):
    exit_code = 3

    def __init__(self, message, required_stage=None):
        super().__init__(message)
        self.required_stage = required_stage


class StaleArtifactError(MissingArtifactError):
    pass


class NumericError(MtlError, ArithmeticError):
    exit_code = 4


class ParseError(MtlError, ValueError):
    """Malformed artifact line. Carries file, line number and field."""

    exit_code = 3

    def __init__(self, path, lineno, field, reason):
        self.path = str(path)
        self.lineno = lineno
        self.field = field
        super().__init__(f"{self.path}:{lineno}: field {field!r}: {reason}")


class EmptyGraphError(MtlError, ValueError):
    pass


class DegenerateRepresentationError(MtlError, ValueError):
    pass

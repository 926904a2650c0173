"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class RevInrError(Exception):
    exit_code = 1


class ConfigError(RevInrError, ValueError):
    exit_code = 2


class VolumeIOError(RevInrError, OSError):
    exit_code = 3


class SizeMismatchError(VolumeIOError):
    def __init__(self, path, expected, actual):
        self.path = str(path)
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{path}: expected {expected} bytes from dims and dtype, found {actual}"
        )


class NumericError(RevInrError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class ContractError(RevInrError):
    """Violated pre/postcondition: bad domain, invariant breach, API misuse."""

    exit_code = 5


class DomainError(ContractError, ValueError):
    pass


class InvariantError(ContractError, ValueError):
    pass


class UsageError(ContractError, ValueError):
    pass


class ArchitectureMismatchError(ContractError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"architecture mismatch: expected {expected}, got {actual}")


class ResourceError(RevInrError, MemoryError):
    exit_code = 4

    def __init__(self, required_bytes, budget_bytes):
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f"reconstruction needs {required_bytes} bytes, budget is {budget_bytes}"
        )

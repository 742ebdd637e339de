class VarselError(Exception):
    """Base exception for varsel."""

    pass


class UnknownStateVariableError(VarselError, KeyError):
    """Raised when a state variable identifier cannot be resolved."""

    def __init__(self, sv_id, context: str = ""):
        self.sv_id = sv_id
        message = f"Unknown state variable {sv_id!r}"
        if context:
            message = f"{message} ({context})"
        super().__init__(message)

    def __str__(self) -> str:
        # KeyError.__str__ would quote the message
        return self.args[0]


class ContractViolationError(VarselError):
    """Raised when an operation is called outside its preconditions."""

    pass


class ConditioningCycleError(VarselError):
    """Raised when the CSV conditioning graph contains a cycle."""

    pass


class DatasetFormatError(VarselError):
    """Raised when an IDX file is malformed."""

    pass


class DatasetNotFoundError(VarselError):
    """Raised when dataset files are missing."""

    pass


class ConfigurationError(VarselError):
    """Raised when a run configuration is invalid."""

    pass


class TransitionTableError(VarselError):
    """Raised when the FSM transition table cannot be parsed."""

    pass

"""Exception hierarchy shared across the package."""


class SymcheckError(Exception):
    """Base class for all package errors."""


class KnowledgeBaseError(SymcheckError):
    """Knowledge-base file failed to parse or validate."""


class DatasetError(SymcheckError):
    """Dataset file failed to parse or validate."""


class ContractError(SymcheckError):
    """An operation was called outside its documented contract."""


class NonFiniteError(SymcheckError):
    """A NaN or Inf appeared in a numeric computation."""


class TrainingDiverged(SymcheckError):
    """Training loss became non-finite; best checkpoint is attached."""

    def __init__(self, message: str, best_state=None):
        super().__init__(message)
        self.best_state = best_state

from typing import ClassVar, Optional
from dataclasses import dataclass


@dataclass
class Error(Exception):
    code: str
    message: Optional[str] = None
    details: Optional[dict] = None

    # Process exit status used by the command-line layer
    exit_code: ClassVar[int] = 3

    def __str__(self):
        if self.message:
            return f"{self.code}: {self.message}"
        return self.code


@dataclass
class ValidationError(Error):
    code: str = "validation_error"
    exit_code: ClassVar[int] = 2


@dataclass
class InvalidInputError(Error):
    code: str = "invalid_input"


@dataclass
class ContractViolationError(Error):
    code: str = "contract_violation"


@dataclass
class CapacityError(Error):
    code: str = "capacity_exceeded"


@dataclass
class InvalidStateError(Error):
    code: str = "invalid_state"


@dataclass
class NumericError(Error):
    code: str = "numeric_error"


@dataclass
class ResourceError(Error):
    code: str = "resource_error"
    exit_code: ClassVar[int] = 4


@dataclass
class NotFoundError(Error):
    code: str = "not_found"
    exit_code: ClassVar[int] = 4

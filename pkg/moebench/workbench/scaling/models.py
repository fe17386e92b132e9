import math
from dataclasses import dataclass
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import ValidationError


def _positive(**values: float) -> ValidationError | None:
    for name, value in values.items():
        if not value > 0 or not math.isfinite(value):
            return ValidationError("scaling.non_positive", f"{name} must be positive", details={name: value})
    return None


@dataclass(frozen=True)
class BudgetQuery:
    N: float
    D: float
    B: float
    B_crit: float

    @classmethod
    def create(cls, N: float, D: float, B: float, B_crit: float) -> Result["BudgetQuery", ValidationError]:
        if error := _positive(N=N, D=D, B=B, B_crit=B_crit):
            return Failure(error)
        return Success(cls(float(N), float(D), float(B), float(B_crit)))


@dataclass(frozen=True)
class IsoFlopPoint:
    C_min: float
    N: float
    D: float
    loss: float

    @classmethod
    def create(cls, C_min: float, N: float, D: float, loss: float) -> Result["IsoFlopPoint", ValidationError]:
        if error := _positive(C_min=C_min, N=N, D=D, loss=loss):
            return Failure(error)
        return Success(cls(float(C_min), float(N), float(D), float(loss)))


@dataclass(frozen=True)
class IsoFlopMinimum:
    x_opt: float
    loss_opt: float
    # Quadratic coefficients of a*x^2 + b*x + c
    coefficients: tuple[float, float, float]
    # Vertex lies outside the sampled x range
    extrapolated: bool = False

    def to_dict(self) -> dict:
        return {
            "x_opt": self.x_opt,
            "loss_opt": self.loss_opt,
            "coefficients": list(self.coefficients),
            "extrapolated": self.extrapolated,
        }


@dataclass(frozen=True)
class PowerLawFit:
    """ y = coefficient * C_min ** exponent """

    coefficient: float
    exponent: float
    residual: float = 0.0

    @classmethod
    def create(cls, coefficient: float, exponent: float, residual: float = 0.0) -> Result["PowerLawFit", ValidationError]:
        if error := _positive(coefficient=coefficient):
            return Failure(error)
        if not math.isfinite(exponent):
            return Failure(ValidationError("scaling.non_finite_exponent", "exponent must be finite"))
        return Success(cls(float(coefficient), float(exponent), float(residual)))

    def to_dict(self) -> dict:
        return {"coefficient": self.coefficient, "exponent": self.exponent, "residual": self.residual}


@dataclass(frozen=True)
class IsoFlopOptimum:
    """ Compute-optimal model size and token count read off one isoFLOP profile. """

    C_min: float
    n_opt: float
    d_opt: float
    loss_opt: float
    extrapolated: bool

    def to_dict(self) -> dict:
        return {
            "c_min": self.C_min,
            "n_opt": self.n_opt,
            "d_opt": self.d_opt,
            "loss_opt": self.loss_opt,
            "extrapolated": self.extrapolated,
        }


@dataclass(frozen=True)
class CrossLawCheck:
    """ Budget at which the N-law reaches n_target, and the D-law's tokens there. """

    n_target: float
    C_min: float
    d_opt: float

    def to_dict(self) -> dict:
        return {"n_target": self.n_target, "c_min": self.C_min, "d_opt": self.d_opt}

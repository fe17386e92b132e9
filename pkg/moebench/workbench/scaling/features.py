from logging import Logger, getLogger
from dataclasses import dataclass
from typing import Optional
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error, InvalidInputError
from .models import IsoFlopPoint, IsoFlopOptimum, PowerLawFit, CrossLawCheck
from .laws import (
    REFERENCE_N_LAW,
    REFERENCE_D_LAW,
    compute_budget,
    dense_budget,
    min_budget,
    fit_power_law,
    isoflop_optima,
    cross_law_check,
)


@dataclass(frozen=True)
class BudgetReport:
    N: float
    D: float
    compute_budget: float
    dense_budget: float
    min_budget: Optional[float] = None
    b_over_bcrit: Optional[float] = None
    cross_law: Optional[CrossLawCheck] = None

    def to_dict(self) -> dict:
        return {
            "n": self.N,
            "d": self.D,
            "compute_budget": self.compute_budget,
            "dense_budget": self.dense_budget,
            "b_over_bcrit": self.b_over_bcrit,
            "min_budget": self.min_budget,
            "cross_law": self.cross_law.to_dict() if self.cross_law else None,
        }


class EstimateBudget:
    """
    MoE compute budget for (N, D), optionally with the critical-batch
    correction and the cross-law check of the reference laws.
    """

    def __init__(
        self,
        n_law: PowerLawFit = REFERENCE_N_LAW,
        d_law: PowerLawFit = REFERENCE_D_LAW,
        logger: Logger = getLogger("scaling-laws"),
    ):
        self.n_law = n_law
        self.d_law = d_law
        self._logger = logger

    def execute(
        self,
        N: float,
        D: float,
        b_over_bcrit: Optional[float] = None,
        target_n: Optional[float] = None,
    ) -> Result[BudgetReport, Error]:

        budget = compute_budget(N, D)
        if not is_successful(budget):
            return budget

        budget = budget.unwrap()
        corrected = None
        if b_over_bcrit is not None:
            corrected = min_budget(budget, b_over_bcrit, 1.0)
            if not is_successful(corrected):
                return corrected
            corrected = corrected.unwrap()

        check = None
        if target_n is not None:
            check = cross_law_check(self.n_law, self.d_law, target_n)
            if not is_successful(check):
                return check
            check = check.unwrap()

        self._logger.debug("N=%g D=%g C=%.12g", N, D, budget)
        return Success(BudgetReport(N, D, budget, dense_budget(N, D), corrected, b_over_bcrit, check))


class FindIsoFlopOptima:
    """
    Compute-optimal N and D per budget from isoFLOP measurements.
    """

    def __init__(self, logger: Logger = getLogger("scaling-laws")):
        self._logger = logger

    def execute(self, points: list[IsoFlopPoint]) -> Result[list[IsoFlopOptimum], Error]:

        match isoflop_optima(points):

            case Success(optima):
                for optimum in optima:
                    if optimum.extrapolated:
                        self._logger.warning("optimum at C_min=%g lies outside the sampled range", optimum.C_min)
                return Success(optima)

            case Failure(error):
                return Failure(error)


@dataclass(frozen=True)
class ScalingLawFit:
    optima: list[IsoFlopOptimum]
    n_law: PowerLawFit
    d_law: PowerLawFit

    def to_dict(self) -> dict:
        return {
            "n_law": self.n_law.to_dict(),
            "d_law": self.d_law.to_dict(),
            "optima": [optimum.to_dict() for optimum in self.optima],
        }


class FitScalingLaws:
    """
    isoFLOP optima followed by N_opt and D_opt power laws over C_min.
    """

    def __init__(self, find_optima: FindIsoFlopOptima = None, logger: Logger = getLogger("scaling-laws")):
        self.find_optima = find_optima or FindIsoFlopOptima()
        self._logger = logger

    def execute(self, points: list[IsoFlopPoint]) -> Result[ScalingLawFit, Error]:

        optima = self.find_optima.execute(points)
        if not is_successful(optima):
            return optima

        optima = optima.unwrap()
        if len(optima) < 2:
            return Failure(InvalidInputError(
                "scaling.too_few_budgets",
                "fitting laws needs isoFLOP profiles at 2 or more budgets",
                details={"budgets": len(optima)},
            ))

        n_law = fit_power_law([(optimum.C_min, optimum.n_opt) for optimum in optima])
        d_law = fit_power_law([(optimum.C_min, optimum.d_opt) for optimum in optima])
        for law in (n_law, d_law):
            if not is_successful(law):
                return law

        self._logger.debug("fitted %d budgets", len(optima))
        return Success(ScalingLawFit(optima, n_law.unwrap(), d_law.unwrap()))

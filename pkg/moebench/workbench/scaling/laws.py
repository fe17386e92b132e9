"""
MoE compute budget, critical-batch correction, isoFLOP minima and power-law fits.

isoFLOP profiles are fitted in log10 space (x = log10 N or log10 D). Power
laws y = coefficient * C_min ** exponent are fitted by unweighted least
squares on (ln C_min, ln y).
"""

import math
from collections import defaultdict
from typing import Iterable, Sequence
import numpy as np
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import InvalidInputError, NumericError
from .models import IsoFlopPoint, IsoFlopMinimum, IsoFlopOptimum, PowerLawFit, CrossLawCheck


# C = 9.59 * N * D + 2.3e8 * D, opaque constants of the MoE budget model
MOE_FLOPS_PER_PARAM_TOKEN = 9.59
MOE_FLOPS_PER_TOKEN = 2.3e8
DENSE_FLOPS_PER_PARAM_TOKEN = 6.0

# Published optimal-size and optimal-token laws of the MoE budget model
REFERENCE_N_LAW = PowerLawFit(coefficient=5.9e-3, exponent=0.5305)
REFERENCE_D_LAW = PowerLawFit(coefficient=3.2, exponent=0.50)

# Quadratic terms below this (relative to the other coefficients) count as flat
CURVATURE_TOLERANCE = 1e-10


def _check_positive(**values: float) -> InvalidInputError | None:
    for name, value in values.items():
        if not value > 0 or not math.isfinite(value):
            return InvalidInputError("scaling.non_positive", f"{name} must be positive", details={name: value})
    return None


def compute_budget(N: float, D: float) -> Result[float, InvalidInputError]:
    if error := _check_positive(N=N, D=D):
        return Failure(error)
    return Success(MOE_FLOPS_PER_PARAM_TOKEN * N * D + MOE_FLOPS_PER_TOKEN * D)


def dense_budget(N: float, D: float) -> float:
    """ 6ND, the usual dense-transformer estimate. """
    return DENSE_FLOPS_PER_PARAM_TOKEN * N * D


def min_budget(C: float, B: float, B_crit: float) -> Result[float, InvalidInputError]:
    """ C / (1 + B / B_crit) """
    if error := _check_positive(C=C, B=B, B_crit=B_crit):
        return Failure(error)
    return Success(C / (1 + B / B_crit))


def isoflop_minimum(points: Sequence[tuple[float, float]]) -> Result[IsoFlopMinimum, InvalidInputError | NumericError]:
    """
    Vertex of the least-squares parabola through (x, loss) points of one budget.
    """
    if len(points) == 0:
        return Failure(InvalidInputError("scaling.too_few_points", "isoFLOP fit needs at least 3 distinct x values"))

    x, loss = (np.asarray(column, dtype=np.float64) for column in zip(*points))

    if np.unique(x).size < 3:
        return Failure(InvalidInputError(
            "scaling.too_few_points",
            "isoFLOP fit needs at least 3 distinct x values",
            details={"distinct": int(np.unique(x).size)},
        ))

    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(loss)):
        return Failure(InvalidInputError("scaling.non_finite", "x and loss must be finite"))

    # Centered fit, coefficients mapped back to x afterwards
    center = float(x.mean())
    a, b_u, c_u = np.polyfit(x - center, loss, 2)

    if a <= CURVATURE_TOLERANCE * max(1.0, abs(b_u), abs(c_u)):
        return Failure(NumericError(
            "scaling.non_convex_fit",
            "quadratic fit has no interior minimum (a <= 0)",
            details={"a": float(a)},
        ))

    vertex_u = -b_u / (2 * a)
    loss_opt = c_u - b_u**2 / (4 * a)
    x_opt = vertex_u + center
    coefficients = (float(a), float(b_u - 2 * a * center), float(a * center**2 - b_u * center + c_u))

    return Success(IsoFlopMinimum(
        x_opt=float(x_opt),
        loss_opt=float(loss_opt),
        coefficients=coefficients,
        extrapolated=not x.min() <= x_opt <= x.max(),
    ))


def fit_power_law(pairs: Sequence[tuple[float, float]]) -> Result[PowerLawFit, InvalidInputError]:

    if len(pairs) < 2:
        return Failure(InvalidInputError("scaling.too_few_points", "power-law fit needs at least 2 pairs"))

    c_min, y = (np.asarray(column, dtype=np.float64) for column in zip(*pairs))

    if not np.all(c_min > 0) or not np.all(y > 0) or not np.all(np.isfinite(c_min)) or not np.all(np.isfinite(y)):
        return Failure(InvalidInputError("scaling.non_positive", "C_min and y must be positive"))

    if np.unique(c_min).size < 2:
        return Failure(InvalidInputError("scaling.degenerate_budgets", "power-law fit needs at least 2 distinct budgets"))

    log_c, log_y = np.log(c_min), np.log(y)
    exponent, intercept = np.polyfit(log_c, log_y, 1)
    residual = math.sqrt(float(np.mean((log_y - (intercept + exponent * log_c)) ** 2)))

    return Success(PowerLawFit(coefficient=math.exp(intercept), exponent=float(exponent), residual=residual))


def predict_optimal(fit: PowerLawFit, C_min: float) -> Result[float, InvalidInputError]:
    if error := _check_positive(C_min=C_min):
        return Failure(error)
    return Success(fit.coefficient * C_min ** fit.exponent)


def invert_power_law(fit: PowerLawFit, y_target: float) -> Result[float, InvalidInputError | NumericError]:
    """ C_min = (y / coefficient) ** (1 / exponent) """
    if error := _check_positive(y_target=y_target):
        return Failure(error)
    if fit.exponent == 0:
        return Failure(NumericError("scaling.zero_exponent", "a power law with exponent 0 cannot be inverted"))
    return Success((y_target / fit.coefficient) ** (1 / fit.exponent))


def cross_law_check(
    n_fit: PowerLawFit,
    d_fit: PowerLawFit,
    n_target: float,
) -> Result[CrossLawCheck, InvalidInputError | NumericError]:
    """ Budget where the N-law reaches n_target, then the D-law's token count at that budget. """
    return invert_power_law(n_fit, n_target).bind(
        lambda c_min: predict_optimal(d_fit, c_min).map(
            lambda d_opt: CrossLawCheck(n_target=float(n_target), C_min=c_min, d_opt=d_opt)
        )
    )


def isoflop_optima(points: Iterable[IsoFlopPoint]) -> Result[list[IsoFlopOptimum], InvalidInputError | NumericError]:
    """
    One optimum per distinct C_min, from parabolas in log10 N and log10 D.
    """
    profiles: dict[float, list[IsoFlopPoint]] = defaultdict(list)
    for point in points:
        profiles[point.C_min].append(point)

    if not profiles:
        return Failure(InvalidInputError("scaling.no_measurements", "no isoFLOP measurements given"))

    optima = []
    for c_min in sorted(profiles):
        profile = profiles[c_min]
        by_n = isoflop_minimum([(math.log10(p.N), p.loss) for p in profile])
        by_d = isoflop_minimum([(math.log10(p.D), p.loss) for p in profile])

        for result in (by_n, by_d):
            if not is_successful(result):
                error = result.failure()
                error.details = {**(error.details or {}), "c_min": c_min}
                return result

        n_min, d_min = by_n.unwrap(), by_d.unwrap()
        optima.append(IsoFlopOptimum(
            C_min=c_min,
            n_opt=10 ** n_min.x_opt,
            d_opt=10 ** d_min.x_opt,
            loss_opt=n_min.loss_opt,
            extrapolated=n_min.extrapolated or d_min.extrapolated,
        ))

    return Success(optima)

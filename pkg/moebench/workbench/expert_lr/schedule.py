"""
Batch-size-aware optimal learning rate, the specialized-expert scaling ratio,
and the warmup / cosine decay / annealing schedule.
"""

import math
from types import MappingProxyType
from typing import Mapping, Optional
import numpy as np
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import InvalidInputError, ValidationError
from .models import ExpertGroup, ExpertLRParams, LRSchedule


def optimal_lr(params: ExpertLRParams, batch: float) -> Result[float, InvalidInputError]:
    """ 2 * eps_max / (sqrt(B_noise / batch) + sqrt(batch / B_noise)) """

    if not batch > 0 or not math.isfinite(batch):
        return Failure(InvalidInputError("expert_lr.non_positive_batch", "batch must be positive", details={"batch": batch}))

    return Success(_optimal_lr(params, batch))


def _optimal_lr(params: ExpertLRParams, batch: float) -> float:
    return 2 * params.eps_max / (math.sqrt(params.B_noise / batch) + math.sqrt(batch / params.B_noise))


def expert_scale_ratio(params: ExpertLRParams) -> float:
    """
    eps_opt(B) / eps_opt(B / n): specialized experts see roughly 1/n of the
    batch, so their rate is scaled against the shared expert's.
    """
    return _optimal_lr(params, params.B) / _optimal_lr(params, params.B / params.n)


def build_schedule(
    peak: float,
    total_tokens: float,
    warmup_fraction: float,
    anneal_fraction: float = 0.05,
    anneal_factor: float = 0.1,
    per_group_scale: Optional[Mapping[ExpertGroup | str, float]] = None,
) -> Result[LRSchedule, ValidationError]:

    if not peak > 0 or not total_tokens > 0:
        return Failure(ValidationError("expert_lr.non_positive", "peak and total_tokens must be positive"))

    if not 0 <= warmup_fraction < 1:
        return Failure(ValidationError("expert_lr.invalid_warmup", "warmup_fraction must be in [0, 1)"))

    if not 0 < anneal_fraction < 1:
        return Failure(ValidationError("expert_lr.invalid_anneal_fraction", "anneal_fraction must be in (0, 1)"))

    if not warmup_fraction + anneal_fraction < 1:
        return Failure(ValidationError("expert_lr.phases_overlap", "warmup_fraction + anneal_fraction must be < 1"))

    if not 0 < anneal_factor < 1:
        return Failure(ValidationError("expert_lr.invalid_anneal_factor", "anneal_factor must be in (0, 1)"))

    scales = {group: 1.0 for group in ExpertGroup}
    for group, scale in (per_group_scale or {}).items():
        if not scale > 0:
            return Failure(ValidationError("expert_lr.non_positive_scale", f"scale of group '{group}' must be positive"))
        try:
            scales[ExpertGroup(group)] = float(scale)
        except ValueError:
            return Failure(ValidationError("expert_lr.unknown_group", f"unknown expert group '{group}'"))

    return Success(LRSchedule(
        peak=float(peak),
        total_tokens=float(total_tokens),
        warmup_fraction=float(warmup_fraction),
        anneal_fraction=float(anneal_fraction),
        anneal_factor=float(anneal_factor),
        per_group_scale=MappingProxyType(scales),
    ))


def schedule_for(
    params: ExpertLRParams,
    total_tokens: float,
    warmup_fraction: float,
    anneal_fraction: float = 0.05,
    anneal_factor: float = 0.1,
    peak: Optional[float] = None,
) -> Result[LRSchedule, ValidationError]:
    """
    Schedule peaking at eps_opt(B) (unless `peak` is given) with specialized
    experts scaled down by expert_scale_ratio.
    """
    return build_schedule(
        peak=peak if peak is not None else _optimal_lr(params, params.B),
        total_tokens=total_tokens,
        warmup_fraction=warmup_fraction,
        anneal_fraction=anneal_fraction,
        anneal_factor=anneal_factor,
        per_group_scale={
            ExpertGroup.SHARED: 1.0,
            ExpertGroup.SPECIALIZED: expert_scale_ratio(params),
            ExpertGroup.NON_EXPERT: 1.0,
        },
    )


def base_lr(schedule: LRSchedule, tokens_seen: float) -> float:
    """ Unscaled schedule value; callers check the horizon. """

    if tokens_seen < schedule.warmup_end:
        return schedule.peak * tokens_seen / schedule.warmup_end

    if tokens_seen < schedule.anneal_start:
        progress = (tokens_seen - schedule.warmup_end) / (schedule.anneal_start - schedule.warmup_end)
        return schedule.floor + (schedule.peak - schedule.floor) * 0.5 * (1 + math.cos(math.pi * progress))

    return schedule.floor


def lr_at(schedule: LRSchedule, tokens_seen: float, group: ExpertGroup | str = ExpertGroup.SHARED) -> Result[float, InvalidInputError]:

    if not 0 <= tokens_seen <= schedule.total_tokens:
        return Failure(InvalidInputError(
            "expert_lr.beyond_horizon",
            f"tokens_seen must be within [0, {schedule.total_tokens}]",
            details={"tokens_seen": tokens_seen},
        ))

    try:
        scale = schedule.scale(group)
    except ValueError:
        return Failure(InvalidInputError("expert_lr.unknown_group", f"unknown expert group '{group}'"))

    return Success(base_lr(schedule, tokens_seen) * scale)


def lr_grid(schedule: LRSchedule, points: int) -> list[tuple[float, ExpertGroup, float]]:
    """ (tokens_seen, group, lr) rows over an evenly spaced grid including both ends. """
    rows = []
    for tokens_seen in np.linspace(0.0, schedule.total_tokens, max(points, 2)):
        value = base_lr(schedule, float(tokens_seen))
        for group in ExpertGroup:
            rows.append((float(tokens_seen), group, value * schedule.scale(group)))
    return rows

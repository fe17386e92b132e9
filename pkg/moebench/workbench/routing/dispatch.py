"""
Gating, capacity-constrained dispatch with recycle routing, and load statistics.
"""

from logging import getLogger
import numpy as np
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import InvalidInputError
from workbench.shared.numerics import make_rng, stable_softmax
from .models import RoutingConfig, GateDistribution, DispatchPlan, ExpertLoad, LoadStats, Origin


logger = getLogger("moe-routing")


def gate_scores(router_logits: np.ndarray, config: RoutingConfig) -> Result[GateDistribution, InvalidInputError]:
    logits = np.atleast_2d(np.asarray(router_logits, dtype=np.float64))

    if logits.shape[-1] != config.num_specialized_experts:
        return Failure(InvalidInputError(
            "routing.logits_shape",
            f"expected {config.num_specialized_experts} logits per token, got {logits.shape[-1]}",
        ))

    if not np.all(np.isfinite(logits)):
        return Failure(InvalidInputError("routing.non_finite_logits", "router logits must be finite"))

    return Success(GateDistribution(probs=stable_softmax(logits, axis=-1)))


def top_k_experts(probs: np.ndarray, k: int) -> np.ndarray:
    """ Highest-probability experts per token; ties go to the lower expert index. """
    return np.argsort(-probs, axis=-1, kind="stable")[:, :k]


def plan_dispatch(
    gates: GateDistribution,
    num_tokens: int,
    config: RoutingConfig,
    seed: int,
) -> Result[DispatchPlan, InvalidInputError]:

    if num_tokens < 1 or gates.num_tokens != num_tokens:
        return Failure(InvalidInputError(
            "routing.token_count",
            f"num_tokens must be >= 1 and match the gate rows ({gates.num_tokens})",
        ))

    if gates.num_experts != config.num_specialized_experts:
        return Failure(InvalidInputError("routing.gates_shape", "gate width differs from num_specialized_experts"))

    probs = gates.probs
    n, k = config.num_specialized_experts, config.top_k
    capacity = config.capacity_for(num_tokens)
    preferred = top_k_experts(probs, k)
    loads = np.zeros(n, dtype=np.int64)

    # token -> list of (slot, expert, origin)
    admitted: list[list[tuple[int, int, Origin]]] = [[] for _ in range(num_tokens)]
    rejected: list[tuple[int, int]] = []

    for token in range(num_tokens):
        for slot, expert in enumerate(preferred[token]):
            if loads[expert] < capacity:
                loads[expert] += 1
                admitted[token].append((slot, int(expert), Origin.PRIMARY))
            else:
                rejected.append((token, slot))

    dropped: list[int] = []

    if config.recycle_enabled:
        rng = make_rng(seed)
        for token, slot in rejected:
            free = np.flatnonzero(loads < capacity)
            if free.size == 0:
                dropped.append(token)
                continue
            used = {expert for _, expert, _ in admitted[token]}
            candidates = np.array([expert for expert in free if expert not in used]) if used else free
            if candidates.size == 0:
                candidates = free
            expert = int(candidates[rng.integers(candidates.size)])
            loads[expert] += 1
            admitted[token].append((slot, expert, Origin.RECYCLED))
    else:
        dropped = [token for token, _ in rejected]

    tokens, slots, experts, origins = [], [], [], []
    for token in range(num_tokens):
        for slot, expert, origin in sorted(admitted[token]):
            tokens.append(token)
            slots.append(slot)
            experts.append(expert)
            origins.append(origin)

    tokens = np.asarray(tokens, dtype=np.int64)
    experts = np.asarray(experts, dtype=np.int64)

    if rejected:
        logger.debug(
            "overflow=%d recycled=%d dropped=%d capacity=%d",
            len(rejected), len(rejected) - len(dropped), len(dropped), capacity,
        )

    return Success(DispatchPlan(
        num_tokens=num_tokens,
        num_experts=n,
        top_k=k,
        capacity=capacity,
        tokens=tokens,
        slots=np.asarray(slots, dtype=np.int64),
        experts=experts,
        # Recycled slots take the destination expert's own gate probability
        gate_weights=probs[tokens, experts] if len(tokens) else np.zeros(0),
        origins=tuple(origins),
        dropped_tokens=tuple(sorted(dropped)),
        preferred=preferred,
        seed=int(seed),
    ))


def combine_outputs(
    shared_outputs: np.ndarray,
    expert_outputs: np.ndarray,
    plan: DispatchPlan,
) -> Result[np.ndarray, InvalidInputError]:
    """
    output(t) = shared(t) + sum of gate_weight * expert_output over t's assignments.

    `expert_outputs` holds one row per plan assignment, in plan order.
    """
    shared_outputs = np.asarray(shared_outputs)
    expert_outputs = np.asarray(expert_outputs)

    if shared_outputs.ndim != 2 or shared_outputs.shape[0] != plan.num_tokens:
        return Failure(InvalidInputError(
            "routing.shared_outputs_shape",
            f"expected ({plan.num_tokens}, hidden) shared outputs, got {shared_outputs.shape}",
        ))

    if expert_outputs.shape != (plan.num_assignments, shared_outputs.shape[1]):
        return Failure(InvalidInputError(
            "routing.expert_outputs_shape",
            f"expected {(plan.num_assignments, shared_outputs.shape[1])} expert outputs, got {expert_outputs.shape}",
        ))

    combined = shared_outputs.copy()
    np.add.at(combined, plan.tokens, plan.gate_weights[:, None] * expert_outputs)
    return Success(combined)


def primary_fractions(plan: DispatchPlan) -> np.ndarray:
    """ f_i: fraction of tokens whose top-1 preferred expert is i. """
    counts = np.bincount(plan.preferred[:, 0], minlength=plan.num_experts)
    return counts / plan.num_tokens


def load_balance_loss(gates: GateDistribution, plan: DispatchPlan) -> float:
    """ n * sum_i f_i * P_i, with P_i the mean gate probability of expert i. """
    mean_probs = gates.probs.mean(axis=0)
    return float(plan.num_experts * np.sum(primary_fractions(plan) * mean_probs))


def expert_load_stats(plan: DispatchPlan) -> LoadStats:
    recycled = plan.recycled_mask
    primary_counts = np.bincount(plan.experts[~recycled], minlength=plan.num_experts)
    recycled_counts = np.bincount(plan.experts[recycled], minlength=plan.num_experts)
    experts = tuple(
        ExpertLoad(
            expert=expert,
            primary_count=int(primary_counts[expert]),
            recycled_count=int(recycled_counts[expert]),
            free_capacity=int(plan.capacity - primary_counts[expert] - recycled_counts[expert]),
        )
        for expert in range(plan.num_experts)
    )
    return LoadStats(experts=experts, dropped=len(plan.dropped_tokens), recycled=int(recycled.sum()))

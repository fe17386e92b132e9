import math
from enum import StrEnum
from dataclasses import dataclass
from functools import cached_property
import numpy as np
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import ValidationError
from workbench.shared.numerics import RNG_ALGORITHM


# Relative gap under which the balanced load counts as the nearest integer,
# e.g. 4.2 * 5 / 7 = 3.0000000000000004
CAPACITY_REL_TOLERANCE = 1e-12


class Origin(StrEnum):
    PRIMARY = "primary"
    RECYCLED = "recycled"


@dataclass(frozen=True)
class RoutingConfig:
    num_shared_experts: int = 1
    num_specialized_experts: int = 16
    top_k: int = 1
    capacity_factor: float = 1.25
    recycle_enabled: bool = True

    @classmethod
    def create(
        cls,
        num_shared_experts: int = 1,
        num_specialized_experts: int = 16,
        top_k: int = 1,
        capacity_factor: float = 1.25,
        recycle_enabled: bool = True,
    ) -> Result["RoutingConfig", ValidationError]:

        if num_shared_experts < 0:
            return Failure(ValidationError("routing.invalid_shared_experts", "num_shared_experts must be >= 0"))

        if num_specialized_experts < 1:
            return Failure(ValidationError("routing.invalid_specialized_experts", "num_specialized_experts must be >= 1"))

        if not 1 <= top_k <= num_specialized_experts:
            return Failure(ValidationError(
                "routing.invalid_top_k",
                "top_k must satisfy 1 <= top_k <= num_specialized_experts",
                details={"top_k": top_k, "num_specialized_experts": num_specialized_experts},
            ))

        if not capacity_factor > 0 or not math.isfinite(capacity_factor):
            return Failure(ValidationError(
                "routing.invalid_capacity_factor",
                "capacity_factor must be positive (capacity_factor > 0)",
                details={"capacity_factor": capacity_factor},
            ))

        return Success(cls(
            num_shared_experts=int(num_shared_experts),
            num_specialized_experts=int(num_specialized_experts),
            top_k=int(top_k),
            capacity_factor=float(capacity_factor),
            recycle_enabled=bool(recycle_enabled),
        ))

    def capacity_for(self, num_tokens: int) -> int:
        """ ceil(capacity_factor * num_tokens * top_k / n) """
        balanced = self.capacity_factor * num_tokens * self.top_k / self.num_specialized_experts
        nearest = round(balanced)
        if math.isclose(balanced, nearest, rel_tol=CAPACITY_REL_TOLERANCE):
            return max(1, nearest)
        return max(1, math.ceil(balanced))


@dataclass(frozen=True, eq=False)
class GateDistribution:
    """ Per-token probabilities over specialized experts, shape (num_tokens, n). """

    probs: np.ndarray

    @property
    def num_tokens(self) -> int:
        return self.probs.shape[0]

    @property
    def num_experts(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class Assignment:
    token: int
    slot: int
    expert: int
    gate_weight: float
    origin: Origin


@dataclass(frozen=True, eq=False)
class DispatchPlan:
    """
    Expert assignments of one batch.

    Assignments are stored flat, ordered by token then slot; the plan is
    immutable once emitted.
    """

    num_tokens: int
    num_experts: int
    top_k: int
    capacity: int
    # Flat assignment arrays, one entry per admitted (token, slot)
    tokens: np.ndarray
    slots: np.ndarray
    experts: np.ndarray
    gate_weights: np.ndarray
    origins: tuple[Origin, ...]
    # Token index of every slot that got no specialized expert
    dropped_tokens: tuple[int, ...]
    # Pre-capacity top_k choices per token, shape (num_tokens, top_k)
    preferred: np.ndarray
    seed: int
    rng_algorithm: str = RNG_ALGORITHM

    @property
    def num_assignments(self) -> int:
        return len(self.tokens)

    @cached_property
    def recycled_mask(self) -> np.ndarray:
        return np.array([origin == Origin.RECYCLED for origin in self.origins], dtype=bool)

    def assignments(self) -> list[Assignment]:
        return [
            Assignment(
                token=int(self.tokens[i]),
                slot=int(self.slots[i]),
                expert=int(self.experts[i]),
                gate_weight=float(self.gate_weights[i]),
                origin=self.origins[i],
            )
            for i in range(self.num_assignments)
        ]

    def token_assignments(self, token: int) -> list[Assignment]:
        return [assignment for assignment in self.assignments() if assignment.token == token]

    def expert_tokens(self, expert: int) -> list[int]:
        return [int(token) for token in self.tokens[self.experts == expert]]

    def to_dict(self) -> dict:
        per_token = {token: [] for token in range(self.num_tokens)}
        for assignment in self.assignments():
            per_token[assignment.token].append({
                "slot": assignment.slot,
                "expert": assignment.expert,
                "gate_weight": assignment.gate_weight,
                "origin": str(assignment.origin),
            })
        return {
            "num_tokens": self.num_tokens,
            "num_experts": self.num_experts,
            "top_k": self.top_k,
            "capacity": self.capacity,
            "seed": self.seed,
            "rng_algorithm": self.rng_algorithm,
            "tokens": [
                {"token": token, "preferred": [int(e) for e in self.preferred[token]], "assignments": assignments}
                for token, assignments in per_token.items()
            ],
            "expert_tokens": [self.expert_tokens(expert) for expert in range(self.num_experts)],
            "dropped_tokens": list(self.dropped_tokens),
        }


@dataclass(frozen=True)
class ExpertLoad:
    expert: int
    primary_count: int
    recycled_count: int
    free_capacity: int


@dataclass(frozen=True)
class LoadStats:
    experts: tuple[ExpertLoad, ...]
    dropped: int
    recycled: int

    @property
    def primary(self) -> int:
        return sum(load.primary_count for load in self.experts)

    def to_dict(self) -> dict:
        return {
            "experts": [
                {
                    "expert": load.expert,
                    "primary_count": load.primary_count,
                    "recycled_count": load.recycled_count,
                    "free_capacity": load.free_capacity,
                }
                for load in self.experts
            ],
            "totals": {"primary": self.primary, "recycled": self.recycled, "dropped": self.dropped},
        }

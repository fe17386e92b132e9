import math
from enum import StrEnum
from types import MappingProxyType
from typing import Mapping
from dataclasses import dataclass, field
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import ValidationError


class ExpertGroup(StrEnum):
    SHARED = "shared"
    SPECIALIZED = "specialized"
    NON_EXPERT = "non_expert"


class DecayShape(StrEnum):
    COSINE = "cosine"


@dataclass(frozen=True)
class ExpertLRParams:
    eps_max: float
    B: float
    B_noise: float
    n: int = 16

    @classmethod
    def create(cls, eps_max: float, B: float, B_noise: float, n: int = 16) -> Result["ExpertLRParams", ValidationError]:

        for name, value in (("eps_max", eps_max), ("B", B), ("B_noise", B_noise)):
            if not value > 0 or not math.isfinite(value):
                return Failure(ValidationError("expert_lr.non_positive", f"{name} must be positive", details={name: value}))

        if n < 1:
            return Failure(ValidationError("expert_lr.invalid_expert_count", "n must be >= 1", details={"n": n}))

        return Success(cls(float(eps_max), float(B), float(B_noise), int(n)))


@dataclass(frozen=True)
class LRSchedule:
    peak: float
    total_tokens: float
    warmup_fraction: float
    anneal_fraction: float = 0.05
    anneal_factor: float = 0.1
    decay_shape: DecayShape = DecayShape.COSINE
    per_group_scale: Mapping[ExpertGroup, float] = field(default_factory=lambda: MappingProxyType({
        ExpertGroup.SHARED: 1.0,
        ExpertGroup.SPECIALIZED: 1.0,
        ExpertGroup.NON_EXPERT: 1.0,
    }))

    @property
    def warmup_end(self) -> float:
        return self.warmup_fraction * self.total_tokens

    @property
    def anneal_start(self) -> float:
        return (1 - self.anneal_fraction) * self.total_tokens

    @property
    def floor(self) -> float:
        return self.anneal_factor * self.peak

    def scale(self, group: ExpertGroup) -> float:
        return self.per_group_scale[ExpertGroup(group)]

    def to_dict(self) -> dict:
        return {
            "peak": self.peak,
            "total_tokens": self.total_tokens,
            "warmup_fraction": self.warmup_fraction,
            "anneal_fraction": self.anneal_fraction,
            "anneal_factor": self.anneal_factor,
            "decay_shape": str(self.decay_shape),
            "per_group_scale": {str(group): scale for group, scale in self.per_group_scale.items()},
        }

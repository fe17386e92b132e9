from logging import Logger, getLogger
from dataclasses import dataclass
import numpy as np
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error, ValidationError
from workbench.shared.numerics import make_rng
from .models import RoutingConfig, DispatchPlan, LoadStats
from .dispatch import gate_scores, plan_dispatch, expert_load_stats, load_balance_loss


# Logit margin that makes one expert every token's unanimous choice
ALL_TO_ONE_MARGIN = 8.0


@dataclass(frozen=True)
class RoutingSimulation:
    plan: DispatchPlan
    stats: LoadStats
    load_balance_loss: float

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "stats": self.stats.to_dict(),
            "load_balance_loss": self.load_balance_loss,
        }


class SimulateRouting:
    """
    Routes a synthetic batch: random router logits, or every token preferring expert 0.
    """

    def __init__(self, logger: Logger = getLogger("moe-routing")):
        self._logger = logger

    def execute(
        self,
        config: RoutingConfig,
        num_tokens: int,
        seed: int,
        all_to_one: bool = False,
    ) -> Result[RoutingSimulation, Error]:

        if num_tokens < 1:
            return Failure(ValidationError("routing.invalid_num_tokens", f"num_tokens must be at least 1, got {num_tokens}"))

        if all_to_one:
            logits = np.zeros((num_tokens, config.num_specialized_experts))
            logits[:, 0] = ALL_TO_ONE_MARGIN
        else:
            logits = make_rng(seed).standard_normal((num_tokens, config.num_specialized_experts))

        gates = gate_scores(logits, config)
        if not is_successful(gates):
            return gates

        gates = gates.unwrap()

        match plan_dispatch(gates, num_tokens, config, seed):

            case Success(plan):
                stats = expert_load_stats(plan)
                self._logger.debug("simulated %d tokens: recycled=%d dropped=%d", num_tokens, stats.recycled, stats.dropped)
                return Success(RoutingSimulation(plan, stats, load_balance_loss(gates, plan)))

            case Failure(error):
                return Failure(error)

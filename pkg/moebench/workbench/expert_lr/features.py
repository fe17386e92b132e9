from logging import Logger, getLogger
from dataclasses import dataclass
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import Error
from .models import ExpertGroup, ExpertLRParams, LRSchedule
from .schedule import schedule_for, expert_scale_ratio, lr_grid


@dataclass(frozen=True)
class LRPlan:
    schedule: LRSchedule
    scale_ratio: float
    rows: list[tuple[float, ExpertGroup, float]]

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "expert_scale_ratio": self.scale_ratio,
            "rows": [{"tokens_seen": t, "group": str(g), "lr": lr} for t, g, lr in self.rows],
        }


class PlanLearningRates:
    """
    Builds the expert-aware schedule for a batch setting and samples it on a grid.
    """

    def __init__(self, logger: Logger = getLogger("expert-lr")):
        self._logger = logger

    def execute(
        self,
        params: ExpertLRParams,
        total_tokens: float,
        warmup_fraction: float,
        anneal_fraction: float = 0.05,
        anneal_factor: float = 0.1,
        points: int = 101,
    ) -> Result[LRPlan, Error]:

        match schedule_for(params, total_tokens, warmup_fraction, anneal_fraction, anneal_factor):

            case Success(schedule):
                ratio = expert_scale_ratio(params)
                self._logger.debug("peak=%.12g specialized scale=%.12g", schedule.peak, ratio)
                return Success(LRPlan(schedule, ratio, lr_grid(schedule, points)))

            case Failure(error):
                return Failure(error)

from logging import Logger, getLogger
from dataclasses import dataclass, field
from typing import Optional
import numpy as np
from django.conf import settings
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.events import DomainEventBroker
from workbench.shared.exceptions import Error, InvalidInputError, InvalidStateError
from workbench.shared.numerics import make_rng
from workbench.routing.models import DispatchPlan
from workbench.expert_lr.models import ExpertLRParams, LRSchedule
from workbench.expert_lr.schedule import schedule_for
from .models import ModelConfig, TrainingSettings, TrainingBatch, OptimizerState, StepReport
from .model import MicroModel, build_model, forward
from .optim import train_step
from .repository import CheckpointRepository


def memorization_batch(num_sequences: int, sequence_length: int, vocab_size: int, seed: int) -> Result[TrainingBatch, InvalidInputError]:
    """
    Random sequences to memorize. First tokens are distinct while the vocabulary
    allows it, so every continuation is determined by its prefix.
    """
    rng = make_rng(seed)
    sequences = rng.integers(0, vocab_size, size=(num_sequences, sequence_length))
    if num_sequences <= vocab_size:
        sequences[:, 0] = rng.permutation(vocab_size)[:num_sequences]
    return TrainingBatch.from_sequences(sequences, vocab_size)


@dataclass(frozen=True, eq=False)
class DecodeResult:
    tokens: list[int]
    generated: list[int]
    logits: np.ndarray
    plans: list[tuple[DispatchPlan, ...]]
    cache_bytes: int

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "generated": self.generated,
            "cache_bytes": self.cache_bytes,
            "dropped_per_step": [sum(len(plan.dropped_tokens) for plan in plans) for plans in self.plans],
        }


def greedy_decode(model: MicroModel, prompt: list[int], max_new_tokens: int) -> Result[DecodeResult, Error]:
    """ Prefills the prompt, then appends the argmax token one position at a time. """

    if not prompt or max_new_tokens < 0:
        return Failure(InvalidInputError("micro_model.invalid_prompt", "prompt must be nonempty and max_new_tokens >= 0"))

    cache = model.new_cache(len(prompt) + max_new_tokens)
    outputs = forward(model, np.asarray(prompt, dtype=np.int64), cache)
    if not is_successful(outputs):
        return outputs

    output = outputs.unwrap()
    tokens, generated = [int(t) for t in prompt], []
    logits, plans = [output.logits[-1]], [output.plans]

    for _ in range(max_new_tokens):
        token = int(np.argmax(logits[-1]))
        generated.append(token)
        tokens.append(token)
        if len(generated) == max_new_tokens:
            break
        outputs = forward(model, np.array([token]), cache)
        if not is_successful(outputs):
            return outputs
        output = outputs.unwrap()
        logits.append(output.logits[-1])
        plans.append(output.plans)

    return Success(DecodeResult(tokens, generated, np.stack(logits), plans, cache.accounted_bytes))


@dataclass(frozen=True, eq=False)
class TrainingRun:
    model: MicroModel
    schedule: LRSchedule
    reports: list[StepReport] = field(default_factory=list)
    checkpoint_id: Optional[str] = None

    @property
    def initial_loss(self) -> float:
        return self.reports[0].cross_entropy

    @property
    def final_loss(self) -> float:
        return self.reports[-1].cross_entropy

    def to_dict(self) -> dict:
        return {
            "steps": len(self.reports),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "schedule": self.schedule.to_dict(),
            "checkpoint": self.checkpoint_id,
            "reports": [report.to_dict() for report in self.reports],
        }


class TrainDemo:
    """
    Trains a desk-scale model on the memorization task with expert-specific
    learning rates and optionally stores the final checkpoint.
    """

    def __init__(
        self,
        checkpoint_repository: Optional[CheckpointRepository] = None,
        domain_events_broker: Optional[DomainEventBroker] = None,
        logger: Logger = getLogger("micro-model"),
    ):
        self.checkpoint_repository = checkpoint_repository
        self.domain_events_broker = domain_events_broker or DomainEventBroker.resolve()
        self._logger = logger

    def execute(
        self,
        config: ModelConfig,
        training: TrainingSettings,
        lr_params: ExpertLRParams,
        checkpoint_id: Optional[str] = None,
    ) -> Result[TrainingRun, Error]:

        if checkpoint_id is not None and self.checkpoint_repository is None:
            return Failure(InvalidStateError("micro_model.no_repository", f"no checkpoint repository to store {checkpoint_id} in"))

        model = build_model(config, getattr(settings, "WORKBENCH_PARAMETER_CEILING", None))
        if not is_successful(model):
            return model

        schedule = schedule_for(lr_params, training.total_tokens, training.warmup_fraction, peak=training.peak_lr)
        if not is_successful(schedule):
            return schedule

        batch = memorization_batch(training.num_sequences, training.sequence_length, config.vocab_size, training.data_seed)
        if not is_successful(batch):
            return batch

        model, schedule, batch = model.unwrap(), schedule.unwrap(), batch.unwrap()
        state = OptimizerState.zeros_like(model.parameters)
        reports = []

        for step in range(training.steps):
            match train_step(model, batch, schedule, state, tokens_seen=step * training.tokens_per_step):

                case Success((model, state, report)):
                    reports.append(report)
                    self.domain_events_broker.dispatch(model.pull_events())

                case Failure(error):
                    return Failure(error)

        if checkpoint_id is not None:
            stored = self.checkpoint_repository.store(checkpoint_id, model)
            if not is_successful(stored):
                return stored

        self._logger.info("trained %d steps: loss %.6f -> %.6f", len(reports), reports[0].cross_entropy, reports[-1].cross_entropy)
        return Success(TrainingRun(model, schedule, reports, checkpoint_id))


class InferDemo:
    """
    Greedy decoding through the KV cache, from a stored checkpoint or a
    freshly initialized model.
    """

    def __init__(self, checkpoint_repository: Optional[CheckpointRepository] = None, logger: Logger = getLogger("micro-model")):
        self.checkpoint_repository = checkpoint_repository
        self._logger = logger

    def execute(
        self,
        prompt: list[int],
        max_new_tokens: int,
        checkpoint_id: Optional[str] = None,
        config: Optional[ModelConfig] = None,
    ) -> Result[DecodeResult, Error]:

        if checkpoint_id is not None and self.checkpoint_repository is None:
            return Failure(InvalidStateError("micro_model.no_repository", f"no checkpoint repository to load {checkpoint_id} from"))

        if checkpoint_id is not None:
            model = self.checkpoint_repository.get_by_id(checkpoint_id)
        elif config is not None:
            model = build_model(config, getattr(settings, "WORKBENCH_PARAMETER_CEILING", None))
        else:
            return Failure(InvalidInputError("micro_model.no_model", "either a checkpoint or a model config is required"))

        if not is_successful(model):
            return model

        self._logger.debug("decoding %d tokens after a %d-token prompt", max_new_tokens, len(prompt))
        return greedy_decode(model.unwrap(), prompt, max_new_tokens)

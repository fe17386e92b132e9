from logging import Logger, getLogger
import numpy as np
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error, NumericError
from workbench.expert_lr.models import ExpertGroup, LRSchedule
from workbench.expert_lr.schedule import lr_at
from .models import OptimizerState, StepReport, TrainingBatch, TrainingStepCompleted
from .model import MicroModel, forward_train, backward, parameter_group


def adamw_update(
    parameters: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    group_lrs: dict[ExpertGroup, float],
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """
    One AdamW step with decoupled weight decay, theta <- theta - lr * (m_hat /
    (sqrt(v_hat) + eps) + weight_decay * theta), lr taken from the parameter's group.
    """
    step = state.step + 1
    bias1 = 1 - state.beta1**step
    bias2 = 1 - state.beta2**step
    updated, first, second = {}, {}, {}

    for name, value in parameters.items():
        grad = grads[name]
        first[name] = state.beta1 * state.first_moment[name] + (1 - state.beta1) * grad
        second[name] = state.beta2 * state.second_moment[name] + (1 - state.beta2) * grad**2
        direction = (first[name] / bias1) / (np.sqrt(second[name] / bias2) + state.eps)
        lr = group_lrs[parameter_group(name)]
        updated[name] = value - lr * (direction + state.weight_decay * value)

    return updated, OptimizerState(first, second, step, **state.hyperparameters())


def train_step(
    model: MicroModel,
    batch: TrainingBatch,
    schedule: LRSchedule,
    state: OptimizerState,
    tokens_seen: float,
    logger: Logger = getLogger("micro-model"),
) -> Result[tuple[MicroModel, OptimizerState, StepReport], Error]:
    """
    Forward, analytic backward and an AdamW update with per-group learning
    rates from the schedule. The returned model carries a TrainingStepCompleted event.
    """
    group_lrs = {}
    for group in ExpertGroup:
        lr = lr_at(schedule, tokens_seen, group)
        if not is_successful(lr):
            return lr
        group_lrs[group] = lr.unwrap()

    result = forward_train(model, batch, step=state.step)
    if not is_successful(result):
        return result

    result = result.unwrap()
    if not np.isfinite(result.loss):
        logger.error("non-finite loss at step %d (cross_entropy=%r)", state.step, result.cross_entropy)
        return Failure(NumericError(
            "micro_model.non_finite_loss",
            f"loss became {result.loss} at step {state.step}",
            details={"step": state.step, "tokens_seen": tokens_seen, "cross_entropy": result.cross_entropy},
        ))

    grads = backward(model, result)
    if not is_successful(grads):
        return grads

    parameters, new_state = adamw_update(model.parameters, grads.unwrap(), state, group_lrs)
    report = StepReport(
        step=new_state.step,
        tokens_seen=float(tokens_seen),
        loss=result.loss,
        cross_entropy=result.cross_entropy,
        load_balance_loss=result.load_balance_loss,
        group_lrs=group_lrs,
        routing=result.routing_stats,
        optimizer=state.hyperparameters(),
    )

    updated = model.replace(parameters, step=new_state.step)
    updated.record_event(TrainingStepCompleted(report=report))
    return Success((updated, new_state, report))

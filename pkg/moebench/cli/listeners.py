from logging import getLogger
from workbench.shared.events import event_listener
from workbench.micro_model.models import TrainingStepCompleted, CheckpointStored


logger = getLogger("micro-model")


@event_listener(TrainingStepCompleted)
def log_training_step(sender, event: TrainingStepCompleted, **kwargs):
    report = event.report
    logger.info(
        "step %d tokens=%d loss=%.6f ce=%.6f lb=%.6f recycled=%d dropped=%d",
        report.step, report.tokens_seen, report.loss, report.cross_entropy,
        report.load_balance_loss, report.recycled, report.dropped,
    )


@event_listener(CheckpointStored)
def log_checkpoint(sender, event: CheckpointStored, **kwargs):
    logger.info("checkpoint %s stored at step %d (%d bytes)", event.checkpoint_id, event.step, event.size_bytes)

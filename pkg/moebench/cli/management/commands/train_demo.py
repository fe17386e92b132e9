from django.conf import settings
from cli.commands import WorkbenchCommand
from workbench.shared.repository import Repository
from workbench.micro_model.features import TrainDemo
from workbench.micro_model.models import TrainingSettings


class Command(WorkbenchCommand):
    help = "Trains the micro MoE on the memorization task and optionally stores a checkpoint."

    default_config = "toy"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--steps", type=int, help="Training steps (default: the train section's).")
        parser.add_argument("--checkpoint", help="Checkpoint id or path to store the trained model under.")

    def handle(self, *args, **options):
        config = self.run_config(options)
        model_config = self.unwrap(config.require_model())

        training = config.training
        if options["steps"] is not None:
            training = self.unwrap(TrainingSettings.create(
                steps=options["steps"],
                num_sequences=training.num_sequences,
                sequence_length=training.sequence_length,
                warmup_fraction=training.warmup_fraction,
                peak_lr=training.peak_lr,
                data_seed=training.data_seed,
            ))

        repository = Repository.resolve(settings.CHECKPOINT_REPOSITORY)(directory=config.output.directory)
        checkpoint = options["checkpoint"] or config.output.checkpoint

        run = self.unwrap(TrainDemo(checkpoint_repository=repository).execute(
            model_config, training, config.lr, checkpoint_id=checkpoint,
        ))

        groups = list(run.reports[0].group_lrs)
        every = max(1, len(run.reports) // 10)
        table = [f"{'step':>5} {'loss':>10} {'ce':>10} {'lb':>8} {'recycled':>9} {'dropped':>8}"]
        table += [
            f"{r.step:>5} {r.loss:>10.6f} {r.cross_entropy:>10.6f} {r.load_balance_loss:>8.4f} {r.recycled:>9} {r.dropped:>8}"
            for r in run.reports
            if r.step % every == 0 or r is run.reports[-1]
        ]
        table.append(f"cross entropy {run.initial_loss:.6f} -> {run.final_loss:.6f}")
        if checkpoint is not None:
            table.append(f"checkpoint {checkpoint}")

        self.emit(
            options,
            payload=run.to_dict(),
            header=("step", "tokens_seen", "loss", "cross_entropy", "load_balance_loss", "recycled", "dropped", *(f"lr_{g}" for g in groups)),
            rows=[
                (r.step, r.tokens_seen, r.loss, r.cross_entropy, r.load_balance_loss, r.recycled, r.dropped, *(r.group_lrs[g] for g in groups))
                for r in run.reports
            ],
            table=table,
        )

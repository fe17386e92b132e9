from cli.commands import WorkbenchCommand
from workbench.expert_lr.features import PlanLearningRates
from workbench.expert_lr.models import ExpertGroup
from workbench.shared.exceptions import ValidationError


class Command(WorkbenchCommand):
    help = "Learning rate of every parameter group over training, with the specialized-expert scaling."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--points", type=int, default=11, help="Grid points including both ends.")
        parser.add_argument("--total-tokens", type=float, help="Training horizon in tokens (default: the train section's).")

    def handle(self, *args, **options):
        config = self.run_config(options)
        total_tokens = float(config.training.total_tokens) if options["total_tokens"] is None else options["total_tokens"]
        if options["points"] < 2:
            self.fail(ValidationError("cli.invalid_points", f"--points must be at least 2, got {options['points']}"))

        plan = self.unwrap(PlanLearningRates().execute(
            config.lr,
            total_tokens,
            config.schedule.warmup_fraction,
            config.schedule.anneal_fraction,
            config.schedule.anneal_factor,
            points=options["points"],
        ))

        by_step: dict[float, dict] = {}
        for tokens_seen, group, lr in plan.rows:
            by_step.setdefault(tokens_seen, {})[group] = lr

        table = [
            f"peak {plan.schedule.peak:.6g}  specialized/shared {plan.scale_ratio:.6f}",
            f"{'tokens_seen':>14} {'shared':>12} {'specialized':>12} {'non_expert':>12}",
        ]
        table += [
            f"{tokens_seen:>14.6g} {lrs[ExpertGroup.SHARED]:>12.6g} {lrs[ExpertGroup.SPECIALIZED]:>12.6g} {lrs[ExpertGroup.NON_EXPERT]:>12.6g}"
            for tokens_seen, lrs in by_step.items()
        ]
        self.emit(
            options,
            payload=plan.to_dict(),
            header=("tokens_seen", "group", "lr"),
            rows=[(tokens_seen, str(group), lr) for tokens_seen, group, lr in plan.rows],
            table=table,
        )

from cli.commands import WorkbenchCommand, human
from cli.points import read_points
from workbench.scaling.features import FindIsoFlopOptima


class Command(WorkbenchCommand):
    help = "Compute-optimal N and D per budget from isoFLOP measurements (CSV: c_min,n,d,loss)."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--input", required=True, help="CSV of isoFLOP measurements.")

    def handle(self, *args, **options):
        points = self.unwrap(read_points(options["input"]))
        optima = self.unwrap(FindIsoFlopOptima().execute(points))

        table = [f"{'c_min':>12} {'n_opt':>12} {'d_opt':>12} {'loss_opt':>10}"]
        table += [
            f"{human(o.C_min):>12} {human(o.n_opt):>12} {human(o.d_opt):>12} {o.loss_opt:>10.4f}"
            + (" (extrapolated)" if o.extrapolated else "")
            for o in optima
        ]
        self.emit(
            options,
            payload={"optima": [optimum.to_dict() for optimum in optima]},
            header=("c_min", "n_opt", "d_opt", "loss_opt", "extrapolated"),
            rows=[(o.C_min, o.n_opt, o.d_opt, o.loss_opt, int(o.extrapolated)) for o in optima],
            table=table,
        )

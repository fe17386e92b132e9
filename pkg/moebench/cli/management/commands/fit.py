from cli.commands import WorkbenchCommand, human
from cli.points import read_points
from workbench.scaling.features import FitScalingLaws


class Command(WorkbenchCommand):
    help = "Fits N_opt = a*C_min^alpha and D_opt = b*C_min^beta over isoFLOP measurements."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--input", required=True, help="CSV of isoFLOP measurements at 2 or more budgets.")

    def handle(self, *args, **options):
        points = self.unwrap(read_points(options["input"]))
        fit = self.unwrap(FitScalingLaws().execute(points))

        table = [
            f"N_opt = {human(fit.n_law.coefficient)} * C_min^{fit.n_law.exponent:.4f}  (rms log residual {fit.n_law.residual:.3g})",
            f"D_opt = {human(fit.d_law.coefficient)} * C_min^{fit.d_law.exponent:.4f}  (rms log residual {fit.d_law.residual:.3g})",
        ]
        self.emit(
            options,
            payload=fit.to_dict(),
            header=("law", "coefficient", "exponent", "residual"),
            rows=[
                ("n", fit.n_law.coefficient, fit.n_law.exponent, fit.n_law.residual),
                ("d", fit.d_law.coefficient, fit.d_law.exponent, fit.d_law.residual),
            ],
            table=table,
        )

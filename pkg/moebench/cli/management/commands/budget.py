from cli.commands import WorkbenchCommand, human
from workbench.scaling.features import EstimateBudget


class Command(WorkbenchCommand):
    help = (
        "MoE compute budget C = 9.59*N*D + 2.3e8*D next to the dense 6ND estimate, "
        "optionally corrected for B/B_crit and with the cross-law check at --target-n."
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--n", type=float, required=True, help="Activated parameters N.")
        parser.add_argument("--d", type=float, required=True, help="Training tokens D.")
        parser.add_argument("--b-over-bcrit", type=float, help="Batch size over critical batch size, B/B_crit.")
        parser.add_argument("--target-n", type=float, help="Activated parameters to invert through the N-law.")

    def handle(self, *args, **options):
        config = self.run_config(options)
        b_over_bcrit = options["b_over_bcrit"] if options["b_over_bcrit"] is not None else config.scaling.b_over_bcrit
        target_n = options["target_n"] if options["target_n"] is not None else config.scaling.target_n

        report = self.unwrap(EstimateBudget().execute(options["n"], options["d"], b_over_bcrit, target_n))

        table = [f"compute_budget {human(report.compute_budget)}", f"dense_budget   {human(report.dense_budget)}"]
        rows = [("compute_budget", report.compute_budget), ("dense_budget", report.dense_budget)]
        if report.min_budget is not None:
            table.append(f"min_budget     {human(report.min_budget)} (B/B_crit={report.b_over_bcrit:g})")
            rows.append(("min_budget", report.min_budget))
        if report.cross_law is not None:
            table.append(f"cross_law      N={human(report.cross_law.n_target)} -> C_min={human(report.cross_law.C_min)} -> D={human(report.cross_law.d_opt)}")
            rows += [("cross_law_c_min", report.cross_law.C_min), ("cross_law_d_opt", report.cross_law.d_opt)]

        self.emit(options, payload=report.to_dict(), header=("quantity", "value"), rows=rows, table=table)

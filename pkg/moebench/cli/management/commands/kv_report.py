from cli.commands import WorkbenchCommand
from workbench.attention.features import BuildKVReport


class Command(WorkbenchCommand):
    help = "KV cache bytes per token of MHA, GQA, MQA, CLA and GQA+CLA for the config's geometry."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--seq-len", type=int, default=1, help="Sequence length for the per-sequence column.")
        parser.add_argument("--bytes-per-element", type=int, default=2, help="Element size in bytes (2 = bf16).")

    def handle(self, *args, **options):
        config = self.run_config(options)
        layout = self.unwrap(config.kv_layout(options["bytes_per_element"]))
        rows = self.unwrap(BuildKVReport().execute(layout, options["seq_len"]))

        table = [f"{'mechanism':<10} {'bytes/token':>14} {'saved vs MHA':>13} {'bytes/sequence':>18}"]
        table += [
            f"{row.mechanism:<10} {row.bytes_per_token:>14,} {row.savings_vs_mha:>12.2%} {row.bytes_for_sequence:>18,}"
            for row in rows
        ]
        self.emit(
            options,
            payload={
                "layout": {
                    "n_h": layout.n_h, "n_g": layout.n_g, "d_h": layout.d_h, "l": layout.l,
                    "share_period": layout.share_period, "bytes_per_element": layout.bytes_per_element,
                },
                "seq_len": options["seq_len"],
                "rows": [row.to_dict() for row in rows],
            },
            header=("mechanism", "bytes_per_token", "savings_vs_mha", "bytes_for_sequence"),
            rows=[(str(row.mechanism), row.bytes_per_token, row.savings_vs_mha, row.bytes_for_sequence) for row in rows],
            table=table,
        )

import argparse
from cli.commands import WorkbenchCommand
from workbench.shared.exceptions import ValidationError
from workbench.routing.models import RoutingConfig
from workbench.routing.features import SimulateRouting


class Command(WorkbenchCommand):
    help = "Routes a synthetic batch and prints per-expert load, recycled and dropped tokens."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--experts", type=int, help="Specialized experts n.")
        parser.add_argument("--shared", type=int, help="Shared experts.")
        parser.add_argument("--top-k", type=int, help="Specialized experts per token.")
        capacity = parser.add_mutually_exclusive_group()
        capacity.add_argument("--capacity-factor", type=float, help="Capacity as a multiple of the balanced load.")
        capacity.add_argument("--capacity", type=int, help="Absolute per-expert capacity in tokens.")
        parser.add_argument("--tokens", type=int, default=64, help="Tokens in the batch.")
        parser.add_argument("--seed", type=int, help="Routing seed (default: the config seed).")
        parser.add_argument("--all-to-one", action="store_true", help="Every token prefers expert 0.")
        parser.add_argument("--recycle", action=argparse.BooleanOptionalAction, default=None, help="Reassign overflow to free experts.")

    def handle(self, *args, **options):
        config = self.run_config(options)
        base = config.routing
        experts = base.num_specialized_experts if options["experts"] is None else options["experts"]
        top_k = base.top_k if options["top_k"] is None else options["top_k"]
        num_tokens = options["tokens"]
        if num_tokens < 1:
            self.fail(ValidationError("cli.invalid_tokens", f"--tokens must be at least 1, got {num_tokens}"))

        capacity_factor = base.capacity_factor if options["capacity_factor"] is None else options["capacity_factor"]
        if options["capacity"] is not None:
            # capacity_for takes the ceiling, so this factor lands exactly on --capacity
            capacity_factor = options["capacity"] * experts / (num_tokens * top_k) if experts > 0 and top_k > 0 else 0.0

        routing = self.unwrap(RoutingConfig.create(
            num_shared_experts=base.num_shared_experts if options["shared"] is None else options["shared"],
            num_specialized_experts=experts,
            top_k=top_k,
            capacity_factor=capacity_factor,
            recycle_enabled=base.recycle_enabled if options["recycle"] is None else options["recycle"],
        ))
        seed = config.seed if options["seed"] is None else options["seed"]

        simulation = self.unwrap(SimulateRouting().execute(routing, num_tokens, seed, options["all_to_one"]))
        plan, stats = simulation.plan, simulation.stats

        table = [
            f"tokens {plan.num_tokens}  experts {plan.num_experts}  top_k {plan.top_k}  capacity {plan.capacity}",
            f"{'expert':>6} {'primary':>8} {'recycled':>9} {'free':>5}",
        ]
        table += [
            f"{load.expert:>6} {load.primary_count:>8} {load.recycled_count:>9} {load.free_capacity:>5}"
            for load in stats.experts
        ]
        table.append(f"recycled {stats.recycled}  dropped {stats.dropped}  load balance loss {simulation.load_balance_loss:.6f}")

        self.emit(
            options,
            payload={"routing": {
                "num_shared_experts": routing.num_shared_experts,
                "num_specialized_experts": routing.num_specialized_experts,
                "top_k": routing.top_k,
                "capacity_factor": routing.capacity_factor,
                "recycle_enabled": routing.recycle_enabled,
            }, **simulation.to_dict()},
            header=("expert", "primary_count", "recycled_count", "free_capacity"),
            rows=[(load.expert, load.primary_count, load.recycled_count, load.free_capacity) for load in stats.experts],
            table=table,
        )

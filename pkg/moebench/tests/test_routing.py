import numpy as np
import pytest
from returns.pipeline import is_successful
from workbench.shared.exceptions import ValidationError, InvalidInputError
from workbench.shared.numerics import make_rng, derive_seed
from workbench.routing.models import RoutingConfig, Origin
from workbench.routing.dispatch import (
    gate_scores,
    top_k_experts,
    plan_dispatch,
    combine_outputs,
    load_balance_loss,
    expert_load_stats,
)
from workbench.routing.features import SimulateRouting


def route(logits, **config):
    config = RoutingConfig.create(**config).unwrap()
    gates = gate_scores(logits, config).unwrap()
    return config, gates, plan_dispatch(gates, len(logits), config, seed=7).unwrap()


def test_config_rejects_top_k_above_expert_count():
    result = RoutingConfig.create(num_specialized_experts=4, top_k=5)
    assert not is_successful(result)
    assert isinstance(result.failure(), ValidationError)
    assert result.failure().code == "routing.invalid_top_k"


@pytest.mark.parametrize("factor", [0.0, -1.0, float("inf")])
def test_config_rejects_non_positive_capacity_factor(factor):
    result = RoutingConfig.create(capacity_factor=factor)
    assert result.failure().code == "routing.invalid_capacity_factor"


def test_capacity_is_ceiling_of_balanced_load():
    config = RoutingConfig.create(num_specialized_experts=16, top_k=1, capacity_factor=1.25).unwrap()
    assert config.capacity_for(64) == 5
    assert config.capacity_for(1) == 1


def test_gates_sum_to_one():
    config = RoutingConfig.create(num_specialized_experts=8).unwrap()
    gates = gate_scores(make_rng(0).standard_normal((10, 8)) * 30, config).unwrap()
    np.testing.assert_allclose(gates.probs.sum(axis=-1), 1.0)
    assert np.all(gates.probs >= 0)


def test_gates_reject_wrong_width_and_non_finite():
    config = RoutingConfig.create(num_specialized_experts=4).unwrap()
    assert gate_scores(np.zeros((3, 5)), config).failure().code == "routing.logits_shape"
    logits = np.zeros((3, 4))
    logits[1, 2] = np.nan
    assert isinstance(gate_scores(logits, config).failure(), InvalidInputError)


def test_top_k_ties_go_to_lower_index():
    probs = np.array([[0.25, 0.25, 0.25, 0.25]])
    assert top_k_experts(probs, 2).tolist() == [[0, 1]]


def test_all_to_one_with_recycling_drops_nothing():
    logits = np.zeros((4, 4))
    logits[:, 0] = 8.0
    _, _, plan = route(logits, num_specialized_experts=4, capacity_factor=2.0)

    assert plan.capacity == 2
    assert plan.dropped_tokens == ()
    assert plan.expert_tokens(0) == [0, 1]
    recycled = [a for a in plan.assignments() if a.origin == Origin.RECYCLED]
    assert [a.token for a in recycled] == [2, 3]
    assert all(a.expert != 0 for a in recycled)


def test_all_to_one_without_recycling_drops_overflow():
    logits = np.zeros((4, 4))
    logits[:, 0] = 8.0
    _, _, plan = route(logits, num_specialized_experts=4, capacity_factor=2.0, recycle_enabled=False)

    assert plan.dropped_tokens == (2, 3)
    assert plan.num_assignments == 2


def test_recycled_gate_weight_is_destination_probability():
    logits = np.zeros((3, 3))
    logits[:, 0] = 5.0
    _, gates, plan = route(logits, num_specialized_experts=3, capacity_factor=1.0)

    for assignment in plan.assignments():
        assert assignment.gate_weight == pytest.approx(gates.probs[assignment.token, assignment.expert])


def test_plan_is_deterministic_for_a_seed():
    logits = make_rng(3).standard_normal((32, 8))
    config = RoutingConfig.create(num_specialized_experts=8, capacity_factor=0.5).unwrap()
    gates = gate_scores(logits, config).unwrap()
    first = plan_dispatch(gates, 32, config, seed=11).unwrap()
    second = plan_dispatch(gates, 32, config, seed=11).unwrap()
    assert first.to_dict() == second.to_dict()


def test_randomized_dispatch_invariants():
    rng = make_rng(2024)
    for case in range(1000):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, n + 1))
        num_tokens = int(rng.integers(1, 33))
        factor = float(rng.uniform(0.25, 2.5))
        recycle = bool(rng.integers(0, 2))
        config = RoutingConfig.create(
            num_specialized_experts=n, top_k=k, capacity_factor=factor, recycle_enabled=recycle
        ).unwrap()
        logits = rng.standard_normal((num_tokens, n)) * 3
        if case % 5 == 0:
            logits[:, 0] += 10
        gates = gate_scores(logits, config).unwrap()
        plan = plan_dispatch(gates, num_tokens, config, seed=case).unwrap()
        stats = expert_load_stats(plan)

        loads = np.bincount(plan.experts, minlength=n)
        assert np.all(loads <= plan.capacity)

        # Every (token, slot) is either admitted once or dropped
        slots_per_token = np.bincount(plan.tokens, minlength=num_tokens) + np.bincount(
            np.asarray(plan.dropped_tokens, dtype=np.int64), minlength=num_tokens
        )
        assert np.all(slots_per_token == k)

        for assignment in plan.assignments():
            if assignment.origin == Origin.PRIMARY:
                assert assignment.expert == plan.preferred[assignment.token, assignment.slot]

        if not recycle:
            assert stats.recycled == 0
        elif n * plan.capacity >= num_tokens * k:
            assert stats.dropped == 0

        assert stats.primary + stats.recycled == plan.num_assignments
        assert all(load.free_capacity >= 0 for load in stats.experts)


def test_combine_outputs_adds_weighted_expert_rows_to_shared():
    logits = np.array([[4.0, 0.0], [0.0, 4.0]])
    _, gates, plan = route(logits, num_specialized_experts=2, capacity_factor=2.0)
    shared = np.ones((2, 3))
    expert_outputs = np.arange(plan.num_assignments * 3, dtype=float).reshape(-1, 3)

    combined = combine_outputs(shared, expert_outputs, plan).unwrap()

    expected = shared.copy()
    for row, assignment in enumerate(plan.assignments()):
        expected[assignment.token] += assignment.gate_weight * expert_outputs[row]
    np.testing.assert_allclose(combined, expected)


def test_combine_outputs_checks_shapes():
    _, _, plan = route(np.zeros((2, 2)), num_specialized_experts=2, capacity_factor=2.0)
    assert combine_outputs(np.ones((3, 4)), np.ones((2, 4)), plan).failure().code == "routing.shared_outputs_shape"
    assert combine_outputs(np.ones((2, 4)), np.ones((5, 4)), plan).failure().code == "routing.expert_outputs_shape"


def test_load_balance_loss_is_one_when_uniform():
    _, gates, plan = route(np.zeros((8, 4)) + np.eye(4)[np.arange(8) % 4] * 1e-9, num_specialized_experts=4, capacity_factor=2.0)
    assert load_balance_loss(gates, plan) == pytest.approx(1.0)


def test_load_balance_loss_grows_with_collapse():
    logits = np.zeros((8, 4))
    logits[:, 0] = 6.0
    _, gates, plan = route(logits, num_specialized_experts=4, capacity_factor=4.0)
    assert load_balance_loss(gates, plan) > 3.0


def test_simulate_routing_reports_load():
    config = RoutingConfig.create(num_specialized_experts=4, capacity_factor=2.0).unwrap()
    simulation = SimulateRouting().execute(config, num_tokens=4, seed=0, all_to_one=True).unwrap()

    assert simulation.stats.dropped == 0
    assert simulation.stats.recycled == 2
    assert simulation.stats.experts[0].primary_count == 2
    assert simulation.to_dict()["stats"]["totals"] == {"primary": 2, "recycled": 2, "dropped": 0}


def test_gate_scores_match_softmax_by_hand():
    config = RoutingConfig.create(num_specialized_experts=3, top_k=1).unwrap()
    probs = gate_scores(np.array([[1.0, 2.0, 3.0]]), config).unwrap().probs
    expected = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
    np.testing.assert_allclose(probs[0], expected, rtol=1e-12)
    np.testing.assert_allclose(probs[0], [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


def test_single_expert_gate_is_certain():
    config = RoutingConfig.create(num_specialized_experts=1, top_k=1).unwrap()
    probs = gate_scores(np.array([[-4.0], [0.0], [7.5]]), config).unwrap().probs
    assert probs.tolist() == [[1.0], [1.0], [1.0]]


def test_gate_argmax_follows_logits():
    config = RoutingConfig.create(num_specialized_experts=8).unwrap()
    rng = make_rng(41)
    for _ in range(50):
        logits = rng.standard_normal((16, 8)) * 5
        probs = gate_scores(logits, config).unwrap().probs
        assert np.array_equal(probs.argmax(axis=-1), logits.argmax(axis=-1))


def test_ample_capacity_is_pure_argmax_routing():
    logits = make_rng(4).standard_normal((24, 6))
    _, _, plan = route(logits, num_specialized_experts=6, top_k=1, capacity_factor=6.0)

    assert plan.capacity >= 24
    assert plan.dropped_tokens == ()
    assert all(a.origin == Origin.PRIMARY for a in plan.assignments())
    assert [plan.experts[plan.tokens == t][0] for t in range(24)] == logits.argmax(axis=-1).tolist()


def test_recycling_never_changes_primary_assignments():
    rng = make_rng(77)
    for case in range(200):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, n + 1))
        num_tokens = int(rng.integers(1, 33))
        factor = float(rng.uniform(0.25, 1.5))
        logits = rng.standard_normal((num_tokens, n)) * 3
        primaries = []
        for recycle in (True, False):
            config = RoutingConfig.create(
                num_specialized_experts=n, top_k=k, capacity_factor=factor, recycle_enabled=recycle
            ).unwrap()
            gates = gate_scores(logits, config).unwrap()
            plan = plan_dispatch(gates, num_tokens, config, seed=case).unwrap()
            primaries.append(sorted(
                (a.token, a.slot, a.expert) for a in plan.assignments() if a.origin == Origin.PRIMARY
            ))
        assert primaries[0] == primaries[1]


def test_load_balance_loss_is_expert_count_for_one_hot_routing():
    for n in (2, 4, 16):
        logits = np.zeros((10, n))
        logits[:, 0] = 1000.0
        _, gates, plan = route(logits, num_specialized_experts=n, capacity_factor=float(n))
        assert load_balance_loss(gates, plan) == pytest.approx(n, abs=1e-12)


def test_load_balance_loss_matches_direct_summation():
    rng = make_rng(8)
    for _ in range(20):
        n, num_tokens = int(rng.integers(2, 9)), int(rng.integers(1, 41))
        logits = rng.standard_normal((num_tokens, n))
        _, gates, plan = route(logits, num_specialized_experts=n, capacity_factor=1.0)

        probs = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
        total = 0.0
        for expert in range(n):
            fraction = sum(1 for t in range(num_tokens) if np.argmax(logits[t]) == expert) / num_tokens
            mean_prob = sum(probs[t, expert] for t in range(num_tokens)) / num_tokens
            total += fraction * mean_prob
        assert load_balance_loss(gates, plan) == pytest.approx(n * total, rel=1e-12)


def test_dropped_token_keeps_only_the_shared_output():
    logits = np.zeros((4, 4))
    logits[:, 0] = 8.0
    _, _, plan = route(logits, num_specialized_experts=4, capacity_factor=2.0, recycle_enabled=False)
    shared = make_rng(1).standard_normal((4, 3))
    expert_outputs = np.full((plan.num_assignments, 3), 100.0)

    combined = combine_outputs(shared, expert_outputs, plan).unwrap()

    assert plan.dropped_tokens == (2, 3)
    np.testing.assert_array_equal(combined[[2, 3]], shared[[2, 3]])
    assert np.all(np.abs(combined[[0, 1]] - shared[[0, 1]]) > 1.0)


def test_negative_seeds_route_like_any_other():
    logits = np.zeros((4, 4))
    logits[:, 0] = 8.0
    config = RoutingConfig.create(num_specialized_experts=4, capacity_factor=2.0).unwrap()
    gates = gate_scores(logits, config).unwrap()

    first = plan_dispatch(gates, 4, config, seed=-1).unwrap()
    second = plan_dispatch(gates, 4, config, seed=-1).unwrap()

    assert first.dropped_tokens == ()
    assert expert_load_stats(first).recycled == 2
    assert first.to_dict() == second.to_dict()
    assert make_rng(-5).standard_normal(3).tolist() == make_rng(-5).standard_normal(3).tolist()
    assert derive_seed(-1, 3, -2) == derive_seed(-1, 3, -2) >= 0


def test_simulate_routing_rejects_empty_batch():
    config = RoutingConfig.create(num_specialized_experts=4).unwrap()
    for num_tokens in (0, -3):
        result = SimulateRouting().execute(config, num_tokens=num_tokens, seed=0)
        assert isinstance(result.failure(), ValidationError)
        assert result.failure().code == "routing.invalid_num_tokens"


def test_capacity_from_absolute_count_is_exact():
    for capacity in range(1, 13):
        for n in range(1, 9):
            for top_k in range(1, n + 1):
                for num_tokens in (1, 3, 7, 10, 33, 64):
                    factor = capacity * n / (num_tokens * top_k)
                    config = RoutingConfig.create(num_specialized_experts=n, top_k=top_k, capacity_factor=factor).unwrap()
                    assert config.capacity_for(num_tokens) == capacity


def test_capacity_just_above_an_integer_rounds_up():
    config = RoutingConfig.create(num_specialized_experts=1, top_k=1, capacity_factor=2.0000000005).unwrap()
    assert config.capacity_for(1) == 3

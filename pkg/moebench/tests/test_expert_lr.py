import math
import numpy as np
import pytest
from returns.pipeline import is_successful
from workbench.shared.numerics import make_rng
from workbench.expert_lr.models import ExpertGroup, ExpertLRParams
from workbench.expert_lr.schedule import (
    optimal_lr,
    expert_scale_ratio,
    build_schedule,
    schedule_for,
    base_lr,
    lr_at,
    lr_grid,
)
from workbench.expert_lr.features import PlanLearningRates


def params(B=64.0, B_noise=1.0, n=16, eps_max=3e-4):
    return ExpertLRParams.create(eps_max, B, B_noise, n).unwrap()


def test_optimal_lr_peaks_at_noise_scale():
    p = params(B_noise=64.0)
    assert optimal_lr(p, 64.0).unwrap() == pytest.approx(3e-4)
    assert optimal_lr(p, 16.0).unwrap() < 3e-4
    assert optimal_lr(p, 256.0).unwrap() < 3e-4


def test_optimal_lr_rejects_non_positive_batch():
    assert optimal_lr(params(), 0.0).failure().code == "expert_lr.non_positive_batch"


def test_expert_scale_ratio_at_sixty_four_times_noise_scale():
    assert expert_scale_ratio(params(B=64.0, B_noise=1.0, n=16)) == pytest.approx(0.307692, abs=1e-6)


def test_expert_scale_ratio_is_one_for_a_single_expert():
    assert expert_scale_ratio(params(n=1)) == pytest.approx(1.0)


def test_expert_scale_ratio_exceeds_one_below_noise_scale():
    # Smaller per-expert batches move further from B_noise when B < B_noise
    assert expert_scale_ratio(params(B=1.0, B_noise=64.0)) > 1.0


def test_params_reject_non_positive_values():
    assert ExpertLRParams.create(0.0, 64, 1).failure().code == "expert_lr.non_positive"
    assert ExpertLRParams.create(1e-3, 64, 1, n=0).failure().code == "expert_lr.invalid_expert_count"


@pytest.mark.parametrize("kwargs, code", [
    ({"warmup_fraction": 1.0}, "expert_lr.invalid_warmup"),
    ({"warmup_fraction": 0.5, "anneal_fraction": 0.5}, "expert_lr.phases_overlap"),
    ({"warmup_fraction": 0.1, "anneal_fraction": 0.0}, "expert_lr.invalid_anneal_fraction"),
    ({"warmup_fraction": 0.1, "anneal_factor": 1.0}, "expert_lr.invalid_anneal_factor"),
    ({"warmup_fraction": 0.1, "per_group_scale": {"router": 1.0}}, "expert_lr.unknown_group"),
    ({"warmup_fraction": 0.1, "per_group_scale": {"shared": 0.0}}, "expert_lr.non_positive_scale"),
])
def test_schedule_rejects_invalid_phases(kwargs, code):
    result = build_schedule(1e-3, 1000, **kwargs)
    assert result.failure().code == code


def test_schedule_phases():
    schedule = build_schedule(peak=1.0, total_tokens=1000, warmup_fraction=0.1, anneal_fraction=0.1, anneal_factor=0.1).unwrap()

    assert base_lr(schedule, 0) == 0.0
    assert base_lr(schedule, 50) == pytest.approx(0.5)
    assert base_lr(schedule, 100) == pytest.approx(1.0)
    # Midpoint of the cosine decay sits halfway between peak and floor
    assert base_lr(schedule, 500) == pytest.approx(0.55)
    assert base_lr(schedule, 900) == pytest.approx(0.1)
    assert base_lr(schedule, 1000) == pytest.approx(0.1)


def test_schedule_is_monotone_after_warmup():
    schedule = build_schedule(peak=3e-4, total_tokens=1e6, warmup_fraction=0.01).unwrap()
    values = [base_lr(schedule, t) for t in np.linspace(schedule.warmup_end, schedule.total_tokens, 500)]
    assert all(a >= b - 1e-18 for a, b in zip(values, values[1:]))
    rising = [base_lr(schedule, t) for t in np.linspace(0, schedule.warmup_end, 50)]
    assert all(a <= b for a, b in zip(rising, rising[1:]))


def test_lr_at_applies_group_scale_and_horizon():
    p = params()
    schedule = schedule_for(p, total_tokens=1000, warmup_fraction=0.1).unwrap()

    shared = lr_at(schedule, 100, ExpertGroup.SHARED).unwrap()
    specialized = lr_at(schedule, 100, "specialized").unwrap()
    assert shared == pytest.approx(optimal_lr(p, p.B).unwrap())
    assert specialized / shared == pytest.approx(expert_scale_ratio(p))
    assert lr_at(schedule, 1001).failure().code == "expert_lr.beyond_horizon"
    assert lr_at(schedule, 10, "router").failure().code == "expert_lr.unknown_group"


def test_schedule_for_honors_explicit_peak():
    schedule = schedule_for(params(), total_tokens=10, warmup_fraction=0.0, peak=1e-2).unwrap()
    assert lr_at(schedule, 0).unwrap() == pytest.approx(1e-2)


def test_lr_grid_covers_both_ends_for_each_group():
    schedule = build_schedule(1.0, 100, 0.1).unwrap()
    rows = lr_grid(schedule, 11)
    assert len(rows) == 11 * len(ExpertGroup)
    assert rows[0][0] == 0.0
    assert rows[-1][0] == 100.0


def test_plan_learning_rates():
    plan = PlanLearningRates().execute(params(), total_tokens=1600, warmup_fraction=0.05, points=5).unwrap()
    assert plan.scale_ratio == pytest.approx(0.307692, abs=1e-6)
    assert plan.to_dict()["schedule"]["per_group_scale"]["specialized"] == pytest.approx(0.307692, abs=1e-6)
    assert len(plan.rows) == 15


def test_plan_learning_rates_propagates_schedule_errors():
    assert not is_successful(PlanLearningRates().execute(params(), total_tokens=0, warmup_fraction=0.05))


def test_optimal_lr_hand_value_and_large_batch_asymptote():
    p = params(eps_max=1.0, B_noise=1.0)
    assert optimal_lr(p, 64.0).unwrap() == pytest.approx(2 / 8.125)
    batch = 1e6
    assert optimal_lr(p, batch).unwrap() == pytest.approx(2 * np.sqrt(1 / batch), rel=1e-3)


def test_optimal_lr_is_maximized_at_noise_scale_and_scale_free():
    p = params(B_noise=32.0)
    grid = np.logspace(-2, 6, 201)
    values = [optimal_lr(p, b).unwrap() for b in grid]
    assert max(values) <= optimal_lr(p, 32.0).unwrap()
    scaled = params(B_noise=320.0)
    assert optimal_lr(scaled, 640.0).unwrap() == pytest.approx(optimal_lr(p, 64.0).unwrap())


def test_expert_scale_ratio_large_batch_limit():
    assert expert_scale_ratio(params(B=1e6, B_noise=1.0, n=16)) == pytest.approx(0.25, rel=5e-3)


def test_schedule_ends_at_tenth_of_peak_per_group():
    p = params()
    schedule = schedule_for(p, total_tokens=2000, warmup_fraction=0.01).unwrap()
    assert schedule.anneal_start == pytest.approx(0.95 * 2000)
    end = lr_at(schedule, 2000, ExpertGroup.SPECIALIZED).unwrap()
    assert end == pytest.approx(0.1 * schedule.peak * expert_scale_ratio(p), rel=1e-12)
    # Continuous at the anneal boundary
    before = base_lr(schedule, schedule.anneal_start - 1e-9)
    assert before == pytest.approx(schedule.floor, abs=1e-12)


def test_expert_scale_ratio_stays_within_square_root_bounds():
    rng = make_rng(31)
    for _ in range(200):
        n = int(rng.integers(1, 65))
        p = params(B=10 ** rng.uniform(-3, 6), B_noise=10 ** rng.uniform(-2, 3), n=n)
        ratio = expert_scale_ratio(p)
        assert 1 / math.sqrt(n) * (1 - 1e-12) <= ratio <= math.sqrt(n) * (1 + 1e-12)


def test_expert_scale_ratio_is_one_where_batches_straddle_noise_scale():
    # B * (B / n) = B_noise ** 2
    for n in (2, 16, 64):
        assert expert_scale_ratio(params(B=5.0 * math.sqrt(n), B_noise=5.0, n=n)) == pytest.approx(1.0, rel=1e-12)
    assert expert_scale_ratio(params(B=64.0, B_noise=1.0, n=16)) != pytest.approx(1.0, rel=1e-3)

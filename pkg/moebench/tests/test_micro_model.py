from dataclasses import replace
import numpy as np
import pytest
from returns.pipeline import is_successful
from workbench.shared.events import InMemoryDomainEventBroker
from workbench.shared.exceptions import CapacityError, InvalidStateError, NotFoundError, ResourceError
from workbench.shared.numerics import make_rng, max_relative_error
from workbench.routing.models import RoutingConfig
from workbench.expert_lr.models import ExpertGroup, ExpertLRParams
from workbench.expert_lr.schedule import expert_scale_ratio
from workbench.micro_model.models import (
    ModelConfig,
    ExpertParams,
    MoELayer,
    OptimizerState,
    TrainingBatch,
    TrainingSettings,
    TrainingStepCompleted,
    CheckpointStored,
    count_by_formula,
)
from workbench.micro_model.layers import swiglu_forward, cross_entropy
from workbench.micro_model.moe import moe_ffn_forward, moe_ffn_backward
from workbench.micro_model.model import build_model, count_parameters, forward, forward_train, backward
from workbench.micro_model.optim import adamw_update
from workbench.micro_model.gradcheck import finite_diff_grad, sample_coordinates
from workbench.micro_model.checkpoints import encode_checkpoint, decode_checkpoint
from workbench.micro_model.repository import FileCheckpointRepository, InMemoryCheckpointRepository
from workbench.micro_model.features import memorization_batch, greedy_decode, TrainDemo, InferDemo


def toy_config(capacity_factor=1.25, **overrides):
    routing = RoutingConfig.create(
        num_shared_experts=1,
        num_specialized_experts=overrides.pop("experts", 16),
        top_k=overrides.pop("top_k", 1),
        capacity_factor=capacity_factor,
    ).unwrap()
    sizes = dict(layers=2, heads=4, kv_groups=2, head_dim=4, hidden_size=16, ffn_hidden_size=16, vocab_size=32)
    return ModelConfig.create(routing=routing, **{**sizes, **overrides}).unwrap()


def small_config():
    """ Three layers so the last share group is partial. """
    return toy_config(
        capacity_factor=0.75, experts=4, top_k=2,
        layers=3, heads=2, kv_groups=1, head_dim=4, hidden_size=8, ffn_hidden_size=8, vocab_size=11,
        aux_loss_coef=0.05,
    )


def toy_lr_params():
    return ExpertLRParams.create(0.01, 64, 1, 16).unwrap()


def test_swiglu_hand_value():
    ones = np.ones((1, 1))
    expert = ExpertParams.create(ones, ones, ones).unwrap()
    assert swiglu_forward(np.array([1.0]), expert).unwrap()[0] == pytest.approx(0.731058, abs=1e-6)


def test_swiglu_rejects_wrong_width():
    expert = ExpertParams.create(np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 2))).unwrap()
    assert swiglu_forward(np.ones(3), expert).failure().code == "micro_model.swiglu_shape"


def test_expert_params_validate_shapes():
    result = ExpertParams.create(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)))
    assert result.failure().code == "micro_model.expert_shape"


def test_cross_entropy_of_uniform_logits():
    loss, d_logits = cross_entropy(np.zeros((2, 3, 8)), np.zeros((2, 3), dtype=np.int64))
    assert loss == pytest.approx(np.log(8))
    np.testing.assert_allclose(d_logits.sum(axis=-1), 0.0, atol=1e-15)


def test_finite_diff_of_square_and_linear():
    theta = np.array([[1.0, -2.0], [0.5, 3.0]])
    np.testing.assert_allclose(finite_diff_grad(lambda t: float(np.sum(t**2)), theta), 2 * theta, rtol=1e-8)

    a = np.array([[0.3, -1.2], [4.0, 0.0]])
    np.testing.assert_allclose(finite_diff_grad(lambda t: float(np.sum(a * t)), theta), a, atol=1e-9)
    np.testing.assert_allclose(finite_diff_grad(lambda t: float(np.sum(a * t)), theta, coordinates=[0, 2]), [0.3, 4.0], atol=1e-9)


def random_moe_layer(rng, hidden=4, ffn=3, experts=4, shared=1):
    def expert(group):
        return ExpertParams(
            gate=rng.standard_normal((hidden, ffn)),
            up=rng.standard_normal((hidden, ffn)),
            down=rng.standard_normal((ffn, hidden)),
            group=group,
        )
    return MoELayer(
        router=rng.standard_normal((hidden, experts)),
        shared=tuple(expert(ExpertGroup.SHARED) for _ in range(shared)),
        experts=tuple(expert(ExpertGroup.SPECIALIZED) for _ in range(experts)),
    )


def test_moe_gradients_match_finite_differences():
    aux = 0.3
    for seed in range(100):
        rng = make_rng(seed)
        config = RoutingConfig.create(num_specialized_experts=4, top_k=2, capacity_factor=0.75).unwrap()
        layer = random_moe_layer(rng)
        x = rng.standard_normal((5, 4))
        upstream = rng.standard_normal((5, 4))

        _, state = moe_ffn_forward(x, layer, config, seed).unwrap()
        plan = state.plan
        grads = moe_ffn_backward(state, upstream, aux_upstream=aux).unwrap()

        def loss(inputs=x, moe_layer=layer):
            out, moe_state = moe_ffn_forward(inputs, moe_layer, config, seed, plan=plan).unwrap()
            return float(np.sum(out * upstream)) + aux * moe_state.load_balance_loss

        def with_expert(kind, index, name, value):
            group = list(getattr(layer, kind))
            group[index] = ExpertParams(**{**vars(group[index]), name: value})
            return MoELayer(**{**vars(layer), kind: tuple(group)})

        numeric = finite_diff_grad(lambda t: loss(inputs=t), x)
        np.testing.assert_allclose(grads.inputs, numeric, rtol=1e-5, atol=1e-7)

        numeric = finite_diff_grad(lambda t: loss(moe_layer=MoELayer(t, layer.shared, layer.experts)), layer.router)
        np.testing.assert_allclose(grads.parameters["router"], numeric, rtol=1e-5, atol=1e-7)

        numeric = finite_diff_grad(lambda t: loss(moe_layer=with_expert("shared", 0, "gate", t)), layer.shared[0].gate)
        np.testing.assert_allclose(grads.parameters["shared.0.gate"], numeric, rtol=1e-5, atol=1e-7)

        expert = int(plan.experts[0])
        numeric = finite_diff_grad(lambda t: loss(moe_layer=with_expert("experts", expert, "down", t)), layer.experts[expert].down)
        np.testing.assert_allclose(grads.parameters[f"experts.{expert}.down"], numeric, rtol=1e-5, atol=1e-7)


def test_unassigned_experts_get_zero_gradients():
    rng = make_rng(4)
    config = RoutingConfig.create(num_specialized_experts=4, capacity_factor=4.0, recycle_enabled=False).unwrap()
    layer = random_moe_layer(rng)
    layer = MoELayer(np.zeros((4, 4)), layer.shared, layer.experts)
    x = rng.standard_normal((6, 4))

    # Uniform gates send every token to expert 0
    _, state = moe_ffn_forward(x, layer, config, seed=0).unwrap()
    grads = moe_ffn_backward(state, rng.standard_normal((6, 4))).unwrap()

    assert set(state.plan.experts.tolist()) == {0}
    for e in (1, 2, 3):
        for name in ("gate", "up", "down"):
            assert not np.any(grads.parameters[f"experts.{e}.{name}"])


def test_moe_backward_is_linear_in_upstream():
    rng = make_rng(6)
    config = RoutingConfig.create(num_specialized_experts=4, top_k=2).unwrap()
    layer = random_moe_layer(rng)
    _, state = moe_ffn_forward(rng.standard_normal((5, 4)), layer, config, seed=1).unwrap()
    upstream = rng.standard_normal((5, 4))

    once = moe_ffn_backward(state, upstream).unwrap()
    twice = moe_ffn_backward(state, 2 * upstream).unwrap()
    np.testing.assert_allclose(twice.inputs, 2 * once.inputs)
    for name, value in once.parameters.items():
        np.testing.assert_allclose(twice.parameters[name], 2 * value)


def test_moe_backward_without_forward_state_fails():
    result = moe_ffn_backward(None, np.zeros((1, 4)))
    assert isinstance(result.failure(), InvalidStateError)
    assert result.failure().code == "micro_model.missing_forward_state"


def test_model_gradients_match_finite_differences():
    model = build_model(small_config()).unwrap()
    batch = memorization_batch(2, 5, model.config.vocab_size, seed=3).unwrap()
    state = forward_train(model, batch).unwrap()
    grads = backward(model, state).unwrap()
    rng = make_rng(0)

    for name, value in model.parameters.items():
        coordinates = sample_coordinates(rng, value.size, 4)

        def loss(theta, name=name):
            return forward_train(model.with_parameter(name, theta), batch, plans=state.plans).unwrap().loss

        numeric = finite_diff_grad(loss, value, coordinates=coordinates)
        analytic = grads[name].reshape(-1)[coordinates]
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8, err_msg=name)


def test_prefill_and_decode_agree():
    # Capacity covers the whole prompt. With overflow, a prefill batch recycles
    # or drops tokens that a one-token decode step would admit, so the paths differ.
    model = build_model(toy_config(capacity_factor=16.0)).unwrap()
    tokens = np.array([3, 17, 5, 0, 31, 8])

    prefill = forward(model, tokens, model.new_cache(len(tokens))).unwrap()

    cache = model.new_cache(len(tokens))
    stepwise = np.stack([forward(model, tokens[t:t + 1], cache).unwrap().logits[0] for t in range(len(tokens))])

    batch = TrainingBatch.create(tokens, tokens, 32).unwrap()
    full = forward_train(model, batch).unwrap().logits[0]

    assert max_relative_error(stepwise, prefill.logits) < 1e-10
    assert max_relative_error(full, prefill.logits) < 1e-10


def test_forward_beyond_cache_fails():
    model = build_model(toy_config()).unwrap()
    result = forward(model, np.array([1, 2, 3]), model.new_cache(2))
    assert isinstance(result.failure(), CapacityError)
    assert result.failure().code == "micro_model.sequence_too_long"


def test_forward_rejects_out_of_vocabulary_ids():
    model = build_model(toy_config()).unwrap()
    assert forward(model, np.array([32]), model.new_cache(2)).failure().code == "micro_model.invalid_token_ids"


def test_greedy_decode_accounts_cache_bytes():
    model = build_model(toy_config(capacity_factor=16.0)).unwrap()
    result = greedy_decode(model, [1, 2, 3], 4).unwrap()

    assert len(result.generated) == 4
    assert result.tokens[:3] == [1, 2, 3]
    # 6 fed positions, 1 source layer, 2 groups of 4 float64 keys and values
    assert result.cache_bytes == 6 * 2 * 2 * 4 * 8


def test_toy_parameter_count():
    config = toy_config()
    count = count_parameters(config)
    assert count == count_by_formula(config)
    assert count.total == 29_008
    assert count.total == build_model(config).unwrap().parameter_count


def test_hunyuan_parameter_count():
    routing = RoutingConfig.create(1, 16, 1, 1.25).unwrap()
    config = ModelConfig.create(
        layers=64, heads=80, kv_groups=8, head_dim=80, hidden_size=6400,
        ffn_hidden_size=18304, vocab_size=128000, routing=routing,
    ).unwrap()
    count = count_parameters(config)

    assert count == count_by_formula(config)
    assert count.total == pytest.approx(389e9, rel=0.01)
    assert count.activated == pytest.approx(52e9, rel=0.01)

    result = build_model(config)
    assert result.failure().code == "micro_model.over_ceiling"


def test_config_rejects_hidden_size_mismatch():
    routing = RoutingConfig.create().unwrap()
    result = ModelConfig.create(2, 4, 2, 4, 15, 16, 32, routing)
    assert result.failure().code == "micro_model.hidden_size_mismatch"


def test_adamw_with_zero_gradients_only_decays():
    parameters = {"layers.0.wq": np.full((2, 2), 2.0), "layers.0.experts.0.up": np.ones(3)}
    grads = {name: np.zeros_like(value) for name, value in parameters.items()}
    state = OptimizerState.zeros_like(parameters, weight_decay=0.1)
    lrs = {ExpertGroup.NON_EXPERT: 0.1, ExpertGroup.SHARED: 0.1, ExpertGroup.SPECIALIZED: 0.5}

    updated, new_state = adamw_update(parameters, grads, state, lrs)

    np.testing.assert_allclose(updated["layers.0.wq"], 2.0 * (1 - 0.1 * 0.1))
    np.testing.assert_allclose(updated["layers.0.experts.0.up"], 1 - 0.5 * 0.1)
    assert new_state.step == 1
    assert parameters["layers.0.wq"][0, 0] == 2.0


def short_training(steps=5):
    settings = TrainingSettings.create(steps=steps, num_sequences=4, sequence_length=5).unwrap()
    return TrainDemo(
        checkpoint_repository=InMemoryCheckpointRepository(domain_events_broker=InMemoryDomainEventBroker()),
        domain_events_broker=InMemoryDomainEventBroker(),
    ).execute(toy_config(), settings, toy_lr_params()).unwrap()


def test_training_is_deterministic():
    first, second = short_training(), short_training()
    assert [r.loss for r in first.reports] == [r.loss for r in second.reports]
    for name, value in first.model.parameters.items():
        assert np.array_equal(value, second.model.parameters[name])


def test_smoke_training_memorizes_and_scales_expert_lr():
    settings = TrainingSettings.create(steps=200, num_sequences=8, sequence_length=9, warmup_fraction=0.05, peak_lr=1e-2).unwrap()
    run = TrainDemo(domain_events_broker=InMemoryDomainEventBroker()).execute(toy_config(), settings, toy_lr_params()).unwrap()

    assert len(run.reports) == 200
    assert run.final_loss <= run.initial_loss / 2

    lrs = run.reports[50].group_lrs
    assert lrs[ExpertGroup.SPECIALIZED] / lrs[ExpertGroup.SHARED] == pytest.approx(expert_scale_ratio(toy_lr_params()), rel=1e-12)
    assert expert_scale_ratio(toy_lr_params()) == pytest.approx(0.307692, abs=1e-6)
    assert all(report.dropped == 0 for report in run.reports)


def test_training_dispatches_step_and_checkpoint_events():
    broker = InMemoryDomainEventBroker()
    repository = InMemoryCheckpointRepository(domain_events_broker=broker)
    settings = TrainingSettings.create(steps=3, num_sequences=2, sequence_length=4).unwrap()

    TrainDemo(checkpoint_repository=repository, domain_events_broker=broker).execute(
        toy_config(), settings, toy_lr_params(), checkpoint_id="toy",
    ).unwrap()

    steps = broker.dispatched_of(TrainingStepCompleted)
    assert [event.report.step for event in steps] == [1, 2, 3]
    stored = broker.dispatched_of(CheckpointStored)
    assert len(stored) == 1 and stored[0].step == 3
    assert "toy" in repository


def test_checkpoint_round_trip_in_memory():
    model = build_model(toy_config()).unwrap().replace(build_model(toy_config()).unwrap().parameters, step=7)
    repository = InMemoryCheckpointRepository(domain_events_broker=InMemoryDomainEventBroker())
    repository.store("a", model).unwrap()

    restored = repository.get_by_id("a").unwrap()
    assert restored.step == 7
    assert restored.config == model.config
    for name, value in model.parameters.items():
        assert np.array_equal(restored.parameters[name], value)

    assert isinstance(repository.get_by_id("b").failure(), NotFoundError)


def test_checkpoint_round_trip_on_disk(tmp_path):
    broker = InMemoryDomainEventBroker()
    repository = FileCheckpointRepository(directory=tmp_path, domain_events_broker=broker)
    model = build_model(toy_config()).unwrap()

    repository.store("demo", model).unwrap()

    assert (tmp_path / "demo.ckpt").exists()
    assert broker.dispatched_of(CheckpointStored)[0].checkpoint_id == str(tmp_path / "demo.ckpt")
    restored = repository.get_by_id("demo").unwrap()
    assert encode_checkpoint(restored) == encode_checkpoint(model)

    decoded = InferDemo(checkpoint_repository=repository).execute([1, 2], 3, checkpoint_id="demo").unwrap()
    assert decoded.generated == greedy_decode(model, [1, 2], 3).unwrap().generated


def test_missing_checkpoint_file(tmp_path):
    repository = FileCheckpointRepository(directory=tmp_path, domain_events_broker=InMemoryDomainEventBroker())
    assert isinstance(repository.get_by_id("absent").failure(), NotFoundError)


def test_corrupt_checkpoints_are_rejected():
    data = encode_checkpoint(build_model(toy_config()).unwrap())

    assert decode_checkpoint(b"\x02" + data[1:]).failure().code == "micro_model.checkpoint_version"
    assert decode_checkpoint(data[:-8]).failure().code == "micro_model.truncated_checkpoint"
    assert decode_checkpoint(data[:3]).failure().code == "micro_model.truncated_checkpoint"

    garbled = data[:5] + b"{" * 10 + data[15:]
    result = decode_checkpoint(garbled)
    assert isinstance(result.failure(), ResourceError)
    assert result.failure().code == "micro_model.corrupt_checkpoint"


def test_infer_demo_needs_a_model():
    result = InferDemo().execute([1], 1)
    assert result.failure().code == "micro_model.no_model"
    assert not is_successful(greedy_decode(build_model(toy_config()).unwrap(), [], 2))


def test_swiglu_of_zero_input_is_zero():
    rng = make_rng(1)
    expert = ExpertParams.create(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), rng.standard_normal((3, 4))).unwrap()
    assert not np.any(swiglu_forward(np.zeros(4), expert).unwrap())


def test_small_capacity_without_recycling_leaves_dropped_tokens_on_the_shared_path():
    tokens = np.array([4, 4, 4, 4, 4, 4])
    roomy = build_model(toy_config(capacity_factor=16.0)).unwrap()
    tight_routing = RoutingConfig.create(1, 16, 1, 0.1, recycle_enabled=False).unwrap()
    tight = build_model(replace(toy_config(), routing=tight_routing)).unwrap()

    first = forward(roomy, tokens, roomy.new_cache(6)).unwrap()
    second = forward(tight, tokens, tight.new_cache(6)).unwrap()

    # Capacity 1: only the first token reaches its expert in the first layer
    assert second.plans[0].dropped_tokens == (1, 2, 3, 4, 5)
    np.testing.assert_allclose(second.logits[0], first.logits[0], atol=1e-12)
    assert not np.allclose(second.logits[1:], first.logits[1:])


def test_negative_seed_builds_a_reproducible_model():
    first = build_model(toy_config(seed=-7)).unwrap()
    second = build_model(toy_config(seed=-7)).unwrap()
    other = build_model(toy_config(seed=7)).unwrap()
    assert encode_checkpoint(first) == encode_checkpoint(second)
    assert encode_checkpoint(first) != encode_checkpoint(other)


def test_demos_need_a_repository_for_checkpoint_ids():
    result = InferDemo().execute([1, 2], 1, checkpoint_id="demo")
    assert isinstance(result.failure(), InvalidStateError)
    assert result.failure().code == "micro_model.no_repository"

    settings = TrainingSettings.create(steps=1, num_sequences=2, sequence_length=4, warmup_fraction=0.0, peak_lr=0.01).unwrap()
    run = TrainDemo(domain_events_broker=InMemoryDomainEventBroker()).execute(
        toy_config(), settings, toy_lr_params(), checkpoint_id="demo",
    )
    assert run.failure().code == "micro_model.no_repository"


def test_relative_checkpoint_ids_stay_inside_the_directory(tmp_path):
    repository = FileCheckpointRepository(directory=tmp_path, domain_events_broker=InMemoryDomainEventBroker())
    model = build_model(toy_config()).unwrap()

    repository.store("runs/demo", model).unwrap()

    assert repository.path_for("runs/demo") == tmp_path / "runs" / "demo.ckpt"
    assert (tmp_path / "runs" / "demo.ckpt").exists()
    assert repository.path_for(str(tmp_path / "elsewhere.ckpt")) == tmp_path / "elsewhere.ckpt"

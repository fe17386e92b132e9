"""
Decoder assembly: embeddings, pre-norm blocks of GQA + CLA attention and a MoE
feed-forward, final RMSNorm and an output head.

Parameters live in one ordered name -> array mapping; declaration order is
the checkpoint order.
"""

from logging import Logger, getLogger
from dataclasses import dataclass
from typing import Optional
import numpy as np
from django.conf import settings
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error, ValidationError, InvalidInputError, CapacityError, ContractViolationError
from workbench.shared.models import AggregateRoot
from workbench.shared.numerics import make_rng, derive_seed
from workbench.routing.dispatch import expert_load_stats
from workbench.routing.models import DispatchPlan, LoadStats
from workbench.attention.models import KVCache
from workbench.attention.gqa import AttentionState, grouped_attention, grouped_attention_backward, append_kv, attention_forward
from workbench.expert_lr.models import ExpertGroup
from .models import ModelConfig, ExpertParams, MoELayer, ParameterCount, TrainingBatch
from .layers import RMSNormState, rms_norm, rms_norm_backward, cross_entropy
from .moe import MoEState, moe_ffn_forward, moe_ffn_backward


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    h, f = config.hidden_size, config.ffn_hidden_size
    kv_width = config.kv_groups * config.head_dim
    layout = config.layout
    shapes = [("embed", (config.vocab_size, h))]

    for i in range(config.layers):
        prefix = f"layers.{i}"
        shapes += [(f"{prefix}.attn_norm", (h,)), (f"{prefix}.wq", (h, h))]
        if layout.is_source(i):
            shapes += [(f"{prefix}.wk", (h, kv_width)), (f"{prefix}.wv", (h, kv_width))]
        shapes += [
            (f"{prefix}.wo", (h, h)),
            (f"{prefix}.ffn_norm", (h,)),
            (f"{prefix}.router", (h, config.routing.num_specialized_experts)),
        ]
        for kind, count in (("shared", config.routing.num_shared_experts), ("experts", config.routing.num_specialized_experts)):
            for j in range(count):
                shapes += [
                    (f"{prefix}.{kind}.{j}.gate", (h, f)),
                    (f"{prefix}.{kind}.{j}.up", (h, f)),
                    (f"{prefix}.{kind}.{j}.down", (f, h)),
                ]

    shapes += [("final_norm", (h,)), ("head", (h, config.vocab_size))]
    return shapes


def parameter_group(name: str) -> ExpertGroup:
    if ".shared." in name:
        return ExpertGroup.SHARED
    if ".experts." in name:
        return ExpertGroup.SPECIALIZED
    return ExpertGroup.NON_EXPERT


def count_parameters(config: ModelConfig) -> ParameterCount:
    """ Total parameters and those activated per token (shared + top_k specialized experts). """
    total = activated = 0
    top_k = config.routing.top_k
    for name, shape in parameter_shapes(config):
        size = int(np.prod(shape))
        total += size
        if parameter_group(name) == ExpertGroup.SPECIALIZED:
            # Every token runs top_k of the n specialized experts
            if int(name.split(".")[3]) < top_k:
                activated += size
        else:
            activated += size
    return ParameterCount(total=total, activated=activated)


class MicroModel(AggregateRoot):

    def __init__(self, config: ModelConfig, parameters: dict[str, np.ndarray], step: int = 0):
        super().__init__()
        self.config = config
        self.parameters = parameters
        self.step = step

    @property
    def parameter_count(self) -> int:
        return sum(value.size for value in self.parameters.values())

    def replace(self, parameters: dict[str, np.ndarray], step: Optional[int] = None) -> "MicroModel":
        """ A new model sharing config; events stay with this instance. """
        return MicroModel(self.config, parameters, self.step if step is None else step)

    def with_parameter(self, name: str, value: np.ndarray) -> "MicroModel":
        return self.replace({**self.parameters, name: value})

    def new_cache(self, max_seq: int) -> KVCache:
        return KVCache(layout=self.config.layout, max_seq=max_seq, dtype=self.config.np_dtype)

    def expert(self, layer: int, kind: str, index: int) -> ExpertParams:
        prefix = f"layers.{layer}.{kind}.{index}"
        return ExpertParams(
            gate=self.parameters[f"{prefix}.gate"],
            up=self.parameters[f"{prefix}.up"],
            down=self.parameters[f"{prefix}.down"],
            group=ExpertGroup.SHARED if kind == "shared" else ExpertGroup.SPECIALIZED,
        )

    def moe_layer(self, layer: int) -> MoELayer:
        routing = self.config.routing
        return MoELayer(
            router=self.parameters[f"layers.{layer}.router"],
            shared=tuple(self.expert(layer, "shared", j) for j in range(routing.num_shared_experts)),
            experts=tuple(self.expert(layer, "experts", e) for e in range(routing.num_specialized_experts)),
        )

    def routing_seed(self, step: int, layer: int) -> int:
        return derive_seed(self.config.seed, step, layer)


def build_model(
    config: ModelConfig,
    parameter_ceiling: Optional[int] = None,
    logger: Logger = getLogger("micro-model"),
) -> Result[MicroModel, ValidationError]:
    """
    Scaled-normal initialization (std 1/sqrt(hidden_size)), norm weights at 1,
    drawn in declaration order from the config seed.
    """
    ceiling = parameter_ceiling or getattr(settings, "WORKBENCH_PARAMETER_CEILING", 10**8)
    count = count_parameters(config)

    if count.total > ceiling:
        return Failure(ValidationError(
            "micro_model.over_ceiling",
            f"model has {count.total} parameters, above the ceiling of {ceiling}",
            details={"total": count.total, "ceiling": ceiling},
        ))

    rng = make_rng(config.seed)
    std = 1 / np.sqrt(config.hidden_size)
    parameters = {}
    for name, shape in parameter_shapes(config):
        if name.endswith("norm"):
            parameters[name] = np.ones(shape, dtype=config.np_dtype)
        else:
            parameters[name] = (rng.standard_normal(shape) * std).astype(config.np_dtype)

    logger.debug("built model: %d parameters (%d activated)", count.total, count.activated)
    return Success(MicroModel(config, parameters))


@dataclass(frozen=True, eq=False)
class ForwardOutput:
    logits: np.ndarray
    plans: tuple[DispatchPlan, ...]
    load_balance_losses: tuple[float, ...]


def forward(model: MicroModel, token_ids: np.ndarray, cache: KVCache) -> Result[ForwardOutput, Error]:
    """
    Logits for the new tokens, appended after the cache's current positions.
    """
    config = model.config
    params = model.parameters
    token_ids = np.atleast_1d(np.asarray(token_ids))

    if cache.layout.n_g != config.kv_groups or cache.layout.l != config.layers or cache.layout.share_period != config.share_period:
        return Failure(ContractViolationError("micro_model.cache_layout", "cache layout does not match the model"))

    if token_ids.ndim != 1 or token_ids.size == 0 or not np.issubdtype(token_ids.dtype, np.integer):
        return Failure(InvalidInputError("micro_model.invalid_token_ids", "token_ids must be a nonempty integer sequence"))

    if token_ids.min() < 0 or token_ids.max() >= config.vocab_size:
        return Failure(InvalidInputError("micro_model.invalid_token_ids", f"token ids must be in [0, {config.vocab_size})"))

    start = cache.length(0)
    if start + token_ids.size > cache.max_seq:
        return Failure(CapacityError(
            "micro_model.sequence_too_long",
            f"{start + token_ids.size} positions exceed the cache size {cache.max_seq}",
        ))

    n_h, n_g, d_h = config.heads, config.kv_groups, config.head_dim
    x = params["embed"][token_ids]
    plans, lb_losses = [], []

    for i in range(config.layers):
        prefix = f"layers.{i}"
        h, _ = rms_norm(x, params[f"{prefix}.attn_norm"])
        queries = (h @ params[f"{prefix}.wq"]).reshape(-1, n_h, d_h)

        if config.layout.is_source(i):
            keys = (h @ params[f"{prefix}.wk"]).reshape(-1, n_g, d_h)
            values = (h @ params[f"{prefix}.wv"]).reshape(-1, n_g, d_h)
            for k, v in zip(keys, values):
                appended = append_kv(cache, i, k, v)
                if not is_successful(appended):
                    return appended

        attended = attention_forward(queries, cache, i, config.rope)
        if not is_successful(attended):
            return attended

        x = x + attended.unwrap().reshape(-1, config.hidden_size) @ params[f"{prefix}.wo"]

        h, _ = rms_norm(x, params[f"{prefix}.ffn_norm"])
        moe = moe_ffn_forward(h, model.moe_layer(i), config.routing, model.routing_seed(start, i))
        if not is_successful(moe):
            return moe

        moe_output, moe_state = moe.unwrap()
        x = x + moe_output
        plans.append(moe_state.plan)
        lb_losses.append(moe_state.load_balance_loss)

    h, _ = rms_norm(x, params["final_norm"])
    return Success(ForwardOutput(logits=h @ params["head"], plans=tuple(plans), load_balance_losses=tuple(lb_losses)))


@dataclass(frozen=True, eq=False)
class _BlockState:
    attn_norm: RMSNormState
    attention: AttentionState
    attended: np.ndarray
    ffn_norm: RMSNormState
    moe: MoEState


@dataclass(frozen=True, eq=False)
class TrainingForward:
    loss: float
    cross_entropy: float
    load_balance_loss: float
    logits: np.ndarray
    plans: tuple[DispatchPlan, ...]
    blocks: tuple[_BlockState, ...]
    final_norm: RMSNormState
    d_logits: np.ndarray
    batch: TrainingBatch

    @property
    def routing_stats(self) -> tuple[LoadStats, ...]:
        return tuple(expert_load_stats(plan) for plan in self.plans)


def forward_train(
    model: MicroModel,
    batch: TrainingBatch,
    step: int = 0,
    plans: Optional[tuple[DispatchPlan, ...]] = None,
) -> Result[TrainingForward, Error]:
    """
    Full-sequence causal forward over a (B, T) batch without a cache.

    Loss is the mean cross-entropy plus aux_loss_coef times the summed
    per-layer load-balance losses; the reported load_balance_loss is the
    per-layer mean. Routing seeds derive from (step, layer) unless `plans`
    fixes the dispatch.
    """
    config = model.config
    params = model.parameters
    n_h, n_g, d_h, hidden = config.heads, config.kv_groups, config.head_dim, config.hidden_size
    batch_size, seq_len = batch.inputs.shape

    if batch.inputs.max() >= config.vocab_size or batch.targets.max() >= config.vocab_size:
        return Failure(InvalidInputError("micro_model.invalid_token_ids", f"token ids must be in [0, {config.vocab_size})"))

    positions = np.arange(seq_len)
    x = params["embed"][batch.inputs]
    blocks, layer_plans, lb_losses = [], [], []
    keys = values = None

    for i in range(config.layers):
        prefix = f"layers.{i}"
        h, attn_norm = rms_norm(x, params[f"{prefix}.attn_norm"])
        queries = (h @ params[f"{prefix}.wq"]).reshape(batch_size, seq_len, n_h, d_h)
        if config.layout.is_source(i):
            keys = (h @ params[f"{prefix}.wk"]).reshape(batch_size, seq_len, n_g, d_h)
            values = (h @ params[f"{prefix}.wv"]).reshape(batch_size, seq_len, n_g, d_h)

        attended, attention = grouped_attention(queries, keys, values, positions, positions, config.rope)
        attended = attended.reshape(batch_size, seq_len, hidden)
        x = x + attended @ params[f"{prefix}.wo"]

        h, ffn_norm = rms_norm(x, params[f"{prefix}.ffn_norm"])
        moe = moe_ffn_forward(
            h.reshape(-1, hidden),
            model.moe_layer(i),
            config.routing,
            model.routing_seed(step, i),
            plan=plans[i] if plans is not None else None,
        )
        if not is_successful(moe):
            return moe

        moe_output, moe_state = moe.unwrap()
        x = x + moe_output.reshape(batch_size, seq_len, hidden)
        blocks.append(_BlockState(attn_norm, attention, attended, ffn_norm, moe_state))
        layer_plans.append(moe_state.plan)
        lb_losses.append(moe_state.load_balance_loss)

    h, final_norm = rms_norm(x, params["final_norm"])
    logits = h @ params["head"]
    ce, d_logits = cross_entropy(logits, batch.targets)

    return Success(TrainingForward(
        loss=ce + config.aux_loss_coef * float(np.sum(lb_losses)),
        cross_entropy=ce,
        load_balance_loss=float(np.mean(lb_losses)),
        logits=logits,
        plans=tuple(layer_plans),
        blocks=tuple(blocks),
        final_norm=final_norm,
        d_logits=d_logits,
        batch=batch,
    ))


def backward(model: MicroModel, state: TrainingForward) -> Result[dict[str, np.ndarray], Error]:
    """ Analytic gradient of the training loss for every parameter. """
    config = model.config
    params = model.parameters
    n_g, d_h, hidden = config.kv_groups, config.head_dim, config.hidden_size
    batch_size, seq_len = state.batch.inputs.shape
    grads = {name: np.zeros_like(value) for name, value in params.items()}

    head_input = state.final_norm.normalized * state.final_norm.weight
    grads["head"] = head_input.reshape(-1, hidden).T @ state.d_logits.reshape(-1, config.vocab_size)
    d_x, grads["final_norm"] = rms_norm_backward(state.d_logits @ params["head"].T, state.final_norm)

    # K/V gradients flowing from non-source layers back to their source layer
    pending_keys = pending_values = None

    for i in reversed(range(config.layers)):
        prefix = f"layers.{i}"
        block = state.blocks[i]

        moe_grads = moe_ffn_backward(block.moe, d_x.reshape(-1, hidden), aux_upstream=config.aux_loss_coef)
        if not is_successful(moe_grads):
            return moe_grads
        moe_grads = moe_grads.unwrap()
        for name, value in moe_grads.parameters.items():
            grads[f"{prefix}.{name}"] = value

        d_h_ffn = moe_grads.inputs.reshape(batch_size, seq_len, hidden)
        d_norm_input, grads[f"{prefix}.ffn_norm"] = rms_norm_backward(d_h_ffn, block.ffn_norm)
        d_x = d_x + d_norm_input

        grads[f"{prefix}.wo"] = block.attended.reshape(-1, hidden).T @ d_x.reshape(-1, hidden)
        d_attended = (d_x @ params[f"{prefix}.wo"].T).reshape(block.attention.rotated_queries.shape)
        d_queries, d_keys, d_values = grouped_attention_backward(d_attended, block.attention)

        if pending_keys is not None:
            d_keys, d_values = d_keys + pending_keys, d_values + pending_values

        h = block.attn_norm.normalized * block.attn_norm.weight
        flat_h = h.reshape(-1, hidden)
        grads[f"{prefix}.wq"] = flat_h.T @ d_queries.reshape(-1, hidden)
        d_h_attn = d_queries.reshape(batch_size, seq_len, hidden) @ params[f"{prefix}.wq"].T

        if config.layout.is_source(i):
            flat_keys = d_keys.reshape(-1, n_g * d_h)
            flat_values = d_values.reshape(-1, n_g * d_h)
            grads[f"{prefix}.wk"] = flat_h.T @ flat_keys
            grads[f"{prefix}.wv"] = flat_h.T @ flat_values
            d_h_attn = d_h_attn + (flat_keys @ params[f"{prefix}.wk"].T + flat_values @ params[f"{prefix}.wv"].T).reshape(batch_size, seq_len, hidden)
            pending_keys = pending_values = None
        else:
            pending_keys, pending_values = d_keys, d_values

        d_norm_input, grads[f"{prefix}.attn_norm"] = rms_norm_backward(d_h_attn, block.attn_norm)
        d_x = d_x + d_norm_input

    np.add.at(grads["embed"], state.batch.inputs, d_x)
    return Success(grads)

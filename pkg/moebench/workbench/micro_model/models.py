import math
from dataclasses import dataclass, field
from typing import Optional
import numpy as np
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.events import DomainEvent
from workbench.shared.exceptions import ValidationError, InvalidInputError
from workbench.routing.models import RoutingConfig, LoadStats
from workbench.attention.models import RopeParams, KVCacheLayout
from workbench.expert_lr.models import ExpertGroup


DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    heads: int
    kv_groups: int
    head_dim: int
    hidden_size: int
    ffn_hidden_size: int
    vocab_size: int
    routing: RoutingConfig
    rope: RopeParams
    share_period: int = 2
    seed: int = 0
    # Weight of the summed per-layer load-balance losses in the training loss
    aux_loss_coef: float = 0.01
    # float32 is for speed only; tolerance checks assume float64
    dtype: str = "float64"

    @classmethod
    def create(
        cls,
        layers: int,
        heads: int,
        kv_groups: int,
        head_dim: int,
        hidden_size: int,
        ffn_hidden_size: int,
        vocab_size: int,
        routing: RoutingConfig,
        rope: Optional[RopeParams] = None,
        share_period: int = 2,
        seed: int = 0,
        aux_loss_coef: float = 0.01,
        dtype: str = "float64",
    ) -> Result["ModelConfig", ValidationError]:

        if min(layers, heads, kv_groups, head_dim, ffn_hidden_size) < 1 or vocab_size < 2:
            return Failure(ValidationError("micro_model.invalid_size", "sizes must be >= 1 and vocab_size >= 2"))

        if hidden_size != heads * head_dim:
            return Failure(ValidationError(
                "micro_model.hidden_size_mismatch",
                "hidden_size must equal heads * head_dim",
                details={"hidden_size": hidden_size, "heads": heads, "head_dim": head_dim},
            ))

        layout = KVCacheLayout.create(heads, kv_groups, head_dim, layers, share_period)
        if not is_successful(layout):
            return layout

        rope = rope or RopeParams(d_h=head_dim)
        if rope.d_h != head_dim:
            return Failure(ValidationError("micro_model.rope_mismatch", "rope head dimension differs from head_dim"))

        rope = RopeParams.create(rope.d_h, rope.base)
        if not is_successful(rope):
            return rope

        if not aux_loss_coef >= 0:
            return Failure(ValidationError("micro_model.invalid_aux_loss_coef", "aux_loss_coef must be >= 0"))

        if dtype not in DTYPES:
            return Failure(ValidationError("micro_model.invalid_dtype", f"dtype must be one of {', '.join(DTYPES)}"))

        return Success(cls(
            layers=int(layers),
            heads=int(heads),
            kv_groups=int(kv_groups),
            head_dim=int(head_dim),
            hidden_size=int(hidden_size),
            ffn_hidden_size=int(ffn_hidden_size),
            vocab_size=int(vocab_size),
            routing=routing,
            rope=rope.unwrap(),
            share_period=int(share_period),
            seed=int(seed),
            aux_loss_coef=float(aux_loss_coef),
            dtype=dtype,
        ))

    @classmethod
    def from_dict(cls, data: dict) -> Result["ModelConfig", ValidationError]:
        data = dict(data)
        routing = RoutingConfig.create(**data.pop("routing", {}))
        if not is_successful(routing):
            return routing
        rope = data.pop("rope", {})
        try:
            return cls.create(
                routing=routing.unwrap(),
                rope=RopeParams(d_h=data["head_dim"], base=rope.get("base", 10000.0)),
                **data,
            )
        except (KeyError, TypeError) as e:
            return Failure(ValidationError("micro_model.invalid_config", f"malformed model config: {e}"))

    @property
    def np_dtype(self) -> type:
        return DTYPES[self.dtype]

    @property
    def layout(self) -> KVCacheLayout:
        return KVCacheLayout(
            n_h=self.heads,
            n_g=self.kv_groups,
            d_h=self.head_dim,
            l=self.layers,
            share_period=self.share_period,
            bytes_per_element=np.dtype(self.np_dtype).itemsize,
        )

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "heads": self.heads,
            "kv_groups": self.kv_groups,
            "head_dim": self.head_dim,
            "hidden_size": self.hidden_size,
            "ffn_hidden_size": self.ffn_hidden_size,
            "vocab_size": self.vocab_size,
            "share_period": self.share_period,
            "seed": self.seed,
            "aux_loss_coef": self.aux_loss_coef,
            "dtype": self.dtype,
            "routing": {
                "num_shared_experts": self.routing.num_shared_experts,
                "num_specialized_experts": self.routing.num_specialized_experts,
                "top_k": self.routing.top_k,
                "capacity_factor": self.routing.capacity_factor,
                "recycle_enabled": self.routing.recycle_enabled,
            },
            "rope": {"base": self.rope.base},
        }


@dataclass(frozen=True, eq=False)
class ExpertParams:
    """ SwiGLU weights: down(silu(x @ gate) * (x @ up)). """

    gate: np.ndarray
    up: np.ndarray
    down: np.ndarray
    group: ExpertGroup = ExpertGroup.SPECIALIZED

    @classmethod
    def create(
        cls,
        gate: np.ndarray,
        up: np.ndarray,
        down: np.ndarray,
        group: ExpertGroup = ExpertGroup.SPECIALIZED,
    ) -> Result["ExpertParams", InvalidInputError]:

        gate, up, down = (np.asarray(w) for w in (gate, up, down))

        if gate.ndim != 2 or up.shape != gate.shape or down.shape != gate.shape[::-1]:
            return Failure(InvalidInputError(
                "micro_model.expert_shape",
                "gate and up must be (hidden, ffn) and down (ffn, hidden)",
                details={"gate": gate.shape, "up": up.shape, "down": down.shape},
            ))

        if not all(np.all(np.isfinite(w)) for w in (gate, up, down)):
            return Failure(InvalidInputError("micro_model.non_finite_weights", "expert weights must be finite"))

        if ExpertGroup(group) == ExpertGroup.NON_EXPERT:
            return Failure(InvalidInputError("micro_model.expert_group", "experts are either shared or specialized"))

        return Success(cls(gate, up, down, ExpertGroup(group)))

    @property
    def hidden_size(self) -> int:
        return self.gate.shape[0]


@dataclass(frozen=True, eq=False)
class MoELayer:
    router: np.ndarray
    shared: tuple[ExpertParams, ...]
    experts: tuple[ExpertParams, ...]


@dataclass(frozen=True)
class ParameterCount:
    total: int
    activated: int

    def to_dict(self) -> dict:
        return {"total": self.total, "activated": self.activated}


@dataclass(eq=False)
class OptimizerState:
    """ AdamW moments per parameter name. """

    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step: int = 0
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, parameters: dict[str, np.ndarray], **hyperparameters) -> "OptimizerState":
        return cls(
            first_moment={name: np.zeros_like(value) for name, value in parameters.items()},
            second_moment={name: np.zeros_like(value) for name, value in parameters.items()},
            **hyperparameters,
        )

    def hyperparameters(self) -> dict:
        return {"weight_decay": self.weight_decay, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass(frozen=True, eq=False)
class TrainingBatch:
    """ Next-token pairs: targets[b, t] follows inputs[b, t]. """

    inputs: np.ndarray
    targets: np.ndarray

    @classmethod
    def create(cls, inputs: np.ndarray, targets: np.ndarray, vocab_size: int) -> Result["TrainingBatch", InvalidInputError]:
        inputs, targets = np.atleast_2d(inputs), np.atleast_2d(targets)

        if inputs.size == 0 or inputs.shape != targets.shape:
            return Failure(InvalidInputError("micro_model.empty_batch", "batch must be nonempty with matching inputs and targets"))

        if not np.issubdtype(inputs.dtype, np.integer) or not np.issubdtype(targets.dtype, np.integer):
            return Failure(InvalidInputError("micro_model.invalid_token_ids", "token ids must be integers"))

        if min(inputs.min(), targets.min()) < 0 or max(inputs.max(), targets.max()) >= vocab_size:
            return Failure(InvalidInputError("micro_model.invalid_token_ids", f"token ids must be in [0, {vocab_size})"))

        return Success(cls(inputs.astype(np.int64), targets.astype(np.int64)))

    @classmethod
    def from_sequences(cls, sequences: np.ndarray, vocab_size: int) -> Result["TrainingBatch", InvalidInputError]:
        sequences = np.atleast_2d(sequences)
        return cls.create(sequences[:, :-1], sequences[:, 1:], vocab_size)

    @property
    def num_tokens(self) -> int:
        return int(self.inputs.size)


@dataclass(frozen=True)
class StepReport:
    step: int
    tokens_seen: float
    loss: float
    cross_entropy: float
    load_balance_loss: float
    group_lrs: dict[ExpertGroup, float]
    routing: tuple[LoadStats, ...]
    optimizer: dict = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return sum(stats.dropped for stats in self.routing)

    @property
    def recycled(self) -> int:
        return sum(stats.recycled for stats in self.routing)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "tokens_seen": self.tokens_seen,
            "loss": self.loss,
            "cross_entropy": self.cross_entropy,
            "load_balance_loss": self.load_balance_loss,
            "group_lrs": {str(group): lr for group, lr in self.group_lrs.items()},
            "routing": [stats.to_dict()["totals"] for stats in self.routing],
            "optimizer": self.optimizer,
        }


@dataclass(frozen=True)
class TrainingStepCompleted(DomainEvent):
    report: Optional[StepReport] = None


@dataclass(frozen=True)
class CheckpointStored(DomainEvent):
    checkpoint_id: str = ""
    step: int = 0
    size_bytes: int = 0


def count_by_formula(config: ModelConfig) -> ParameterCount:
    """ Closed-form parameter count, independent of the declaration list. """
    h, f, v, l = config.hidden_size, config.ffn_hidden_size, config.vocab_size, config.layers
    n, shared, k = config.routing.num_specialized_experts, config.routing.num_shared_experts, config.routing.top_k
    kv_width = config.kv_groups * config.head_dim
    source_layers = math.ceil(l / config.share_period)
    per_expert = 3 * h * f

    total = (
        2 * v * h                       # embed + head
        + h                             # final norm
        + l * (2 * h + 2 * h * h + h * n + (shared + n) * per_expert)
        + source_layers * 2 * h * kv_width
    )
    return ParameterCount(total=total, activated=total - l * (n - k) * per_expert)


@dataclass(frozen=True)
class TrainingSettings:
    """ The memorize-N-sequences task and its step budget. """

    steps: int = 200
    num_sequences: int = 8
    sequence_length: int = 9
    warmup_fraction: float = 0.05
    # None takes the batch-size-optimal rate of the expert LR parameters
    peak_lr: Optional[float] = 1e-2
    data_seed: int = 0

    @classmethod
    def create(
        cls,
        steps: int = 200,
        num_sequences: int = 8,
        sequence_length: int = 9,
        warmup_fraction: float = 0.05,
        peak_lr: Optional[float] = 1e-2,
        data_seed: int = 0,
    ) -> Result["TrainingSettings", ValidationError]:

        if steps < 1 or num_sequences < 1:
            return Failure(ValidationError("micro_model.invalid_training", "steps and num_sequences must be >= 1"))

        if sequence_length < 2:
            return Failure(ValidationError("micro_model.invalid_training", "sequence_length must be >= 2"))

        if peak_lr is not None and not peak_lr > 0:
            return Failure(ValidationError("micro_model.invalid_training", "peak_lr must be positive"))

        return Success(cls(int(steps), int(num_sequences), int(sequence_length), float(warmup_fraction), peak_lr, int(data_seed)))

    @property
    def tokens_per_step(self) -> int:
        return self.num_sequences * (self.sequence_length - 1)

    @property
    def total_tokens(self) -> int:
        return self.steps * self.tokens_per_step

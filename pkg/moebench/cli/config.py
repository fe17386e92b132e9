"""
Run config loading: JSON document -> DRF schema -> domain constructors.
"""

import json
from logging import Logger, getLogger
from dataclasses import dataclass
from pathlib import Path
from typing import Optional
from django.conf import settings
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error, ValidationError, ResourceError
from workbench.routing.models import RoutingConfig
from workbench.attention.models import RopeParams, KVCacheLayout
from workbench.expert_lr.models import ExpertLRParams
from workbench.expert_lr.schedule import build_schedule
from workbench.micro_model.models import ModelConfig, TrainingSettings
from .serializers import RunConfigSerializer, flatten_errors


PRESET_SUFFIX = ".preset"


@dataclass(frozen=True)
class ScheduleSettings:
    warmup_fraction: float = 0.01
    anneal_fraction: float = 0.05
    anneal_factor: float = 0.1


@dataclass(frozen=True)
class ScalingInputs:
    b_over_bcrit: Optional[float] = None
    target_n: Optional[float] = None


@dataclass(frozen=True)
class OutputSettings:
    directory: Path = Path(".")
    checkpoint: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: Optional[ModelConfig]
    routing: RoutingConfig
    rope_base: float
    lr: ExpertLRParams
    schedule: ScheduleSettings
    scaling: ScalingInputs
    training: TrainingSettings
    output: OutputSettings
    source: str = "<defaults>"

    def kv_layout(self, bytes_per_element: int = 2) -> Result[KVCacheLayout, ValidationError]:
        if self.model is None:
            return Failure(ValidationError("config.missing_section", f"{self.source} has no 'model' section"))
        return KVCacheLayout.create(
            n_h=self.model.heads,
            n_g=self.model.kv_groups,
            d_h=self.model.head_dim,
            l=self.model.layers,
            share_period=self.model.share_period,
            bytes_per_element=bytes_per_element,
        )

    def require_model(self) -> Result[ModelConfig, ValidationError]:
        if self.model is None:
            return Failure(ValidationError("config.missing_section", f"{self.source} has no 'model' section"))
        return Success(self.model)


def resolve_config_path(name_or_path: str) -> Path:
    """ A bundled preset name (e.g. 'toy') or a path to a config file. """
    path = Path(name_or_path)
    if path.exists():
        return path
    preset = Path(settings.WORKBENCH_PRESETS_DIR) / f"{name_or_path}{PRESET_SUFFIX}"
    return preset if preset.exists() else path


def load_config(path: str | Path, logger: Logger = getLogger("cli")) -> Result[RunConfig, Error]:
    path = resolve_config_path(str(path))
    try:
        document = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        return Failure(ResourceError("config.not_found", f"no config file or preset named '{path}'"))
    except OSError as e:
        return Failure(ResourceError("config.unreadable", f"cannot read {path}: {e.strerror}"))

    logger.debug("loading run config from %s", path)
    return parse_config(document, source=str(path))


def parse_config(document: str, source: str = "<string>") -> Result[RunConfig, ValidationError]:
    try:
        data = json.loads(document)
    except json.JSONDecodeError as e:
        return Failure(ValidationError(
            "config.parse_error",
            f"{source}: line {e.lineno} column {e.colno}: {e.msg}",
            details={"line": e.lineno, "column": e.colno},
        ))

    if not isinstance(data, dict):
        return Failure(ValidationError("config.parse_error", f"{source}: top level must be a JSON object"))

    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        errors = flatten_errors(serializer.errors)
        key, message = errors[0]
        return Failure(ValidationError(
            "config.invalid",
            f"{key}: {message}" if key else message,
            details={key: message for key, message in errors},
        ))

    return build_run_config(serializer.validated_data, source)


def build_run_config(data: dict, source: str) -> Result[RunConfig, ValidationError]:
    """ Cross-field invariants, checked by the domain constructors. """
    seed = data["seed"]

    routing = RoutingConfig.create(**data["routing"])
    if not is_successful(routing):
        return routing
    routing = routing.unwrap()

    rope_base = data["rope"]["base"]
    model = None
    if "model" in data:
        section = data["model"]
        model = ModelConfig.create(
            routing=routing,
            rope=RopeParams(d_h=section["head_dim"], base=rope_base),
            seed=seed,
            **section,
        )
        if not is_successful(model):
            return model
        model = model.unwrap()

    lr = data["lr"]
    params = ExpertLRParams.create(lr["eps_max"], lr["batch_size"], lr["noise_batch_size"], lr["num_experts"])
    if not is_successful(params):
        return params

    schedule = ScheduleSettings(lr["warmup_fraction"], lr["anneal_fraction"], lr["anneal_factor"])
    checked = build_schedule(1.0, 1.0, schedule.warmup_fraction, schedule.anneal_fraction, schedule.anneal_factor)
    if not is_successful(checked):
        return checked

    train = data["train"]
    training = TrainingSettings.create(
        steps=train["steps"],
        num_sequences=train["num_sequences"],
        sequence_length=train["sequence_length"],
        warmup_fraction=schedule.warmup_fraction,
        peak_lr=train["peak_lr"],
        data_seed=train["data_seed"],
    )
    if not is_successful(training):
        return training

    return Success(RunConfig(
        seed=seed,
        model=model,
        routing=routing,
        rope_base=rope_base,
        lr=params.unwrap(),
        schedule=schedule,
        scaling=ScalingInputs(**data["scaling"]),
        training=training.unwrap(),
        output=OutputSettings(Path(data["output"]["directory"]), data["output"]["checkpoint"]),
        source=source,
    ))

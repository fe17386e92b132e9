"""
Single-file checkpoint format.

    byte 0          format version
    bytes 1..4      header length, little-endian uint32
    header          UTF-8 JSON: config, step, seed, parameter names and shapes
    body            little-endian float64 parameter blocks in declaration order
"""

import json
import numpy as np
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import ResourceError
from .models import ModelConfig
from .model import MicroModel, parameter_shapes


CHECKPOINT_VERSION = 1
HEADER_LENGTH = np.dtype("<u4")
PARAMETER_DTYPE = np.dtype("<f8")


def encode_checkpoint(model: MicroModel) -> bytes:
    header = json.dumps({
        "config": model.config.to_dict(),
        "step": model.step,
        "seed": model.config.seed,
        "parameters": [{"name": name, "shape": list(value.shape)} for name, value in model.parameters.items()],
    }, sort_keys=True).encode("utf-8")

    blocks = [np.ascontiguousarray(value, dtype=PARAMETER_DTYPE).tobytes() for value in model.parameters.values()]
    return b"".join([bytes([CHECKPOINT_VERSION]), np.array([len(header)], dtype=HEADER_LENGTH).tobytes(), header, *blocks])


def decode_checkpoint(data: bytes) -> Result[MicroModel, ResourceError]:

    if len(data) < 1 + HEADER_LENGTH.itemsize:
        return Failure(ResourceError("micro_model.truncated_checkpoint", "checkpoint is shorter than its preamble"))

    if data[0] != CHECKPOINT_VERSION:
        return Failure(ResourceError(
            "micro_model.checkpoint_version",
            f"unsupported checkpoint version {data[0]} (expected {CHECKPOINT_VERSION})",
        ))

    header_length = int(np.frombuffer(data, dtype=HEADER_LENGTH, count=1, offset=1)[0])
    body_offset = 1 + HEADER_LENGTH.itemsize + header_length
    try:
        header = json.loads(data[1 + HEADER_LENGTH.itemsize:body_offset].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        declared = [(entry["name"], tuple(entry["shape"])) for entry in header["parameters"]]
        step = int(header["step"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        return Failure(ResourceError("micro_model.corrupt_checkpoint", f"unreadable checkpoint header: {e}"))

    if not is_successful(config):
        error = config.failure()
        return Failure(ResourceError("micro_model.corrupt_checkpoint", f"checkpoint config is invalid: {error}"))

    config = config.unwrap()
    if declared != parameter_shapes(config):
        return Failure(ResourceError("micro_model.corrupt_checkpoint", "parameter list does not match the checkpoint config"))

    expected_size = body_offset + sum(int(np.prod(shape)) for _, shape in declared) * PARAMETER_DTYPE.itemsize
    if len(data) != expected_size:
        return Failure(ResourceError(
            "micro_model.truncated_checkpoint",
            f"checkpoint has {len(data)} bytes, expected {expected_size}",
        ))

    parameters, offset = {}, body_offset
    for name, shape in declared:
        count = int(np.prod(shape))
        block = np.frombuffer(data, dtype=PARAMETER_DTYPE, count=count, offset=offset)
        parameters[name] = block.reshape(shape).astype(config.np_dtype)
        offset += count * PARAMETER_DTYPE.itemsize

    return Success(MicroModel(config, parameters, step=step))

"""
Rotary position embedding with a configurable base frequency.

Dimensions are rotated in adjacent pairs (2i, 2i+1) by position * theta_i,
theta_i = base ** (-2i / d_h).
"""

from dataclasses import dataclass
import numpy as np
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import InvalidInputError
from .models import RopeParams


@dataclass(frozen=True)
class LongContextStage:
    context_length: int
    rope_base: float
    approx_tokens: float
    long_data_fraction: float


# Two-stage long-context curriculum after annealing. Documented constants only,
# nothing in the workbench trains through these stages.
LONG_CONTEXT_STAGES = (
    LongContextStage(context_length=32 * 1024, rope_base=10000.0, approx_tokens=10e9, long_data_fraction=0.25),
    LongContextStage(context_length=256 * 1024, rope_base=1e9, approx_tokens=10e9, long_data_fraction=0.25),
)


def rope_frequencies(params: RopeParams) -> np.ndarray:
    return params.base ** (-np.arange(0, params.d_h, 2, dtype=np.float64) / params.d_h)


def rope_wavelengths(params: RopeParams) -> np.ndarray:
    """ Positions needed for each pair to complete a full turn. """
    return 2 * np.pi / rope_frequencies(params)


def rope_params_for_context(context_length: int, d_h: int) -> RopeParams:
    """ Base of the first curriculum stage whose window covers the context. """
    for stage in LONG_CONTEXT_STAGES:
        if context_length <= stage.context_length:
            return RopeParams(d_h=d_h, base=stage.rope_base)
    return RopeParams(d_h=d_h, base=LONG_CONTEXT_STAGES[-1].rope_base)


def rotate(x: np.ndarray, positions: np.ndarray, params: RopeParams, inverse: bool = False) -> np.ndarray:
    """
    Rotates x of shape (..., T, heads, d_h) at the given T positions.

    inverse=True applies the transpose rotation, which is also the backward
    pass of the forward rotation.
    """
    angles = np.asarray(positions, dtype=np.float64)[:, None] * rope_frequencies(params)[None, :]
    cos = np.cos(angles)[:, None, :]
    sin = np.sin(angles)[:, None, :]
    if inverse:
        sin = -sin
    even, odd = x[..., 0::2], x[..., 1::2]
    rotated = np.empty_like(x)
    rotated[..., 0::2] = even * cos - odd * sin
    rotated[..., 1::2] = even * sin + odd * cos
    return rotated


def apply_rope(vec: np.ndarray, position: int, params: RopeParams) -> Result[np.ndarray, InvalidInputError]:

    vec = np.asarray(vec, dtype=np.float64)

    if params.d_h % 2 != 0:
        return Failure(InvalidInputError("attention.odd_head_dim", "RoPE needs an even head dimension"))

    if vec.shape != (params.d_h,):
        return Failure(InvalidInputError("attention.rope_shape", f"expected a vector of length {params.d_h}"))

    if position < 0:
        return Failure(InvalidInputError("attention.negative_position", "positions must be >= 0"))

    return Success(rotate(vec[None, None, :], np.array([position]), params)[0, 0])

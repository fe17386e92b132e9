"""
Differentiable building blocks of the micro model, forward and backward.
"""

from dataclasses import dataclass
import numpy as np
from scipy.special import expit, logsumexp, softmax
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import InvalidInputError
from .models import ExpertParams


RMS_NORM_EPS = 1e-6


def silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    sigmoid = expit(x)
    return sigmoid * (1 + x * (1 - sigmoid))


@dataclass(frozen=True, eq=False)
class RMSNormState:
    inputs: np.ndarray
    normalized: np.ndarray
    rms: np.ndarray
    weight: np.ndarray


def rms_norm(x: np.ndarray, weight: np.ndarray) -> tuple[np.ndarray, RMSNormState]:
    rms = np.sqrt(np.mean(x**2, axis=-1, keepdims=True) + RMS_NORM_EPS)
    normalized = x / rms
    return normalized * weight, RMSNormState(x, normalized, rms, weight)


def rms_norm_backward(upstream: np.ndarray, state: RMSNormState) -> tuple[np.ndarray, np.ndarray]:
    """ Returns (d_inputs, d_weight). """
    d_weight = np.sum(upstream * state.normalized, axis=tuple(range(upstream.ndim - 1)))
    d_normalized = upstream * state.weight
    d_inputs = (d_normalized - state.normalized * np.mean(d_normalized * state.normalized, axis=-1, keepdims=True)) / state.rms
    return d_inputs, d_weight


@dataclass(frozen=True, eq=False)
class SwiGLUState:
    inputs: np.ndarray
    gate_pre: np.ndarray
    up_pre: np.ndarray
    hidden: np.ndarray


def swiglu(x: np.ndarray, expert: ExpertParams) -> tuple[np.ndarray, SwiGLUState]:
    """ Unchecked forward over rows of x. """
    gate_pre = x @ expert.gate
    up_pre = x @ expert.up
    hidden = silu(gate_pre) * up_pre
    return hidden @ expert.down, SwiGLUState(x, gate_pre, up_pre, hidden)


def swiglu_forward(x: np.ndarray, expert: ExpertParams) -> Result[np.ndarray, InvalidInputError]:
    """ down(silu(gate . x) * (up . x)) for a hidden vector or rows of hidden vectors. """
    x = np.asarray(x)

    if x.ndim not in (1, 2) or x.shape[-1] != expert.hidden_size:
        return Failure(InvalidInputError(
            "micro_model.swiglu_shape",
            f"expected hidden vectors of size {expert.hidden_size}, got shape {x.shape}",
        ))

    output, _ = swiglu(np.atleast_2d(x), expert)
    return Success(output[0] if x.ndim == 1 else output)


@dataclass(frozen=True, eq=False)
class SwiGLUGradients:
    gate: np.ndarray
    up: np.ndarray
    down: np.ndarray
    inputs: np.ndarray


def swiglu_backward(upstream: np.ndarray, expert: ExpertParams, state: SwiGLUState) -> SwiGLUGradients:
    d_hidden = upstream @ expert.down.T
    d_gate_pre = d_hidden * state.up_pre * silu_grad(state.gate_pre)
    d_up_pre = d_hidden * silu(state.gate_pre)
    return SwiGLUGradients(
        gate=state.inputs.T @ d_gate_pre,
        up=state.inputs.T @ d_up_pre,
        down=state.hidden.T @ upstream,
        inputs=d_gate_pre @ expert.gate.T + d_up_pre @ expert.up.T,
    )


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """ Mean next-token cross-entropy and its gradient w.r.t. the logits. """
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_targets = targets.reshape(-1)
    count = flat_targets.size
    rows = np.arange(count)

    loss = float(np.mean(logsumexp(flat_logits, axis=-1) - flat_logits[rows, flat_targets]))
    d_logits = softmax(flat_logits, axis=-1)
    d_logits[rows, flat_targets] -= 1
    return loss, (d_logits / count).reshape(logits.shape)

"""
Grouped-query attention over a cross-layer shared KV cache.
"""

from dataclasses import dataclass
import numpy as np
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import ContractViolationError, CapacityError, InvalidStateError, InvalidInputError
from workbench.shared.numerics import stable_softmax
from .models import KVCache, RopeParams
from .rope import rotate


@dataclass(frozen=True, eq=False)
class AttentionState:
    """ Forward values kept for the backward pass. """

    rotated_queries: np.ndarray
    rotated_keys: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    query_positions: np.ndarray
    key_positions: np.ndarray
    params: RopeParams


def grouped_attention(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    query_positions: np.ndarray,
    key_positions: np.ndarray,
    params: RopeParams,
) -> tuple[np.ndarray, AttentionState]:
    """
    Causal softmax(QK^T / sqrt(d_h)) V where query head h reads KV group h // (n_h / n_g).

    queries: (..., Tq, n_h, d_h); keys, values: (..., Tk, n_g, d_h).
    Returns the output (..., Tq, n_h, d_h) and the state with weights of
    shape (..., n_g, n_h / n_g, Tq, Tk).
    """
    *batch, t_q, n_h, d_h = queries.shape
    n_g = keys.shape[-2]
    rotated_q = rotate(queries, query_positions, params)
    rotated_k = rotate(keys, key_positions, params)

    grouped_q = rotated_q.reshape(*batch, t_q, n_g, n_h // n_g, d_h)
    scores = np.einsum("...qgrd,...kgd->...grqk", grouped_q, rotated_k) / np.sqrt(d_h)
    future = np.asarray(key_positions)[None, :] > np.asarray(query_positions)[:, None]
    scores = np.where(future, -np.inf, scores)
    weights = stable_softmax(scores, axis=-1)

    output = np.einsum("...grqk,...kgd->...qgrd", weights, values).reshape(*batch, t_q, n_h, d_h)
    state = AttentionState(rotated_q, rotated_k, values, weights, np.asarray(query_positions), np.asarray(key_positions), params)
    return output, state


def grouped_attention_backward(upstream: np.ndarray, state: AttentionState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ Gradients w.r.t. the unrotated queries, keys and values. """
    *batch, t_q, n_h, d_h = upstream.shape
    n_g = state.values.shape[-2]
    grouped_upstream = upstream.reshape(*batch, t_q, n_g, n_h // n_g, d_h)
    grouped_q = state.rotated_queries.reshape(*batch, t_q, n_g, n_h // n_g, d_h)

    d_weights = np.einsum("...qgrd,...kgd->...grqk", grouped_upstream, state.values)
    d_values = np.einsum("...grqk,...qgrd->...kgd", state.weights, grouped_upstream)
    d_scores = state.weights * (d_weights - np.sum(state.weights * d_weights, axis=-1, keepdims=True))
    d_scores = d_scores / np.sqrt(d_h)

    d_rotated_q = np.einsum("...grqk,...kgd->...qgrd", d_scores, state.rotated_keys).reshape(*batch, t_q, n_h, d_h)
    d_rotated_k = np.einsum("...grqk,...qgrd->...kgd", d_scores, grouped_q)

    d_queries = rotate(d_rotated_q, state.query_positions, state.params, inverse=True)
    d_keys = rotate(d_rotated_k, state.key_positions, state.params, inverse=True)
    return d_queries, d_keys, d_values


def append_kv(cache: KVCache, layer: int, k: np.ndarray, v: np.ndarray) -> Result[KVCache, ContractViolationError | CapacityError | InvalidInputError]:
    """ Appends one position to a source layer's buffers. """
    layout = cache.layout

    if not 0 <= layer < layout.l or not layout.is_source(layer):
        return Failure(ContractViolationError(
            "attention.non_source_layer",
            f"layer {layer} does not own a KV buffer (share_period={layout.share_period})",
        ))

    if np.shape(k) != (layout.n_g, layout.d_h) or np.shape(v) != (layout.n_g, layout.d_h):
        return Failure(InvalidInputError("attention.kv_shape", f"k and v must have shape {(layout.n_g, layout.d_h)}"))

    position = cache.lengths[layer]
    if position >= cache.max_seq:
        return Failure(CapacityError("attention.cache_full", f"cache holds at most {cache.max_seq} positions"))

    cache.keys[layer][:, position, :] = k
    cache.values[layer][:, position, :] = v
    cache.lengths[layer] = position + 1
    return Success(cache)


def attention_forward(
    queries: np.ndarray,
    cache: KVCache,
    layer: int,
    params: RopeParams,
    return_weights: bool = False,
) -> Result[np.ndarray | tuple[np.ndarray, np.ndarray], InvalidStateError | InvalidInputError]:
    """
    Attends the newest positions of the layer's source cache.

    queries: (n_h, d_h) for the last cached position, or (T, n_h, d_h) for
    the last T positions.
    """
    layout = cache.layout
    single = np.ndim(queries) == 2
    queries = np.asarray(queries)[None] if single else np.asarray(queries)

    if queries.shape[1:] != (layout.n_h, layout.d_h):
        return Failure(InvalidInputError("attention.query_shape", f"queries must end with shape {(layout.n_h, layout.d_h)}"))

    if params.d_h != layout.d_h:
        return Failure(InvalidInputError("attention.rope_dim_mismatch", f"rope d_h {params.d_h} does not match cache d_h {layout.d_h}"))

    length = cache.length(layer)
    if length == 0:
        return Failure(InvalidStateError("attention.empty_cache", f"no cached positions for layer {layer}"))

    if queries.shape[0] > length:
        return Failure(InvalidStateError("attention.query_ahead_of_cache", "more queries than cached positions"))

    keys, values = cache.cached(layer)
    key_positions = np.arange(length)
    query_positions = key_positions[length - queries.shape[0]:]
    output, state = grouped_attention(queries, keys, values, query_positions, key_positions, params)

    output = output[0] if single else output
    if return_weights:
        return Success((output, state.weights))
    return Success(output)

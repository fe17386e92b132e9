"""
MoE feed-forward: shared experts on every token plus routed specialized experts.

The dispatch plan is not differentiable. Gradient reaches the router only
through the gate weights of admitted assignments and through the mean gate
probabilities of the load-balance loss.
"""

from dataclasses import dataclass, replace
from typing import Optional
import numpy as np
from returns.result import Result, Success, Failure
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error, InvalidInputError, InvalidStateError
from workbench.routing.models import RoutingConfig, GateDistribution, DispatchPlan
from workbench.routing.dispatch import gate_scores, plan_dispatch, combine_outputs, primary_fractions, load_balance_loss
from .models import MoELayer
from .layers import SwiGLUState, swiglu, swiglu_backward


@dataclass(frozen=True, eq=False)
class MoEState:
    """ Forward values of one MoE layer call, consumed by moe_ffn_backward. """

    inputs: np.ndarray
    layer: MoELayer
    gates: GateDistribution
    plan: DispatchPlan
    shared_states: tuple[SwiGLUState, ...]
    # expert -> (assignment indices, SwiGLU state over those rows)
    expert_states: dict[int, tuple[np.ndarray, SwiGLUState]]
    expert_outputs: np.ndarray
    load_balance_loss: float


@dataclass(frozen=True, eq=False)
class MoEGradients:
    """ Gradients keyed by layer-local parameter names, e.g. 'experts.3.up'. """

    parameters: dict[str, np.ndarray]
    inputs: np.ndarray


def moe_ffn_forward(
    x: np.ndarray,
    layer: MoELayer,
    config: RoutingConfig,
    seed: int,
    plan: Optional[DispatchPlan] = None,
) -> Result[tuple[np.ndarray, MoEState], Error]:
    """
    x: (num_tokens, hidden). A given `plan` replaces fresh dispatch, which
    keeps the layer a smooth function of its parameters.
    """
    if x.ndim != 2 or x.shape[1] != layer.router.shape[0]:
        return Failure(InvalidInputError("micro_model.moe_input_shape", f"expected (tokens, {layer.router.shape[0]}) inputs"))

    gates = gate_scores(x @ layer.router, config)
    if not is_successful(gates):
        return gates

    gates = gates.unwrap()
    if plan is None:
        plan = plan_dispatch(gates, x.shape[0], config, seed)
        if not is_successful(plan):
            return plan
        plan = plan.unwrap()
    elif plan.num_tokens != x.shape[0] or plan.num_experts != config.num_specialized_experts:
        return Failure(InvalidInputError("micro_model.plan_mismatch", "dispatch plan does not fit the layer inputs"))
    else:
        # A fixed plan keeps its assignments; gate weights follow the current router
        plan = replace(plan, gate_weights=gates.probs[plan.tokens, plan.experts] if plan.num_assignments else np.zeros(0))

    shared_output = np.zeros_like(x)
    shared_states = []
    for expert in layer.shared:
        output, state = swiglu(x, expert)
        shared_output += output
        shared_states.append(state)

    expert_outputs = np.zeros((plan.num_assignments, x.shape[1]), dtype=x.dtype)
    expert_states = {}
    for expert in np.unique(plan.experts):
        rows = np.flatnonzero(plan.experts == expert)
        output, state = swiglu(x[plan.tokens[rows]], layer.experts[expert])
        expert_outputs[rows] = output
        expert_states[int(expert)] = (rows, state)

    combined = combine_outputs(shared_output, expert_outputs, plan)
    if not is_successful(combined):
        return combined

    state = MoEState(
        inputs=x,
        layer=layer,
        gates=gates,
        plan=plan,
        shared_states=tuple(shared_states),
        expert_states=expert_states,
        expert_outputs=expert_outputs,
        load_balance_loss=load_balance_loss(gates, plan),
    )
    return Success((combined.unwrap(), state))


def moe_ffn_backward(
    state: Optional[MoEState],
    upstream: np.ndarray,
    aux_upstream: float = 0.0,
) -> Result[MoEGradients, InvalidStateError | InvalidInputError]:
    """
    upstream: d loss / d output, (num_tokens, hidden); aux_upstream: d loss /
    d load_balance_loss of this layer.
    """
    if state is None:
        return Failure(InvalidStateError("micro_model.missing_forward_state", "run moe_ffn_forward before the backward pass"))

    if upstream.shape != state.inputs.shape:
        return Failure(InvalidInputError("micro_model.upstream_shape", f"upstream must have shape {state.inputs.shape}"))

    plan, layer, probs = state.plan, state.layer, state.gates.probs
    grads: dict[str, np.ndarray] = {}
    d_inputs = np.zeros_like(state.inputs)

    for j, (expert, expert_state) in enumerate(zip(layer.shared, state.shared_states)):
        expert_grads = swiglu_backward(upstream, expert, expert_state)
        grads |= {f"shared.{j}.gate": expert_grads.gate, f"shared.{j}.up": expert_grads.up, f"shared.{j}.down": expert_grads.down}
        d_inputs += expert_grads.inputs

    for e, expert in enumerate(layer.experts):
        if e not in state.expert_states:
            grads |= {f"experts.{e}.gate": np.zeros_like(expert.gate), f"experts.{e}.up": np.zeros_like(expert.up), f"experts.{e}.down": np.zeros_like(expert.down)}
            continue
        rows, expert_state = state.expert_states[e]
        tokens = plan.tokens[rows]
        expert_grads = swiglu_backward(plan.gate_weights[rows, None] * upstream[tokens], expert, expert_state)
        grads |= {f"experts.{e}.gate": expert_grads.gate, f"experts.{e}.up": expert_grads.up, f"experts.{e}.down": expert_grads.down}
        np.add.at(d_inputs, tokens, expert_grads.inputs)

    # Gate weight of each admitted assignment is probs[token, expert]
    d_probs = np.zeros_like(probs)
    d_gate_weights = np.sum(upstream[plan.tokens] * state.expert_outputs, axis=-1)
    np.add.at(d_probs, (plan.tokens, plan.experts), d_gate_weights)

    if aux_upstream:
        fractions = primary_fractions(plan)
        d_probs += aux_upstream * plan.num_experts * fractions[None, :] / plan.num_tokens

    d_logits = probs * (d_probs - np.sum(d_probs * probs, axis=-1, keepdims=True))
    grads["router"] = state.inputs.T @ d_logits
    d_inputs += d_logits @ layer.router.T

    return Success(MoEGradients(parameters=grads, inputs=d_inputs))

"""Plain MLPs, a hand-rolled Adam optimizer, and learning-rate schedules.

Parameters live in flat name->ndarray dicts ("w0", "b0", "w1", ...). The
graph-building forward (`mlp_forward`) and the numpy-only forward
(`mlp_apply`) share the same primitive implementations, so a frozen
network applied outside the tape reproduces the in-graph values bit for
bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng

HIDDEN_ACTIVATIONS = ("leaky_relu", "relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid", "softmax_per_pixel")
INIT_SCHEMES = ("uniform_he", "normal_scaled")

LEAKY_SLOPE = 0.2
OUTPUT_INIT_STD = 0.02


@dataclass
class MlpSpec:
    """Architecture description: widths[0] is the full input width
    (conditioning features plus any concatenated noise)."""

    widths: list
    hidden: str = "leaky_relu"
    out: str = "identity"
    init: str = "uniform_he"
    classes: int = 0  # K for softmax_per_pixel; 0 otherwise

    def validate(self):
        if len(self.widths) < 2:
            raise ValueError("MlpSpec needs at least input and output widths")
        if any(int(w) <= 0 for w in self.widths):
            raise ValueError(f"MlpSpec widths must be positive, got {self.widths}")
        if self.hidden not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden!r}")
        if self.out not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.out!r}")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {self.init!r}")
        if self.out == "softmax_per_pixel":
            if self.classes < 2:
                raise ValueError("softmax_per_pixel needs classes >= 2")
            if self.widths[-1] % self.classes:
                raise ValueError(
                    f"output width {self.widths[-1]} not divisible by K={self.classes}")
        return self


def mlp_new(spec: MlpSpec, seed):
    """Fresh seed-deterministic parameters for `spec`."""
    spec.validate()
    g = rng.stream(seed, rng.STREAM_INIT)
    params = {}
    last = len(spec.widths) - 2
    for i in range(len(spec.widths) - 1):
        fan_in, fan_out = int(spec.widths[i]), int(spec.widths[i + 1])
        if i == last:
            w = g.normal(0.0, OUTPUT_INIT_STD, size=(fan_in, fan_out))
        elif spec.init == "uniform_he":
            bound = np.sqrt(6.0 / fan_in)
            w = g.uniform(-bound, bound, size=(fan_in, fan_out))
        else:  # normal_scaled
            w = g.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f"w{i}"] = w
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def _layer_count(params, spec=None):
    n = sum(1 for k in params if k.startswith("w"))
    if spec is not None and n != len(spec.widths) - 1:
        raise ad.ShapeError(
            f"parameter set has {n} layers, spec wants {len(spec.widths) - 1}")
    return n


def _hidden_value(x, kind):
    if kind == "leaky_relu":
        return ad.leaky_relu_value(x, LEAKY_SLOPE)
    if kind == "relu":
        return ad.leaky_relu_value(x, 0.0)
    return np.tanh(x)


def _hidden_node(x, kind):
    if kind == "leaky_relu":
        return ad.leaky_relu(x, LEAKY_SLOPE)
    if kind == "relu":
        return ad.leaky_relu(x, 0.0)
    return ad.tanh(x)


def _check_input_width(spec, width):
    if width != int(spec.widths[0]):
        raise ad.ShapeError(
            f"mlp input width {width} != spec width {spec.widths[0]} "
            f"(after noise concatenation)")


def mlp_forward(params, spec: MlpSpec, x, noise=None):
    """Graph-building forward pass; returns a (batch, widths[-1]) node.

    `params` values may be Nodes (trainable leaves) or plain arrays
    (treated as constants). `noise`, when given, is concatenated to the
    input along the feature axis.
    """
    h = ad.as_node(x)
    if noise is not None:
        h = ad.concat([h, ad.as_node(noise)], axis=1)
    _check_input_width(spec, h.value.shape[1])
    n_layers = _layer_count(params, spec)
    for i in range(n_layers):
        w = params[f"w{i}"]
        b = params[f"b{i}"]
        h = ad.affine(h, ad.as_node(w), ad.as_node(b))
        if i < n_layers - 1:
            h = _hidden_node(h, spec.hidden)
    if spec.out == "sigmoid":
        h = ad.sigmoid(h)
    elif spec.out == "softmax_per_pixel":
        batch, width = h.value.shape
        pixels = width // spec.classes
        h = ad.reshape(h, (batch, pixels, spec.classes))
        h = ad.softmax(h, axis=-1)
        h = ad.reshape(h, (batch, width))
    return h


def mlp_apply(params, spec: MlpSpec, x, noise=None):
    """Numpy-only forward pass, bit-identical to `mlp_forward(...).value`."""
    h = np.asarray(x, dtype=np.float64)
    if noise is not None:
        h = np.concatenate([h, np.asarray(noise, dtype=np.float64)], axis=1)
    _check_input_width(spec, h.shape[1])
    n_layers = _layer_count(params, spec)
    for i in range(n_layers):
        h = h @ params[f"w{i}"] + params[f"b{i}"]
        if i < n_layers - 1:
            h = _hidden_value(h, spec.hidden)
    if spec.out == "sigmoid":
        h = ad.sigmoid_value(h)
    elif spec.out == "softmax_per_pixel":
        batch, width = h.shape
        h = ad.softmax_value(h.reshape(batch, width // spec.classes, spec.classes))
        h = h.reshape(batch, width)
    return h


def params_to_leaves(params):
    return {name: ad.leaf(value) for name, value in params.items()}


# ---------------------------------------------------------------------------
# Adam with coupled weight decay
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.5
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 5e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_new(params, beta1=0.5, beta2=0.99, eps=1e-8, weight_decay=5e-4):
    state = AdamState(beta1, beta2, eps, weight_decay)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(params, grads, state: AdamState, lr):
    """One in-place Adam update; weight decay is folded into the gradient
    (classic coupled L2) before the moment updates."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for {name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# learning-rate schedules
# ---------------------------------------------------------------------------


@dataclass
class LrSchedule:
    base: float
    mode: str = "constant"  # constant | linear_decay_to_zero | drop_at_epoch
    total: int = 0
    drop_epoch: int = 0
    drop_factor: float = 1.0
    steps_per_epoch: int = 1


def lr_at(schedule: LrSchedule, step):
    if step < 0:
        raise ValueError(f"negative step {step}")
    if schedule.mode == "constant":
        return schedule.base
    if schedule.mode == "linear_decay_to_zero":
        if step >= schedule.total:
            raise ValueError(f"step {step} outside schedule of {schedule.total}")
        return schedule.base * (1.0 - step / schedule.total)
    if schedule.mode == "drop_at_epoch":
        epoch = step // max(1, schedule.steps_per_epoch)
        return schedule.base * (schedule.drop_factor if epoch >= schedule.drop_epoch
                                else 1.0)
    raise ValueError(f"unknown schedule mode {schedule.mode!r}")

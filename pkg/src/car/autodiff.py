"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Forward values are computed eagerly; each result is a graph node recording
its inputs, so a single `backward` pass over the recorded graph populates
gradients on every trainable leaf. The op set is intentionally small: just
enough to express MLPs and the loss functions used by this package.
"""

from __future__ import annotations

import numpy as np

LOG_CLAMP = 1e-12


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    """Operand shapes incompatible with the requested op."""


class DomainError(AutodiffError):
    """Input outside an op's mathematical domain (e.g. log of x <= 0)."""


class Node:
    """One value in the computation graph.

    `value` is a float64 ndarray; `grad` is populated (same shape) by
    `backward` and is only meaningful after that call returns. Leaves
    created with `leaf` are trainable; `constant` nodes block gradients.
    """

    __slots__ = ("value", "grad", "parents", "kind", "attrs", "requires_grad")

    def __init__(self, value, kind, parents=(), attrs=None, requires_grad=False):
        self.value = value
        self.grad = None
        self.kind = kind
        self.parents = tuple(parents)
        self.attrs = attrs or {}
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def grad_value(self):
        """Gradient as an array; zeros when unreachable from the root."""
        if self.grad is None:
            return np.zeros_like(self.value)
        return self.grad

    def __repr__(self):
        return f"Node({self.kind}, shape={self.value.shape})"


def _as_value(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr


def leaf(value):
    """Trainable leaf node (parameters)."""
    return Node(_as_value(value), "leaf", requires_grad=True)


def constant(value):
    """Non-trainable node (inputs, labels, fixed scalars)."""
    return Node(_as_value(value), "const")


def as_node(x):
    return x if isinstance(x, Node) else constant(x)


def stop_gradient(node):
    """Same forward value, treated as a constant by backward."""
    return Node(node.value, "stop_gradient")


# ---------------------------------------------------------------------------
# op registry: kind -> (forward(values, attrs) -> array,
#                       backward(node, g) -> per-parent gradient list)
# ---------------------------------------------------------------------------


def _require_same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} vs {b.shape}")


def _fwd_add(vals, attrs):
    a, b = vals
    _require_same_shape("add", a, b)
    return a + b


def _fwd_sub(vals, attrs):
    a, b = vals
    _require_same_shape("sub", a, b)
    return a - b


def _fwd_mul(vals, attrs):
    a, b = vals
    _require_same_shape("mul", a, b)
    return a * b


def _bwd_mul(node, g):
    a, b = node.parents
    return [g * b.value, g * a.value]


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} vs {b.shape}")
    return a @ b


def _bwd_matmul(node, g):
    a, b = node.parents
    return [g @ b.value.T, a.value.T @ g]


def _fwd_affine(vals, attrs):
    x, w, b = vals
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: input {x.shape} vs weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} vs weight {w.shape}")
    return x @ w + b


def _bwd_affine(node, g):
    x, w, _ = node.parents
    return [g @ w.value.T, x.value.T @ g, g.sum(axis=0)]


def _fwd_concat(vals, attrs):
    axis = attrs["axis"]
    base = vals[0].shape
    for v in vals[1:]:
        if v.ndim != len(base):
            raise ShapeError(f"concat: ranks differ {base} vs {v.shape}")
        for ax in range(len(base)):
            if ax != axis and v.shape[ax] != base[ax]:
                raise ShapeError(f"concat: shapes {base} vs {v.shape} on axis {ax}")
    return np.concatenate(vals, axis=axis)


def _bwd_concat(node, g):
    axis = node.attrs["axis"]
    splits = np.cumsum([p.value.shape[axis] for p in node.parents])[:-1]
    return list(np.split(g, splits, axis=axis))


def _fwd_slice(vals, attrs):
    (x,) = vals
    axis, start, stop = attrs["axis"], attrs["start"], attrs["stop"]
    if not (0 <= start <= stop <= x.shape[axis]):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for {x.shape} axis {axis}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    return np.ascontiguousarray(x[tuple(idx)])


def _bwd_slice(node, g):
    (x,) = node.parents
    axis, start, stop = node.attrs["axis"], node.attrs["start"], node.attrs["stop"]
    out = np.zeros_like(x.value)
    idx = [slice(None)] * out.ndim
    idx[axis] = slice(start, stop)
    out[tuple(idx)] = g
    return [out]


def _fwd_leaky_relu(vals, attrs):
    (x,) = vals
    alpha = attrs.get("alpha", 0.2)
    return np.where(x >= 0, x, alpha * x)


def _bwd_leaky_relu(node, g):
    x = node.parents[0].value
    alpha = node.attrs.get("alpha", 0.2)
    return [g * np.where(x >= 0, 1.0, alpha)]


def _fwd_tanh(vals, attrs):
    return np.tanh(vals[0])


def _bwd_tanh(node, g):
    return [g * (1.0 - node.value**2)]


def _fwd_sigmoid(vals, attrs):
    (x,) = vals
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bwd_sigmoid(node, g):
    s = node.value
    return [g * s * (1.0 - s)]


def _fwd_softmax(vals, attrs):
    (x,) = vals
    axis = attrs.get("axis", -1)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _bwd_softmax(node, g):
    s = node.value
    axis = node.attrs.get("axis", -1)
    return [s * (g - (g * s).sum(axis=axis, keepdims=True))]


def _fwd_log(vals, attrs):
    (x,) = vals
    if np.any(x <= 0):
        raise DomainError(f"log: non-positive input (min {x.min():g})")
    return np.log(x)


def _bwd_log(node, g):
    return [g / node.parents[0].value]


def _fwd_log_clamped(vals, attrs):
    (x,) = vals
    eps = attrs.get("eps", LOG_CLAMP)
    return np.log(np.maximum(x, eps))


def _bwd_log_clamped(node, g):
    x = node.parents[0].value
    eps = node.attrs.get("eps", LOG_CLAMP)
    return [np.where(x >= eps, g / np.maximum(x, eps), 0.0)]


def _fwd_exp(vals, attrs):
    return np.exp(vals[0])


def _bwd_exp(node, g):
    return [g * node.value]


def _fwd_square(vals, attrs):
    return vals[0] ** 2


def _bwd_square(node, g):
    return [g * 2.0 * node.parents[0].value]


def _reduce_axes(attrs, ndim):
    axis = attrs.get("axis")
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _fwd_sum(vals, attrs):
    (x,) = vals
    return np.asarray(x.sum(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)))


def _expand_reduced(g, parent_shape, attrs):
    axes = _reduce_axes(attrs, len(parent_shape))
    if not attrs.get("keepdims", False):
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, parent_shape)


def _bwd_sum(node, g):
    # .copy(), not ascontiguousarray: the latter promotes 0-d arrays to (1,)
    shape = node.parents[0].value.shape
    return [_expand_reduced(g, shape, node.attrs).copy()]


def _fwd_mean(vals, attrs):
    (x,) = vals
    return np.asarray(x.mean(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)))


def _bwd_mean(node, g):
    shape = node.parents[0].value.shape
    axes = _reduce_axes(node.attrs, len(shape))
    n = 1
    for ax in axes:
        n *= shape[ax]
    return [_expand_reduced(g, shape, node.attrs) / n]


def _fwd_broadcast(vals, attrs):
    (x,) = vals
    target = tuple(attrs["shape"])
    try:
        return np.broadcast_to(x, target).copy()
    except ValueError:
        raise ShapeError(f"broadcast: {x.shape} -> {target}") from None


def _bwd_broadcast(node, g):
    src = node.parents[0].value.shape
    ndim_added = g.ndim - len(src)
    if ndim_added:
        g = g.sum(axis=tuple(range(ndim_added)))
    keep = tuple(ax for ax, ext in enumerate(src) if ext == 1 and g.shape[ax] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return [g]


def _fwd_reshape(vals, attrs):
    (x,) = vals
    target = tuple(attrs["shape"])
    if int(np.prod(target)) != x.size:
        raise ShapeError(f"reshape: {x.shape} -> {target}")
    return x.reshape(target)


def _bwd_reshape(node, g):
    return [g.reshape(node.parents[0].value.shape)]


_OPS = {
    "add": (_fwd_add, lambda node, g: [g, g]),
    "sub": (_fwd_sub, lambda node, g: [g, -g]),
    "mul": (_fwd_mul, _bwd_mul),
    "matmul": (_fwd_matmul, _bwd_matmul),
    "affine": (_fwd_affine, _bwd_affine),
    "concat": (_fwd_concat, _bwd_concat),
    "slice": (_fwd_slice, _bwd_slice),
    "leaky_relu": (_fwd_leaky_relu, _bwd_leaky_relu),
    "tanh": (_fwd_tanh, _bwd_tanh),
    "sigmoid": (_fwd_sigmoid, _bwd_sigmoid),
    "softmax": (_fwd_softmax, _bwd_softmax),
    "log": (_fwd_log, _bwd_log),
    "log_clamped": (_fwd_log_clamped, _bwd_log_clamped),
    "exp": (_fwd_exp, _bwd_exp),
    "square": (_fwd_square, _bwd_square),
    "sum": (_fwd_sum, _bwd_sum),
    "mean": (_fwd_mean, _bwd_mean),
    "broadcast": (_fwd_broadcast, _bwd_broadcast),
    "reshape": (_fwd_reshape, _bwd_reshape),
}

OP_KINDS = tuple(_OPS)


def build_op(kind, inputs, attrs=None):
    """Apply `kind` to input nodes, computing the forward value eagerly."""
    if kind not in _OPS:
        raise AutodiffError(f"unknown op kind: {kind!r}")
    nodes = [as_node(x) for x in inputs]
    fwd, _ = _OPS[kind]
    value = fwd([n.value for n in nodes], attrs or {})
    requires = any(n.requires_grad for n in nodes)
    return Node(np.asarray(value, dtype=np.float64), kind, nodes, attrs or {}, requires)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _toposort(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node in visited:
            continue
        visited.add(node)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p not in visited:
                stack.append((p, False))
    return order


def backward(root):
    """Populate gradients of `root` w.r.t. every reachable trainable leaf."""
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar-shaped, got {root.value.shape}")
    if not root.requires_grad:
        return
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.kind in ("leaf", "const", "stop_gradient") or node.grad is None:
            continue
        _, bwd = _OPS[node.kind]
        parent_grads = bwd(node, node.grad)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64)
            else:
                parent.grad += pg


# ---------------------------------------------------------------------------
# convenience builders (auto-lift constants, auto-broadcast where sensible)
# ---------------------------------------------------------------------------


def _broadcast_pair(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.shape == b.value.shape:
        return a, b
    target = np.broadcast_shapes(a.value.shape, b.value.shape)
    if a.value.shape != target:
        a = build_op("broadcast", [a], {"shape": target})
    if b.value.shape != target:
        b = build_op("broadcast", [b], {"shape": target})
    return a, b


def add(a, b):
    return build_op("add", _broadcast_pair(a, b))


def sub(a, b):
    return build_op("sub", _broadcast_pair(a, b))


def mul(a, b):
    return build_op("mul", _broadcast_pair(a, b))


def scale(x, c):
    """Multiply by a python scalar constant."""
    return mul(x, constant(float(c)))


def neg(x):
    return scale(x, -1.0)


def matmul(a, b):
    return build_op("matmul", [a, b])


def affine(x, w, b):
    return build_op("affine", [x, w, b])


def concat(nodes, axis):
    return build_op("concat", list(nodes), {"axis": axis})


def slice_axis(x, axis, start, stop):
    return build_op("slice", [x], {"axis": axis, "start": start, "stop": stop})


def leaky_relu(x, alpha=0.2):
    return build_op("leaky_relu", [x], {"alpha": alpha})


def tanh(x):
    return build_op("tanh", [x])


def sigmoid(x):
    return build_op("sigmoid", [x])


def softmax(x, axis=-1):
    return build_op("softmax", [x], {"axis": axis})


def log(x):
    return build_op("log", [x])


def log_clamped(x, eps=LOG_CLAMP):
    return build_op("log_clamped", [x], {"eps": eps})


def exp(x):
    return build_op("exp", [x])


def square(x):
    return build_op("square", [x])


def sum_(x, axis=None, keepdims=False):
    return build_op("sum", [x], {"axis": axis, "keepdims": keepdims})


def mean_(x, axis=None, keepdims=False):
    return build_op("mean", [x], {"axis": axis, "keepdims": keepdims})


def broadcast_to(x, shape):
    return build_op("broadcast", [x], {"shape": tuple(shape)})


def reshape(x, shape):
    return build_op("reshape", [x], {"shape": tuple(shape)})


# value-level mirrors of nonlinear ops, shared with graph-free forward passes
# so both paths are bit-identical by construction


def sigmoid_value(x):
    return _fwd_sigmoid([np.asarray(x, dtype=np.float64)], {})


def softmax_value(x, axis=-1):
    return _fwd_softmax([np.asarray(x, dtype=np.float64)], {"axis": axis})


def leaky_relu_value(x, alpha=0.2):
    return _fwd_leaky_relu([np.asarray(x, dtype=np.float64)], {"alpha": alpha})


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))


def grad_check(f, params, step=1e-5, seed=0):
    """Max relative error between analytic and central-difference gradients.

    `f(leaves, rng)` must build a scalar graph from `leaves`, a name->Node
    mapping mirroring `params` (name -> ndarray). Any randomness must come
    from the supplied rng, which is re-created from `seed` for every
    evaluation so repeated calls see identical data.
    """
    if step <= 0:
        raise ValueError("step must be positive")

    def evaluate(values, want_grads):
        leaves = {name: leaf(v) for name, v in values.items()}
        rng = np.random.Generator(np.random.Philox(key=[seed, 0x67726164]))
        root = f(leaves, rng)
        if want_grads:
            backward(root)
            return float(root.value), {n: leaves[n].grad_value() for n in leaves}
        return float(root.value)

    base = {name: np.array(v, dtype=np.float64) for name, v in params.items()}
    _, grads = evaluate(base, True)

    worst = 0.0
    for name, arr in base.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = evaluate(base, False)
            flat[i] = orig - step
            down = evaluate(base, False)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(float(gflat[i]), numeric))
    return worst

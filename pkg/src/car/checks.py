"""Gradient-check battery: every registered op, on several shapes each, plus
composed loss graphs, verified against central finite differences.

`run_battery` returns a JSON-serializable report; `broken_backward` is a test
hook that corrupts one op's backward rule so the negative control (a battery
run that must fail) can be exercised.
"""

from __future__ import annotations

import contextlib
import time

import numpy as np

from . import autodiff as ad
from . import losses

TOLERANCE = 1e-4
STEP = 1e-5


class Case:
    """One named scalar graph builder with its parameter set."""

    def __init__(self, name, build, params, step=STEP):
        self.name = name
        self.build = build
        self.params = params
        self.step = step

    def max_rel_error(self, seed=0):
        return ad.grad_check(self.build, self.params, step=self.step, seed=seed)


def _vals(rng, shape, low=-1.0, high=1.0):
    return rng.uniform(low, high, size=shape)


def _away_from_zero(rng, shape, margin=0.05):
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(margin, 1.0, size=shape)


def _simplex(rng, shape):
    z = rng.uniform(0.1, 1.0, size=shape)
    return z / z.sum(axis=-1, keepdims=True)


def _elementwise_cases(name, op, sampler):
    """Three shapes for a unary elementwise op, reduced to a scalar mean."""
    shapes = [(3,), (2, 4), (2, 3, 2)]
    seed_rng = np.random.Generator(np.random.Philox(key=[17, hash(name) % 2**32]))
    cases = []
    for i, shape in enumerate(shapes):
        base = sampler(seed_rng, shape)
        cases.append(Case(
            f"{name}/{i}",
            lambda leaves, rng, _op=op: ad.mean_(_op(leaves["a"])),
            {"a": base}))
    return cases


def _op_cases():
    rng = np.random.Generator(np.random.Philox(key=[17, 0]))
    cases = []

    # binary broadcast arithmetic
    for name, op in (("add", ad.add), ("sub", ad.sub), ("mul", ad.mul)):
        for i, (sa, sb) in enumerate([((3,), (3,)), ((2, 4), (4,)), ((2, 1, 3), (1, 5, 3))]):
            cases.append(Case(
                f"{name}/{i}",
                lambda leaves, r, _op=op: ad.mean_(_op(leaves["a"], leaves["b"])),
                {"a": _vals(rng, sa), "b": _vals(rng, sb)}))

    for i, (sa, sb) in enumerate([((2, 3), (3, 2)), ((1, 4), (4, 1)), ((3, 3), (3, 3))]):
        cases.append(Case(
            f"matmul/{i}",
            lambda leaves, r: ad.mean_(ad.matmul(leaves["a"], leaves["b"])),
            {"a": _vals(rng, sa), "b": _vals(rng, sb)}))

    for i, (n, din, dout) in enumerate([(2, 3, 2), (4, 1, 3), (1, 5, 1)]):
        cases.append(Case(
            f"affine/{i}",
            lambda leaves, r: ad.mean_(ad.affine(leaves["x"], leaves["w"], leaves["b"])),
            {"x": _vals(rng, (n, din)), "w": _vals(rng, (din, dout)),
             "b": _vals(rng, (dout,))}))

    for i, (shapes, axis) in enumerate([
            ([(2, 3), (2, 2)], 1), ([(1, 4), (2, 4)], 0), ([(2, 1), (2, 2), (2, 3)], 1)]):
        parts = {f"p{j}": _vals(rng, s) for j, s in enumerate(shapes)}
        cases.append(Case(
            f"concat/{i}",
            lambda leaves, r, _axis=axis, _n=len(shapes): ad.mean_(
                ad.concat([leaves[f"p{j}"] for j in range(_n)], axis=_axis)),
            parts))

    for i, (shape, axis, start, stop) in enumerate([
            ((5,), 0, 1, 4), ((3, 6), 1, 2, 5), ((2, 3, 4), 2, 0, 2)]):
        cases.append(Case(
            f"slice/{i}",
            lambda leaves, r, a=axis, s=start, e=stop: ad.mean_(
                ad.slice_axis(leaves["a"], a, s, e)),
            {"a": _vals(rng, shape)}))

    cases += _elementwise_cases("leaky_relu", ad.leaky_relu, _away_from_zero)
    cases += _elementwise_cases("tanh", ad.tanh, _vals)
    cases += _elementwise_cases("sigmoid", ad.sigmoid, _vals)
    cases += _elementwise_cases("exp", ad.exp, _vals)
    cases += _elementwise_cases("square", ad.square, _vals)
    cases += _elementwise_cases(
        "log", ad.log, lambda r, s: r.uniform(0.3, 1.5, size=s))
    cases += _elementwise_cases(
        "log_clamped", ad.log_clamped, lambda r, s: r.uniform(0.3, 1.5, size=s))

    for i, (shape, axis) in enumerate([((4,), -1), ((2, 3), 1), ((2, 2, 3), 0)]):
        base = _vals(rng, shape)
        pick = _simplex(rng, shape)
        cases.append(Case(
            f"softmax/{i}",
            lambda leaves, r, a=axis, p=pick: ad.sum_(
                ad.mul(ad.softmax(leaves["a"], axis=a), ad.constant(p))),
            {"a": base}))

    reductions = [("sum", ad.sum_), ("mean", ad.mean_)]
    red_shapes = [((4,), None), ((2, 3), 0), ((2, 3, 2), 2)]
    for name, op in reductions:
        for i, (shape, axis) in enumerate(red_shapes):
            weight = _vals(rng, ())
            cases.append(Case(
                f"{name}/{i}",
                lambda leaves, r, _op=op, a=axis: ad.mean_(
                    ad.square(_op(leaves["a"], axis=a))),
                {"a": _vals(rng, shape)}))

    for i, (src, dst) in enumerate([((3, 1), (3, 4)), ((1,), (2, 3)), ((2, 1, 2), (2, 5, 2))]):
        cases.append(Case(
            f"broadcast/{i}",
            lambda leaves, r, d=dst: ad.mean_(
                ad.square(ad.broadcast_to(leaves["a"], d))),
            {"a": _vals(rng, src)}))

    for i, (src, dst) in enumerate([((6,), (2, 3)), ((2, 3), (6,)), ((2, 2, 3), (4, 3))]):
        cases.append(Case(
            f"reshape/{i}",
            lambda leaves, r, d=dst: ad.mean_(
                ad.square(ad.reshape(leaves["a"], d))),
            {"a": _vals(rng, src)}))

    return cases


def _mlp_graph(leaves, prefix, x, depth=3):
    """Small affine/leaky-relu stack from named leaves; returns pre-activation."""
    h = x
    for layer in range(depth):
        h = ad.affine(h, leaves[f"{prefix}w{layer}"], leaves[f"{prefix}b{layer}"])
        if layer < depth - 1:
            h = ad.leaky_relu(h)
    return h


def _mlp_params(rng, prefix, widths):
    params = {}
    for layer, (din, dout) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}w{layer}"] = rng.normal(scale=0.5, size=(din, dout))
        params[f"{prefix}b{layer}"] = rng.normal(scale=0.1, size=(dout,))
    return params


def _composed_cases():
    """Loss graphs stacked on small MLPs (depth >= 4 including the loss)."""
    rng = np.random.Generator(np.random.Philox(key=[23, 0]))
    batch, classes, m = 3, 3, 4

    g_params = _mlp_params(rng, "g", [2, 4, 4, classes])
    d_params = _mlp_params(rng, "d", [classes, 4, 4, 1])

    onehot = np.eye(classes)[rng.integers(0, classes, size=batch)]
    mask = np.zeros(batch)
    mask[0] = 1.0
    calib = _simplex(rng, (batch, classes))

    def ce(leaves, r):
        x = ad.constant(r.normal(size=(batch, 2)))
        probs = ad.softmax(_mlp_graph(leaves, "g", x), axis=-1)
        return losses.loss_ce_categorical(probs, ad.constant(onehot),
                                          ignore_mask=mask)

    def mse(leaves, r):
        x = ad.constant(r.normal(size=(batch, 2)))
        return losses.loss_mse(_mlp_graph(leaves, "g", x), ad.constant(onehot))

    def adv(leaves, r):
        x = ad.constant(r.normal(size=(batch, 2)))
        fake = ad.tanh(_mlp_graph(leaves, "g", x))
        scores = ad.sigmoid(_mlp_graph(leaves, "d", fake))
        return losses.loss_adv_generator(scores)

    def disc(leaves, r):
        fake = ad.constant(r.normal(size=(batch, classes)))
        real = ad.constant(r.normal(size=(batch, classes)))
        return losses.loss_discriminator(
            ad.sigmoid(_mlp_graph(leaves, "d", fake)),
            ad.sigmoid(_mlp_graph(leaves, "d", real)))

    def cal_categorical(leaves, r):
        x = ad.constant(r.normal(size=(batch * m, 2)))
        probs = ad.softmax(_mlp_graph(leaves, "g", x), axis=-1)
        sample_mean = ad.mean_(ad.reshape(probs, (batch, m, classes)), axis=1)
        return losses.loss_cal_categorical(
            ad.reshape(sample_mean, (batch, 1, classes)),
            calib.reshape(batch, 1, classes))

    def cal_gaussian(leaves, r):
        x = ad.constant(r.normal(size=(batch * m, 2)))
        out = ad.tanh(_mlp_graph(leaves, "g", x))
        sample_mean = ad.mean_(ad.reshape(out, (batch, m, classes)), axis=1)
        return losses.loss_cal_gaussian(sample_mean, ad.constant(calib))

    def total(leaves, r):
        return losses.loss_generator_total(
            adv(leaves, r), cal_gaussian(leaves, r),
            losses.LossWeights(adv=10.0, lambda_cal=5.0, r1=10.0))

    both = dict(g_params)
    both.update(d_params)
    return [
        Case("composed/loss_ce", ce, g_params),
        Case("composed/loss_mse", mse, g_params),
        Case("composed/loss_adv", adv, both),
        Case("composed/loss_d", disc, d_params),
        Case("composed/loss_cal_categorical", cal_categorical, g_params),
        Case("composed/loss_cal_gaussian", cal_gaussian, g_params),
        Case("composed/loss_generator_total", total, both),
    ]


def all_cases():
    return _op_cases() + _composed_cases()


def covered_ops():
    """Registered op kinds exercised by the battery (asserted complete in tests)."""
    return sorted({case.name.split("/")[0] for case in _op_cases()})


def run_battery(seed=0, tolerance=TOLERANCE):
    """Run every case; returns a JSON-ready report with per-case errors."""
    t0 = time.perf_counter()
    rows = []
    worst = 0.0
    for case in all_cases():
        err = case.max_rel_error(seed=seed)
        worst = max(worst, err)
        rows.append({"name": case.name, "max_rel_error": err,
                     "passed": bool(err < tolerance)})
    return {
        "tolerance": tolerance,
        "step": STEP,
        "cases": rows,
        "max_rel_error": worst,
        "passed": bool(worst < tolerance),
        "elapsed_s": time.perf_counter() - t0,
    }


@contextlib.contextmanager
def broken_backward(op_name="tanh"):
    """Corrupt one op's backward rule (negative control for the battery)."""
    fwd, bwd = ad._OPS[op_name]

    def sabotaged(*args, **kwargs):
        return [g * 1.5 if g is not None else None for g in bwd(*args, **kwargs)]

    ad._OPS[op_name] = (fwd, sabotaged)
    try:
        yield
    finally:
        ad._OPS[op_name] = (fwd, bwd)

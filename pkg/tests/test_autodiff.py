import numpy as np
import pytest

from car import autodiff as ad
from car import rng


def scalar_sum(node):
    return ad.sum_(node)


def test_forward_values_basic():
    a = ad.constant([[1.0, 2.0], [3.0, 4.0]])
    eye = ad.constant(np.eye(2))
    out = ad.matmul(a, eye)
    assert np.array_equal(out.value, a.value)

    assert np.allclose(ad.softmax(ad.constant([0.0, 0.0])).value, [0.5, 0.5])
    assert ad.sigmoid(ad.constant(0.0)).value == 0.5
    assert np.allclose(ad.leaky_relu(ad.constant([-1.0, 2.0])).value, [-0.2, 2.0])
    assert np.allclose(ad.tanh(ad.constant(0.0)).value, 0.0)


def test_sum_of_squares_gradient():
    x = ad.leaf([1.0, -2.0, 3.0])
    loss = ad.sum_(ad.square(x))
    ad.backward(loss)
    assert np.array_equal(x.grad, [2.0, -4.0, 6.0])


def test_mean_gradient_is_uniform():
    x = ad.leaf([1.0, 2.0, 3.0, 4.0])
    ad.backward(ad.mean_(x))
    assert np.array_equal(x.grad, [0.25, 0.25, 0.25, 0.25])


def test_affine_matches_matmul_add():
    g = rng.stream(7, rng.STREAM_CHECK)
    x = g.normal(size=(5, 3))
    w = g.normal(size=(3, 4))
    b = g.normal(size=4)
    out = ad.affine(ad.constant(x), ad.constant(w), ad.constant(b))
    assert np.allclose(out.value, x @ w + b)


def test_softmax_rows_on_simplex():
    g = rng.stream(3, rng.STREAM_CHECK)
    x = ad.constant(g.normal(size=(20, 6)) * 5)
    s = ad.softmax(x, axis=-1).value
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=-1), 1.0)
    # large logits must not overflow
    big = ad.softmax(ad.constant([1000.0, 0.0])).value
    assert np.isfinite(big).all() and abs(big.sum() - 1.0) < 1e-15


def test_sigmoid_extreme_inputs_stable():
    v = ad.sigmoid(ad.constant([-800.0, 800.0])).value
    assert np.isfinite(v).all()
    assert v[0] >= 0.0 and v[1] <= 1.0


def test_stop_gradient_contract():
    x = ad.leaf([1.0, 2.0])
    held = ad.stop_gradient(ad.square(x))
    assert held.value is ad.stop_gradient(held).value  # shares the array
    y = ad.leaf([3.0, 4.0])
    loss = ad.sum_(ad.mul(held, y))
    ad.backward(loss)
    assert x.grad is None or np.all(x.grad_value() == 0)
    assert np.array_equal(y.grad, held.value)


def test_unreachable_leaf_has_zero_gradient():
    x = ad.leaf([1.0])
    z = ad.leaf([5.0])
    ad.backward(ad.sum_(ad.square(x)))
    assert np.all(z.grad_value() == 0)


def test_backward_requires_scalar_root():
    x = ad.leaf([1.0, 2.0])
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.square(x))


def test_shape_errors_name_the_op():
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.build_op("add", [ad.constant(np.ones(3)), ad.constant(np.ones(4))])
    with pytest.raises(ad.DomainError, match="log"):
        ad.log(ad.constant([1.0, 0.0]))


def test_log_clamped_floors_and_blocks_gradient():
    x = ad.leaf([0.5, 1e-30, -1.0])
    out = ad.log_clamped(x)
    assert np.allclose(out.value, [np.log(0.5), np.log(1e-12), np.log(1e-12)])
    ad.backward(ad.sum_(out))
    assert np.allclose(x.grad, [2.0, 0.0, 0.0])


def test_slice_and_concat_roundtrip_gradients():
    x = ad.leaf(np.arange(12.0).reshape(3, 4))
    left = ad.slice_axis(x, 1, 0, 2)
    right = ad.slice_axis(x, 1, 2, 4)
    back = ad.concat([left, right], axis=1)
    assert np.array_equal(back.value, x.value)
    ad.backward(ad.sum_(ad.mul(back, ad.constant(np.full((3, 4), 2.0)))))
    assert np.array_equal(x.grad, np.full((3, 4), 2.0))


def test_broadcast_backward_sums_over_expanded_axes():
    b = ad.leaf([1.0, 2.0, 3.0])
    out = ad.broadcast_to(b, (4, 3))
    ad.backward(ad.sum_(out))
    assert np.array_equal(b.grad, [4.0, 4.0, 4.0])
    row = ad.leaf(np.ones((1, 3)))
    ad.backward(ad.sum_(ad.broadcast_to(row, (5, 3))))
    assert np.array_equal(row.grad, np.full((1, 3), 5.0))


def test_backward_is_linear_in_the_root():
    def grads(a, b):
        x = ad.leaf([0.3, -0.7, 1.1])
        f = ad.sum_(ad.square(x))
        g = ad.sum_(ad.exp(ad.scale(x, 0.5)))
        root = ad.add(ad.scale(f, a), ad.scale(g, b))
        ad.backward(root)
        return x.grad.copy()

    ga = grads(1.0, 0.0)
    gb = grads(0.0, 1.0)
    combined = grads(2.0, -3.0)
    assert np.allclose(combined, 2.0 * ga - 3.0 * gb, atol=1e-12)


def test_grad_accumulates_on_reused_node():
    x = ad.leaf([2.0])
    y = ad.add(ad.square(x), ad.square(x))  # 2x^2
    ad.backward(ad.sum_(y))
    assert np.allclose(x.grad, [8.0])


# ---------------------------------------------------------------------------
# finite-difference checks
# ---------------------------------------------------------------------------


def test_grad_check_quadratic_form():
    g = rng.stream(11, rng.STREAM_CHECK)
    A = g.normal(size=(4, 4))

    def f(leaves, _):
        x = leaves["x"]
        col = ad.reshape(x, (4, 1))
        return ad.sum_(ad.mul(col, ad.matmul(ad.constant(A), col)))

    err = ad.grad_check(f, {"x": g.normal(size=4)})
    assert err < 1e-8


def test_grad_check_linear_is_near_exact():
    g = rng.stream(12, rng.STREAM_CHECK)
    w = g.normal(size=6)

    def f(leaves, _):
        return ad.sum_(ad.mul(leaves["x"], ad.constant(w)))

    # no truncation error for a linear map, so a larger step just
    # suppresses floating-point cancellation
    assert ad.grad_check(f, {"x": g.normal(size=6)}, step=1e-3) < 1e-10


def _op_cases():
    """(name, param-shapes builder) pairs for the per-op FD sweep."""
    g = rng.stream(2024, rng.STREAM_CHECK)

    def rand(shape, positive=False, away_from_kink=False):
        x = g.normal(size=shape)
        if positive:
            x = np.abs(x) + 0.5
        if away_from_kink:
            x = np.where(np.abs(x) < 0.1, x + 0.25, x)
        return x

    cases = []
    for _ in range(6):
        n, m, k = g.integers(1, 5, size=3)
        cases.append(("add", {"a": rand((n, m)), "b": rand((n, m))},
                      lambda L: ad.add(L["a"], L["b"])))
        cases.append(("sub", {"a": rand((n, m)), "b": rand((n, m))},
                      lambda L: ad.sub(L["a"], L["b"])))
        cases.append(("mul", {"a": rand((n, m)), "b": rand((n, m))},
                      lambda L: ad.mul(L["a"], L["b"])))
        cases.append(("matmul", {"a": rand((n, k)), "b": rand((k, m))},
                      lambda L: ad.matmul(L["a"], L["b"])))
        cases.append(("affine", {"x": rand((n, k)), "w": rand((k, m)), "b": rand(m)},
                      lambda L: ad.affine(L["x"], L["w"], L["b"])))
        cases.append(("concat", {"a": rand((n, m)), "b": rand((n, m))},
                      lambda L: ad.concat([L["a"], L["b"]], axis=1)))
        cases.append(("slice", {"x": rand((n, 4))},
                      lambda L: ad.slice_axis(L["x"], 1, 1, 3)))
        cases.append(("leaky_relu", {"x": rand((n, m), away_from_kink=True)},
                      lambda L: ad.leaky_relu(L["x"])))
        cases.append(("tanh", {"x": rand((n, m))}, lambda L: ad.tanh(L["x"])))
        cases.append(("sigmoid", {"x": rand((n, m))}, lambda L: ad.sigmoid(L["x"])))
        cases.append(("softmax", {"x": rand((n, 3))},
                      lambda L: ad.softmax(L["x"], axis=-1)))
        cases.append(("log", {"x": rand((n, m), positive=True)},
                      lambda L: ad.log(L["x"])))
        cases.append(("log_clamped", {"x": rand((n, m), positive=True)},
                      lambda L: ad.log_clamped(L["x"])))
        cases.append(("exp", {"x": rand((n, m))}, lambda L: ad.exp(L["x"])))
        cases.append(("square", {"x": rand((n, m))}, lambda L: ad.square(L["x"])))
        cases.append(("sum_axis", {"x": rand((n, m, 2))},
                      lambda L: ad.sum_(L["x"], axis=1)))
        cases.append(("mean_axis", {"x": rand((n, m, 2))},
                      lambda L: ad.mean_(L["x"], axis=(0, 2))))
        cases.append(("broadcast", {"x": rand((1, m))},
                      lambda L, m=int(m): ad.broadcast_to(L["x"], (3, m))))
        cases.append(("reshape", {"x": rand((n, m))},
                      lambda L, nm=int(n * m): ad.reshape(L["x"], (nm,))))
    return cases


def test_per_op_finite_difference_sweep():
    cases = _op_cases()
    assert len(cases) >= 100
    g = rng.stream(55, rng.STREAM_CHECK)
    failures = []
    for name, params, build in cases:
        def f(leaves, frng, build=build):
            out = build(leaves)
            w = frng.normal(size=out.value.shape)
            return ad.sum_(ad.mul(out, ad.constant(w)))

        err = ad.grad_check(f, params, seed=int(g.integers(0, 2**31)))
        if err >= 1e-5:
            failures.append((name, err))
    assert not failures, f"ops outside tolerance: {failures}"


def test_grad_check_flags_broken_derivative(monkeypatch):
    # corrupt tanh's backward rule and make sure the checker notices
    fwd, _ = ad._OPS["tanh"]
    monkeypatch.setitem(ad._OPS, "tanh", (fwd, lambda node, g: [g * 0.5]))

    def f(leaves, _):
        return ad.sum_(ad.tanh(leaves["x"]))

    err = ad.grad_check(f, {"x": np.array([0.3, -1.2, 0.9])})
    assert err > 1e-3

import numpy as np
import pytest

from car import autodiff as ad
from car import nn, rng


def spec_3layer():
    return nn.MlpSpec(widths=[2, 16, 16, 1])


def test_mlp_new_is_seed_deterministic():
    spec = nn.MlpSpec(widths=[2, 64, 64, 64, 1])
    a = nn.mlp_new(spec, seed=7)
    b = nn.mlp_new(spec, seed=7)
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k])
    c = nn.mlp_new(spec, seed=8)
    assert any(not np.array_equal(a[k], c[k]) for k in a if k.startswith("w"))


def test_mlp_new_rejects_bad_widths():
    with pytest.raises(ValueError):
        nn.mlp_new(nn.MlpSpec(widths=[2, 0, 1]), seed=0)
    with pytest.raises(ValueError):
        nn.mlp_new(nn.MlpSpec(widths=[4]), seed=0)
    with pytest.raises(ValueError):
        nn.mlp_new(nn.MlpSpec(widths=[2, 8, 9], out="softmax_per_pixel", classes=2), seed=0)


def test_hidden_init_scale():
    spec = nn.MlpSpec(widths=[64, 64, 64])
    params = nn.mlp_new(spec, seed=3)
    mean_abs = np.abs(params["w0"]).mean()  # hidden layer
    assert 0.01 < mean_abs < 0.3
    # output layer follows the small-normal convention
    assert np.abs(params["w1"]).std() < 0.05


def test_identity_single_layer_forward():
    spec = nn.MlpSpec(widths=[3, 3])
    params = {"w0": np.eye(3), "b0": np.zeros(3)}
    x = np.arange(6.0).reshape(2, 3)
    out = nn.mlp_forward(params, spec, ad.constant(x))
    assert np.array_equal(out.value, x)


def test_noise_concatenation_changes_output():
    spec = nn.MlpSpec(widths=[3, 16, 2])
    params = nn.mlp_new(spec, seed=1)
    g = rng.stream(1, rng.STREAM_NOISE)
    x = g.normal(size=(4, 2))
    n1 = g.normal(size=(4, 1))
    n2 = g.normal(size=(4, 1))
    y1 = nn.mlp_forward(params, spec, ad.constant(x), ad.constant(n1)).value
    y2 = nn.mlp_forward(params, spec, ad.constant(x), ad.constant(n2)).value
    assert not np.allclose(y1, y2)
    # and pure: same inputs give same outputs
    y1b = nn.mlp_forward(params, spec, ad.constant(x), ad.constant(n1)).value
    assert np.array_equal(y1, y1b)


def test_width_mismatch_raises():
    spec = nn.MlpSpec(widths=[4, 8, 1])
    params = nn.mlp_new(spec, seed=0)
    with pytest.raises(ad.ShapeError):
        nn.mlp_forward(params, spec, ad.constant(np.ones((2, 3))))


def test_softmax_per_pixel_output():
    K, P = 2, 8
    spec = nn.MlpSpec(widths=[3, 32, P * K], out="softmax_per_pixel", classes=K)
    params = nn.mlp_new(spec, seed=5)
    x = rng.stream(5, rng.STREAM_DATA).normal(size=(6, 3))
    out = nn.mlp_forward(params, spec, ad.constant(x)).value
    assert out.shape == (6, P * K)
    groups = out.reshape(6, P, K)
    assert np.all(groups > 0)
    assert np.allclose(groups.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("out,classes", [("identity", 0), ("sigmoid", 0),
                                         ("softmax_per_pixel", 2)])
def test_apply_matches_forward_bitwise(out, classes):
    spec = nn.MlpSpec(widths=[5, 24, 24, 8], out=out, classes=classes)
    params = nn.mlp_new(spec, seed=11)
    g = rng.stream(11, rng.STREAM_DATA)
    x = g.normal(size=(7, 3))
    noise = g.normal(size=(7, 2))
    node = nn.mlp_forward(params, spec, ad.constant(x), ad.constant(noise))
    plain = nn.mlp_apply(params, spec, x, noise)
    assert np.array_equal(node.value, plain)  # bit-identical


def test_mlp_gradients_match_finite_differences():
    spec = spec_3layer()
    params = nn.mlp_new(spec, seed=2)
    g = rng.stream(2, rng.STREAM_CHECK)
    x = g.normal(size=(5, 2))
    y = g.normal(size=(5, 1))

    def f(leaves, _):
        pred = nn.mlp_forward(leaves, spec, ad.constant(x))
        return ad.mean_(ad.square(ad.sub(pred, ad.constant(y))))

    assert ad.grad_check(f, params) < 1e-6


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_grad_zero_decay_is_identity():
    params = {"w": np.array([1.0, -2.0])}
    state = nn.adam_new(params, weight_decay=0.0)
    before = params["w"].copy()
    nn.adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(params["w"], before)


def test_adam_first_step_magnitude():
    params = {"w": np.array([0.0])}
    state = nn.adam_new(params, weight_decay=0.0)
    nn.adam_step(params, {"w": np.array([1.0])}, state, lr=0.1)
    assert params["w"][0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_descends_quadratic():
    w = {"w": np.array([1.0])}
    state = nn.adam_new(w, weight_decay=0.0)
    history = [abs(w["w"][0])]
    for _ in range(10):
        nn.adam_step(w, {"w": 2.0 * w["w"]}, state, lr=0.1)
        history.append(abs(w["w"][0]))
    drops = sum(1 for a, b in zip(history, history[1:]) if b < a)
    assert drops >= 8


def test_adam_rejects_nan_gradient():
    params = {"w3": np.array([1.0])}
    state = nn.adam_new(params)
    with pytest.raises(FloatingPointError, match="w3"):
        nn.adam_step(params, {"w3": np.array([np.nan])}, state, lr=0.1)


def test_weight_decay_pulls_toward_zero():
    params = {"w": np.array([5.0])}
    state = nn.adam_new(params, weight_decay=0.1)
    for _ in range(50):
        nn.adam_step(params, {"w": np.zeros(1)}, state, lr=0.05)
    assert abs(params["w"][0]) < 5.0


# ---------------------------------------------------------------------------
# lr schedules
# ---------------------------------------------------------------------------


def test_lr_linear_decay_midpoint():
    s = nn.LrSchedule(base=2e-4, mode="linear_decay_to_zero", total=100)
    assert nn.lr_at(s, 50) == pytest.approx(1e-4)
    assert nn.lr_at(s, 0) == pytest.approx(2e-4)
    assert nn.lr_at(s, 99) > 0
    with pytest.raises(ValueError):
        nn.lr_at(s, 100)


def test_lr_drop_at_epoch():
    s = nn.LrSchedule(base=2e-4, mode="drop_at_epoch", drop_epoch=30,
                      drop_factor=0.5, steps_per_epoch=1)
    assert nn.lr_at(s, 31) == pytest.approx(1e-4)
    assert nn.lr_at(s, 29) == pytest.approx(2e-4)


def test_lr_constant():
    s = nn.LrSchedule(base=1e-4)
    assert nn.lr_at(s, 0) == nn.lr_at(s, 123456) == 1e-4

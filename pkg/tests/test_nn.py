import numpy as np
import pytest
from gradcheck import check
from hypothesis import given, settings
from hypothesis import strategies as st

from edei import nn

TOL = 1e-4


def store(**arrays):
    return nn.ParameterStore(arrays)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_dense_gradients(rng):
    p = nn.ParameterStore()
    nn.init_dense(p, "d", 4, 3, rng)
    p["d.b"] = rng.normal(size=3)
    assert check(lambda p, x, t: nn.dense(p, "d", x, t), p, rng.normal(size=(5, 4)), rng) < TOL


@pytest.mark.parametrize("op", [nn.relu, nn.sigmoid, nn.tanh])
def test_elementwise_gradients(op, rng):
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the relu kink
    assert check(lambda p, x, t: op(x, t), store(), x, rng) < TOL


def test_masked_softmax_gradients(rng):
    mask = np.array([[True, False, True, True], [False, True, True, False]])
    x = rng.normal(size=(2, 4))
    err = check(lambda p, x, t: nn.masked_softmax(x, mask, t), store(), x, rng)
    assert err < TOL
    out = nn.masked_softmax(x, mask)
    assert np.all(out[~mask] == 0) and np.allclose(out.sum(-1), 1)


def test_last_step_gradients(rng):
    assert check(lambda p, x, t: nn.last_step(x, t), store(), rng.normal(size=(3, 2, 4)), rng) < TOL


def test_conv1x3_gradients_and_orientation(rng):
    p = nn.ParameterStore()
    nn.init_conv1x3(p, "c", rng)
    p["c.b"] = np.array(0.3)
    assert check(lambda p, x, t: nn.conv1x3(p, "c", x, t), p, rng.normal(size=(4, 6)), rng) < TOL
    # y[i] = k0 x[i+1] + k1 x[i] + k2 x[i-1] + b with zero padding
    q = store(**{"c.k": np.array([1.0, 10.0, 100.0]), "c.b": np.array(0.0)})
    y = nn.conv1x3(q, "c", np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(y, [[2 + 10, 3 + 20 + 100, 30 + 200]])


def test_gru_gradients(rng):
    p = nn.ParameterStore()
    nn.init_gru(p, "g", 3, 4, rng)
    for g in "zrn":
        p[f"g.b{g}"] = rng.normal(size=4) * 0.1
    err = check(lambda p, x, t: nn.gru(p, "g", x, tape=t), p, rng.normal(size=(3, 2, 3)), rng)
    assert err < TOL


def test_gru_matches_reference_recurrence(rng):
    p = nn.ParameterStore()
    nn.init_gru(p, "g", 2, 3, rng)
    xs = rng.normal(size=(4, 1, 2))
    h = np.zeros((1, 3))
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    for x in xs:
        z = sig(x @ p["g.Wz"] + h @ p["g.Uz"] + p["g.bz"])
        r = sig(x @ p["g.Wr"] + h @ p["g.Ur"] + p["g.br"])
        cand = np.tanh(x @ p["g.Wn"] + (r * h) @ p["g.Un"] + p["g.bn"])
        h = (1 - z) * cand + z * h
    out = nn.gru(p, "g", xs)
    np.testing.assert_allclose(out[-1], h, atol=1e-12)
    assert np.all(np.abs(out) < 1)


def test_mlp_gradients(rng):
    p = nn.ParameterStore()
    nn.init_mlp(p, "l", [5, 6, 4, 2], rng)
    assert check(lambda p, x, t: nn.mlp(p, "l", x, 3, t), p, rng.normal(size=(3, 5)), rng) < TOL


def test_losses_gradients(rng):
    y = rng.normal(size=6)
    lab = (rng.random(6) > 0.5).astype(float)
    assert check(lambda p, x, t: np.array(nn.mse_loss(x, y, t)), store(), rng.normal(size=6), rng) < TOL
    assert check(lambda p, x, t: np.array(nn.bce_with_logits(x, lab, t)), store(), rng.normal(size=6), rng) < TOL
    assert check(lambda p, x, t: np.array(nn.mean_scaled(x, -2.0, t)), store(), rng.normal(size=6), rng) < TOL


def test_bce_matches_naive_formula(rng):
    z = rng.normal(size=10)
    y = (rng.random(10) > 0.5).astype(float)
    s = 1 / (1 + np.exp(-z))
    assert nn.bce_with_logits(z, y) == pytest.approx(np.mean(-(y * np.log(s) + (1 - y) * np.log(1 - s))))


def test_tape_is_single_use(rng):
    tape = nn.Tape()
    nn.tanh(np.ones(2), tape)
    nn.backward(tape, np.ones(2))
    with pytest.raises(RuntimeError):
        nn.backward(tape, np.ones(2))


def test_adam_zero_gradient_leaves_params():
    p = store(w=np.array([1.0, -2.0]))
    opt = nn.Adam(p)
    opt.step({"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_bounded_by_lr():
    p = store(w=np.array([0.0]))
    nn.Adam(p, lr=1e-3).step({"w": np.array([1.0])})
    assert -1e-3 <= p["w"][0] < 0 and p["w"][0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_quadratic_descends_monotonically():
    p = store(w=np.array([3.0]))
    opt = nn.Adam(p, lr=1e-2)
    losses = []
    for _ in range(100):
        losses.append(float(p["w"][0] ** 2))
        opt.step({"w": 2 * p["w"].copy()})
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_skips_nonfinite_and_counts():
    p = store(w=np.array([1.0, 2.0]))
    opt = nn.Adam(p)
    assert not opt.step({"w": np.array([np.nan, 1.0])})
    assert opt.skipped == 1 and np.array_equal(p["w"], [1.0, 2.0])


def test_adam_partial_and_full_updates_agree():
    a = store(u=np.array([1.0, 2.0]), v=np.array([[3.0]]))
    b = a.copy()
    g = {"u": np.array([0.5, -0.5]), "v": np.array([[2.0]])}
    nn.Adam(a).step(g)
    ob = nn.Adam(b)
    ob._step_flat(b.pack(g))
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_clip_norm_limits_step_direction():
    p = store(w=np.array([0.0, 0.0]))
    opt = nn.Adam(p, lr=1.0, clip_norm=1.0)
    opt.step({"w": np.array([30.0, 40.0])})
    assert np.all(np.isfinite(p["w"]))


def test_store_shapes_fixed_and_flat_views_alias():
    p = store(a=np.zeros((2, 2)), b=np.zeros(3))
    with pytest.raises(ValueError):
        p["a"] = np.zeros(3)
    with pytest.raises(KeyError):
        p.add("a", np.zeros(1))
    flat = p.flat()
    flat[:] = np.arange(7)
    np.testing.assert_array_equal(p["a"], [[0, 1], [2, 3]])
    np.testing.assert_array_equal(p["b"], [4, 5, 6])
    c = p.copy()
    c["b"] = np.ones(3)
    assert p["b"][0] == 4


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_dense_gradients_any_shape(n_in, n_out, seed):
    rng = np.random.default_rng(seed)
    p = nn.ParameterStore()
    nn.init_dense(p, "d", n_in, n_out, rng)
    assert check(lambda p, x, t: nn.dense(p, "d", x, t), p, rng.normal(size=(2, n_in)), rng) < TOL

import numpy as np
import pytest

from lmr import autodiff as ad
from lmr.nn import AffineLayer, GruCell, affine_forward, gru_cell_step, gru_sequence, init_params


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_reference(p, x, h):
    z = sigmoid(p["Wz"] @ x + p["Uz"] @ h + p["bz"])
    r = sigmoid(p["Wr"] @ x + p["Ur"] @ h + p["br"])
    cand = np.tanh(p["Wh"] @ x + p["Uh"] @ (r * h) + p["bh"])
    return (1 - z) * h + z * cand


def make_cell(n_in=4, hidden=3, seed=0):
    store = ad.ParamStore()
    cell = GruCell(store, "c", n_in, hidden)
    init_params(seed, store)
    for _, t in store:  # nonzero biases too
        t.data = t.data + np.random.default_rng(seed + 1).normal(scale=0.1, size=t.shape)
    return store, cell


def params(cell):
    return {k: getattr(cell, k).data for k in ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh")}


def test_affine_zero_weights_gives_bias():
    store = ad.ParamStore()
    layer = AffineLayer(store, "fc", 3, 2)
    layer.bias.data = np.array([1.0, -2.0])
    np.testing.assert_array_equal(affine_forward(layer, np.array([5.0, 6.0, 7.0])).data, [1.0, -2.0])


def test_affine_identity():
    store = ad.ParamStore()
    layer = AffineLayer(store, "fc", 3, 3)
    layer.weight.data = np.eye(3)
    x = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(layer(x).data, x)


def test_affine_matches_loop():
    store = ad.ParamStore()
    layer = AffineLayer(store, "fc", 5, 4)
    init_params(3, store)
    layer.bias.data = np.arange(4.0)
    x = np.random.default_rng(0).normal(size=(2, 5))
    out = layer(x).data
    for b in range(2):
        for o in range(4):
            ref = layer.bias.data[o] + sum(layer.weight.data[o, i] * x[b, i] for i in range(5))
            assert abs(out[b, o] - ref) < 1e-12


def test_affine_shape_mismatch():
    store = ad.ParamStore()
    layer = AffineLayer(store, "fc", 3, 2)
    with pytest.raises(ad.ShapeError):
        layer(np.zeros(4))


def test_gru_zero_params():
    store = ad.ParamStore()
    cell = GruCell(store, "c", 2, 2)
    np.testing.assert_array_equal(gru_cell_step(cell, np.array([3.0, -1.0]), np.ones(2)).data, [0.5, 0.5])
    np.testing.assert_array_equal(gru_cell_step(cell, np.array([3.0, -1.0]), np.zeros(2)).data, [0.0, 0.0])


def test_gru_matches_reference():
    _, cell = make_cell()
    rng = np.random.default_rng(1)
    x, h = rng.normal(size=4), rng.normal(size=3)
    np.testing.assert_allclose(gru_cell_step(cell, x, h).data, gru_reference(params(cell), x, h), atol=1e-14)


def test_gru_gradients():
    store, cell = make_cell()
    rng = np.random.default_rng(2)
    x = ad.Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    h = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = rng.normal(size=(2, 3))
    err = ad.finite_diff_check(lambda: ad.sum_(gru_cell_step(cell, x, h) * w), [x, h] + store.tensors())
    assert err < 1e-5


def test_gru_shape_mismatch():
    _, cell = make_cell()
    with pytest.raises(ad.ShapeError):
        gru_cell_step(cell, np.zeros(5), np.zeros(3))


def test_sequence_single_step():
    _, cell = make_cell()
    x = np.random.default_rng(3).normal(size=(1, 4))
    h0 = np.random.default_rng(4).normal(size=3)
    states = gru_sequence(cell, x, h0)
    assert len(states) == 1
    np.testing.assert_array_equal(states[0].data, gru_cell_step(cell, x[0], h0).data)


def test_sequence_zero_params_halves():
    store = ad.ParamStore()
    cell = GruCell(store, "c", 2, 2)
    h0 = np.array([1.0, -3.0])
    states = gru_sequence(cell, np.random.default_rng(5).normal(size=(6, 2)), h0)
    for t, h in enumerate(states, start=1):
        np.testing.assert_array_equal(h.data, h0 * 2.0**-t)


def test_sequence_matches_unrolled():
    _, cell = make_cell()
    p = params(cell)
    xs = np.random.default_rng(6).normal(size=(5, 4))
    h = np.zeros(3)
    states = gru_sequence(cell, xs)
    for t in range(5):
        h = gru_reference(p, xs[t], h)
        np.testing.assert_allclose(states[t].data, h, atol=1e-14)


def test_sequence_rejects_empty():
    _, cell = make_cell()
    with pytest.raises(ValueError):
        gru_sequence(cell, np.zeros((0, 4)))


def test_sequence_touches_each_parameter_T_times():
    store, cell = make_cell()
    states = gru_sequence(cell, np.random.default_rng(7).normal(size=(5, 4)))
    store.zero_grad()
    ad.backward(ad.sum_(ad.stack(states)))
    assert all(t.n_grad_updates == 5 for _, t in store)


def test_hidden_state_stays_finite():
    _, cell = make_cell(n_in=8, hidden=16, seed=9)
    rng = np.random.default_rng(8)
    h = np.zeros(16)
    for _ in range(1000):
        h = gru_cell_step(cell, rng.normal(size=8), h).data
    assert np.all(np.isfinite(h)) and np.max(np.abs(h)) <= 1.0 + 1e-12


def test_init_params():
    def build(seed):
        store = ad.ParamStore()
        AffineLayer(store, "a", 128, 128)
        GruCell(store, "g", 7, 5)
        return init_params(seed, store)

    s1, s2 = build(11), build(11)
    for (n1, t1), (_, t2) in zip(s1, s2):
        assert np.array_equal(t1.data, t2.data)
        if t1.ndim == 1:
            assert not t1.data.any()
    w = s1["a.weight"].data
    a = 1 / np.sqrt(128)
    assert np.max(np.abs(w)) <= a
    assert abs(w.std() - a / np.sqrt(3)) < 0.1 * a / np.sqrt(3)

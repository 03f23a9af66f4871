import numpy as np
import pytest

from lmr import autodiff as ad
from lmr.network import LmrNetwork, lmr_forward, lmr_no_root_forward, single_rnn_forward
from lmr.nn import affine_forward, gru_sequence
from lmr.parts import merge, split


def small(variant="lmr", n_iter=2, seed=0, f=8, hidden=6):
    return LmrNetwork(f, variant=variant, pose_hidden=hidden, shape_hidden=5, camera_hidden=4, n_iter=n_iter, seed=seed)


def zero_out(net):
    for _, t in net.store:
        t.data = np.zeros(t.shape)
    return net


def feats(T=5, f=8, seed=1, batch=()):
    return np.random.default_rng(seed).normal(size=batch + (T, f))


@pytest.mark.parametrize("variant", ["lmr", "lmr_no_root", "single_rnn"])
def test_zero_parameters_stay_at_initialization(variant):
    net = zero_out(small(variant, n_iter=3))
    pred = net(feats())
    assert pred.n_iter == 3
    for v in range(3):
        assert not pred.pose[v].data.any()
        assert not pred.shape[v].data.any()
        np.testing.assert_array_equal(pred.camera[v].data, np.tile([1.0, 0.0, 0.0], (5, 1)))


def test_zero_parameter_variants_agree():
    outs = [zero_out(small(v)).forward(feats()).theta().data for v in ("lmr", "lmr_no_root", "single_rnn")]
    assert np.array_equal(outs[0], outs[1]) and np.array_equal(outs[0], outs[2])


def test_output_dimensions_default_size():
    net = LmrNetwork(64, n_iter=3)
    pred = net(feats(T=16, f=64))
    assert len(pred.pose) == 3
    for v in range(3):
        assert pred.theta(v).shape == (16, 85)


def test_head_sizes_match_scheme():
    net = small()
    assert [r.head.n_out for r in net.pose_rnns] == [12, 6, 15, 15, 12, 12]
    assert net.shape_out.n_out == 10 and net.camera_rnn.head.n_out == 3


def test_single_rnn_structure():
    single, lmr = small("single_rnn"), small("lmr")
    assert single.n_pose_rnns == 1 and lmr.n_pose_rnns == 6
    assert single.store.n_values() > 0
    assert single.pose_rnns[0].head.n_out == 72


def test_no_root_input_width():
    a, b = small("lmr"), small("lmr_no_root")
    for k in range(1, 6):
        assert b.part_input_width(k) == a.part_input_width(k) - 12


def test_variant_entry_points_check_variant():
    with pytest.raises(ValueError):
        lmr_forward(small("single_rnn"), feats())
    with pytest.raises(ValueError):
        single_rnn_forward(small("lmr"), feats())
    lmr_no_root_forward(small("lmr_no_root"), feats())


def test_rejects_bad_inputs():
    net = small()
    with pytest.raises(ad.ShapeError):
        net(feats(f=7))
    with pytest.raises(ValueError):
        net(np.zeros((0, 8)))
    with pytest.raises(ValueError):
        small("transformer")


def test_single_iteration_matches_manual_composition():
    net = small("lmr", n_iter=1, seed=3)
    phi = feats(seed=4)
    T = phi.shape[0]
    theta = np.zeros((T, 72))
    beta = np.zeros((T, 10))

    def run(rec, inputs):
        states = gru_sequence(rec.cell, inputs)
        return affine_forward(rec.head, ad.stack(states, axis=-2)).data

    parts = [p.data for p in split(theta, net.scheme)]
    root = parts[0] + run(net.pose_rnns[0], np.concatenate([phi, parts[0], beta], -1))
    refined = [root] + [
        part + run(rnn, np.concatenate([phi, part, beta, root], -1))
        for rnn, part in zip(net.pose_rnns[1:], parts[1:])
    ]
    pose = merge(refined, net.scheme).data
    hidden = np.tanh(affine_forward(net.shape_in, np.concatenate([phi, pose, beta], -1)).data)
    shape = affine_forward(net.shape_out, hidden).data
    cam = np.array([1.0, 0, 0]) + run(net.camera_rnn, np.concatenate([phi, pose, shape, np.tile([1.0, 0, 0], (T, 1))], -1))
    pred = net(phi)
    np.testing.assert_array_equal(pred.pose[0].data, pose)
    np.testing.assert_array_equal(pred.shape[0].data, shape)
    np.testing.assert_array_equal(pred.camera[0].data, cam)


@pytest.mark.parametrize("variant", ["lmr", "lmr_no_root", "single_rnn"])
def test_residual_identity(variant):
    pred = small(variant, n_iter=3, seed=5)(feats())
    for v in range(3):
        np.testing.assert_array_equal(pred.pose[v].data, pred.pose_input[v].data + pred.pose_residual[v].data)
        if v:
            assert pred.pose_input[v] is pred.pose[v - 1]


def test_root_dependence():
    phi = feats(seed=6)
    init = np.zeros((5, 72))
    bumped = init.copy()
    bumped[:, [0, 1, 2, 9, 10]] = 0.3  # pelvis and spine1 live in the root part
    for variant, should_change in (("lmr", True), ("lmr_no_root", False)):
        net = small(variant, n_iter=1, seed=7)
        a = split(net(phi, theta_init=init).pose[0], net.scheme)
        b = split(net(phi, theta_init=bumped).pose[0], net.scheme)
        for k in range(1, 6):
            changed = not np.array_equal(a[k].data, b[k].data)
            assert changed == should_change


def test_masking_equivalence():
    """lmr with the root slot zeroed equals lmr_no_root sharing its weights."""
    full, plain = small("lmr", n_iter=1, seed=8), small("lmr_no_root", n_iter=1, seed=9)
    f = 8
    for name, t in plain.store:
        src = full.store[name].data
        if name.split(".")[0] in ("head", "left_arm", "right_arm", "left_leg", "right_leg") and name.endswith(
            ("Wz", "Wr", "Wh")
        ):
            t.data = src[:, : t.shape[1]].copy()
            full.store[name].data = np.concatenate([t.data, np.zeros((t.shape[0], 12))], axis=1)
        else:
            t.data = src.copy()
    phi = feats(f=f, seed=10)
    np.testing.assert_allclose(full(phi).theta().data, plain(phi).theta().data, atol=1e-14)


def test_temporal_causality():
    net = small("lmr", n_iter=2, seed=11)
    phi = feats(T=6, seed=12)
    later = phi.copy()
    later[4:] += np.random.default_rng(13).normal(size=later[4:].shape)
    a, b = net(phi).theta().data, net(later).theta().data
    assert np.array_equal(a[:4], b[:4])
    assert not np.array_equal(a[4:], b[4:])


def test_batched_forward_matches_single():
    net = small("lmr", seed=14)
    phi = feats(batch=(3,), seed=15)
    batch = net(phi).theta().data
    np.testing.assert_allclose(batch[1], net(phi[1]).theta().data, atol=1e-13)


def test_determinism_and_config_round_trip():
    a, b = small("single_rnn", seed=16), small("single_rnn", seed=16)
    assert np.array_equal(a(feats()).theta().data, b(feats()).theta().data)
    c = LmrNetwork.from_config({**a.config(), "seed": 99})
    c.store.load_state_dict(a.store.state_dict())
    assert np.array_equal(a(feats()).theta().data, c(feats()).theta().data)


@pytest.mark.parametrize("variant", ["lmr_no_root", "single_rnn"])
def test_variant_gradients(variant):
    net = LmrNetwork(4, variant=variant, pose_hidden=2, shape_hidden=2, camera_hidden=2, n_iter=2, seed=17)
    phi = feats(T=2, f=4, seed=18)
    w = np.random.default_rng(19).normal(size=(2, 85))
    err = ad.finite_diff_check(lambda: ad.sum_(net.forward(phi).theta() * w), net.store.tensors(), eps=1e-6)
    assert err < 1e-6

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lmr import autodiff as ad
from lmr.body_model import build_synthetic_model
from lmr.losses import LossWeights, loss_2d, loss_3d, loss_smpl, loss_total, objective
from lmr.metrics import (
    MetricsReport, accel_error, mpjpe, pa_mpjpe, procrustes_align, pve, read_report_csv, write_report_csv,
)

rng = np.random.default_rng(0)


# ---------------------------------------------------------------- losses


def test_loss_smpl_values():
    assert loss_smpl(np.zeros((2, 85)), np.zeros((2, 85))).item() == 0.0
    pred = np.zeros((1, 85))
    pred[0, :3] = [3.0, 4.0, 0.0]
    assert loss_smpl(pred, np.zeros((1, 85))).item() == 5.0
    pred = np.zeros((1, 85))
    pred[0, 83] = 7.0  # camera only
    assert loss_smpl(pred, np.zeros((1, 85)), with_camera=False).item() == 0.0


def test_loss_smpl_loop_oracle():
    a, b = rng.normal(size=(4, 85)), rng.normal(size=(4, 85))
    ref = sum(math.sqrt(sum((a[t, j] - b[t, j]) ** 2 for j in range(85))) for t in range(4)) / 4
    assert abs(loss_smpl(a, b).item() - ref) < 1e-12


def test_joint_losses():
    gt = rng.normal(size=(3, 24, 3))
    assert loss_3d(gt + [1.0, -2.0, 0.5], gt).item() == pytest.approx(3.5, abs=1e-12)
    gt2 = rng.normal(size=(3, 24, 2))
    assert loss_2d(gt2 + [0.3, -0.4], gt2).item() == pytest.approx(0.7, abs=1e-12)
    a, b = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 3))
    ref = np.mean([[sum(abs(a[t, k, c] - b[t, k, c]) for c in range(3)) for k in range(5)] for t in range(2)])
    assert abs(loss_3d(a, b).item() - ref) < 1e-12
    with pytest.raises(ad.ShapeError):
        loss_3d(a, b[:, :4])


def test_loss_total():
    assert loss_total((2.0, 1.0, 0.5), LossWeights()).item() == 9.5
    assert loss_total((2.0, 1.0, 0.5), LossWeights(1, 0, 0)).item() == 2.0
    assert loss_total((0.0, 0.0, 0.0), LossWeights()).item() == 0.0
    assert loss_total((2.0, None, None), LossWeights()).item() == 2.0
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def test_objective_zero_at_ground_truth_and_masking():
    body = build_synthetic_model(0, 120)
    from lmr.synth import derive_ground_truth

    theta = rng.uniform(-0.3, 0.3, size=(3, 85))
    theta[:, 82] = 1.0
    j3d, j2d, _ = derive_ground_truth(body, theta)
    total, parts = objective(body, theta, LossWeights(), theta, j3d, j2d)
    assert total.item() == 0.0 and all(p.item() == 0.0 for p in parts)
    _, parts = objective(body, theta + 0.01, LossWeights(), theta, None, j2d)
    assert parts[1] is None and parts[0].item() > 0 and parts[2].item() > 0


def test_objective_gradients():
    body = build_synthetic_model(1, 60)
    from lmr.synth import derive_ground_truth

    gt = rng.uniform(-0.4, 0.4, size=(2, 85))
    gt[:, 82] += 1.0
    j3d, j2d, _ = derive_ground_truth(body, gt)
    pred = ad.Tensor(gt + rng.normal(scale=0.1, size=gt.shape), requires_grad=True)
    err = ad.finite_diff_check(lambda: objective(body, pred, LossWeights(), gt, j3d, j2d)[0], [pred])
    assert err < 1e-4


# ---------------------------------------------------------------- metrics


def test_mpjpe_cases():
    x = rng.normal(size=(4, 24, 3))
    assert mpjpe(x, x) == 0.0
    assert mpjpe(x + [0.003, 0.004, 0.0], x) == pytest.approx(5.0, abs=1e-9)
    a, b = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
    ref = np.mean([[math.dist(a[t, k], b[t, k]) for k in range(3)] for t in range(2)]) * 1000
    assert abs(mpjpe(a, b) - ref) < 1e-9
    with pytest.raises(ValueError):
        mpjpe(a, b[:, :2])


def test_three_four_five_exact():
    gt = np.zeros((2, 24, 3))
    assert mpjpe(gt + [0.003, 0.004, 0.0], gt) == 5.0


def similarity(x, seed):
    r = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    return r.uniform(0.5, 2.0) * x @ R.T + r.normal(size=3)


def test_procrustes_recovers_similarity():
    gt = rng.normal(size=(24, 3))
    aligned, degenerate = procrustes_align(similarity(gt, 1), gt)
    assert not degenerate
    np.testing.assert_allclose(aligned, gt, atol=1e-10)
    aligned, _ = procrustes_align(2.0 * gt, gt)
    np.testing.assert_allclose(aligned, gt, atol=1e-12)


def test_procrustes_excludes_reflection():
    gt = rng.normal(size=(10, 3))
    mirrored = gt * [-1.0, 1.0, 1.0]
    aligned, _ = procrustes_align(mirrored, gt)
    p0 = mirrored - mirrored.mean(0)
    a0 = aligned - aligned.mean(0)
    # aligned = s R p0 + t with det R = +1: recover R and check orientation
    M, *_ = np.linalg.lstsq(p0, a0, rcond=None)
    assert np.linalg.det(M) > 0


def test_procrustes_degenerate_fallback():
    gt = rng.normal(size=(5, 3))
    pred = np.tile([1.0, 2.0, 3.0], (5, 1))
    aligned, degenerate = procrustes_align(pred, gt)
    assert degenerate
    np.testing.assert_allclose(aligned.mean(0), gt.mean(0), atol=1e-12)


def test_procrustes_beats_random_search():
    r = np.random.default_rng(5)
    for trial in range(3):
        pred, gt = r.normal(size=(8, 3)), r.normal(size=(8, 3))
        best = np.sum((procrustes_align(pred, gt)[0] - gt) ** 2)
        Rs = Rotation.random(10_000, random_state=trial).as_matrix()
        s = r.uniform(0.1, 2.0, size=10_000)
        moved = s[:, None, None] * np.einsum("nij,kj->nki", Rs, pred - pred.mean(0)) + gt.mean(0)
        assert best <= np.min(np.sum((moved - gt) ** 2, axis=(1, 2))) + 1e-12


def test_pa_mpjpe_properties():
    for _ in range(200):
        pred, gt = rng.normal(size=(2, 24, 3)), rng.normal(size=(2, 24, 3))
        assert pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-12
    gt = rng.normal(size=(3, 24, 3))
    moved = np.stack([similarity(g, i) for i, g in enumerate(gt)])
    assert pa_mpjpe(moved, gt) < 1e-9
    pred = rng.normal(size=(3, 24, 3))
    ref = mpjpe(np.stack([procrustes_align(p, g)[0] for p, g in zip(pred, gt)]), gt)
    assert pa_mpjpe(pred, gt) == ref


def test_pve():
    v = rng.normal(size=(2, 50, 3))
    assert pve(v, v) == 0.0
    assert pve(v + [0.0, 0.0, 0.005], v) == pytest.approx(5.0, abs=1e-9)
    a = rng.normal(size=(7, 3))
    ref = np.mean([math.dist(a[i], v[0, i]) for i in range(7)]) * 1000
    assert abs(pve(a, v[0, :7]) - ref) < 1e-9


def test_accel_error():
    gt = rng.normal(size=(6, 24, 3))
    t = np.arange(6.0)[:, None, None]
    assert accel_error(gt + 0.3, gt) < 1e-9
    assert accel_error(gt + t * rng.normal(size=(1, 24, 3)), gt) < 1e-9
    assert accel_error(t * np.ones((6, 2, 3)), 2 * t * np.ones((6, 2, 3))) == 0.0
    pred = rng.normal(size=(6, 4, 3))
    ref = []
    for f in range(1, 5):
        for k in range(4):
            ap = pred[f + 1, k] - 2 * pred[f, k] + pred[f - 1, k]
            ag = gt[f + 1, k] - 2 * gt[f, k] + gt[f - 1, k]
            ref.append(math.dist(ap, ag))
    assert abs(accel_error(pred, gt[:, :4], fps=25.0) - np.mean(ref) * 625 * 1000) < 1e-6
    with pytest.raises(ValueError):
        accel_error(gt[:2], gt[:2])


def test_report_csv_round_trip(tmp_path):
    rep = MetricsReport(1.5, 1.0, 2.25, 10.0)
    path = tmp_path / "r.csv"
    text = write_report_csv([("lmr", "synthetic", rep)], path)
    assert text.splitlines()[0] == "variant,dataset,mpjpe,pa_mpjpe,pve,accel"
    rows = read_report_csv(path)
    assert rows == [{"variant": "lmr", "dataset": "synthetic", "mpjpe": "1.500000", "pa_mpjpe": "1.000000",
                     "pve": "2.250000", "accel": "10.000000"}]

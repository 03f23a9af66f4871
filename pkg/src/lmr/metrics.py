"""Evaluation metrics in millimeters; inputs are numpy arrays in meters."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

METRIC_COLUMNS = ("mpjpe", "pa_mpjpe", "pve", "accel")


def _pair(pred, gt, name):
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"{name}: prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def mpjpe(pred, gt):
    pred, gt = _pair(pred, gt, "mpjpe")
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * 1000.0)


def procrustes_align(pred, gt):
    """Similarity-align ``pred`` (K, 3) onto ``gt``.

    Returns ``(aligned, degenerate)``. The transform is the Umeyama
    least-squares solution without reflections. When the cross-covariance is
    rank deficient only the translation is fitted and ``degenerate`` is True.
    The closed form minimizes squared error while the reported metric is the
    mean distance, so the untouched input is kept in the rare case it is closer.
    """
    pred, gt = _pair(pred, gt, "procrustes_align")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    p0, g0 = pred - mu_p, gt - mu_g
    var_p = np.sum(p0 * p0)
    cov = g0.T @ p0
    U, S, Vt = np.linalg.svd(cov)
    scale_ref = max(S[0], np.sqrt(var_p * np.sum(g0 * g0)), 1e-300)
    degenerate = var_p <= 1e-24 or np.sum(g0 * g0) <= 1e-24 or S[1] <= 1e-12 * scale_ref
    if degenerate:
        aligned = p0 + mu_g
    else:
        d = np.ones(3)
        if np.linalg.det(U) * np.linalg.det(Vt) < 0:
            d[-1] = -1.0
        R = (U * d) @ Vt
        aligned = np.sum(S * d) / var_p * p0 @ R.T + mu_g

    def dist(x):
        return np.mean(np.linalg.norm(x - gt, axis=-1))

    if dist(aligned) > dist(pred):
        return pred.copy(), degenerate
    return aligned, degenerate


def pa_mpjpe(pred, gt):
    pred, gt = _pair(pred, gt, "pa_mpjpe")
    flat_p = pred.reshape(-1, *pred.shape[-2:])
    flat_g = gt.reshape(-1, *gt.shape[-2:])
    aligned = np.stack([procrustes_align(p, g)[0] for p, g in zip(flat_p, flat_g)])
    return mpjpe(aligned, flat_g)


def pve(pred, gt):
    pred, gt = _pair(pred, gt, "pve")
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * 1000.0)


def accel_error(pred, gt, fps=30.0):
    """Mean norm of the second-difference acceleration error, mm/s^2.

    Sequences are (T, K, 3) with time on the first axis.
    """
    pred, gt = _pair(pred, gt, "accel_error")
    if pred.shape[0] < 3:
        raise ValueError(f"accel_error needs at least 3 frames, got {pred.shape[0]}")
    acc_p = pred[2:] - 2.0 * pred[1:-1] + pred[:-2]
    acc_g = gt[2:] - 2.0 * gt[1:-1] + gt[:-2]
    return float(np.mean(np.linalg.norm(acc_g - acc_p, axis=-1)) * fps * fps * 1000.0)


@dataclass
class MetricsReport:
    mpjpe: float
    pa_mpjpe: float
    pve: float
    accel: float
    per_sequence: list = field(default_factory=list)

    def as_row(self):
        return {k: getattr(self, k) for k in METRIC_COLUMNS}


def sequence_metrics(pred_joints, gt_joints, pred_verts, gt_verts, fps):
    return {
        "mpjpe": mpjpe(pred_joints, gt_joints),
        "pa_mpjpe": pa_mpjpe(pred_joints, gt_joints),
        "pve": pve(pred_verts, gt_verts),
        "accel": accel_error(pred_joints, gt_joints, fps),
    }


def aggregate(per_sequence):
    """Average per-sequence metric dicts (equal-length sequences)."""
    means = {k: float(np.mean([m[k] for m in per_sequence])) for k in METRIC_COLUMNS}
    return MetricsReport(per_sequence=list(per_sequence), **means)


def write_report_csv(rows, path=None):
    """Rows are (variant, dataset, MetricsReport). Returns the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("variant", "dataset") + METRIC_COLUMNS)
    for variant, dataset, report in rows:
        writer.writerow([variant, dataset] + [f"{getattr(report, k):.6f}" for k in METRIC_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_report_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

"""Training objectives on per-frame parameter vectors and joints."""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .body_model import N_BETAS, N_POSE, joints_only, project


@dataclass(frozen=True)
class LossWeights:
    smpl: float = 1.0
    joints3d: float = 5.0
    joints2d: float = 5.0

    def __post_init__(self):
        for name in ("smpl", "joints3d", "joints2d"):
            w = getattr(self, name)
            if not (w >= 0 and w < float("inf")):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {w}")


def _check(pred, gt, name):
    if pred.shape != gt.shape:
        raise ad.ShapeError(f"{name}: prediction {pred.shape} and ground truth {gt.shape} differ")


def loss_smpl(pred, gt, with_camera=True):
    """Mean over frames of the Euclidean norm of the parameter difference.

    Without camera ground truth only the 82 pose and shape values count.
    """
    pred, gt = ad.as_tensor(pred), ad.as_tensor(gt)
    _check(pred, gt, "loss_smpl")
    diff = pred - gt
    if not with_camera:
        diff = diff[..., : N_POSE + N_BETAS]
    return ad.mean(ad.sqrt(ad.sum_(ad.square(diff), axis=-1)))


def _joint_l1(pred, gt, name):
    pred, gt = ad.as_tensor(pred), ad.as_tensor(gt)
    _check(pred, gt, name)
    return ad.mean(ad.sum_(ad.abs_(pred - gt), axis=-1))


def loss_3d(pred, gt):
    """Mean per-joint L1 norm of 3D joint differences, (..., K, 3)."""
    return _joint_l1(pred, gt, "loss_3d")


def loss_2d(pred, gt):
    """Mean per-joint L1 norm of 2D joint differences, (..., K, 2)."""
    return _joint_l1(pred, gt, "loss_2d")


def loss_total(components, weights):
    """Weighted sum of (smpl, 3d, 2d) components; ``None`` entries are masked."""
    total = ad.Tensor(0.0)
    for value, w in zip(components, (weights.smpl, weights.joints3d, weights.joints2d)):
        if value is not None and w != 0:
            total = total + ad.as_tensor(value) * w
    return total


def objective(body, theta_pred, weights, gt_theta=None, gt_joints3d=None, gt_joints2d=None, with_camera=True):
    """Full objective for predicted (..., 85) vectors; returns (total, parts)."""
    theta_pred = ad.as_tensor(theta_pred)
    pose = theta_pred[..., :N_POSE]
    betas = theta_pred[..., N_POSE : N_POSE + N_BETAS]
    l_smpl = l_3d = l_2d = None
    if gt_theta is not None and weights.smpl:
        l_smpl = loss_smpl(theta_pred, gt_theta, with_camera=with_camera)
    if (gt_joints3d is not None and weights.joints3d) or (gt_joints2d is not None and weights.joints2d):
        joints = joints_only(body, betas, pose)
        if gt_joints3d is not None and weights.joints3d:
            l_3d = loss_3d(joints, gt_joints3d)
        if gt_joints2d is not None and weights.joints2d:
            x2d = project(joints, theta_pred[..., N_POSE + N_BETAS], theta_pred[..., N_POSE + N_BETAS + 1 :])
            l_2d = loss_2d(x2d, gt_joints2d)
    return loss_total((l_smpl, l_3d, l_2d), weights), (l_smpl, l_3d, l_2d)

"""LMR recurrent regressor and its two ablation variants.

Each forward pass runs ``n_iter`` refinement rounds. In a round the root part
RNN predicts a residual for the root pose, the five remaining part RNNs
predict residuals for their own parts (conditioned on the refined root pose
unless the variant is ``lmr_no_root``), a fully-connected module predicts the
shape and a camera RNN predicts the weak-perspective camera. The next round
starts from the refined pose and shape; hidden states start from zero in
every round.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .body_model import N_BETAS, N_POSE
from .nn import AffineLayer, GruCell, affine_forward, gru_sequence, init_params
from .parts import PartScheme, default_scheme, merge, split

VARIANTS = ("lmr", "lmr_no_root", "single_rnn")
N_CAM = 3
N_THETA = N_POSE + N_BETAS + N_CAM  # 85


@dataclass
class FramePrediction:
    """Per-iteration outputs, each entry shaped (..., T, dim)."""

    pose: list = field(default_factory=list)
    shape: list = field(default_factory=list)
    camera: list = field(default_factory=list)
    pose_input: list = field(default_factory=list)
    pose_residual: list = field(default_factory=list)

    @property
    def n_iter(self):
        return len(self.pose)

    def theta(self, v=-1):
        """Concatenated (..., T, 85) parameter vectors of iteration ``v``."""
        return ad.concat([self.pose[v], self.shape[v], self.camera[v]], axis=-1)


class _Recurrent:
    """GRU followed by a one-layer residual head."""

    def __init__(self, store, prefix, n_in, hidden, n_out):
        self.cell = GruCell(store, f"{prefix}.gru", n_in, hidden)
        self.head = AffineLayer(store, f"{prefix}.head", hidden, n_out)

    def __call__(self, inputs):
        states = gru_sequence(self.cell, inputs)
        return affine_forward(self.head, ad.stack(states, axis=-2))


class LmrNetwork:
    def __init__(
        self,
        n_features,
        variant="lmr",
        pose_hidden=128,
        shape_hidden=128,
        camera_hidden=64,
        n_iter=3,
        scheme=None,
        theta_mean=None,
        beta_mean=None,
        cam_init=(1.0, 0.0, 0.0),
        seed=0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        self.n_features = int(n_features)
        self.variant = variant
        self.n_iter = int(n_iter)
        self.scheme = scheme or default_scheme()
        self.theta_mean = np.zeros(N_POSE) if theta_mean is None else np.asarray(theta_mean, dtype=np.float64)
        self.beta_mean = np.zeros(N_BETAS) if beta_mean is None else np.asarray(beta_mean, dtype=np.float64)
        self.cam_init = np.asarray(cam_init, dtype=np.float64)
        self.store = ad.ParamStore()

        f = self.n_features
        dims = self.scheme.pose_dims
        if variant == "single_rnn":
            self.pose_rnns = [_Recurrent(self.store, "pose", f + N_POSE + N_BETAS, pose_hidden, N_POSE)]
        else:
            root_dim = dims[0]
            self.pose_rnns = [_Recurrent(self.store, "root", f + root_dim + N_BETAS, pose_hidden, root_dim)]
            extra = root_dim if variant == "lmr" else 0
            for name, dim in zip(self.scheme.names[1:], dims[1:]):
                self.pose_rnns.append(_Recurrent(self.store, name, f + dim + N_BETAS + extra, pose_hidden, dim))
        self.shape_in = AffineLayer(self.store, "shape.fc1", f + N_POSE + N_BETAS, shape_hidden)
        self.shape_out = AffineLayer(self.store, "shape.fc2", shape_hidden, N_BETAS)
        self.camera_rnn = _Recurrent(self.store, "camera", f + N_POSE + N_BETAS + N_CAM, camera_hidden, N_CAM)
        init_params(seed, self.store)

    @property
    def n_pose_rnns(self):
        return len(self.pose_rnns)

    def part_input_width(self, k):
        return self.pose_rnns[k].cell.n_in

    def forward(self, features, theta_init=None, beta_init=None):
        """Run all refinement rounds on features shaped (..., T, F)."""
        features = ad.as_tensor(features)
        if features.ndim < 2 or features.shape[-1] != self.n_features:
            raise ad.ShapeError(f"expected features (..., T, {self.n_features}), got {features.shape}")
        if features.shape[-2] < 1:
            raise ValueError("need at least one frame")
        lead = features.shape[:-1]
        theta = ad.as_tensor(np.broadcast_to(self.theta_mean, lead + (N_POSE,)) if theta_init is None else theta_init)
        beta = ad.as_tensor(np.broadcast_to(self.beta_mean, lead + (N_BETAS,)) if beta_init is None else beta_init)
        beta_mean = np.broadcast_to(self.beta_mean, lead + (N_BETAS,))
        cam_init = np.broadcast_to(self.cam_init, lead + (N_CAM,))

        out = FramePrediction()
        for _ in range(self.n_iter):
            new_theta, delta = self._pose_round(features, theta, beta)
            shape_feat = ad.concat([features, new_theta, beta_mean], axis=-1)
            hidden = ad.tanh(affine_forward(self.shape_in, shape_feat))
            new_beta = affine_forward(self.shape_out, hidden) + beta_mean
            cam_feat = ad.concat([features, new_theta, new_beta, cam_init], axis=-1)
            cam = self.camera_rnn(cam_feat) + cam_init
            out.pose_input.append(theta)
            out.pose_residual.append(delta)
            out.pose.append(new_theta)
            out.shape.append(new_beta)
            out.camera.append(cam)
            theta, beta = new_theta, new_beta
        return out

    __call__ = forward

    def _pose_round(self, features, theta, beta):
        if self.variant == "single_rnn":
            delta = self.pose_rnns[0](ad.concat([features, theta, beta], axis=-1))
            return theta + delta, delta
        parts = split(theta, self.scheme)
        deltas = [self.pose_rnns[0](ad.concat([features, parts[0], beta], axis=-1))]
        root = parts[0] + deltas[0]
        refined = [root]
        for rnn, part in zip(self.pose_rnns[1:], parts[1:]):
            inputs = [features, part, beta, root] if self.variant == "lmr" else [features, part, beta]
            deltas.append(rnn(ad.concat(inputs, axis=-1)))
            refined.append(part + deltas[-1])
        return merge(refined, self.scheme), merge(deltas, self.scheme)

    def config(self):
        return {
            "n_features": self.n_features,
            "variant": self.variant,
            "pose_hidden": self.pose_rnns[0].cell.hidden,
            "shape_hidden": self.shape_in.n_out,
            "camera_hidden": self.camera_rnn.cell.hidden,
            "n_iter": self.n_iter,
            "scheme": self.scheme.to_dict(),
            "theta_mean": self.theta_mean.tolist(),
            "beta_mean": self.beta_mean.tolist(),
            "cam_init": self.cam_init.tolist(),
        }

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        cfg["scheme"] = PartScheme.from_dict(cfg["scheme"])
        return cls(**cfg)


def lmr_forward(net, features, **kw):
    if net.variant != "lmr":
        raise ValueError(f"network variant is {net.variant!r}, not 'lmr'")
    return net.forward(features, **kw)


def lmr_no_root_forward(net, features, **kw):
    if net.variant != "lmr_no_root":
        raise ValueError(f"network variant is {net.variant!r}, not 'lmr_no_root'")
    return net.forward(features, **kw)


def single_rnn_forward(net, features, **kw):
    if net.variant != "single_rnn":
        raise ValueError(f"network variant is {net.variant!r}, not 'single_rnn'")
    return net.forward(features, **kw)

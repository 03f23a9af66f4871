"""scikit-learn style wrapper around the recurrent regressor and its trainer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .body_model import build_synthetic_model
from .losses import LossWeights
from .metrics import mpjpe
from .network import N_THETA
from .synth import SequenceBatch, derive_ground_truth
from .training import NetworkPredictor, TrainConfig, build_network, evaluate, theta_to_mesh, train


def _check_sequences(X, name="X"):
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, input_name=name)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must be (n_sequences, n_frames, n_dims), got shape {X.shape}")
    return X


class LMRRegressor(RegressorMixin, BaseEstimator):
    """Regress per-frame body parameters (72 pose, 10 shape, 3 camera) from feature sequences.

    ``X`` is ``(n_sequences, n_frames, n_features)``; ``y`` holds the matching
    ``(n_sequences, n_frames, 85)`` ground truth. Joint supervision is derived
    from ``y`` through ``body_model`` (a default synthetic model if None).
    ``score`` returns the negated MPJPE in millimetres, so larger is better.
    """

    def __init__(
        self, variant="lmr", n_iter=3, pose_hidden=128, shape_hidden=128, camera_hidden=64, epochs=60,
        batch_size=8, learning_rate=1e-3, loss_weights=(1.0, 5.0, 5.0), init_seed=0, shuffle_seed=0,
        clip_norm=5.0, supervise_all_iterations=False, fps=30.0, body_model=None,
    ):
        self.variant = variant
        self.n_iter = n_iter
        self.pose_hidden = pose_hidden
        self.shape_hidden = shape_hidden
        self.camera_hidden = camera_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.loss_weights = loss_weights
        self.init_seed = init_seed
        self.shuffle_seed = shuffle_seed
        self.clip_norm = clip_norm
        self.supervise_all_iterations = supervise_all_iterations
        self.fps = fps
        self.body_model = body_model

    def _train_config(self):
        return TrainConfig(
            variant=self.variant, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, weights=LossWeights(*self.loss_weights),
            init_seed=self.init_seed, shuffle_seed=self.shuffle_seed, n_iter=self.n_iter,
            pose_hidden=self.pose_hidden, shape_hidden=self.shape_hidden, camera_hidden=self.camera_hidden,
            clip_norm=self.clip_norm, supervise_all_iterations=self.supervise_all_iterations, fps=self.fps,
            eval_every=0,
        )

    def _sequences(self, X, y):
        out = []
        for i, (feats, theta) in enumerate(zip(X, y)):
            joints, joints2d, _ = derive_ground_truth(self.body_model_, theta)
            out.append(SequenceBatch(feats, theta, joints, joints2d, seed=i))
        return out

    def fit(self, X, y):
        X = _check_sequences(X)
        y = _check_sequences(y, "y")
        if y.shape[:2] != X.shape[:2] or y.shape[2] != N_THETA:
            raise ValueError(f"y must have shape {X.shape[:2] + (N_THETA,)}, got {y.shape}")
        cfg = self._train_config()
        cfg.validate()
        self.body_model_ = self.body_model if self.body_model is not None else build_synthetic_model()
        self.n_features_in_ = X.shape[2]
        self.network_ = build_network(cfg, self.n_features_in_)
        self.train_state_ = train(self.network_, self.body_model_, self._sequences(X, y), cfg)
        self.loss_curve_ = [r["loss"] for r in self.train_state_.history]
        return self

    def _features(self, X):
        check_is_fitted(self, "network_")
        single = np.ndim(X) == 2
        X = _check_sequences(X)
        if X.shape[2] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[2]} features, but the regressor was fitted with {self.n_features_in_}")
        return X, single

    def predict(self, X):
        """Final-iteration parameters, ``(n_sequences, n_frames, 85)``."""
        X, single = self._features(X)
        out = NetworkPredictor(self.network_).predict(X)
        return out[0] if single else out

    def predict_iterations(self, X):
        """Parameters after every refinement iteration, ``(n_iter, n_sequences, n_frames, 85)``."""
        X, single = self._features(X)
        pred = self.network_.forward(X)
        out = np.stack([pred.theta(v).data for v in range(pred.n_iter)])
        return out[:, 0] if single else out

    def predict_joints(self, X):
        joints, _ = theta_to_mesh(self.body_model_, self.predict(X))
        return joints

    def score(self, X, y, sample_weight=None):
        if sample_weight is not None:
            raise ValueError("sample_weight is not supported")
        pred = self.predict(X)
        y = _check_sequences(y, "y").reshape(pred.shape)
        pj, _ = theta_to_mesh(self.body_model_, pred)
        gj, _ = theta_to_mesh(self.body_model_, y)
        return -mpjpe(pj, gj)

    def evaluate(self, X, y):
        """Full :class:`~lmr.metrics.MetricsReport` on the given sequences."""
        X, _ = self._features(X)
        seqs = self._sequences(X, _check_sequences(y, "y"))
        return evaluate(NetworkPredictor(self.network_), self.body_model_, seqs, self.fps)

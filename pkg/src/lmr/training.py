"""Adam, the training loop, checkpoints, evaluation and the ablation harness."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import bundle
from .body_model import N_BETAS, N_POSE, mesh
from .losses import LossWeights, objective
from .metrics import aggregate, sequence_metrics, write_report_csv
from .network import VARIANTS, LmrNetwork
from .synth import stack_sequences

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lmr-ckpt-v1"


class NumericError(FloatingPointError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    variant: str = "lmr"
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    init_seed: int = 0
    shuffle_seed: int = 0
    n_iter: int = 3
    pose_hidden: int = 128
    shape_hidden: int = 128
    camera_hidden: int = 64
    clip_norm: float = 5.0
    supervise_all_iterations: bool = False
    camera_supervision: bool = True
    fps: float = 30.0
    eval_every: int = 1

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"training.variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("epochs", "eval_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"training.{name} must be >= 0")
        for name in ("batch_size", "n_iter", "pose_hidden", "shape_hidden", "camera_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"training.{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("training.learning_rate must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "weights" in doc and not isinstance(doc["weights"], LossWeights):
            doc["weights"] = LossWeights(**doc["weights"])
        return cls(**doc)


def build_network(cfg, n_features):
    return LmrNetwork(
        n_features, variant=cfg.variant, pose_hidden=cfg.pose_hidden, shape_hidden=cfg.shape_hidden,
        camera_hidden=cfg.camera_hidden, n_iter=cfg.n_iter, seed=cfg.init_seed,
    )


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, store):
        return cls({n: np.zeros(t.shape) for n, t in store}, {n: np.zeros(t.shape) for n, t in store}, 0)


def adam_step(store, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every parameter in ``store``."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, t in store:
        g = grads[name]
        if g.shape != t.shape:
            raise ad.ShapeError(f"adam: gradient for {name} has shape {g.shape}, parameter {t.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place to a global norm of at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    clipped = max_norm is not None and total > max_norm
    if clipped:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total, clipped


# ---------------------------------------------------------------- training


@dataclass
class TrainState:
    adam: AdamState
    epoch: int = 0
    history: list = field(default_factory=list)  # per-step records
    val_history: list = field(default_factory=list)  # per-epoch metrics


def batch_loss(net, body, batch, cfg):
    feats, theta, j3d, j2d = batch
    pred = net.forward(feats)
    iters = range(pred.n_iter) if cfg.supervise_all_iterations else [pred.n_iter - 1]
    total, parts = None, None
    for v in iters:
        loss, comps = objective(
            body, pred.theta(v), cfg.weights, theta, j3d, j2d, with_camera=cfg.camera_supervision
        )
        total = loss if total is None else total + loss
        parts = comps
    return total, parts


def train(net, body, train_seqs, cfg, val_seqs=None, state=None, step_log=None):
    """Train ``net`` in place until ``cfg.epochs`` total epochs are done.

    A ``state`` from a checkpoint resumes exactly where it stopped: batch
    order depends only on ``(shuffle_seed, epoch)``.
    """
    cfg.validate()
    if state is None:
        state = TrainState(AdamState.zeros(net.store))
    if not train_seqs:
        raise ValueError("training set is empty")
    arrays = stack_sequences(train_seqs)
    n = arrays[0].shape[0]
    for epoch in range(state.epoch, cfg.epochs):
        order = np.random.default_rng([cfg.shuffle_seed, epoch]).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = tuple(a[idx] for a in arrays)
            net.store.zero_grad()
            loss, parts = batch_loss(net, body, batch, cfg)
            value = loss.item()
            step = state.adam.step
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at step {step}")
            ad.backward(loss)
            grads = net.store.grads()
            norm, clipped = clip_grad_norm(grads, cfg.clip_norm)
            if clipped:
                log.debug("step %d: gradient norm %.3g clipped to %g", step, norm, cfg.clip_norm)
            adam_step(net.store, grads, state.adam, cfg.learning_rate)
            record = {
                "step": step, "epoch": epoch, "loss": value,
                "smpl": None if parts[0] is None else parts[0].item(),
                "joints3d": None if parts[1] is None else parts[1].item(),
                "joints2d": None if parts[2] is None else parts[2].item(),
                "lr": cfg.learning_rate, "grad_norm": norm, "clipped": clipped,
            }
            state.history.append(record)
            if step_log is not None:
                step_log.write(json.dumps(record, sort_keys=True) + "\n")
        state.epoch = epoch + 1
        if val_seqs and cfg.eval_every and state.epoch % cfg.eval_every == 0:
            report = evaluate(NetworkPredictor(net), body, val_seqs, cfg.fps)
            state.val_history.append({"epoch": state.epoch, **report.as_row()})
            log.info("epoch %d val mpjpe %.2f mm", state.epoch, report.mpjpe)
    return state


# ---------------------------------------------------------------- prediction / evaluation


class NetworkPredictor:
    def __init__(self, net):
        self.net = net

    def predict(self, features, sequences=None):
        return self.net.forward(features).theta().data


class GroundTruthPredictor:
    """Returns the ground truth of the sequences it is asked about."""

    def predict(self, features, sequences=None):
        return np.stack([s.gt_theta for s in sequences])


def theta_to_mesh(body, theta):
    """Posed joints and vertices for (..., 85) parameter vectors (no graph)."""
    theta = np.asarray(theta)
    result = mesh(body, theta[..., N_POSE : N_POSE + N_BETAS], theta[..., :N_POSE])
    return result.joints3d.data, result.vertices.data


def evaluate(predictor, body, seqs, fps=30.0, batch_size=32):
    """MPJPE, PA-MPJPE, PVE and acceleration error over sequences."""
    per_seq = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start : start + batch_size]
        feats = np.stack([s.features for s in chunk])
        pred = predictor.predict(feats, chunk)
        if pred.shape != (len(chunk), feats.shape[1], N_POSE + N_BETAS + 3):
            raise ValueError(f"predictor returned shape {pred.shape} for features {feats.shape}")
        pj, pv = theta_to_mesh(body, pred)
        gj, gv = theta_to_mesh(body, np.stack([s.gt_theta for s in chunk]))
        for i in range(len(chunk)):
            per_seq.append(sequence_metrics(pj[i], gj[i], pv[i], gv[i], fps))
    return aggregate(per_seq)


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    net_config: dict
    params: dict
    state: TrainState
    config: dict = field(default_factory=dict)  # resolved experiment config

    @classmethod
    def from_training(cls, net, state, config=None):
        return cls(net.config(), net.store.state_dict(), state, config or {})

    def network(self):
        if self.net_config.get("variant") == "oracle":
            raise CheckpointError("an oracle checkpoint has no network")
        net = LmrNetwork.from_config(self.net_config)
        net.store.load_state_dict(self.params)
        return net

    def predictor(self):
        if self.net_config.get("variant") == "oracle":
            return GroundTruthPredictor()
        return NetworkPredictor(self.network())


def oracle_checkpoint(n_features, config=None):
    """Test fixture: a checkpoint whose predictor passes ground truth through."""
    return Checkpoint({"variant": "oracle", "n_features": n_features}, {}, TrainState(AdamState({}, {})), config or {})


def save_checkpoint(ckpt, path):
    arrays = {}
    for name, value in ckpt.params.items():
        arrays[f"param/{name}"] = value
    for name in ckpt.params:
        arrays[f"adam_m/{name}"] = ckpt.state.adam.m[name]
        arrays[f"adam_v/{name}"] = ckpt.state.adam.v[name]
    meta = {
        "format": CHECKPOINT_FORMAT,
        "net_config": ckpt.net_config,
        "config": ckpt.config,
        "epoch": ckpt.state.epoch,
        "adam_step": ckpt.state.adam.step,
        "history": ckpt.state.history,
        "val_history": ckpt.state.val_history,
    }
    bundle.write(path, meta, arrays)


def load_checkpoint(path):
    try:
        meta, arrays = bundle.read(path)
    except bundle.BundleError as exc:
        raise CheckpointError(str(exc)) from None
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: expected format {CHECKPOINT_FORMAT!r}, found {meta.get('format')!r}")
    params, m, v = {}, {}, {}
    for key, arr in arrays.items():
        kind, name = key.split("/", 1)
        {"param": params, "adam_m": m, "adam_v": v}[kind][name] = arr
    state = TrainState(AdamState(m, v, meta["adam_step"]), meta["epoch"], meta["history"], meta["val_history"])
    return Checkpoint(meta["net_config"], params, state, meta["config"])


# ---------------------------------------------------------------- ablation

ABLATION_ORDER = ("single_rnn", "lmr_no_root", "lmr")


def ablation_run(cfg, body, train_seqs, val_seqs, dataset_name="synthetic", variants=ABLATION_ORDER):
    """Train every variant with identical data, seeds and budget.

    Returns ``(csv_text, {variant: Checkpoint}, {variant: MetricsReport})``.
    """
    checkpoints, reports = {}, {}
    n_features = train_seqs[0].features.shape[1]
    for variant in variants:
        vcfg = TrainConfig.from_dict({**cfg.to_dict(), "variant": variant})
        net = build_network(vcfg, n_features)
        log.info("training %s (%d parameters)", variant, net.store.n_values())
        state = train(net, body, train_seqs, vcfg, val_seqs=None)
        checkpoints[variant] = Checkpoint.from_training(net, state, {"training": vcfg.to_dict()})
        reports[variant] = evaluate(NetworkPredictor(net), body, val_seqs, vcfg.fps)
    text = write_report_csv([(v, dataset_name, reports[v]) for v in variants])
    return text, checkpoints, reports

"""Synthetic regime-switching motion, ground truth and frame features.

Every body part follows its own sinusoidal dynamics and is only animated
inside its activity intervals; outside them the part holds its pose. Frame
features are a fixed random linear map of the ground-truth parameters plus
Gaussian noise, standing in for an image encoder.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bundle
from .body_model import N_BETAS, N_JOINTS, N_POSE, load_model, mesh, project, save_model
from .network import N_THETA
from .parts import PART_NAMES, default_scheme

DATA_FORMAT = "lmr-data-v1"

# per-part angular frequency ranges in Hz; arms move fastest, root slowest
DEFAULT_FREQ = {
    "root": (0.1, 0.4), "head": (0.2, 0.8), "left_arm": (0.8, 2.0),
    "right_arm": (0.8, 2.0), "left_leg": (0.3, 1.0), "right_leg": (0.3, 1.0),
}


class DataError(ValueError):
    """Invalid data configuration or dataset on disk."""


@dataclass
class MotionConfig:
    seed: int = 0
    n_frames: int = 16
    fps: float = 30.0
    # part name -> list of [start, end) frame intervals; None draws a random schedule
    schedule: dict | None = None
    base_range: float = 0.3
    amp_range: tuple = (0.1, 0.5)
    freq_ranges: dict = field(default_factory=lambda: dict(DEFAULT_FREQ))
    beta_range: float = 1.0
    camera: str = "static"  # "static" or "drift"
    # each part moves along a few fixed joint-angle directions shared by all
    # sequences; 0 animates every angle independently
    synergies: int = 2
    synergy_scale: float = 0.25
    synergy_seed: int = 0

    def validate(self):
        if self.n_frames < 1:
            raise DataError("motion.n_frames must be >= 1")
        if self.fps <= 0:
            raise DataError("motion.fps must be positive")
        if self.camera not in ("static", "drift"):
            raise DataError(f"motion.camera must be 'static' or 'drift', got {self.camera!r}")
        lo, hi = self.amp_range
        if not 0 <= lo <= hi or self.base_range < 0:
            raise DataError("motion.amp_range must satisfy 0 <= low <= high and motion.base_range >= 0")
        if self.synergies < 0 or self.synergy_scale < 0:
            raise DataError("motion.synergies and motion.synergy_scale must be >= 0")
        if max_joint_angle(self) >= np.pi / 2:
            raise DataError("motion.amp_range/base_range/synergy_scale must keep axis-angle norms below pi/2")
        if sorted(self.freq_ranges) != sorted(PART_NAMES):
            raise DataError(f"motion.freq_ranges must have exactly the keys {list(PART_NAMES)}")
        for part, rng in self.freq_ranges.items():
            if len(rng) != 2 or not 0 <= rng[0] <= rng[1]:
                raise DataError(f"motion.freq_ranges.{part}: expected [low, high] with 0 <= low <= high")
        if self.beta_range < 0:
            raise DataError("motion.beta_range must be >= 0")
        if self.schedule is not None:
            for part, intervals in self.schedule.items():
                if part not in PART_NAMES:
                    raise DataError(f"motion.schedule: unknown part {part!r}")
                for iv in intervals:
                    if len(iv) != 2 or not 0 <= iv[0] <= iv[1] <= self.n_frames:
                        raise DataError(
                            f"motion.schedule.{part}: interval {list(iv)} outside [0, {self.n_frames})"
                        )


@dataclass
class FeatureSpec:
    n_features: int = 64
    seed: int = 1234
    noise: float = 0.05

    def validate(self):
        if self.n_features < 1:
            raise DataError("features.n_features must be >= 1")
        if self.noise < 0:
            raise DataError("features.noise must be >= 0")


@dataclass
class SequenceBatch:
    features: np.ndarray  # (T, F)
    gt_theta: np.ndarray  # (T, 85)
    gt_joints3d: np.ndarray  # (T, K, 3)
    gt_joints2d: np.ndarray  # (T, K, 2)
    gt_vertices: np.ndarray | None = None  # (T, N, 3)
    seed: int = 0

    @property
    def n_frames(self):
        return self.features.shape[0]


def synergy_basis(cfg):
    """Per-part (3 * joints, synergies) direction matrices, or None per part when disabled."""
    scheme = default_scheme()
    if cfg.synergies == 0:
        return [None] * len(scheme.parts)
    rng = np.random.default_rng([cfg.synergy_seed, 7919])
    out = []
    for i in range(len(scheme.parts)):
        n = scheme.pose_dims[i]
        B = rng.normal(size=(n, cfg.synergies))
        out.append(B / np.linalg.norm(B, axis=0) * np.sqrt(n) * cfg.synergy_scale)
    return out


def max_joint_angle(cfg):
    """Upper bound on any joint's axis-angle norm the generator can produce."""
    reach = cfg.base_range + cfg.amp_range[1]
    if cfg.synergies == 0:
        return reach * np.sqrt(3)
    per_axis = np.concatenate([np.abs(B).sum(axis=1) * reach for B in synergy_basis(cfg)])
    return float(np.max(np.linalg.norm(per_axis.reshape(-1, 3), axis=1)))


def random_schedule(rng, n_frames):
    """One or two activity intervals per part, sometimes none at all."""
    schedule = {}
    for part in PART_NAMES:
        intervals = []
        for _ in range(rng.integers(0, 3)):
            a, b = sorted(rng.integers(0, n_frames + 1, size=2))
            if b > a:
                intervals.append([int(a), int(b)])
        schedule[part] = intervals
    return schedule


def activity_clock(intervals, n_frames):
    """Number of active frames elapsed before each frame (a frozen-when-idle clock)."""
    active = np.zeros(n_frames, dtype=bool)
    for a, b in intervals:
        active[a:b] = True
    clock = np.concatenate([[0], np.cumsum(active)[:-1]]).astype(np.float64)
    return clock


def gen_motion(model, cfg):
    """Ground-truth (T, 85) parameter vectors and the schedule used."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    schedule = cfg.schedule if cfg.schedule is not None else random_schedule(rng, cfg.n_frames)
    scheme = default_scheme()
    n = cfg.n_frames
    pose = np.zeros((n, N_POSE))
    for i, ((name, _), basis) in enumerate(zip(scheme.parts, synergy_basis(cfg))):
        idx = scheme.pose_indices(i)
        width = idx.size if basis is None else basis.shape[1]
        lo, hi = cfg.freq_ranges[name]
        freq = rng.uniform(lo, hi)
        base = rng.uniform(-cfg.base_range, cfg.base_range, size=width)
        amp = rng.uniform(*cfg.amp_range, size=width) * rng.choice([-1.0, 1.0], size=width)
        phase = rng.uniform(0, 2 * np.pi, size=width)
        clock = activity_clock(schedule.get(name, []), n)
        angle = 2 * np.pi * freq * clock[:, None] / cfg.fps + phase
        latent = base + amp * np.sin(angle)
        pose[:, idx] = latent if basis is None else latent @ basis.T
    betas = rng.uniform(-cfg.beta_range, cfg.beta_range, size=N_BETAS)
    scale = rng.uniform(0.8, 1.2)
    trans = rng.uniform(-0.1, 0.1, size=2)
    cam = np.tile(np.concatenate([[scale], trans]), (n, 1))
    if cfg.camera == "drift":
        drift = rng.uniform(-0.002, 0.002, size=3)
        cam += np.arange(n)[:, None] * drift
    theta = np.concatenate([pose, np.tile(betas, (n, 1)), cam], axis=1)
    return theta, schedule


def derive_ground_truth(model, theta, with_vertices=False):
    """3D joints, projected 2D joints and optionally vertices for (T, 85)."""
    theta = np.asarray(theta, dtype=np.float64)
    result = mesh(model, theta[:, N_POSE : N_POSE + N_BETAS], theta[:, :N_POSE], with_vertices=with_vertices)
    joints = result.joints3d.data
    joints2d = project(joints, theta[:, N_POSE + N_BETAS], theta[:, N_POSE + N_BETAS + 1 :]).data
    verts = result.vertices.data if with_vertices else None
    return joints, joints2d, verts


def feature_map(spec):
    """Fixed (F, 85) matrix and (F,) offset of the synthetic encoder."""
    rng = np.random.default_rng(spec.seed)
    A = rng.normal(scale=1.0 / np.sqrt(N_THETA), size=(spec.n_features, N_THETA))
    b = rng.normal(scale=0.1, size=spec.n_features)
    return A, b


def gen_features(theta, spec, seed=0):
    spec.validate()
    A, b = feature_map(spec)
    theta = np.asarray(theta, dtype=np.float64)
    noise = np.random.default_rng([spec.seed, seed]).normal(scale=1.0, size=(theta.shape[0], spec.n_features))
    return theta @ A.T + b + spec.noise * noise


def make_sequence(model, motion, spec, with_vertices=False):
    theta, _ = gen_motion(model, motion)
    joints, joints2d, verts = derive_ground_truth(model, theta, with_vertices)
    feats = gen_features(theta, spec, seed=motion.seed)
    return SequenceBatch(feats, theta, joints, joints2d, verts, seed=motion.seed)


@dataclass
class DatasetConfig:
    n_train: int = 200
    n_val: int = 40
    train_seed_start: int = 0
    val_seed_start: int = 100_000
    model_seed: int = 7
    n_vertices: int = 400
    motion: MotionConfig = field(default_factory=MotionConfig)
    features: FeatureSpec = field(default_factory=FeatureSpec)

    def seeds(self):
        train = range(self.train_seed_start, self.train_seed_start + self.n_train)
        val = range(self.val_seed_start, self.val_seed_start + self.n_val)
        if set(train) & set(val):
            raise DataError("train and val seed ranges overlap")
        return list(train), list(val)


def make_dataset(model, cfg):
    """Deterministic (train, val) lists of :class:`SequenceBatch`."""
    if cfg.n_train < 0 or cfg.n_val < 0:
        raise DataError("dataset sizes must be >= 0")
    train_seeds, val_seeds = cfg.seeds()
    cfg.motion.validate()
    cfg.features.validate()

    def build(seeds):
        out = []
        for s in seeds:
            motion = MotionConfig(**{**asdict(cfg.motion), "seed": s})
            out.append(make_sequence(model, motion, cfg.features))
        return out

    return build(train_seeds), build(val_seeds)


def stack_sequences(seqs):
    """Stack equal-length sequences into (B, T, ...) arrays."""
    return (
        np.stack([s.features for s in seqs]),
        np.stack([s.gt_theta for s in seqs]),
        np.stack([s.gt_joints3d for s in seqs]),
        np.stack([s.gt_joints2d for s in seqs]),
    )


# ---------------------------------------------------------------- disk format


def save_dataset(directory, model, train, val, config=None):
    os.makedirs(directory, exist_ok=True)
    save_model(model, os.path.join(directory, "model.json"))
    entries = []
    for split_name, seqs in (("train", train), ("val", val)):
        for i, seq in enumerate(seqs):
            name = f"{split_name}_{i:05d}.lmrb"
            bundle.write(
                os.path.join(directory, name),
                {"format": DATA_FORMAT, "seed": seq.seed},
                {
                    "features": seq.features, "gt_theta": seq.gt_theta,
                    "gt_joints3d": seq.gt_joints3d, "gt_joints2d": seq.gt_joints2d,
                },
            )
            entries.append({"split": split_name, "file": name, "seed": seq.seed})
    manifest = {
        "format": DATA_FORMAT,
        "model": "model.json",
        "n_frames": int(train[0].n_frames if train else val[0].n_frames),
        "n_features": int((train or val)[0].features.shape[1]),
        "n_joints": N_JOINTS,
        "config": config,
        "sequences": entries,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(directory):
    """Return (model, train, val, manifest) from a dataset directory."""
    path = os.path.join(directory, "manifest.json")
    if not os.path.isfile(path):
        raise DataError(f"no dataset manifest at {path}")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from None
    if manifest.get("format") != DATA_FORMAT:
        raise DataError(f"{path}: expected format {DATA_FORMAT!r}, found {manifest.get('format')!r}")
    model = load_model(os.path.join(directory, manifest["model"]))
    splits = {"train": [], "val": []}
    for entry in manifest["sequences"]:
        try:
            meta, arrays = bundle.read(os.path.join(directory, entry["file"]))
        except (OSError, bundle.BundleError) as exc:
            raise DataError(f"cannot read sequence {entry['file']}: {exc}") from None
        if meta.get("format") != DATA_FORMAT:
            raise DataError(f"{entry['file']}: wrong format tag {meta.get('format')!r}")
        splits[entry["split"]].append(SequenceBatch(seed=meta["seed"], **arrays))
    return model, splits["train"], splits["val"], manifest


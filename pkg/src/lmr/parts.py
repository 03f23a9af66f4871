"""Six-part decomposition of the 24-joint pose vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body_model import JOINT_NAMES, N_JOINTS, N_POSE

PART_NAMES = ("root", "head", "left_arm", "right_arm", "left_leg", "right_leg")


@dataclass(frozen=True)
class PartScheme:
    parts: tuple  # ((name, (joint, ...)), ...)

    def __post_init__(self):
        parts = tuple((str(name), tuple(int(j) for j in joints)) for name, joints in self.parts)
        object.__setattr__(self, "parts", parts)
        joints = [j for _, js in parts for j in js]
        if len(parts) != 6:
            raise ValueError(f"a part scheme needs 6 parts, got {len(parts)}")
        if sorted(joints) != list(range(N_JOINTS)):
            raise ValueError("part joint lists must partition joints 0..23 without duplicates")
        if 0 not in parts[0][1]:
            raise ValueError("the first part must contain the root joint 0")

    @property
    def names(self):
        return tuple(name for name, _ in self.parts)

    @property
    def sizes(self):
        return tuple(len(js) for _, js in self.parts)

    @property
    def pose_dims(self):
        return tuple(3 * len(js) for _, js in self.parts)

    def pose_indices(self, i):
        """Positions in the 72-vector covered by part ``i``, in scheme order."""
        return np.array([3 * j + c for j in self.parts[i][1] for c in range(3)], dtype=np.intp)

    def to_dict(self):
        return {"parts": [{"name": n, "joints": list(js)} for n, js in self.parts]}

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple((p["name"], tuple(p["joints"])) for p in doc["parts"]))


def default_scheme():
    """Root = pelvis and spine, collars with the arms, feet with the legs."""
    idx = {name: i for i, name in enumerate(JOINT_NAMES)}
    groups = {
        "root": ("pelvis", "spine1", "spine2", "spine3"),
        "head": ("neck", "head"),
        "left_arm": ("l_collar", "l_shoulder", "l_elbow", "l_wrist", "l_hand"),
        "right_arm": ("r_collar", "r_shoulder", "r_elbow", "r_wrist", "r_hand"),
        "left_leg": ("l_hip", "l_knee", "l_ankle", "l_foot"),
        "right_leg": ("r_hip", "r_knee", "r_ankle", "r_foot"),
    }
    return PartScheme(tuple((name, tuple(idx[j] for j in groups[name])) for name in PART_NAMES))


def split(pose, scheme):
    """Gather the six part poses from a (..., 72) pose."""
    pose = ad.as_tensor(pose)
    if pose.shape[-1] != N_POSE:
        raise ad.ShapeError(f"split: pose must have {N_POSE} values on the last axis, got {pose.shape}")
    return [ad.take(pose, scheme.pose_indices(i), axis=-1) for i in range(len(scheme.parts))]


def merge(parts, scheme):
    """Scatter six part poses back into a (..., 72) pose."""
    if len(parts) != len(scheme.parts):
        raise ad.ShapeError(f"merge: expected {len(scheme.parts)} parts, got {len(parts)}")
    parts = [ad.as_tensor(p) for p in parts]
    for (name, _), dim, p in zip(scheme.parts, scheme.pose_dims, parts):
        if p.shape[-1] != dim:
            raise ad.ShapeError(f"merge: part {name!r} needs {dim} values, got {p.shape[-1]}")
    order = np.concatenate([scheme.pose_indices(i) for i in range(len(parts))])
    inverse = np.argsort(order)
    return ad.take(ad.concat(parts, axis=-1), inverse, axis=-1)

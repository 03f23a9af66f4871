"""SMPL-structured parametric body model.

Shape blendshapes, axis-angle forward kinematics over the 24-joint tree,
linear blend skinning and weak-perspective projection. All functions accept
numpy arrays or :class:`~lmr.autodiff.Tensor` inputs with arbitrary leading
batch axes and return Tensors, so gradients flow to pose and shape.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

N_JOINTS = 24
N_BETAS = 10
N_POSE = 72
MODEL_FORMAT = "lmr-model-v1"

JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
    "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
)
SMPL_PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

# approximate adult rest joints in meters, y up, pelvis at the origin
_REST_JOINTS = np.array([
    [0.000, 0.000, 0.000], [0.060, -0.090, 0.000], [-0.060, -0.090, 0.000], [0.000, 0.110, -0.010],
    [0.100, -0.470, 0.000], [-0.100, -0.470, 0.000], [0.000, 0.250, 0.010], [0.090, -0.870, -0.040],
    [-0.090, -0.870, -0.040], [0.000, 0.310, 0.030], [0.120, -0.930, 0.080], [-0.120, -0.930, 0.080],
    [0.000, 0.520, 0.000], [0.080, 0.430, 0.000], [-0.080, 0.430, 0.000], [0.000, 0.620, 0.050],
    [0.190, 0.450, -0.010], [-0.190, 0.450, -0.010], [0.450, 0.430, -0.030], [-0.450, 0.430, -0.030],
    [0.710, 0.440, -0.020], [-0.710, 0.440, -0.020], [0.790, 0.430, -0.030], [-0.790, 0.430, -0.030],
])


class ModelFileError(ValueError):
    """Base class for problems reading a model file."""


class ModelVersionError(ModelFileError):
    pass


class ModelDimensionError(ModelFileError):
    pass


class MalformedModelError(ModelFileError):
    pass


@dataclass(frozen=True, eq=False)
class BodyModel:
    template_vertices: np.ndarray  # (N, 3)
    shape_basis: np.ndarray  # (3N, 10)
    joint_regressor: np.ndarray  # (K, N)
    parent: np.ndarray  # (K,)
    skinning_weights: np.ndarray  # (N, K)
    faces: np.ndarray  # (F, 3)

    def __post_init__(self):
        for field in ("template_vertices", "shape_basis", "joint_regressor", "skinning_weights"):
            arr = np.array(getattr(self, field), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)
        for field in ("parent", "faces"):
            arr = np.array(getattr(self, field), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)
        self.validate()

    @property
    def n_vertices(self):
        return self.template_vertices.shape[0]

    @property
    def n_joints(self):
        return self.joint_regressor.shape[0]

    def validate(self):
        n = self.template_vertices.shape[0]
        k = self.parent.shape[0]
        if self.template_vertices.shape != (n, 3):
            raise ModelDimensionError(f"template_vertices must be (N, 3), got {self.template_vertices.shape}")
        if k != N_JOINTS:
            raise ModelDimensionError(f"expected {N_JOINTS} joints, got {k}")
        if self.shape_basis.shape != (3 * n, N_BETAS):
            raise ModelDimensionError(f"shape_basis must be ({3 * n}, {N_BETAS}), got {self.shape_basis.shape}")
        if self.joint_regressor.shape != (k, n):
            raise ModelDimensionError(f"joint_regressor must be ({k}, {n}), got {self.joint_regressor.shape}")
        if self.skinning_weights.shape != (n, k):
            raise ModelDimensionError(f"skinning_weights must be ({n}, {k}), got {self.skinning_weights.shape}")
        if self.faces.size and (self.faces.ndim != 2 or self.faces.shape[1] != 3):
            raise ModelDimensionError(f"faces must be (F, 3), got {self.faces.shape}")
        if self.parent[0] != -1 or np.any(self.parent[1:] < 0) or np.any(self.parent[1:] >= np.arange(1, k)):
            raise ValueError("parent array must be topologically ordered with root 0")
        for name, w in (("joint_regressor", self.joint_regressor), ("skinning_weights", self.skinning_weights)):
            if np.any(w < 0) or np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-9:
                raise ValueError(f"{name} rows must be nonnegative and sum to 1")

    def equals(self, other):
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("template_vertices", "shape_basis", "joint_regressor", "parent", "skinning_weights", "faces")
        )


@dataclass
class MeshResult:
    vertices: Tensor | None  # (..., N, 3)
    joints3d: Tensor  # (..., K, 3)


def build_synthetic_model(seed=0, n_vertices=400):
    """Random stand-in for a learned SMPL asset.

    Vertices form ellipsoidal clusters around their dominant joint, each
    cluster centered exactly on the joint, so a uniform regressor over the
    cluster reproduces the planted rest joints and, because every vertex of a
    cluster shares its blend weights, also the posed FK joints.
    """
    if n_vertices < N_JOINTS:
        raise ValueError(f"n_vertices must be >= {N_JOINTS}, got {n_vertices}")
    rng = np.random.default_rng(seed)
    k = N_JOINTS
    owner = np.concatenate([np.arange(k), rng.integers(0, k, n_vertices - k)])
    owner.sort(kind="stable")

    verts = np.zeros((n_vertices, 3))
    regressor = np.zeros((k, n_vertices))
    for j in range(k):
        idx = np.flatnonzero(owner == j)
        offsets = rng.normal(scale=[0.04, 0.05, 0.04], size=(idx.size, 3))
        offsets -= offsets.mean(axis=0)
        verts[idx] = _REST_JOINTS[j] + offsets
        regressor[j, idx] = 1.0 / idx.size

    # blend toward the parent with one weight per cluster
    blend = rng.uniform(0.0, 0.3, size=k)
    blend[0] = 0.0
    skin = np.zeros((n_vertices, k))
    rows = np.arange(n_vertices)
    skin[rows, owner] = 1.0 - blend[owner]
    parent_of = np.maximum(SMPL_PARENTS[owner], 0)
    skin[rows, parent_of] += blend[owner]
    skin /= skin.sum(axis=1, keepdims=True)

    basis = rng.normal(scale=0.01, size=(n_vertices, 3, N_BETAS))
    # a global height-like component keeps the first coefficient meaningful
    basis[:, :, 0] += 0.03 * verts / np.linalg.norm(_REST_JOINTS, axis=1).max()
    basis = basis.reshape(3 * n_vertices, N_BETAS)

    faces = _cluster_faces(owner)
    return BodyModel(verts, basis, regressor, SMPL_PARENTS.copy(), skin, faces)


def _cluster_faces(owner):
    faces = []
    for j in range(N_JOINTS):
        idx = np.flatnonzero(owner == j)
        for a in range(1, idx.size - 1):
            faces.append((idx[0], idx[a], idx[a + 1]))
    return np.array(faces, dtype=np.int64).reshape(-1, 3)


# ---------------------------------------------------------------- geometry


def rodrigues(axis_angle):
    """(..., 3) axis-angle to (..., 3, 3) rotation matrices."""
    return ad.rodrigues(axis_angle)


def shape_vertices(model, betas):
    """Rest vertices ``template + basis @ betas`` for betas of shape (..., 10)."""
    betas = ad.as_tensor(betas)
    offsets = ad.linear(betas, model.shape_basis)
    return ad.reshape(offsets, betas.shape[:-1] + (model.n_vertices, 3)) + model.template_vertices


def rest_joints(model, v_rest):
    """Regress (..., K, 3) rest joints from (..., N, 3) rest vertices."""
    return ad.matmul(model.joint_regressor, v_rest)


def forward_kinematics(model, pose, j_rest):
    """World rotations (..., K, 3, 3) and posed joints (..., K, 3).

    ``pose`` is the (..., 72) axis-angle vector; each joint's local rotation is
    applied about its rest position and chained from the root outward. Joint
    positions are tracked as displacements from the rest joints so the rest
    pose is reproduced bit-exactly.
    """
    pose = ad.as_tensor(pose)
    j_rest = ad.as_tensor(j_rest)
    batch = pose.shape[:-1]
    local = ad.rodrigues(ad.reshape(pose, batch + (N_JOINTS, 3)))
    eye = np.eye(3)
    rot = [None] * N_JOINTS
    disp = [None] * N_JOINTS
    for i in range(N_JOINTS):
        r_local = local[..., i, :, :]
        p = model.parent[i]
        if p < 0:
            rot[i] = r_local
            disp[i] = ad.Tensor(np.zeros(np.broadcast_shapes(batch, j_rest.shape[:-2]) + (3,)))
            continue
        offset = j_rest[..., i, :] - j_rest[..., p, :]
        rot[i] = ad.matmul(rot[p], r_local)
        turned = ad.matmul(rot[p] - eye, ad.reshape(offset, offset.shape + (1,)))
        disp[i] = disp[p] + ad.reshape(turned, offset.shape)
    nd = len(batch)
    return ad.stack(rot, axis=nd), j_rest + ad.stack(disp, axis=nd)


def skin(model, rotations, joints, j_rest, v_rest):
    """Linear blend skinning of rest vertices with world joint transforms.

    Each joint contributes ``R_k (v - J_rest_k) + X_k`` weighted by the
    skinning weight of the vertex, evaluated as ``v`` plus a blended
    correction so the rest pose maps to the rest vertices exactly.
    """
    rotations, joints = ad.as_tensor(rotations), ad.as_tensor(joints)
    j_rest, v_rest = ad.as_tensor(j_rest), ad.as_tensor(v_rest)
    batch = joints.shape[:-2]
    k = model.n_joints
    n = model.n_vertices
    delta_rot = rotations - np.eye(3)
    moved_rest = ad.reshape(ad.matmul(delta_rot, ad.reshape(j_rest, j_rest.shape + (1,))), joints.shape)
    shift = (joints - j_rest) - moved_rest
    transform = ad.concat([ad.reshape(delta_rot, batch + (k, 9)), shift], axis=-1)
    blended = ad.matmul(model.skinning_weights, transform)
    r_blend = ad.reshape(blended[..., :9], batch + (n, 3, 3))
    moved = ad.reshape(ad.matmul(r_blend, ad.reshape(v_rest, v_rest.shape + (1,))), batch + (n, 3))
    return v_rest + moved + blended[..., 9:]


def mesh(model, betas, pose, with_vertices=True):
    """Posed vertices and joints for shape (..., 10) and pose (..., 72)."""
    v_rest = shape_vertices(model, betas)
    j_rest = rest_joints(model, v_rest)
    rotations, joints = forward_kinematics(model, pose, j_rest)
    verts = skin(model, rotations, joints, j_rest, v_rest) if with_vertices else None
    return MeshResult(vertices=verts, joints3d=joints)


def joints_only(model, betas, pose):
    """Posed joints without skinning; the fast path used during training."""
    return mesh(model, betas, pose, with_vertices=False).joints3d


def project(points, cam_scale, cam_trans):
    """Weak-perspective projection ``s * (X, Y) + t``.

    ``points`` is (..., K, 3), ``cam_scale`` broadcasts against (...,) and
    ``cam_trans`` against (..., 2).
    """
    points = ad.as_tensor(points)
    cam_scale = ad.as_tensor(cam_scale)
    cam_trans = ad.as_tensor(cam_trans)
    xy = points[..., :2]
    s = ad.reshape(cam_scale, cam_scale.shape + (1, 1))
    t = ad.reshape(cam_trans, cam_trans.shape[:-1] + (1, 2))
    return xy * s + t


# ---------------------------------------------------------------- I/O


def export_obj(result, model, path):
    """Write posed vertices (a single frame) and the model faces as Wavefront OBJ."""
    verts = result.vertices.data if isinstance(result.vertices, Tensor) else np.asarray(result.vertices)
    if verts.ndim != 2 or verts.shape[1] != 3:
        raise ValueError(f"export_obj expects one frame of (N, 3) vertices, got {verts.shape}")
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(model.faces).tolist()]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write OBJ to {path}: {exc.strerror}") from exc


def read_obj(path):
    """Parse ``v`` and ``f`` records of an OBJ file into arrays."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def save_model(model, path):
    doc = {
        "format": MODEL_FORMAT,
        "n_vertices": model.n_vertices,
        "n_joints": model.n_joints,
        "n_betas": N_BETAS,
        "template_vertices": model.template_vertices.tolist(),
        "shape_basis": model.shape_basis.tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
        "parent": model.parent.tolist(),
        "skinning_weights": model.skinning_weights.tolist(),
        "faces": model.faces.tolist(),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedModelError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(doc, dict):
        raise MalformedModelError(f"{path}: top level must be an object")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelVersionError(f"{path}: expected format {MODEL_FORMAT!r}, found {doc.get('format')!r}")
    try:
        n, k = int(doc["n_vertices"]), int(doc["n_joints"])
        arrays = {
            name: np.array(doc[name], dtype=dtype)
            for name, dtype in (
                ("template_vertices", np.float64), ("shape_basis", np.float64), ("joint_regressor", np.float64),
                ("parent", np.int64), ("skinning_weights", np.float64), ("faces", np.int64),
            )
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModelError(f"{path}: missing or malformed field ({exc})") from None
    if k != N_JOINTS or int(doc.get("n_betas", N_BETAS)) != N_BETAS:
        raise ModelDimensionError(f"{path}: expected {N_JOINTS} joints and {N_BETAS} betas, file declares K={k}")
    expected = {
        "template_vertices": (n, 3), "shape_basis": (3 * n, N_BETAS), "joint_regressor": (k, n),
        "parent": (k,), "skinning_weights": (n, k),
    }
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ModelDimensionError(f"{path}: {name} has shape {arrays[name].shape}, expected {shape}")
    if arrays["faces"].size == 0:
        arrays["faces"] = arrays["faces"].reshape(0, 3)
    return BodyModel(**arrays)

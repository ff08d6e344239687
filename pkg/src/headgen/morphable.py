"""Procedural parametric head model: template mesh, blendshapes, joints, skinning.

The model is a small articulated 3DMM. A head state is described by shape
coefficients ``beta``, per-joint axis-angle pose ``theta`` (global, neck, jaw)
and expression coefficients ``psi``. Posing applies linear blendshape offsets
followed by linear blend skinning over the three-joint chain.

All assets are synthesized deterministically from a seed, so two processes
with the same config always agree bit for bit. Coordinates live in a canonical
unitless space with the head inside [-1, 1]^3, facing +z, +y up.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, GeometryError, InvariantViolationError

ASSET_FORMAT_VERSION = "assets.v1"

COEFF_BOUND = 3.0  # |beta|, |psi| <= 3 standard deviations
JOINT_NAMES = ("global", "neck", "jaw")


@dataclass(frozen=True)
class ModelConfig:
    """Dimension and seed configuration for asset synthesis."""

    n_shape: int = 10
    n_expr: int = 10
    rings: int = 16
    segments: int = 20
    seed: int = 7

    def validate(self) -> None:
        if self.n_shape < 1 or self.n_expr < 1:
            raise ConfigurationError("n_shape and n_expr must be >= 1")
        if self.vertex_count < 12:
            raise ConfigurationError(
                f"mesh config yields {self.vertex_count} vertices; need at least 12"
            )

    @property
    def vertex_count(self) -> int:
        return (self.rings - 1) * self.segments + 2

    def to_dict(self) -> dict:
        return {
            "n_shape": self.n_shape,
            "n_expr": self.n_expr,
            "rings": self.rings,
            "segments": self.segments,
            "seed": self.seed,
        }


@dataclass
class ModelAssets:
    """Everything needed to pose the head: template, bases, joints, skinning."""

    template_vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    shape_basis: np.ndarray  # (V, 3, n_shape), orthonormal columns over 3V
    expression_basis: np.ndarray  # (V, 3, n_expr)
    joint_regressor: np.ndarray  # (J, V)
    blend_weights: np.ndarray  # (V, J), rows sum to 1
    joint_parents: np.ndarray  # (J,), parent[0] == -1
    config: ModelConfig = field(default=None)  # type: ignore[assignment]

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_expr(self) -> int:
        return self.expression_basis.shape[2]


@dataclass
class HeadParams:
    """Head state: shape, pose (axis-angle per joint), expression."""

    beta: np.ndarray
    theta: np.ndarray  # (J, 3) axis-angle, radians
    psi: np.ndarray

    @classmethod
    def zeros(cls, assets: ModelAssets) -> "HeadParams":
        return cls(
            beta=np.zeros(assets.n_shape),
            theta=np.zeros((assets.n_joints, 3)),
            psi=np.zeros(assets.n_expr),
        )

    def validate(self, assets: ModelAssets | None = None) -> None:
        beta = np.asarray(self.beta, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        for name, arr in (("beta", beta), ("theta", theta), ("psi", psi)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"HeadParams.{name} contains non-finite values")
        if np.any(np.abs(beta) > COEFF_BOUND + 1e-12):
            raise DomainError(f"HeadParams.beta exceeds the +-{COEFF_BOUND} bound")
        if np.any(np.abs(psi) > COEFF_BOUND + 1e-12):
            raise DomainError(f"HeadParams.psi exceeds the +-{COEFF_BOUND} bound")
        if np.any(np.abs(theta) > np.pi + 1e-12):
            raise DomainError("HeadParams.theta has a component outside [-pi, pi]")
        if assets is not None:
            if beta.shape != (assets.n_shape,):
                raise DomainError(f"HeadParams.beta has shape {beta.shape}, expected ({assets.n_shape},)")
            if psi.shape != (assets.n_expr,):
                raise DomainError(f"HeadParams.psi has shape {psi.shape}, expected ({assets.n_expr},)")
            if theta.reshape(-1).shape != (assets.n_joints * 3,):
                raise DomainError(
                    f"HeadParams.theta has shape {theta.shape}, expected ({assets.n_joints}, 3)"
                )


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)


# ---------------------------------------------------------------------------
# asset construction
# ---------------------------------------------------------------------------


def _sphere_grid(rings: int, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit UV sphere, +y up, azimuth 0 pointing toward +z."""
    dirs = [np.array([0.0, 1.0, 0.0])]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            az = 2.0 * np.pi * j / segments
            dirs.append(
                np.array([np.sin(phi) * np.sin(az), np.cos(phi), np.sin(phi) * np.cos(az)])
            )
    dirs.append(np.array([0.0, -1.0, 0.0]))
    dirs = np.stack(dirs)

    faces = []
    top, bottom = 0, len(dirs) - 1

    def ring_vertex(i: int, j: int) -> int:
        return 1 + (i - 1) * segments + (j % segments)

    for j in range(segments):
        faces.append((top, ring_vertex(1, j), ring_vertex(1, j + 1)))
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring_vertex(i, j), ring_vertex(i, j + 1)
            c, d = ring_vertex(i + 1, j), ring_vertex(i + 1, j + 1)
            faces.append((a, c, b))
            faces.append((b, c, d))
    for j in range(segments):
        faces.append((bottom, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j)))
    return dirs, np.asarray(faces, dtype=np.int64)


def _angular_bump(dirs: np.ndarray, center: np.ndarray, width: float) -> np.ndarray:
    center = center / np.linalg.norm(center)
    ang = np.arccos(np.clip(dirs @ center, -1.0, 1.0))
    return np.exp(-0.5 * (ang / width) ** 2)


def _head_template(rings: int, segments: int) -> tuple[np.ndarray, np.ndarray]:
    dirs, faces = _sphere_grid(rings, segments)
    radius = np.ones(len(dirs))
    radius += 0.30 * _angular_bump(dirs, np.array([0.0, -0.10, 1.0]), 0.22)  # nose
    radius += 0.16 * _angular_bump(dirs, np.array([0.0, -0.72, 0.70]), 0.34)  # chin / jaw
    radius += 0.05 * _angular_bump(dirs, np.array([0.0, 0.42, 0.91]), 0.45)  # brow
    radius -= 0.08 * _angular_bump(dirs, np.array([0.0, -1.0, 0.0]), 0.55)  # flatten under-side
    verts = dirs * radius[:, None]
    verts[:, 1] *= 1.12  # slightly elongated skull
    verts *= 0.92 / np.abs(verts).max()

    # enforce outward orientation so rendering can cull consistently
    centroid = verts.mean(axis=0)
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    fn = np.cross(v1 - v0, v2 - v0)
    outward = np.einsum("fc,fc->f", fn, (v0 + v1 + v2) / 3.0 - centroid)
    if np.mean(outward > 0) < 0.5:
        faces = faces[:, ::-1].copy()
    return verts, faces


def _smooth_random_fields(dirs: np.ndarray, n_fields: int, rng: np.random.Generator) -> np.ndarray:
    """(V, 3, n) stack of smooth displacement fields: sums of low-frequency waves."""
    V = dirs.shape[0]
    out = np.zeros((V, 3, n_fields))
    for k in range(n_fields):
        for c in range(3):
            field_c = np.zeros(V)
            for _ in range(4):
                wavevec = rng.normal(size=3) * rng.uniform(0.8, 2.4)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                field_c += rng.normal() * np.sin(dirs @ wavevec + phase)
            out[:, c, k] = field_c
    return out


def _orthonormalize(fields: np.ndarray) -> np.ndarray:
    """QR-orthonormalize (V,3,n) fields over the flattened 3V axis, sign-fixed."""
    V, _, n = fields.shape
    mat = fields.reshape(V * 3, n)
    q, _ = np.linalg.qr(mat)
    # deterministic sign: largest-magnitude entry of each column is positive
    idx = np.argmax(np.abs(q), axis=0)
    signs = np.sign(q[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    q = q * signs
    return q.reshape(V, 3, n)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def build_assets(config: ModelConfig) -> ModelAssets:
    """Synthesize deterministic model assets from a dimension + seed config."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    verts, faces = _head_template(config.rings, config.segments)
    dirs = verts / np.linalg.norm(verts, axis=1, keepdims=True)

    shape_basis = _orthonormalize(_smooth_random_fields(dirs, config.n_shape, rng))
    expression_basis = _orthonormalize(_smooth_random_fields(dirs, config.n_expr, rng))

    # joint pivots: head center, base of neck, jaw hinge (between the ears)
    targets = np.array([[0.0, 0.0, 0.0], [0.0, -0.80, -0.05], [0.0, -0.25, -0.05]])
    regressor = np.zeros((3, verts.shape[0]))
    for j, target in enumerate(targets):
        d2 = np.sum((verts - target) ** 2, axis=1)
        w = np.exp(-d2 / (2 * 0.35**2))
        regressor[j] = w / w.sum()

    # skinning: global owns the skull, neck the lower back, jaw the chin front
    y, z = verts[:, 1], verts[:, 2]
    s_global = np.full(verts.shape[0], 3.0)
    s_neck = 4.0 / (1.0 + np.exp((y + 0.45) / 0.10)) * 1.0 / (1.0 + np.exp((z - 0.15) / 0.25))
    s_jaw = 6.0 / (1.0 + np.exp((y + 0.28) / 0.09)) * 1.0 / (1.0 + np.exp(-(z - 0.25) / 0.18))
    blend_weights = np.stack([s_global, s_neck, s_jaw], axis=1)
    blend_weights = blend_weights / blend_weights.sum(axis=1, keepdims=True)

    assets = ModelAssets(
        template_vertices=verts,
        faces=faces,
        shape_basis=shape_basis,
        expression_basis=expression_basis,
        joint_regressor=regressor,
        blend_weights=blend_weights,
        joint_parents=np.array([-1, 0, 1], dtype=np.int64),
        config=config,
    )
    validate_assets(assets)
    return assets


def validate_assets(assets: ModelAssets) -> None:
    """Check the structural invariants; raise InvariantViolationError otherwise."""
    w = assets.blend_weights
    if np.any(w < -1e-12):
        raise InvariantViolationError("blend_weights has negative entries")
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-6:
        raise InvariantViolationError("blend_weights rows do not sum to 1")
    for name, basis in (("shape", assets.shape_basis), ("expression", assets.expression_basis)):
        mat = basis.reshape(-1, basis.shape[2])
        gram = mat.T @ mat
        if np.max(np.abs(gram - np.eye(basis.shape[2]))) > 1e-6:
            raise InvariantViolationError(f"{name}_basis columns are not orthonormal")
    parents = assets.joint_parents
    if parents[0] != -1 or np.any(parents[1:] >= np.arange(1, len(parents))):
        raise InvariantViolationError("joint_parents is not a rooted tree with parent < child")
    faces = assets.faces
    if faces.min() < 0 or faces.max() >= assets.n_vertices:
        raise InvariantViolationError("faces index out-of-range vertices")
    if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])):
        raise InvariantViolationError("a face has repeated vertices")


# ---------------------------------------------------------------------------
# posing
# ---------------------------------------------------------------------------


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3)."""
    aa = np.asarray(axis_angle, dtype=float)
    single = aa.ndim == 1
    aa = np.atleast_2d(aa)
    angle = np.linalg.norm(aa, axis=1)
    out = np.tile(np.eye(3), (aa.shape[0], 1, 1))
    nz = angle > 1e-12
    if np.any(nz):
        axis = aa[nz] / angle[nz, None]
        x, y, z = axis[:, 0], axis[:, 1], axis[:, 2]
        zero = np.zeros_like(x)
        k = np.stack(
            [zero, -z, y, z, zero, -x, -y, x, zero], axis=1
        ).reshape(-1, 3, 3)
        s = np.sin(angle[nz])[:, None, None]
        c = np.cos(angle[nz])[:, None, None]
        out[nz] = np.eye(3) + s * k + (1 - c) * (k @ k)
    return out[0] if single else out


def joint_world_transforms(
    joints: np.ndarray, rotations: np.ndarray, parents: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """World rotation R_j and translation t_j per joint, so a rest-space point p
    maps to R_j @ p + t_j under joint j.

    Formulated so that identity local rotations give R_j = I and t_j = 0 exactly.
    """
    J = joints.shape[0]
    local = rodrigues(rotations)
    R = np.zeros((J, 3, 3))
    disp = np.zeros((J, 3))  # world displacement of the joint pivot from rest
    for j in range(J):
        p = parents[j]
        if p < 0:
            R[j] = local[j]
            disp[j] = 0.0
        else:
            R[j] = R[p] @ local[j]
            disp[j] = disp[p] + (R[p] - np.eye(3)) @ (joints[j] - joints[p])
    # t_j = disp_j - (R_j - I) @ joint_j  =>  exactly 0 when R_j == I
    t = disp - np.einsum("jab,jb->ja", R - np.eye(3), joints)
    return R, t


def blend_transforms(
    vertices: np.ndarray, rotations: np.ndarray, translations: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Weighted blend of rigid transforms: v' = v + sum_j w_j ((R_j - I) v + t_j).

    Algebraically equal to sum_j w_j (R_j v + t_j) when weights sum to 1, but
    exactly the identity map when every transform is the identity.
    """
    row_sums = weights.sum(axis=1)
    if np.max(np.abs(row_sums - 1.0)) > 1e-4:
        raise InvariantViolationError("skinning weight rows must sum to 1 within 1e-4")
    delta = np.einsum("jab,vb->vja", rotations - np.eye(3), vertices) + translations[None, :, :]
    return vertices + np.einsum("vj,vja->va", weights, delta)


def lbs_transform(
    vertices: np.ndarray,
    joints: np.ndarray,
    rotations: np.ndarray,
    weights: np.ndarray,
    parents: np.ndarray,
) -> np.ndarray:
    """Linear blend skinning of vertices over an axis-angle joint chain."""
    if not np.all(np.isfinite(rotations)):
        raise DomainError("rotations contain non-finite values")
    R, t = joint_world_transforms(np.asarray(joints, dtype=float), np.asarray(rotations, dtype=float), parents)
    return blend_transforms(np.asarray(vertices, dtype=float), R, t, np.asarray(weights, dtype=float))


def deform(assets: ModelAssets, params: HeadParams) -> Mesh:
    """Pose the template: blendshape offsets, then skinning around shaped joints."""
    params.validate(assets)
    beta = np.asarray(params.beta, dtype=float)
    psi = np.asarray(params.psi, dtype=float)
    theta = np.asarray(params.theta, dtype=float).reshape(assets.n_joints, 3)

    shaped = (
        assets.template_vertices
        + assets.shape_basis @ beta
        + assets.expression_basis @ psi
    )
    joints = assets.joint_regressor @ (assets.template_vertices + assets.shape_basis @ beta)
    posed = lbs_transform(shaped, joints, theta, assets.blend_weights, assets.joint_parents)
    if not np.all(np.isfinite(posed)):
        raise GeometryError("posed vertices are not finite")
    return Mesh(vertices=posed, faces=assets.faces)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted unit vertex normals; zero-area faces are skipped."""
    verts, faces = mesh.vertices, mesh.faces
    if faces.shape[0] < 1:
        raise GeometryError("mesh has no faces")
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    fn = np.cross(v1 - v0, v2 - v0)  # norm = 2 * area
    norms = np.linalg.norm(fn, axis=1)
    keep = norms > 1e-12
    if not np.any(keep):
        raise GeometryError("every face of the mesh is degenerate")
    acc = np.zeros_like(verts)
    for c in range(3):
        np.add.at(acc, faces[keep, c], fn[keep])
    lengths = np.linalg.norm(acc, axis=1)
    ok = lengths > 1e-12
    out = np.zeros_like(acc)
    out[ok] = acc[ok] / lengths[ok, None]
    out[~ok] = (0.0, 0.0, 1.0)  # isolated or perfectly cancelled vertices
    return out


# ---------------------------------------------------------------------------
# serialization (assets.v1)
# ---------------------------------------------------------------------------


def save_assets(assets: ModelAssets, path) -> None:
    header = json.dumps({"format": ASSET_FORMAT_VERSION, "config": assets.config.to_dict()})
    buf = io.BytesIO()
    np.savez(
        buf,
        header=np.frombuffer(header.encode(), dtype=np.uint8),
        template_vertices=assets.template_vertices,
        faces=assets.faces,
        shape_basis=assets.shape_basis,
        expression_basis=assets.expression_basis,
        joint_regressor=assets.joint_regressor,
        blend_weights=assets.blend_weights,
        joint_parents=assets.joint_parents,
    )
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_assets(path) -> ModelAssets:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != ASSET_FORMAT_VERSION:
            raise ConfigurationError(
                f"asset file has format {header.get('format')!r}, expected {ASSET_FORMAT_VERSION!r}"
            )
        assets = ModelAssets(
            template_vertices=data["template_vertices"],
            faces=data["faces"],
            shape_basis=data["shape_basis"],
            expression_basis=data["expression_basis"],
            joint_regressor=data["joint_regressor"],
            blend_weights=data["blend_weights"],
            joint_parents=data["joint_parents"],
            config=ModelConfig(**header["config"]),
        )
    validate_assets(assets)
    return assets

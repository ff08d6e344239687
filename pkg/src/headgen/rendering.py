"""Software rasterizer for the pixel-aligned head condition images.

Produces the three condition channels the generator is driven by (surface
normal map, albedo map, Lambertian rendering) plus the ground-truth facial
mask, all from the same z-buffered rasterization pass so they are pixel
aligned by construction.

Camera is weak perspective: image_x = scale * x + tx, image_y = -scale * y + ty,
with +z toward the viewer (larger z wins the depth test). No anti-aliasing;
pixel centers are sampled at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, GeometryError
from .morphable import HeadParams, Mesh, ModelAssets, deform, vertex_normals

BACKGROUND = 0.0
LANDMARK_SIGMA = 1.5


@dataclass(frozen=True)
class Camera:
    """Weak-perspective camera: pixels per canonical unit plus image-plane shift."""

    scale: float
    tx: float
    ty: float

    def __post_init__(self):
        if self.scale <= 0:
            raise DomainError("camera scale must be positive")

    def project(self, vertices: np.ndarray) -> np.ndarray:
        """(V, 3) canonical points to (V, 2) pixel coordinates (x right, y down)."""
        xy = np.empty((vertices.shape[0], 2))
        xy[:, 0] = self.scale * vertices[:, 0] + self.tx
        xy[:, 1] = -self.scale * vertices[:, 1] + self.ty
        return xy


@dataclass
class Lighting:
    """Grayscale spherical-harmonics lighting, bands 0-2 (9 coefficients)."""

    sh_coeffs: np.ndarray

    def __post_init__(self):
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=float).reshape(9)
        if not np.all(np.isfinite(self.sh_coeffs)):
            raise DomainError("sh_coeffs must be finite")


@dataclass
class ConditionSet:
    """Pixel-aligned condition images plus the ground-truth facial mask."""

    normal: np.ndarray  # (H, W, 3) in [0, 1], (n+1)/2 encoding inside the mask
    albedo: np.ndarray  # (H, W, 3) in [0, 1]
    lambertian: np.ndarray  # (H, W, 3) in [0, 1]
    mask_gt: np.ndarray  # (H, W) uint8 in {0, 1}

    def decoded_normals(self) -> np.ndarray:
        return self.normal * 2.0 - 1.0

    def stacked(self) -> np.ndarray:
        """(H, W, 9) channel stack normal | albedo | lambertian."""
        return np.concatenate([self.normal, self.albedo, self.lambertian], axis=2)


# ---------------------------------------------------------------------------
# spherical harmonics
# ---------------------------------------------------------------------------

_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
_C1 = 0.4886025119029199
_C2a = 1.0925484305920792
_C2b = 0.31539156525252005
_C2c = 0.5462742152960396


def sh_basis(normals: np.ndarray) -> np.ndarray:
    """Real SH basis Y_0..Y_8 evaluated at unit directions; shape (..., 9)."""
    n = np.asarray(normals, dtype=float)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack(
        [
            np.full_like(x, _C0),
            _C1 * y,
            _C1 * z,
            _C1 * x,
            _C2a * x * y,
            _C2a * y * z,
            _C2b * (3.0 * z**2 - 1.0),
            _C2a * x * z,
            _C2c * (x**2 - y**2),
        ],
        axis=-1,
    )


def sh_shade(normal: np.ndarray, sh_coeffs: np.ndarray) -> float:
    """Radiance sum_k l_k Y_k(normal) for a single unit normal."""
    normal = np.asarray(normal, dtype=float).reshape(3)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-3:
        raise DomainError("sh_shade requires a unit normal (within 1e-3)")
    coeffs = np.asarray(sh_coeffs, dtype=float).reshape(9)
    return float(sh_basis(normal) @ coeffs)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def rasterize(
    mesh: Mesh,
    camera: Camera,
    attributes: np.ndarray,
    size: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Z-buffered barycentric rasterization of per-vertex attributes.

    Returns (H, W, C) interpolated attribute image (0 outside coverage) and the
    (H, W) boolean coverage mask. Back faces (clockwise on screen) are culled.
    """
    h, w = size
    if h < 16 or w < 16:
        raise ConfigurationError("image size must be at least 16x16")
    attributes = np.asarray(attributes, dtype=float)
    if attributes.ndim == 1:
        attributes = attributes[:, None]
    out = np.zeros((h, w, attributes.shape[1]))
    coverage = np.zeros((h, w), dtype=bool)
    if mesh.faces.shape[0] == 0 or mesh.vertices.shape[0] == 0:
        return out, coverage
    if attributes.shape[0] != mesh.vertices.shape[0]:
        raise DomainError("need exactly one attribute vector per vertex")

    pts = camera.project(mesh.vertices)
    depth = mesh.vertices[:, 2]
    zbuf = np.full((h, w), -np.inf)

    tri = pts[mesh.faces]  # (F, 3, 2)
    # signed area in pixel coords (y down): counter-clockwise world winding
    # projects to negative area, which is the front-facing side here.
    area = (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1]) - (
        tri[:, 2, 0] - tri[:, 0, 0]
    ) * (tri[:, 1, 1] - tri[:, 0, 1])
    front = area < -1e-12

    for f in np.nonzero(front)[0]:
        (x0, y0), (x1, y1), (x2, y2) = tri[f]
        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) + 0.5)), w - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) + 0.5)), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        xs = np.arange(xmin, xmax + 1) + 0.5
        ys = np.arange(ymin, ymax + 1) + 0.5
        px, py = np.meshgrid(xs, ys)

        a = area[f]
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / a
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / a
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue

        vidx = mesh.faces[f]
        z = w0 * depth[vidx[0]] + w1 * depth[vidx[1]] + w2 * depth[vidx[2]]
        sub_z = zbuf[ymin : ymax + 1, xmin : xmax + 1]
        win = inside & (z > sub_z)
        if not win.any():
            continue
        sub_z[win] = z[win]
        coverage[ymin : ymax + 1, xmin : xmax + 1][win] = True
        interp = (
            w0[..., None] * attributes[vidx[0]]
            + w1[..., None] * attributes[vidx[1]]
            + w2[..., None] * attributes[vidx[2]]
        )
        out[ymin : ymax + 1, xmin : xmax + 1][win] = interp[win]
    return out, coverage


def render_conditions(
    assets: ModelAssets,
    params: HeadParams,
    albedo_colors: np.ndarray,
    lighting: Lighting,
    camera: Camera,
    size: tuple[int, int],
) -> ConditionSet:
    """Render the normal / albedo / Lambertian condition images and mask."""
    mesh = deform(assets, params)
    normals = vertex_normals(mesh)
    albedo_colors = np.asarray(albedo_colors, dtype=float)
    if albedo_colors.shape != (assets.n_vertices, 3):
        raise DomainError(f"albedo_colors must have shape ({assets.n_vertices}, 3)")

    attrs = np.concatenate([normals, albedo_colors], axis=1)
    raster, coverage = rasterize(mesh, camera, attrs, size)

    n = raster[..., 0:3]
    lengths = np.linalg.norm(n, axis=-1, keepdims=True)
    safe = np.where(lengths > 1e-12, lengths, 1.0)
    n = np.where(coverage[..., None], n / safe, 0.0)

    normal_img = np.where(coverage[..., None], (n + 1.0) * 0.5, BACKGROUND)
    albedo_img = np.where(coverage[..., None], np.clip(raster[..., 3:6], 0.0, 1.0), BACKGROUND)
    shade = sh_basis(n) @ lighting.sh_coeffs
    lambertian = np.clip(albedo_img * shade[..., None], 0.0, 1.0)
    lambertian = np.where(coverage[..., None], lambertian, BACKGROUND)
    return ConditionSet(
        normal=normal_img,
        albedo=albedo_img,
        lambertian=lambertian,
        mask_gt=coverage.astype(np.uint8),
    )


def render_shaded(
    assets: ModelAssets,
    params: HeadParams,
    albedo_colors: np.ndarray,
    lighting: Lighting,
    camera: Camera,
    size: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Lambertian RGB rendering alone: (H, W, 3) image in [0,1] plus mask."""
    cond = render_conditions(assets, params, albedo_colors, lighting, camera, size)
    return cond.lambertian, cond.mask_gt


def landmark_map(
    assets: ModelAssets,
    params: HeadParams,
    camera: Camera,
    size: tuple[int, int],
    fiducial_vertex_ids: np.ndarray,
) -> np.ndarray:
    """Gaussian splat image of projected fiducial vertices, (H, W, 1) in [0,1].

    The degraded condition signal used by the landmark-only conditioning mode.
    """
    ids = np.asarray(fiducial_vertex_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= assets.n_vertices):
        raise ConfigurationError("fiducial vertex id out of range")
    h, w = size
    img = np.zeros((h, w))
    if ids.size == 0:
        return img[..., None]
    mesh = deform(assets, params)
    pts = camera.project(mesh.vertices[ids])
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    for x, y in pts:
        r2 = (xs - x) ** 2 + (ys - y) ** 2
        img += np.exp(-r2 / (2.0 * LANDMARK_SIGMA**2))
    return np.clip(img, 0.0, 1.0)[..., None]


def default_fiducial_ids(assets: ModelAssets) -> np.ndarray:
    """Vertex ids of nine stable fiducials (eyes, nose, mouth, chin, ears, brow)."""
    dirs = assets.template_vertices / np.linalg.norm(assets.template_vertices, axis=1, keepdims=True)
    targets = np.array(
        [
            [-0.35, 0.18, 0.92],  # left eye
            [0.35, 0.18, 0.92],  # right eye
            [0.0, -0.10, 1.0],  # nose tip
            [-0.30, -0.42, 0.85],  # mouth corner L
            [0.30, -0.42, 0.85],  # mouth corner R
            [0.0, -0.75, 0.66],  # chin
            [-0.95, -0.05, 0.0],  # ear L
            [0.95, -0.05, 0.0],  # ear R
            [0.0, 0.55, 0.83],  # brow
        ]
    )
    targets = targets / np.linalg.norm(targets, axis=1, keepdims=True)
    ids = np.argmax(dirs @ targets.T, axis=0)
    return ids.astype(np.int64)


def neutral_albedo(assets: ModelAssets) -> np.ndarray:
    """Identity-independent smooth albedo used for condition renders.

    The condition images are deliberately generic facial appearance: they carry
    geometry and illumination but no per-identity coloring, so identity must
    come from the identity features. Deterministic function of the template.
    """
    v = assets.template_vertices
    base = np.empty((assets.n_vertices, 3))
    base[:, 0] = 0.62 + 0.14 * np.sin(2.1 * v[:, 0] + 0.4) * np.cos(1.3 * v[:, 1])
    base[:, 1] = 0.56 + 0.12 * np.cos(1.7 * v[:, 1] + 1.1)
    base[:, 2] = 0.52 + 0.10 * np.sin(1.9 * v[:, 2] + 2.0)
    return np.clip(base, 0.0, 1.0)


def check_head_fits(assets: ModelAssets, camera: Camera, size: tuple[int, int]) -> bool:
    """True when the template head projects inside the image under the camera."""
    pts = camera.project(assets.template_vertices)
    h, w = size
    margin = 0.5
    return bool(
        pts[:, 0].min() >= -margin
        and pts[:, 1].min() >= -margin
        and pts[:, 0].max() <= w + margin
        and pts[:, 1].max() <= h + margin
    )


def downsample_box(img: np.ndarray, factor: int) -> np.ndarray:
    """Box-average downsampling by an integer factor along the two leading axes."""
    h, w = img.shape[0] // factor, img.shape[1] // factor
    view = img[: h * factor, : w * factor].reshape(h, factor, w, factor, *img.shape[2:])
    return view.mean(axis=(1, 3))


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a [0,1] float image to uint8; the single quantizer used package-wide."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=float) / 255.0

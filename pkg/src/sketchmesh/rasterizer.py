"""Differentiable silhouette rendering. A mesh is projected under a viewpoint
with a perspective camera; per-face soft coverage (sigmoid of signed squared
distance to the face boundary) is aggregated into a silhouette by probabilistic
union. The union is accumulated in log space, which keeps the product of many
near-one terms exact and lets far-away face/pixel pairs be dropped at the
sigmoid asymptote."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from .geometry import Silhouette, TriangleMesh, Viewpoint

DEFAULT_FOV_DEGREES = 30.0


@dataclass(frozen=True)
class SoftRasterSettings:
    """Rendering knobs. `sigma` is in squared normalized-device units; the
    distance band around each face is band_multiplier * sqrt(sigma) wide, and
    coverage outside it is clamped to the sigmoid asymptote (zero)."""

    resolution: int = 128
    sigma: float = 1e-4
    fov_degrees: float = DEFAULT_FOV_DEGREES
    near: float = 0.1
    far: float | None = None
    band_multiplier: float = 3.0
    orthographic: bool = False

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")

    @property
    def focal(self) -> float:
        return 1.0 / math.tan(math.radians(self.fov_degrees) / 2.0)

    @property
    def band_ndc(self) -> float:
        return self.band_multiplier * math.sqrt(self.sigma)


def camera_basis(view: Viewpoint) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Right/up/forward unit vectors of a camera at the view position looking at
    the origin. World up is +y; at the poles (view direction parallel to up) the
    fallback up continues the azimuth-0 limit."""
    position = view.camera_position()
    forward = -position / np.linalg.norm(position)
    up_world = np.array([0.0, 1.0, 0.0])
    if abs(float(forward @ up_world)) > 1.0 - 1e-9:
        up_world = np.array([0.0, 0.0, -math.copysign(1.0, view.elevation)])
    right = np.cross(forward, up_world)
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return position, right, up, forward


def camera_tensors(
    views: list[Viewpoint], dtype=torch.float32, device="cpu"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Stacked camera positions (B, 3) and world-to-camera rotations (B, 3, 3)
    whose rows are right/up/forward."""
    pos, rot = [], []
    for v in views:
        p, r, u, f = camera_basis(v)
        pos.append(p)
        rot.append(np.stack([r, u, f]))
    return (
        torch.as_tensor(np.stack(pos), dtype=dtype, device=device),
        torch.as_tensor(np.stack(rot), dtype=dtype, device=device),
    )


def project_vertices(
    vertices: torch.Tensor, views: list[Viewpoint], settings: SoftRasterSettings
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Project (B, V, 3) world-space vertices for B viewpoints.

    Returns NDC xy in (B, V, 2), depth along the view direction in (B, V), and
    a validity mask that is False for vertices at or behind the near plane (and
    beyond the far plane when one is set)."""
    if vertices.ndim != 3:
        raise ValueError("expected vertices of shape (batch, V, 3)")
    if len(views) != vertices.shape[0]:
        raise ValueError("one viewpoint per batch item required")
    pos, rot = camera_tensors(views, dtype=vertices.dtype, device=vertices.device)
    cam = torch.einsum("bij,bvj->bvi", rot, vertices - pos[:, None, :])
    depth = cam[..., 2]
    valid = depth > settings.near
    if settings.far is not None:
        valid = valid & (depth < settings.far)
    if settings.orthographic:
        # debug mode: scale so framing roughly matches perspective at the origin
        dist = torch.as_tensor(
            [v.distance for v in views], dtype=vertices.dtype, device=vertices.device
        )
        ndc = settings.focal * cam[..., :2] / dist[:, None, None]
    else:
        safe_depth = depth.clamp(min=settings.near)
        ndc = settings.focal * cam[..., :2] / safe_depth[..., None]
    return ndc, depth, valid


def ndc_to_pixels(ndc: torch.Tensor, resolution: int) -> torch.Tensor:
    """NDC in [-1, 1] to continuous pixel coordinates; y flips so row 0 is the
    top of the image."""
    x = (ndc[..., 0] + 1.0) * 0.5 * resolution
    y = (1.0 - ndc[..., 1]) * 0.5 * resolution
    return torch.stack([x, y], dim=-1)


@dataclass(frozen=True)
class ProjectedVertices:
    pixels: np.ndarray
    depth: np.ndarray
    valid: np.ndarray


def project(mesh: TriangleMesh, view: Viewpoint, settings: SoftRasterSettings) -> ProjectedVertices:
    """Per-vertex pixel coordinates and view-direction depth for one mesh.
    Vertices behind the near plane are marked invalid rather than raised on; a
    fully clipped mesh yields an all-invalid projection."""
    verts = torch.as_tensor(mesh.vertices, dtype=torch.float64)[None]
    ndc, depth, valid = project_vertices(verts, [view], settings)
    px = ndc_to_pixels(ndc, settings.resolution)
    return ProjectedVertices(
        pixels=px[0].numpy(), depth=depth[0].numpy(), valid=valid[0].numpy()
    )


def _face_pixel_pairs(
    face_px: torch.Tensor,
    resolution: int,
    band_px: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Candidate (face, pixel) pairs from banded face bounding boxes.

    face_px is (F, 3, 2) detached pixel coordinates. Returns pair face indices
    and the integer pixel column/row per pair. Faces whose banded bbox misses
    the image contribute nothing."""
    if face_px.numel() == 0:
        z = face_px.new_zeros(0, dtype=torch.long)
        return z, z, z
    lo = face_px.min(dim=1).values - band_px
    hi = face_px.max(dim=1).values + band_px
    # pixel center ix + 0.5 must fall in [lo, hi]
    ix0 = torch.ceil(lo[:, 0] - 0.5).long()
    ix1 = torch.floor(hi[:, 0] - 0.5).long()
    iy0 = torch.ceil(lo[:, 1] - 0.5).long()
    iy1 = torch.floor(hi[:, 1] - 0.5).long()
    ix0 = ix0.clamp(0, resolution - 1)
    iy0 = iy0.clamp(0, resolution - 1)
    ix1 = ix1.clamp(-1, resolution - 1)
    iy1 = iy1.clamp(-1, resolution - 1)
    nx = (ix1 - ix0 + 1).clamp(min=0)
    ny = (iy1 - iy0 + 1).clamp(min=0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        z = face_px.new_zeros(0, dtype=torch.long)
        return z, z, z
    pair_face = torch.repeat_interleave(torch.arange(len(counts)), counts)
    starts = torch.cumsum(counts, 0) - counts
    within = torch.arange(total) - starts[pair_face]
    nx_f = nx[pair_face]
    px = ix0[pair_face] + within % nx_f
    py = iy0[pair_face] + within // nx_f
    return pair_face, px, py


def _signed_sq_distance(tri: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Squared distance from each point to its triangle's boundary, positive
    inside and negative outside. tri is (P, 3, 2), points is (P, 2)."""
    d2 = None
    signs = []
    for k in range(3):
        a = tri[:, k]
        b = tri[:, (k + 1) % 3]
        ab = b - a
        ap = points - a
        denom = (ab * ab).sum(dim=1).clamp(min=1e-12)
        t = ((ap * ab).sum(dim=1) / denom).clamp(0.0, 1.0)
        closest = a + t[:, None] * ab
        dk2 = ((points - closest) ** 2).sum(dim=1)
        d2 = dk2 if d2 is None else torch.minimum(d2, dk2)
        signs.append(ab[:, 0] * ap[:, 1] - ab[:, 1] * ap[:, 0])
    s = torch.stack(signs, dim=1)
    inside = (s >= 0).all(dim=1) | (s <= 0).all(dim=1)
    return torch.where(inside, d2, -d2)


def soft_silhouette_batch(
    vertices: torch.Tensor,
    faces: torch.Tensor,
    views: list[Viewpoint],
    settings: SoftRasterSettings,
) -> torch.Tensor:
    """Soft silhouettes (B, H, W) in [0, 1) for a batch of vertex sets sharing
    one face list. Differentiable in the vertices. Aggregation order is fixed
    (single-threaded index_add over log terms), so output is deterministic."""
    B = vertices.shape[0]
    res = settings.resolution
    ndc, _, valid = project_vertices(vertices, views, settings)
    px_all = ndc_to_pixels(ndc, res)
    band_px = settings.band_ndc * res * 0.5
    acc = vertices.new_zeros(B * res * res)
    for i in range(B):
        face_ok = valid[i][faces].all(dim=1)
        if not bool(face_ok.any()):
            continue
        f2d = px_all[i][faces[face_ok]]  # (Fk, 3, 2), grad flows
        pair_face, px, py = _face_pixel_pairs(f2d.detach(), res, band_px)
        if len(pair_face) == 0:
            continue
        centers = torch.stack([px.to(f2d.dtype) + 0.5, py.to(f2d.dtype) + 0.5], dim=1)
        # signed squared distance in NDC units (sigma's units), not pixels
        tri_ndc = (f2d[pair_face] - res * 0.5) * (2.0 / res)
        pt_ndc = (centers - res * 0.5) * (2.0 / res)
        sgn_d2 = _signed_sq_distance(tri_ndc, pt_ndc)
        # log(1 - sigmoid(t)) = -softplus(t), summed per pixel
        log_terms = -F.softplus(sgn_d2 / settings.sigma)
        acc = acc.index_add(0, i * res * res + py * res + px, log_terms)
    return 1.0 - torch.exp(acc).view(B, res, res)


def hard_silhouette_batch(
    vertices: torch.Tensor,
    faces: torch.Tensor,
    views: list[Viewpoint],
    settings: SoftRasterSettings,
) -> torch.Tensor:
    """Binary coverage at pixel centers, (B, H, W) float of {0, 1}. No gradients."""
    B = vertices.shape[0]
    res = settings.resolution
    with torch.no_grad():
        ndc, _, valid = project_vertices(vertices, views, settings)
        px_all = ndc_to_pixels(ndc, res)
        out = torch.zeros(B * res * res, dtype=vertices.dtype)
        for i in range(B):
            face_ok = valid[i][faces].all(dim=1)
            if not bool(face_ok.any()):
                continue
            f2d = px_all[i][faces[face_ok]]
            pair_face, px, py = _face_pixel_pairs(f2d, res, band_px=0.0)
            if len(pair_face) == 0:
                continue
            centers = torch.stack(
                [px.to(f2d.dtype) + 0.5, py.to(f2d.dtype) + 0.5], dim=1
            )
            sgn_d2 = _signed_sq_distance(f2d[pair_face], centers)
            covered = sgn_d2 >= 0
            if bool(covered.any()):
                idx = (i * res * res + py * res + px)[covered]
                out[idx] = 1.0
    return out.view(B, res, res)


def active_band_mask(
    mesh: TriangleMesh, view: Viewpoint, settings: SoftRasterSettings
) -> np.ndarray:
    """Boolean (H, W) mask of pixels inside at least one face's distance band.
    Gradient checks are only meaningful on these pixels; outside them coverage
    is clamped to the asymptote and the gradient is identically zero."""
    res = settings.resolution
    verts = torch.as_tensor(mesh.vertices, dtype=torch.float64)[None]
    faces = torch.as_tensor(mesh.faces)
    ndc, _, valid = project_vertices(verts, [view], settings)
    px_all = ndc_to_pixels(ndc, res)
    mask = np.zeros((res, res), dtype=bool)
    face_ok = valid[0][faces].all(dim=1)
    if not bool(face_ok.any()):
        return mask
    f2d = px_all[0][faces[face_ok]]
    band_px = settings.band_ndc * res * 0.5
    pair_face, px, py = _face_pixel_pairs(f2d, res, band_px)
    mask[py.numpy(), px.numpy()] = True
    return mask


def soft_silhouette(
    mesh: TriangleMesh, view: Viewpoint, settings: SoftRasterSettings
) -> Silhouette:
    verts = torch.as_tensor(mesh.vertices, dtype=torch.float64)[None]
    faces = torch.as_tensor(mesh.faces)
    out = soft_silhouette_batch(verts, faces, [view], settings)
    return Silhouette(out[0].numpy())


def hard_silhouette(
    mesh: TriangleMesh, view: Viewpoint, resolution: int, settings: SoftRasterSettings | None = None
) -> Silhouette:
    if settings is None:
        settings = SoftRasterSettings(resolution=resolution)
    elif settings.resolution != resolution:
        settings = replace(settings, resolution=resolution)
    verts = torch.as_tensor(mesh.vertices, dtype=torch.float64)[None]
    faces = torch.as_tensor(mesh.faces)
    out = hard_silhouette_batch(verts, faces, [view], settings)
    return Silhouette(out[0].numpy())


def save_silhouette_png(sil: Silhouette, path) -> None:
    """8-bit grayscale PNG, white = covered."""
    from PIL import Image

    arr = np.round(np.asarray(sil.values, dtype=np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_silhouette_png(path) -> Silhouette:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0
    return Silhouette(arr)

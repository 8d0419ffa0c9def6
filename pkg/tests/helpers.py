"""Procedural fixtures shared across test modules: axis-aligned box meshes,
simple furniture-style compositions of boxes, and toy dataset parameters."""

from __future__ import annotations

import numpy as np
import torch

from sketchmesh.geometry import TriangleMesh
from sketchmesh.rasterizer import active_band_mask, soft_silhouette_batch

# Unit cube corner ordering: index bit 0 -> x, bit 1 -> y, bit 2 -> z.
_CUBE_FACES = np.array(
    [
        [0, 2, 1], [1, 2, 3],  # z = lo
        [4, 5, 6], [5, 7, 6],  # z = hi
        [0, 1, 4], [1, 5, 4],  # y = lo
        [2, 6, 3], [3, 6, 7],  # y = hi
        [0, 4, 2], [2, 4, 6],  # x = lo
        [1, 3, 5], [3, 7, 5],  # x = hi
    ],
    dtype=np.int64,
)


def box_mesh(center, size) -> TriangleMesh:
    """Axis-aligned box with outward-facing triangles."""
    center = np.asarray(center, dtype=np.float64)
    half = np.asarray(size, dtype=np.float64) / 2.0
    corners = np.array(
        [[(i >> a) & 1 for a in range(3)] for i in range(8)], dtype=np.float64
    )
    verts = center + (corners * 2.0 - 1.0) * half
    return TriangleMesh(verts, _CUBE_FACES)


def merge_meshes(meshes) -> TriangleMesh:
    verts = []
    faces = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.num_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def chair_mesh(
    seat_w: float = 0.42,
    seat_d: float = 0.40,
    seat_h: float = 0.05,
    seat_y: float = -0.08,
    leg_t: float = 0.055,
    back_h: float = 0.38,
    back_t: float = 0.05,
) -> TriangleMesh:
    """Chair assembled from touching axis-aligned boxes: seat slab, four legs,
    back rest. Touching (not overlapping) boxes keep ray-parity voxelization
    exact. Canonical orientation: the back is at -z, so the front (+z) is open."""
    parts = [box_mesh([0.0, seat_y, 0.0], [seat_w, seat_h, seat_d])]
    leg_top = seat_y - seat_h / 2.0
    leg_h = leg_top + 0.5  # legs reach down to y = -0.5
    lx = seat_w / 2.0 - leg_t / 2.0
    lz = seat_d / 2.0 - leg_t / 2.0
    for sx in (-1, 1):
        for sz in (-1, 1):
            parts.append(
                box_mesh(
                    [sx * lx, leg_top - leg_h / 2.0, sz * lz],
                    [leg_t, leg_h, leg_t],
                )
            )
    back_bottom = seat_y + seat_h / 2.0
    parts.append(
        box_mesh(
            [0.0, back_bottom + back_h / 2.0, -(seat_d / 2.0 - back_t / 2.0)],
            [seat_w, back_h, back_t],
        )
    )
    return merge_meshes(parts)


def random_chair(rng: np.random.Generator) -> TriangleMesh:
    """Chair with randomized proportions, kept inside [-0.5, 0.5]^3."""
    return chair_mesh(
        seat_w=float(rng.uniform(0.34, 0.52)),
        seat_d=float(rng.uniform(0.32, 0.48)),
        seat_h=float(rng.uniform(0.04, 0.08)),
        seat_y=float(rng.uniform(-0.14, -0.02)),
        leg_t=float(rng.uniform(0.04, 0.07)),
        back_h=float(rng.uniform(0.28, 0.46)),
        back_t=float(rng.uniform(0.04, 0.07)),
    )


def table_mesh(rng: np.random.Generator | None = None) -> TriangleMesh:
    if rng is None:
        rng = np.random.default_rng(0)
    top_w = float(rng.uniform(0.6, 0.9))
    top_d = float(rng.uniform(0.5, 0.8))
    top_h = float(rng.uniform(0.05, 0.09))
    top_y = float(rng.uniform(0.05, 0.2))
    leg_t = float(rng.uniform(0.05, 0.09))
    parts = [box_mesh([0.0, top_y, 0.0], [top_w, top_h, top_d])]
    leg_top = top_y - top_h / 2.0
    leg_h = leg_top + 0.5
    lx = top_w / 2.0 - leg_t / 2.0
    lz = top_d / 2.0 - leg_t / 2.0
    for sx in (-1, 1):
        for sz in (-1, 1):
            parts.append(
                box_mesh([sx * lx, leg_top - leg_h / 2.0, sz * lz], [leg_t, leg_h, leg_t])
            )
    return merge_meshes(parts)


def build_toy_dataset(
    root,
    n_objects=3,
    n_views=4,
    image_size=64,
    sil_resolution=32,
    pyramid_levels=2,
    split="train",
    seed=9,
    class_label="chair",
    elevation_range=(0.1, 0.6),
    azimuth_range=(-1.2, 1.2),
):
    """Builds a small synthetic chair split on disk and loads it back."""
    from sketchmesh.data import (
        DatasetBuildConfig,
        ViewSamplingStrategy,
        build_manifest,
        build_synthetic_dataset,
        load_dataset,
    )

    rng = np.random.default_rng(seed)
    objects = {f"{class_label}_{i:03d}": random_chair(rng) for i in range(n_objects)}
    cfg = DatasetBuildConfig(
        image_size=image_size,
        sil_resolution=sil_resolution,
        views_per_object=n_views,
        view_strategy=ViewSamplingStrategy(
            kind="uniform-range",
            elevation_range=elevation_range,
            azimuth_range=azimuth_range,
        ),
    )
    build_synthetic_dataset(root, class_label, split, objects, cfg, seed=seed + 1)
    manifest = build_manifest(root, split)
    return load_dataset(manifest, pyramid_levels=pyramid_levels)


def distort_sketch(sketch, rng, dilate=1, amplitude=2.5, period=24.0):
    """Hand-drawn look-alike of a clean edge sketch: thickened strokes plus a
    smooth sinusoidal warp of the pixel grid."""
    from scipy import ndimage

    strokes = np.asarray(sketch) < 0.5
    if dilate:
        strokes = ndimage.binary_dilation(strokes, iterations=dilate)
    h, w = strokes.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=4)
    xs = xx + amplitude * np.sin(2 * np.pi * yy / period + phase[0]) \
        + 0.5 * amplitude * np.sin(2 * np.pi * xx / (1.7 * period) + phase[1])
    ys = yy + amplitude * np.sin(2 * np.pi * xx / period + phase[2]) \
        + 0.5 * amplitude * np.sin(2 * np.pi * yy / (1.6 * period) + phase[3])
    warped = ndimage.map_coordinates(
        strokes.astype(np.float64), [ys, xs], order=1, mode="constant", cval=0.0
    )
    return (1.0 - np.clip(warped, 0.0, 1.0)).astype(np.float32)


def fd_gradient_probes(mesh, view, settings, n_pixels, n_coords, seed):
    """Relative errors between autograd and central finite differences at
    random in-band pixels and vertex coordinates."""
    h = 1e-4
    rng = np.random.default_rng(seed)
    faces = torch.as_tensor(mesh.faces)
    base = torch.as_tensor(mesh.vertices, dtype=torch.float64)
    band = np.argwhere(active_band_mask(mesh, view, settings))
    assert len(band) > 0
    picks = band[rng.choice(len(band), size=min(n_pixels, len(band)), replace=False)]
    errors = []
    for py, px in picks:
        verts = base.clone().requires_grad_(True)
        s = soft_silhouette_batch(verts[None], faces, [view], settings)[0]
        s[py, px].backward()
        grad = verts.grad.numpy()
        for _ in range(n_coords):
            vi = int(rng.integers(mesh.num_vertices))
            ci = int(rng.integers(3))
            plus = base.clone()
            plus[vi, ci] += h
            minus = base.clone()
            minus[vi, ci] -= h
            sp = soft_silhouette_batch(plus[None], faces, [view], settings)[0, py, px]
            sm = soft_silhouette_batch(minus[None], faces, [view], settings)[0, py, px]
            fd = float((sp - sm) / (2 * h))
            an = float(grad[vi, ci])
            errors.append(abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return np.array(errors)

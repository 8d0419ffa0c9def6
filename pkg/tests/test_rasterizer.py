import math

import numpy as np
import pytest
import torch

from sketchmesh.geometry import TriangleMesh, Viewpoint, load_template
from sketchmesh.rasterizer import (
    SoftRasterSettings,
    active_band_mask,
    hard_silhouette,
    load_silhouette_png,
    project,
    save_silhouette_png,
    soft_silhouette,
    soft_silhouette_batch,
)
from helpers import box_mesh, chair_mesh, fd_gradient_probes

FRONT = Viewpoint(0.0, 0.0)


def render_soft(mesh, view, settings):
    verts = torch.as_tensor(mesh.vertices, dtype=torch.float64)[None]
    faces = torch.as_tensor(mesh.faces)
    return soft_silhouette_batch(verts, faces, [view], settings)[0].numpy()


def half_plane_triangle():
    # covers world x <= 0 across the whole visible field from the front view
    return TriangleMesh(
        np.array([[0.0, -3.0, 0.0], [0.0, 3.0, 0.0], [-6.0, 0.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )


class TestSettings:
    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            SoftRasterSettings(resolution=16, sigma=0.0)

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            SoftRasterSettings(resolution=1)

    def test_band_width(self):
        s = SoftRasterSettings(resolution=16, sigma=1e-4)
        assert s.band_ndc == pytest.approx(3.0 * math.sqrt(1e-4))


class TestProjection:
    def test_origin_projects_to_image_center(self):
        m = TriangleMesh(
            np.array([[0.0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]]), np.array([[0, 1, 2]])
        )
        for view in [FRONT, Viewpoint(0.4, 1.2), Viewpoint(-0.8, -2.5)]:
            p = project(m, view, SoftRasterSettings(resolution=64))
            assert p.pixels[0] == pytest.approx([32.0, 32.0], abs=1e-9)

    def test_depth_positive_and_near_clipping(self):
        m = TriangleMesh(
            np.array([[0.0, 0, 0], [0, 0, 10.0], [0, 0.1, 0]]), np.array([[0, 1, 2]])
        )
        p = project(m, FRONT, SoftRasterSettings(resolution=64))
        assert p.depth[0] == pytest.approx(2.732, abs=1e-6)
        assert p.valid[0]
        assert not p.valid[1]  # behind the camera

    def test_displacement_along_view_ray_keeps_pixel(self):
        view = Viewpoint(0.3, 0.7)
        cam = view.camera_position()
        p0 = np.array([0.1, -0.05, 0.2])
        ray = (p0 - cam) / np.linalg.norm(p0 - cam)
        p1 = p0 + 0.3 * ray
        m = TriangleMesh(
            np.array([p0, p1, [0, 1, 0]]), np.array([[0, 1, 2]])
        )
        proj = project(m, view, SoftRasterSettings(resolution=64))
        assert proj.pixels[0] == pytest.approx(proj.pixels[1], abs=1e-9)
        assert proj.depth[1] > proj.depth[0]

    def test_opposite_azimuths_mirror_x(self):
        m = box_mesh([0.1, 0.0, 0.0], [0.4, 0.3, 0.3])  # offset breaks x symmetry
        front = hard_silhouette(m, Viewpoint(0.0, 0.0), 64).values
        back = hard_silhouette(m, Viewpoint(0.0, math.pi), 64).values
        assert np.array_equal(back, np.flip(front, axis=1))


class TestSoftSilhouette:
    def test_deep_interior_pixel_near_one(self):
        s = render_soft(half_plane_triangle(), FRONT, SoftRasterSettings(resolution=32))
        assert s[16, 4] > 0.99
        assert s[16, 28] < 0.01

    def test_off_screen_mesh_near_zero(self):
        m = box_mesh([50.0, 0.0, 0.0], [0.4, 0.4, 0.4])
        s = render_soft(m, FRONT, SoftRasterSettings(resolution=32))
        assert s.max() < 0.01

    def test_values_in_unit_interval(self):
        s = render_soft(chair_mesh(), Viewpoint(0.3, 0.5), SoftRasterSettings(resolution=64))
        assert s.min() >= 0.0 and s.max() <= 1.0

    def test_sigma_convergence_to_hard(self):
        m = chair_mesh()
        view = Viewpoint(0.25, 0.6)
        hard = hard_silhouette(m, view, 64).values
        soft = render_soft(m, view, SoftRasterSettings(resolution=64, sigma=1e-6))
        # compare away from silhouette edges: 3x3-constant neighborhoods only
        interior = np.ones_like(hard, dtype=bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                shifted = np.roll(np.roll(hard, dy, axis=0), dx, axis=1)
                interior &= shifted == hard
        assert np.abs(soft - hard)[interior].max() < 0.01

    def test_larger_sigma_never_sharpens(self):
        # sharpness measured as the peak neighbor difference; total variation is
        # not monotone here (wider bands add halo perimeter around every face)
        m = chair_mesh()
        view = Viewpoint(0.2, -0.4)

        def peak(a):
            return max(np.abs(np.diff(a, axis=0)).max(), np.abs(np.diff(a, axis=1)).max())

        peaks = [
            peak(render_soft(m, view, SoftRasterSettings(resolution=64, sigma=s)))
            for s in (1e-5, 1e-4, 1e-3, 1e-2)
        ]
        for sharp, blurred in zip(peaks, peaks[1:]):
            assert sharp >= blurred - 1e-9

    def test_occlusion_independent(self):
        # scaling a component about the camera center changes depth only
        view = Viewpoint(0.1, 0.3)
        cam = view.camera_position()
        tri_near = np.array([[0.0, -0.3, 0.1], [0.4, 0.3, 0.1], [-0.4, 0.3, 0.1]])
        tri_far = cam + 2.5 * (tri_near - cam)
        a = TriangleMesh(
            np.vstack([tri_near, tri_near * np.array([1, -1, 1])]),
            np.array([[0, 1, 2], [3, 4, 5]]),
        )
        b = TriangleMesh(
            np.vstack([tri_far, tri_near * np.array([1, -1, 1])]),
            np.array([[0, 1, 2], [3, 4, 5]]),
        )
        settings = SoftRasterSettings(resolution=48)
        sa = render_soft(a, view, settings)
        sb = render_soft(b, view, settings)
        assert np.abs(sa - sb).max() < 1e-9

    def test_face_order_irrelevant(self):
        m = chair_mesh()
        shuffled = TriangleMesh(m.vertices, m.faces[::-1].copy())
        settings = SoftRasterSettings(resolution=48)
        a = render_soft(m, FRONT, settings)
        b = render_soft(shuffled, FRONT, settings)
        assert np.abs(a - b).max() < 1e-9

    def test_downsampled_matches_direct_coarse_render(self):
        m = chair_mesh()
        view = Viewpoint(0.3, 0.4)
        fine = render_soft(m, view, SoftRasterSettings(resolution=128))
        coarse = render_soft(m, view, SoftRasterSettings(resolution=64))
        pooled = fine.reshape(64, 2, 64, 2).mean(axis=(1, 3))
        assert np.abs(pooled - coarse).mean() < 0.05




class TestGradients:
    def test_matches_finite_differences(self):
        settings = SoftRasterSettings(resolution=16)
        t = load_template(1)
        rng = np.random.default_rng(5)
        mesh = t.with_vertices(t.vertices * rng.uniform(0.3, 0.5, size=(42, 1)))
        errs = fd_gradient_probes(mesh, Viewpoint(0.3, 0.8), settings, 8, 4, seed=2)
        assert (errs < 1e-2).mean() >= 0.95

    def test_gradient_nonzero_outside_faces_inside_band(self):
        # a pixel just outside the triangle still feels the boundary
        tri = TriangleMesh(
            np.array([[0.0, -0.2, 0.0], [0.2, 0.2, 0.0], [-0.2, 0.2, 0.0]]),
            np.array([[0, 1, 2]]),
        )
        settings = SoftRasterSettings(resolution=32, sigma=1e-3)
        mask = active_band_mask(tri, FRONT, settings)
        verts = torch.as_tensor(tri.vertices, dtype=torch.float64).requires_grad_(True)
        faces = torch.as_tensor(tri.faces)
        s = soft_silhouette_batch(verts[None], faces, [FRONT], settings)[0]
        hard = hard_silhouette(tri, FRONT, 32).values
        outside_in_band = mask & (hard == 0)
        py, px = np.argwhere(outside_in_band)[0]
        s[py, px].backward()
        assert float(verts.grad.abs().sum()) > 0

    def test_gradient_zero_outside_band(self):
        tri = TriangleMesh(
            np.array([[0.0, -0.2, 0.0], [0.2, 0.2, 0.0], [-0.2, 0.2, 0.0]]),
            np.array([[0, 1, 2]]),
        )
        settings = SoftRasterSettings(resolution=32)
        mask = active_band_mask(tri, FRONT, settings)
        verts = torch.as_tensor(tri.vertices, dtype=torch.float64).requires_grad_(True)
        faces = torch.as_tensor(tri.faces)
        s = soft_silhouette_batch(verts[None], faces, [FRONT], settings)[0]
        py, px = np.argwhere(~mask)[0]
        s[py, px].backward()
        assert float(verts.grad.abs().sum()) == 0.0


class TestHardSilhouette:
    def test_half_plane_split(self):
        s = hard_silhouette(half_plane_triangle(), FRONT, 32).values
        assert (s[:, :16] == 1).all()
        assert (s[:, 16:] == 0).all()

    def test_binary(self):
        s = hard_silhouette(chair_mesh(), Viewpoint(0.3, 0.2), 64)
        assert s.is_binary()

    def test_azimuth_pi_mirrors(self):
        m = box_mesh([0.0, 0.05, 0.0], [0.4, 0.3, 0.3])  # z-symmetric
        a = hard_silhouette(m, Viewpoint(0.0, 0.3), 64).values
        b = hard_silhouette(m, Viewpoint(0.0, math.pi - 0.3), 64).values
        assert np.array_equal(b, np.flip(a, axis=1))


class TestPngIO:
    def test_round_trip(self, tmp_path):
        s = hard_silhouette(chair_mesh(), FRONT, 64)
        path = tmp_path / "sil.png"
        save_silhouette_png(s, path)
        back = load_silhouette_png(path)
        assert np.abs(back.values - s.values).max() < 1 / 254.0

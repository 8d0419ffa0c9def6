import json
import math

import numpy as np
import pytest
from scipy import ndimage

from sketchmesh.data import (
    DatasetBuildConfig,
    ViewSamplingStrategy,
    build_manifest,
    build_pyramid,
    build_synthetic_dataset,
    draw_view,
    edge_sketch,
    load_dataset,
    load_unlabeled_sketches,
    pad_to_square,
    render_flat,
    sample_random_view,
    sample_random_views,
    silhouette_from_rendering,
)
from sketchmesh.geometry import Silhouette, Viewpoint
from sketchmesh.rasterizer import hard_silhouette
from helpers import chair_mesh, random_chair


def disk_rendering(size=64, radius=16):
    yy, xx = np.mgrid[0:size, 0:size]
    mask = ((xx - size / 2) ** 2 + (yy - size / 2) ** 2 <= radius**2).astype(np.float32)
    rgb = 1.0 - 0.5 * mask
    return np.stack([rgb, rgb, rgb], axis=-1)


class TestEdgeSketch:
    def test_disk_gives_single_closed_ring(self):
        sketch = edge_sketch(disk_rendering())
        strokes = sketch < 0.5
        labels, count = ndimage.label(strokes, structure=np.ones((3, 3)))
        assert count == 1
        # ring radius close to the disk radius
        ys, xs = np.nonzero(strokes)
        r = np.hypot(ys - 32, xs - 32)
        assert abs(r.mean() - 16) < 3

    def test_constant_image_blank_with_warning(self):
        flat = np.full((32, 32, 3), 0.7, dtype=np.float32)
        with pytest.warns(UserWarning):
            sketch = edge_sketch(flat)
        assert (sketch == 1.0).all()

    def test_threshold_monotonicity(self):
        rendering = render_flat(chair_mesh(), Viewpoint(0.3, 0.4), 128)
        loose = (edge_sketch(rendering, (0.1, 0.2)) < 0.5).sum()
        strict = (edge_sketch(rendering, (0.3, 0.6)) < 0.5).sum()
        assert strict <= loose

    def test_uint8_input(self):
        sketch = edge_sketch((disk_rendering() * 255).astype(np.uint8))
        assert (sketch < 0.5).sum() > 0

    def test_deterministic(self):
        r = render_flat(chair_mesh(), Viewpoint(0.2, 0.1), 64)
        assert np.array_equal(edge_sketch(r), edge_sketch(r))


class TestSilhouetteFromRendering:
    def test_alpha_channel(self):
        r = render_flat(chair_mesh(), Viewpoint(0.2, 0.3), 64)
        sil = silhouette_from_rendering(r)
        assert sil.is_binary()
        assert sil.values.sum() == (r[..., 3] > 0.5).sum()

    def test_fully_opaque(self):
        r = np.ones((8, 8, 4), dtype=np.float32)
        assert (silhouette_from_rendering(r).values == 1).all()

    def test_empty_alpha(self):
        r = np.zeros((8, 8, 4), dtype=np.float32)
        r[..., :3] = 1.0
        assert (silhouette_from_rendering(r).values == 0).all()

    def test_known_background_without_alpha(self):
        r = disk_rendering()
        sil = silhouette_from_rendering(r, background=(1.0, 1.0, 1.0))
        assert sil.values.sum() > 700  # pi * 16^2 ~ 804

    def test_missing_alpha_and_background_rejected(self):
        with pytest.raises(ValueError):
            silhouette_from_rendering(disk_rendering())


class TestBuildPyramid:
    def test_single_level_identity(self):
        s = Silhouette(np.eye(8, dtype=np.float32))
        p = build_pyramid(s, 1)
        assert p.num_levels == 1
        assert np.array_equal(p.finest.values, s.values)

    def test_all_ones_stays_ones(self):
        s = Silhouette(np.ones((16, 16), dtype=np.float32))
        p = build_pyramid(s, 3)
        for level in p.levels:
            assert (level.values == 1).all()

    def test_checkerboard_ties_go_to_one(self):
        board = np.indices((4, 4)).sum(axis=0) % 2
        p = build_pyramid(Silhouette(board.astype(np.float32)), 2)
        assert (p.levels[0].values == 1).all()
        assert p.levels[0].resolution == (2, 2)

    def test_coarsest_first(self):
        s = Silhouette(np.ones((32, 32), dtype=np.float32))
        p = build_pyramid(s, 3)
        assert [lv.resolution[0] for lv in p.levels] == [8, 16, 32]

    def test_level_is_pooled_binarized_next_level(self):
        sil = hard_silhouette(chair_mesh(), Viewpoint(0.25, 0.4), 64)
        p = build_pyramid(sil, 3)
        for coarse, fine in zip(p.levels, p.levels[1:]):
            n = fine.resolution[0] // 2
            pooled = fine.values.reshape(n, 2, n, 2).mean(axis=(1, 3))
            assert np.array_equal(coarse.values, (pooled >= 0.5).astype(np.float32))

    def test_indivisible_resolution_rejected(self):
        with pytest.raises(ValueError):
            build_pyramid(Silhouette(np.ones((12, 12))), 4)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            build_pyramid(Silhouette(np.ones((8, 16))), 2)


class TestViewSampling:
    def test_seeded_sequence_reproducible(self):
        strat = ViewSamplingStrategy(kind="uniform-range")
        a = sample_random_views(strat, 10, seed=3)
        b = sample_random_views(strat, 10, seed=3)
        assert [(v.elevation, v.azimuth) for v in a] == [(v.elevation, v.azimuth) for v in b]
        assert sample_random_view(strat, 3).azimuth == a[0].azimuth

    def test_uniform_range_bounds(self):
        strat = ViewSamplingStrategy(
            kind="uniform-range",
            elevation_range=(-math.pi / 6, math.pi / 6),
            azimuth_range=(-math.pi, math.pi),
        )
        for v in sample_random_views(strat, 200, seed=0):
            assert -math.pi / 6 <= v.elevation <= math.pi / 6
            assert -math.pi <= v.azimuth < math.pi

    def test_dataset_views_chi_square(self):
        pool = [Viewpoint(0.1 * i, 0.3 * i) for i in range(5)]
        strat = ViewSamplingStrategy(kind="dataset-views", pool=pool)
        draws = sample_random_views(strat, 10000, seed=7)
        n, p = 10000, 1 / 5
        sigma = math.sqrt(n * p * (1 - p))
        for target in pool:
            count = sum(1 for v in draws if v.azimuth == target.azimuth)
            assert abs(count - n * p) < 3 * sigma

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            ViewSamplingStrategy(kind="dataset-views", pool=())

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ValueError):
            ViewSamplingStrategy(kind="spiral")

    def test_draw_view_normalizes(self):
        strat = ViewSamplingStrategy(
            kind="uniform-range", elevation_range=(0.2, 0.2), azimuth_range=(4.0, 4.0)
        )
        v = draw_view(strat, np.random.default_rng(0))
        assert -math.pi <= v.azimuth < math.pi


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    rng = np.random.default_rng(1)
    objects = {f"chair_{i:03d}": random_chair(rng) for i in range(2)}
    cfg = DatasetBuildConfig(
        image_size=64,
        sil_resolution=32,
        views_per_object=3,
        view_strategy=ViewSamplingStrategy(
            kind="uniform-range",
            elevation_range=(0.1, 0.6),
            azimuth_range=(-1.2, 1.2),
        ),
    )
    build_synthetic_dataset(root, "chair", "train", objects, cfg, seed=5)
    manifest = build_manifest(root, "train", provenance="toy")
    return root, manifest, objects


class TestDatasetBuildAndLoad:
    def test_record_count(self, tiny_dataset):
        _, manifest, _ = tiny_dataset
        ds = load_dataset(manifest, pyramid_levels=2)
        assert len(ds) == 6
        assert ds.skipped == 0
        assert ds.classes == ["chair"]

    def test_record_contents(self, tiny_dataset):
        root, manifest, objects = tiny_dataset
        ds = load_dataset(manifest, pyramid_levels=2)
        r = ds.records[0]
        assert r.sketch.shape == (64, 64)
        assert [lv.resolution[0] for lv in r.pyramid.levels] == [16, 32]
        assert r.pyramid.finest.is_binary()
        assert r.class_label == "chair"
        assert r.mesh_path and (root / r.mesh_path).exists()
        n = r.viewpoint.normalized()
        assert r.viewpoint.elevation == pytest.approx(n.elevation)

    def test_silhouette_round_trip_exact(self, tiny_dataset):
        root, manifest, objects = tiny_dataset
        ds = load_dataset(manifest, pyramid_levels=1)
        for r in ds.records:
            again = hard_silhouette(objects[r.object_id], r.viewpoint, 32).values
            assert np.array_equal(r.pyramid.finest.values, again)

    def test_strokes_hug_silhouette_boundary(self, tiny_dataset):
        root, manifest, objects = tiny_dataset
        ds = load_dataset(manifest, pyramid_levels=1)
        for r in ds.records[:3]:
            mask = hard_silhouette(objects[r.object_id], r.viewpoint, 64).values > 0.5
            boundary = mask ^ ndimage.binary_erosion(mask)
            allowed = ndimage.binary_dilation(boundary, iterations=2)
            strokes = r.sketch < 0.5
            assert (strokes & ~allowed).sum() == 0

    def test_deterministic_order_and_shuffle(self, tiny_dataset):
        _, manifest, _ = tiny_dataset
        a = load_dataset(manifest, pyramid_levels=1)
        b = load_dataset(manifest, pyramid_levels=1)
        assert [(r.object_id, r.view_index) for r in a] == [
            (r.object_id, r.view_index) for r in b
        ]
        s1 = load_dataset(manifest, pyramid_levels=1, shuffle_seed=4)
        s2 = load_dataset(manifest, pyramid_levels=1, shuffle_seed=4)
        assert [(r.object_id, r.view_index) for r in s1] == [
            (r.object_id, r.view_index) for r in s2
        ]

    def test_missing_file_listed(self, tiny_dataset, tmp_path):
        root, manifest, _ = tiny_dataset
        data = json.loads(manifest.read_text())
        data["entries"][0]["views"].append(99)
        bad = tmp_path / "manifest.train.json"
        bad.write_text(json.dumps(data))
        # manifest must sit at the dataset root to resolve paths
        bad_at_root = root / "manifest.broken.json"
        bad_at_root.write_text(json.dumps(data))
        with pytest.raises(FileNotFoundError, match="view_99"):
            load_dataset(bad_at_root, pyramid_levels=1)

    def test_corrupt_file_skipped_with_count(self, tiny_dataset):
        root, manifest, _ = tiny_dataset
        target = next((root / "chair" / "train").glob("*/view_0.sketch.png"))
        original = target.read_bytes()
        try:
            target.write_bytes(b"not a png")
            ds = load_dataset(manifest, pyramid_levels=1)
            assert ds.skipped == 1
            assert len(ds) == 5
        finally:
            target.write_bytes(original)

    def test_empty_root_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            build_manifest(tmp_path, "train")


class TestUnlabeledSketches:
    def test_pad_to_square_geometry(self):
        img = np.zeros((10, 20), dtype=np.float32)  # dark wide strip
        out = pad_to_square(img, 64)
        assert out.shape == (64, 64)
        assert out[0, 0] == 1.0  # padded white
        assert (out < 0.5).any()

    def test_load_directory(self, tmp_path):
        from PIL import Image

        for i, shape in enumerate([(30, 50), (64, 64)]):
            arr = np.full(shape, 255 - 40 * i, dtype=np.uint8)
            arr[5:10, 5:20] = 0
            Image.fromarray(arr, mode="L").save(tmp_path / f"s{i}.png")
        sketches = load_unlabeled_sketches(tmp_path, image_size=64)
        assert len(sketches) == 2
        assert all(s.shape == (64, 64) for s in sketches)

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            load_unlabeled_sketches(tmp_path)

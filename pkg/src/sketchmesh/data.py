"""Dataset tooling: synthetic sketch generation from renderings (Canny edges of
flat-shaded views), binary silhouettes and their multi-resolution pyramids,
random-view sampling strategies, on-disk dataset layout, and loaders.

Layout: root/<class>/<split>/<object_id>/view_<k>.{sketch.png, sil.png, view.json}
        root/<class>/meshes/<object_id>.obj
        root/manifest.<split>.json
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    Silhouette,
    SilhouettePyramid,
    TriangleMesh,
    Viewpoint,
    export_mesh,
)
from .rasterizer import SoftRasterSettings, hard_silhouette

log = logging.getLogger(__name__)

OBJECT_GRAY = 0.5  # flat shade of rendered objects, on a white background


def edge_sketch(rendering: np.ndarray, thresholds: tuple = (0.1, 0.2)) -> np.ndarray:
    """Canny edge map of a rendering, inverted to dark strokes on white.

    rendering: (H, W, 3) or (H, W, 4) float in [0, 1] (or uint8). Returns an
    (H, W) float32 image in [0, 1] where stroke pixels are 0. A featureless
    rendering produces a blank (all-white) sketch with a warning."""
    from skimage.feature import canny

    img = np.asarray(rendering)
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    if img.ndim == 3:
        gray = img[..., :3].astype(np.float64) @ np.array([0.2125, 0.7154, 0.0721])
    elif img.ndim == 2:
        gray = img.astype(np.float64)
    else:
        raise ValueError("expected an (H, W[, C]) rendering")
    low, high = thresholds
    edges = canny(gray, sigma=1.0, low_threshold=low, high_threshold=high)
    if not edges.any():
        warnings.warn("edge_sketch: no edges found; returning a blank sketch")
    return (1.0 - edges.astype(np.float32))


def silhouette_from_rendering(
    rendering: np.ndarray, background: tuple | None = None
) -> Silhouette:
    """Binary mask from a rendering: alpha > 0.5 when an alpha channel exists,
    otherwise pixels that differ from the known background color."""
    img = np.asarray(rendering)
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    if img.ndim == 3 and img.shape[2] == 4:
        return Silhouette((img[..., 3] > 0.5).astype(np.float32))
    if background is None:
        raise ValueError("rendering has no alpha channel and no background color was given")
    bg = np.asarray(background, dtype=np.float32)
    diff = np.abs(img[..., : len(bg)] - bg).max(axis=-1)
    return Silhouette((diff > 0.02).astype(np.float32))


def build_pyramid(S: Silhouette, levels: int) -> SilhouettePyramid:
    """Ground-truth pyramid: repeated 2x average pooling from the finest level,
    re-binarized at 0.5 with ties going to 1. Returned coarsest first."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = S.resolution
    if h != w:
        raise ValueError("pyramids require square silhouettes")
    if h % (2 ** (levels - 1)) != 0:
        raise ValueError(
            f"finest resolution {h} is not divisible by 2^{levels - 1}"
        )
    out = [S]
    current = S.values.astype(np.float64)
    for _ in range(levels - 1):
        n = current.shape[0] // 2
        pooled = current.reshape(n, 2, n, 2).mean(axis=(1, 3))
        current = (pooled >= 0.5).astype(np.float64)
        out.append(Silhouette(current.astype(np.float32)))
    return SilhouettePyramid(tuple(reversed(out)))


@dataclass(frozen=True)
class ViewSamplingStrategy:
    """Either draw from an explicit pool of viewpoints ("dataset-views") or
    uniformly from elevation/azimuth intervals ("uniform-range")."""

    kind: str = "uniform-range"
    pool: tuple = ()
    elevation_range: tuple = (-math.pi / 2, math.pi / 2)
    azimuth_range: tuple = (-math.pi, math.pi)
    distance: float = 2.732

    def __post_init__(self):
        if self.kind not in ("dataset-views", "uniform-range"):
            raise ValueError(f"unknown view sampling strategy {self.kind!r}")
        object.__setattr__(self, "pool", tuple(self.pool))
        if self.kind == "dataset-views" and not self.pool:
            raise ValueError("dataset-views strategy requires a non-empty view pool")


def draw_view(strategy: ViewSamplingStrategy, rng: np.random.Generator) -> Viewpoint:
    if strategy.kind == "dataset-views":
        return strategy.pool[int(rng.integers(len(strategy.pool)))]
    e = float(rng.uniform(*strategy.elevation_range))
    a = float(rng.uniform(*strategy.azimuth_range))
    return Viewpoint(e, a, strategy.distance).normalized()


def sample_random_views(strategy: ViewSamplingStrategy, n: int, seed: int) -> list[Viewpoint]:
    rng = np.random.default_rng(seed)
    return [draw_view(strategy, rng) for _ in range(n)]


def sample_random_view(strategy: ViewSamplingStrategy, seed: int) -> Viewpoint:
    return sample_random_views(strategy, 1, seed)[0]


# ---------------------------------------------------------------------------
# Synthetic rendering and dataset construction


def render_flat(
    mesh: TriangleMesh, view: Viewpoint, image_size: int, settings: SoftRasterSettings | None = None
) -> np.ndarray:
    """(H, W, 4) float rendering: flat mid-gray object on white, alpha = coverage."""
    mask = hard_silhouette(mesh, view, image_size, settings).values
    rgb = 1.0 - (1.0 - OBJECT_GRAY) * mask
    return np.stack([rgb, rgb, rgb, mask], axis=-1).astype(np.float32)


def _save_gray_png(arr: np.ndarray, path) -> None:
    Image.fromarray(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


def _load_gray_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0


@dataclass(frozen=True)
class DatasetBuildConfig:
    image_size: int = 224
    sil_resolution: int = 128
    views_per_object: int = 20
    view_strategy: ViewSamplingStrategy = field(default_factory=ViewSamplingStrategy)
    canny_thresholds: tuple = (0.1, 0.2)
    camera_distance: float = 2.732
    provenance: str = "synthetic"


def build_synthetic_dataset(
    root,
    class_label: str,
    split: str,
    objects: dict,
    config: DatasetBuildConfig,
    seed: int = 0,
) -> None:
    """Render every object from per-object random viewpoints and write sketches,
    silhouettes, view files, and meshes under the dataset layout. Deterministic
    for a fixed seed."""
    root = Path(root)
    mesh_dir = root / class_label / "meshes"
    mesh_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for object_id in sorted(objects):
        mesh = objects[object_id]
        obj_dir = root / class_label / split / object_id
        obj_dir.mkdir(parents=True, exist_ok=True)
        export_mesh(mesh, mesh_dir / f"{object_id}.obj")
        for k in range(config.views_per_object):
            view = draw_view(config.view_strategy, rng)
            rendering = render_flat(mesh, view, config.image_size)
            sketch = edge_sketch(rendering, config.canny_thresholds)
            sil = hard_silhouette(mesh, view, config.sil_resolution)
            _save_gray_png(sketch, obj_dir / f"view_{k}.sketch.png")
            _save_gray_png(sil.values, obj_dir / f"view_{k}.sil.png")
            e_deg, a_deg = view.as_degrees()
            (obj_dir / f"view_{k}.view.json").write_text(
                json.dumps({"elevation_deg": e_deg, "azimuth_deg": a_deg})
            )


def build_manifest(root, split: str, provenance: str = "synthetic") -> Path:
    """Scan the dataset tree and write manifest.<split>.json listing every
    object and its views."""
    root = Path(root)
    entries = []
    classes = set()
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        split_dir = class_dir / split
        if not split_dir.is_dir():
            continue
        classes.add(class_dir.name)
        for obj_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            views = sorted(
                int(f.name.split("_")[1].split(".")[0])
                for f in obj_dir.glob("view_*.view.json")
            )
            mesh_rel = f"{class_dir.name}/meshes/{obj_dir.name}.obj"
            entries.append(
                {
                    "class": class_dir.name,
                    "object_id": obj_dir.name,
                    "views": views,
                    "mesh": mesh_rel if (root / mesh_rel).exists() else None,
                }
            )
    if not entries:
        raise ValueError(f"no dataset entries found under {root} for split {split!r}")
    manifest = {
        "format": 1,
        "split": split,
        "classes": sorted(classes),
        "provenance": provenance,
        "entries": entries,
    }
    path = root / f"manifest.{split}.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


@dataclass(frozen=True)
class SampleRecord:
    sketch: np.ndarray
    pyramid: SilhouettePyramid
    viewpoint: Viewpoint
    class_label: str
    object_id: str
    view_index: int
    mesh_path: str | None = None


class LoadedDataset:
    """Validated sample records plus the count of corrupt entries skipped."""

    def __init__(self, records: list, skipped: int, manifest: dict, root: Path):
        self.records = records
        self.skipped = skipped
        self.manifest = manifest
        self.root = root

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    @property
    def classes(self) -> list[str]:
        return self.manifest["classes"]

    def viewpoints(self) -> list[Viewpoint]:
        return [r.viewpoint for r in self.records]


def load_dataset(
    manifest_path, pyramid_levels: int = 3, shuffle_seed: int | None = None
) -> LoadedDataset:
    """Load every record named by the manifest. Files missing from disk are an
    error (listed); files present but unreadable are skipped with a logged
    count. Order is sorted and deterministic; pass shuffle_seed for a
    reproducible shuffle."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    missing = []
    jobs = []
    for entry in manifest["entries"]:
        obj_dir = root / entry["class"] / manifest["split"] / entry["object_id"]
        for k in entry["views"]:
            paths = [
                obj_dir / f"view_{k}.sketch.png",
                obj_dir / f"view_{k}.sil.png",
                obj_dir / f"view_{k}.view.json",
            ]
            missing += [str(p.relative_to(root)) for p in paths if not p.exists()]
            jobs.append((entry, k, paths))
        if entry.get("mesh") and not (root / entry["mesh"]).exists():
            missing.append(entry["mesh"])
    if missing:
        raise FileNotFoundError(
            f"manifest names {len(missing)} missing files: {', '.join(missing[:8])}"
            + ("..." if len(missing) > 8 else "")
        )
    records = []
    skipped = 0
    for entry, k, (sketch_p, sil_p, view_p) in jobs:
        try:
            sketch = _load_gray_png(sketch_p)
            sil = Silhouette(_load_gray_png(sil_p).round())
            meta = json.loads(view_p.read_text())
            view = Viewpoint.from_degrees(meta["elevation_deg"], meta["azimuth_deg"])
            pyramid = build_pyramid(sil, pyramid_levels)
        except Exception as exc:
            skipped += 1
            log.warning("skipping corrupt record %s: %s", sketch_p, exc)
            continue
        records.append(
            SampleRecord(
                sketch=sketch,
                pyramid=pyramid,
                viewpoint=view,
                class_label=entry["class"],
                object_id=entry["object_id"],
                view_index=k,
                mesh_path=entry.get("mesh"),
            )
        )
    if skipped:
        log.warning("skipped %d corrupt records while loading %s", skipped, manifest_path)
    records.sort(key=lambda r: (r.class_label, r.object_id, r.view_index))
    if shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
        rng.shuffle(records)
    return LoadedDataset(records, skipped, manifest, root)


def pad_to_square(image: np.ndarray, size: int, fill: float = 1.0) -> np.ndarray:
    """Aspect-preserving resize to fit in (size, size), padded with `fill`."""
    img = Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8), mode="L")
    w, h = img.size
    scale = size / max(w, h)
    nw, nh = max(1, round(w * scale)), max(1, round(h * scale))
    img = img.resize((nw, nh), Image.BILINEAR)
    canvas = np.full((size, size), fill, dtype=np.float32)
    y0 = (size - nh) // 2
    x0 = (size - nw) // 2
    canvas[y0 : y0 + nh, x0 : x0 + nw] = np.asarray(img, dtype=np.float32) / 255.0
    return canvas


def load_unlabeled_sketches(path, image_size: int = 224) -> list[np.ndarray]:
    """All images under `path` as (image_size, image_size) grayscale arrays in
    [0, 1], aspect-preserving padded. Sorted by filename."""
    path = Path(path)
    files = sorted(
        p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not files:
        raise ValueError(f"no sketch images found under {path}")
    out = []
    for f in files:
        arr = np.asarray(Image.open(f).convert("L"), dtype=np.float32) / 255.0
        out.append(pad_to_square(arr, image_size))
    return out

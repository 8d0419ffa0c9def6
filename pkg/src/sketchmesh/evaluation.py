"""Metrics and baselines: voxel IoU, Chamfer distance, 2D reprojection IoU,
nearest-neighbor sketch retrieval, view-prediction error, domain probes, and
the ablation harness that retrains flag variants on a fixed split."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import TrainingConfig
from .data import LoadedDataset, ViewSamplingStrategy, draw_view
from .geometry import (
    TriangleMesh,
    Viewpoint,
    import_mesh,
    joint_normalize,
    sample_surface,
    voxelize,
)
from .losses import iou_loss, view_loss
from .networks import ModelBundle, TinyBackbone, run_inference
from .rasterizer import hard_silhouette
from .training import train_model

log = logging.getLogger(__name__)

VOXEL_RESOLUTION = 32
CHAMFER_POINTS = 2048
CHAMFER_SCALE = 1000.0


# -- core metrics ---------------------------------------------------------------


def voxel_iou(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    resolution: int = VOXEL_RESOLUTION,
    normalize: bool = True,
) -> float:
    """Volumetric overlap over union on the shared voxel grid. By default both
    meshes are brought into the evaluation frame by one joint transform, which
    preserves their relative placement."""
    if normalize:
        mesh_a, mesh_b = joint_normalize([mesh_a, mesh_b])
    occ_a = voxelize(mesh_a, resolution)
    occ_b = voxelize(mesh_b, resolution)
    union = int(np.logical_or(occ_a, occ_b).sum())
    if union == 0:
        warnings.warn("voxel_iou: both occupancies empty; degenerate comparison")
        return 1.0
    return int(np.logical_and(occ_a, occ_b).sum()) / union


def _sample_seeds(seed) -> tuple:
    if isinstance(seed, tuple):
        a, b = seed
        return int(a), int(b)
    return int(seed), int(seed) + 1


def chamfer_distance(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    n_points: int = CHAMFER_POINTS,
    seed=0,
) -> float:
    """Symmetric mean squared nearest-neighbor distance between surface samples,
    reported x1000. `seed` may be an (a, b) pair to pin each argument position's
    sample set independently."""
    if n_points < 256:
        raise ValueError(f"n_points must be >= 256, got {n_points}")
    from sklearn.neighbors import KDTree

    seed_a, seed_b = _sample_seeds(seed)
    pts_a = sample_surface(mesh_a, n_points, seed_a)
    pts_b = sample_surface(mesh_b, n_points, seed_b)
    d_ab, _ = KDTree(pts_b).query(pts_a, k=1)
    d_ba, _ = KDTree(pts_a).query(pts_b, k=1)
    return CHAMFER_SCALE * 0.5 * float((d_ab**2).mean() + (d_ba**2).mean())


def silhouette_iou_2d(mesh: TriangleMesh, view: Viewpoint, target) -> float:
    """Reprojection overlap: render the mesh at the ground-truth view and score
    binary IoU against the ground-truth silhouette."""
    resolution = target.resolution[0]
    rendered = hard_silhouette(mesh, view, resolution)
    return 1.0 - iou_loss(target, rendered)


def expected_random_view_error(pool) -> float:
    """Mean view_loss of a uniform-random pool predictor against a uniform pool
    truth: the average over all ordered view pairs, computed exactly."""
    views = list(pool)
    if not views:
        raise ValueError("empty view pool")
    total = 0.0
    for a in views:
        for b in views:
            total += view_loss(a, b)
    return total / (len(views) ** 2)


# -- model-level measurements -----------------------------------------------------


def _mesh_cache(dataset: LoadedDataset) -> dict:
    meshes = {}
    for r in dataset:
        if r.mesh_path and r.mesh_path not in meshes:
            meshes[r.mesh_path] = import_mesh(dataset.root / r.mesh_path)
    return meshes


def generate_meshes(bundle: ModelBundle, dataset: LoadedDataset, mode: str, seed: int = 0):
    """Runs inference over every record. Yields (record, mesh, predicted view,
    conditioning view). Modes: pred-view (condition on the model's own
    prediction), gt-view (condition on the record's view), specified-view
    (condition on a seeded random view from the dataset pool)."""
    if mode not in ("pred-view", "gt-view", "specified-view"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    rng = np.random.default_rng(seed)
    strategy = None
    if mode == "specified-view":
        strategy = ViewSamplingStrategy(
            kind="dataset-views", pool=tuple(dataset.viewpoints())
        )
    for record in dataset:
        if mode == "pred-view":
            chosen = None
        elif mode == "gt-view":
            chosen = record.viewpoint
        else:
            chosen = draw_view(strategy, rng)
        mesh, predicted = run_inference(bundle, record.sketch, viewpoint=chosen)
        yield record, mesh, predicted, (chosen if chosen is not None else predicted)


def view_prediction_error(bundle: ModelBundle, dataset: LoadedDataset) -> float:
    """Mean angular view_loss between predicted and ground-truth viewpoints."""
    errors = []
    for record in dataset:
        _, predicted = run_inference(bundle, record.sketch)
        errors.append(view_loss(record.viewpoint, predicted))
    return float(np.mean(errors))


def steered_silhouette_iou(
    bundle: ModelBundle,
    dataset: LoadedDataset,
    views_per_sketch: int = 5,
    seed: int = 0,
) -> float:
    """View-steering fidelity: for each sketch, condition generation on random
    viewpoints and score the steered mesh's silhouette from each such viewpoint
    against the sketch's own silhouette. High only when the decoder genuinely
    uses the conditioning view."""
    rng = np.random.default_rng(seed)
    strategy = ViewSamplingStrategy(kind="dataset-views", pool=tuple(dataset.viewpoints()))
    resolution = dataset.records[0].pyramid.finest.resolution[0]
    scores = []
    for record in dataset:
        target = record.pyramid.finest
        for _ in range(views_per_sketch):
            steer = draw_view(strategy, rng)
            mesh, _ = run_inference(bundle, record.sketch, viewpoint=steer)
            rendered = hard_silhouette(mesh, steer, resolution)
            scores.append(1.0 - iou_loss(target, rendered))
    return float(np.mean(scores))


def domain_discriminator_accuracy(
    bundle: ModelBundle,
    synth_sketches,
    hand_sketches,
) -> float:
    """Accuracy of the bundle's own domain critic on a held-out mixed pool.

    Synthetic sketches count as correct when scored above 0.5, hand-drawn
    ones below. A critic kept near-optimal during adaptation that still
    reads near chance here can no longer tell the domains apart — the
    stated goal of the reversed-gradient objective. Distinct from
    :func:`domain_probe_accuracy`, which retrains a fresh linear probe to
    convergence on the frozen features and therefore measures residual
    linear separability rather than what the trained critic sees.
    """

    def scores(sketches):
        arr = np.stack([np.asarray(s, dtype=np.float32) for s in sketches])
        with torch.no_grad():
            z, _, _ = bundle.encoder(torch.from_numpy(arr)[:, None])
            return bundle.domain_discriminator(z).reshape(-1).numpy()

    bundle.eval()
    synth = scores(synth_sketches)
    hand = scores(hand_sketches)
    correct = float((synth > 0.5).sum() + (hand <= 0.5).sum())
    return correct / (len(synth) + len(hand))


def domain_probe_accuracy(
    bundle: ModelBundle,
    synth_sketches,
    hand_sketches,
    train_fraction: float = 0.5,
    seed: int = 0,
) -> float:
    """Held-out accuracy of a fresh linear probe separating synthetic from
    hand-drawn sketches on frozen encoder features. Near chance once the
    encoder's features carry no domain information."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    def features(sketches):
        arr = np.stack([np.asarray(s, dtype=np.float32) for s in sketches])
        with torch.no_grad():
            z, _, _ = bundle.encoder(torch.from_numpy(arr)[:, None])
        return z.numpy()

    bundle.eval()
    x = np.concatenate([features(synth_sketches), features(hand_sketches)])
    y = np.concatenate([np.zeros(len(synth_sketches)), np.ones(len(hand_sketches))])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    cut = int(len(x) * train_fraction)
    train_idx, test_idx = order[:cut], order[cut:]
    probe = make_pipeline(StandardScaler(), LogisticRegression(C=100.0, max_iter=5000))
    probe.fit(x[train_idx], y[train_idx])
    return float(probe.score(x[test_idx], y[test_idx]))


# -- retrieval baseline ------------------------------------------------------------


class SketchFeatureExtractor:
    """Features from a small sketch classifier: the backbone embedding of a CNN
    trained to name the sketch (class label when the gallery spans several
    classes, object id within a single class)."""

    def __init__(self, image_size: int, d_feature: int = 64, seed: int = 0):
        torch.manual_seed(seed)
        self.image_size = image_size
        self.backbone = TinyBackbone(d_feature)
        self.head: Optional[torch.nn.Linear] = None
        self.labels: list = []
        self.d_feature = d_feature

    def fit(self, sketches, labels, epochs: int = 10, seed: int = 0):
        self.labels = sorted(set(labels))
        if len(self.labels) < 2:
            raise ValueError("classifier needs at least two distinct labels")
        index = {lab: i for i, lab in enumerate(self.labels)}
        y = torch.tensor([index[lab] for lab in labels])
        x = torch.from_numpy(np.stack(sketches).astype(np.float32))[:, None]
        torch.manual_seed(seed)
        self.head = torch.nn.Linear(self.d_feature, len(self.labels))
        params = list(self.backbone.parameters()) + list(self.head.parameters())
        optimizer = torch.optim.Adam(params, lr=1e-3)
        ce = torch.nn.CrossEntropyLoss()
        rng = np.random.default_rng(seed)
        self.backbone.train()
        for _ in range(epochs):
            order = rng.permutation(len(y))
            for lo in range(0, len(y), 32):
                idx = torch.from_numpy(order[lo : lo + 32].copy())
                optimizer.zero_grad()
                loss = ce(self.head(self.backbone(x[idx])), y[idx])
                loss.backward()
                optimizer.step()
        self.backbone.eval()
        return self

    def features(self, sketches) -> np.ndarray:
        arr = np.stack([np.asarray(s, dtype=np.float32) for s in sketches])
        if arr.shape[1:] != (self.image_size, self.image_size):
            raise ValueError(f"expected {self.image_size}x{self.image_size} sketches")
        with torch.no_grad():
            return self.backbone(torch.from_numpy(arr)[:, None]).numpy()


def train_sketch_classifier(
    dataset: LoadedDataset, epochs: int = 10, seed: int = 0
) -> SketchFeatureExtractor:
    records = list(dataset)
    size = records[0].sketch.shape[0]
    labels = [r.class_label for r in records]
    if len(set(labels)) < 2:
        labels = [r.object_id for r in records]
    extractor = SketchFeatureExtractor(size, seed=seed)
    return extractor.fit([r.sketch for r in records], labels, epochs=epochs, seed=seed)


class RetrievalIndex:
    """Gallery of training sketch features with their source meshes; queries
    return the mesh of the nearest gallery sketch in feature space."""

    def __init__(self, features: np.ndarray, object_ids, meshes):
        if len(features) == 0:
            raise ValueError("empty retrieval gallery")
        order = np.argsort(np.asarray(object_ids, dtype=object), kind="stable")
        self.features = np.asarray(features)[order]
        self.object_ids = [object_ids[i] for i in order]
        self.meshes = [meshes[i] for i in order]

    @classmethod
    def build(cls, dataset: LoadedDataset, extractor: SketchFeatureExtractor):
        records = list(dataset)
        cache = _mesh_cache(dataset)
        feats = extractor.features([r.sketch for r in records])
        ids = [r.object_id for r in records]
        meshes = [cache[r.mesh_path] for r in records]
        return cls(feats, ids, meshes)

    def query(self, sketch, extractor: SketchFeatureExtractor) -> TriangleMesh:
        f = extractor.features([sketch])[0]
        d = np.linalg.norm(self.features - f[None], axis=1)
        best = float(d.min())
        # entries are sorted by object id, so the first hit breaks ties low
        winner = int(np.nonzero(d <= best + 1e-12)[0][0])
        return self.meshes[winner]


def retrieval_baseline(
    sketch, dataset: LoadedDataset, extractor: SketchFeatureExtractor
) -> TriangleMesh:
    return RetrievalIndex.build(dataset, extractor).query(sketch, extractor)


# -- reports ---------------------------------------------------------------------


METRIC_COLUMNS = ("voxel_iou", "chamfer_x1000", "silhouette_iou_2d", "view_error_rad")


@dataclass
class EvalReport:
    mode: str
    config_hash: str
    dataset_id: str
    per_class: dict
    mean: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mean:
            self.mean = self._unweighted_mean(self.per_class)

    @staticmethod
    def _unweighted_mean(per_class: dict) -> dict:
        keys = sorted({k for metrics in per_class.values() for k in metrics})
        return {
            k: float(np.mean([metrics[k] for metrics in per_class.values() if k in metrics]))
            for k in keys
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "mode": self.mode,
                "config_hash": self.config_hash,
                "dataset_id": self.dataset_id,
                "per_class": self.per_class,
                "mean": self.mean,
                "notes": self.notes,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(d["mode"], d["config_hash"], d["dataset_id"], d["per_class"],
                   d["mean"], d.get("notes", {}))

    def to_csv(self) -> str:
        cols = [c for c in METRIC_COLUMNS if c in self.mean] or sorted(self.mean)
        lines = ["class," + ",".join(cols)]
        for cls_name in sorted(self.per_class):
            metrics = self.per_class[cls_name]
            lines.append(
                cls_name + "," + ",".join(f"{metrics[c]:.4f}" for c in cols)
            )
        lines.append("mean," + ",".join(f"{self.mean[c]:.4f}" for c in cols))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        path.with_suffix(".csv").write_text(self.to_csv())


def dataset_id(dataset: LoadedDataset) -> str:
    blob = json.dumps(dataset.manifest, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def evaluate_model(
    bundle: ModelBundle,
    dataset: LoadedDataset,
    mode: str = "pred-view",
    voxel_resolution: int = VOXEL_RESOLUTION,
    chamfer_points: int = CHAMFER_POINTS,
    seed: int = 0,
) -> EvalReport:
    """Full metric sweep in one inference pass per record: voxel IoU and Chamfer
    against the source mesh, reprojection IoU at the ground-truth view, and the
    view-prediction error."""
    cache = _mesh_cache(dataset)
    rows: dict = {}
    for record, mesh, predicted, _ in generate_meshes(bundle, dataset, mode, seed=seed):
        gt_mesh = cache[record.mesh_path]
        row = rows.setdefault(record.class_label, {c: [] for c in METRIC_COLUMNS})
        row["voxel_iou"].append(voxel_iou(mesh, gt_mesh, voxel_resolution))
        row["chamfer_x1000"].append(
            chamfer_distance(mesh, gt_mesh, chamfer_points, seed=seed)
        )
        row["silhouette_iou_2d"].append(
            silhouette_iou_2d(mesh, record.viewpoint, record.pyramid.finest)
        )
        row["view_error_rad"].append(view_loss(record.viewpoint, predicted))
    per_class = {
        cls_name: {metric: float(np.mean(vals)) for metric, vals in metrics.items()}
        for cls_name, metrics in rows.items()
    }
    return EvalReport(
        mode=mode,
        config_hash=bundle.config_hash,
        dataset_id=dataset_id(dataset),
        per_class=per_class,
        notes={
            "chamfer_scale": CHAMFER_SCALE,
            "voxel_resolution": voxel_resolution,
            "seed": seed,
        },
    )


# -- ablations ---------------------------------------------------------------------


ABLATION_FLAGS = ("RVR", "SD", "MS")


def variant_name(flags) -> str:
    flags = set(flags)
    unknown = flags - set(ABLATION_FLAGS)
    if unknown:
        raise ValueError(f"unknown ablation flags {sorted(unknown)}")
    return "+".join(f for f in ABLATION_FLAGS if f in flags) or "none"


def variant_config(base: TrainingConfig, flags) -> TrainingConfig:
    flags = set(flags)
    return replace(
        base,
        random_view_reinforcement="RVR" in flags,
        shape_discriminator="SD" in flags,
        multi_scale="MS" in flags,
    )


def run_ablation(
    train_dataset: LoadedDataset,
    test_dataset: LoadedDataset,
    base_config: TrainingConfig,
    variants=None,
    seed: int = 0,
) -> dict:
    """Trains one model per flag subset on the same data and seed; reports
    gt-view and pred-view voxel IoU for each. Returns {variant name: EvalReport}
    where each report carries both modes' metrics in per_class."""
    if variants is None:
        variants = [set(ABLATION_FLAGS), {"SD", "MS"}, {"RVR", "MS"}, {"RVR", "SD"}]
    reports = {}
    for flags in variants:
        name = variant_name(flags)
        cfg = variant_config(base_config, flags)
        log.info("ablation variant %s (config %s)", name, cfg.config_hash())
        bundle, _ = train_model(train_dataset, cfg)
        gt = evaluate_model(bundle, test_dataset, mode="gt-view", seed=seed)
        pred = evaluate_model(bundle, test_dataset, mode="pred-view", seed=seed)
        per_class = {
            cls_name: {
                "voxel_iou_gt_view": gt.per_class[cls_name]["voxel_iou"],
                "voxel_iou_pred_view": pred.per_class[cls_name]["voxel_iou"],
            }
            for cls_name in gt.per_class
        }
        reports[name] = EvalReport(
            mode="ablation",
            config_hash=cfg.config_hash(),
            dataset_id=gt.dataset_id,
            per_class=per_class,
            notes={"flags": sorted(flags)},
        )
    return reports

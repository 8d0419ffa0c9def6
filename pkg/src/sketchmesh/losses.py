"""Training objectives: silhouette IoU terms (plain, random-view reinforced,
progressive multi-scale), mesh regularizers, view-space L2 losses with azimuth
wraparound, discriminator cross-entropies, and the weighted total."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import torch

from .geometry import Silhouette, SilhouettePyramid, TriangleMesh, Viewpoint
from .rasterizer import SoftRasterSettings, soft_silhouette_batch

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Every weight is >= 0. `lambda_r` scales the random-view silhouette term;
    `level_weights` are the per-pyramid-level silhouette weights (coarsest
    first); the remaining lambdas weight the total objective. The regularizer
    term is lambda_laplacian * laplacian + lambda_flatten * flatten."""

    lambda_r: float = 0.1
    level_weights: tuple = (1.0, 1.0, 1.0)
    lambda_v: float = 10.0
    lambda_vr: float = 10.0
    lambda_sd: float = 0.1
    lambda_dd: float = 0.1
    lambda_laplacian: float = 0.1
    lambda_flatten: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "level_weights", tuple(float(w) for w in self.level_weights))
        scalars = [
            self.lambda_r, self.lambda_v, self.lambda_vr, self.lambda_sd,
            self.lambda_dd, self.lambda_laplacian, self.lambda_flatten,
        ]
        if any(w < 0 for w in scalars) or any(w < 0 for w in self.level_weights):
            raise ValueError("loss weights must be non-negative")


def _to_tensor(s) -> torch.Tensor:
    if isinstance(s, Silhouette):
        return torch.as_tensor(s.values, dtype=torch.float64)
    if isinstance(s, torch.Tensor):
        return s
    return torch.as_tensor(np.asarray(s, dtype=np.float64))


def iou_loss(s1, s2):
    """1 - |S1*S2| / |S1 + S2 - S1*S2| over pixels. Accepts Silhouette, array,
    or tensor inputs of equal shape; tensor inputs keep their gradient graph.
    Two identically empty silhouettes count as a perfect match (0), flagged
    with a warning."""
    a, b = _to_tensor(s1), _to_tensor(s2)
    if a.shape != b.shape:
        raise ValueError(f"silhouette shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    inter = (a * b).sum()
    union = (a + b - a * b).sum()
    if float(union.detach()) == 0.0:
        warnings.warn("iou_loss on two empty silhouettes; defined as 0")
        result = a.sum() * 0.0
    else:
        result = 1.0 - inter / union
    if isinstance(s1, torch.Tensor) or isinstance(s2, torch.Tensor):
        return result
    return float(result)


def batch_iou_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-sample IoU loss averaged over the batch; (B, H, W) tensors."""
    if a.shape != b.shape:
        raise ValueError("batch silhouette shapes differ")
    flat_a = a.reshape(a.shape[0], -1)
    flat_b = b.reshape(b.shape[0], -1)
    inter = (flat_a * flat_b).sum(dim=1)
    union = (flat_a + flat_b - flat_a * flat_b).sum(dim=1)
    return (1.0 - inter / union.clamp(min=PROB_EPS)).mean()


def silhouette_loss_batch(
    targets: torch.Tensor,
    verts_gtview: torch.Tensor,
    verts_randview: torch.Tensor,
    faces: torch.Tensor,
    views: list,
    views_r: list,
    lambda_r: float,
    settings: SoftRasterSettings,
) -> torch.Tensor:
    """Differentiable core of the silhouette objective on a batch:
    iou(targets, render(gt-view meshes)) + lambda_r * iou(targets, render(random-view meshes)).
    Gradients flow into both vertex tensors. The random-view render is skipped
    when lambda_r is zero."""
    if targets.shape[-1] != settings.resolution:
        raise ValueError(
            f"target resolution {tuple(targets.shape[-2:])} does not match render "
            f"resolution {settings.resolution}"
        )
    rendered = soft_silhouette_batch(verts_gtview, faces, views, settings)
    loss = batch_iou_loss(targets, rendered)
    if lambda_r != 0.0:
        rendered_r = soft_silhouette_batch(verts_randview, faces, views_r, settings)
        loss = loss + lambda_r * batch_iou_loss(targets, rendered_r)
    return loss


def silhouette_loss(
    S: Silhouette,
    mesh_gtview: TriangleMesh,
    mesh_randview: TriangleMesh,
    V: Viewpoint,
    V_r: Viewpoint,
    lambda_r: float,
    settings: SoftRasterSettings,
) -> float:
    """iou_loss(S, render(mesh_gtview, V)) + lambda_r * iou_loss(S, render(mesh_randview, V_r))."""
    if S.resolution != (settings.resolution, settings.resolution):
        raise ValueError(
            f"silhouette resolution {S.resolution} does not match render resolution "
            f"{settings.resolution}"
        )
    if not np.array_equal(mesh_gtview.faces, mesh_randview.faces):
        raise ValueError("both meshes must share one deformation topology")
    return float(
        silhouette_loss_batch(
            _to_tensor(S)[None],
            torch.as_tensor(mesh_gtview.vertices, dtype=torch.float64)[None],
            torch.as_tensor(mesh_randview.vertices, dtype=torch.float64)[None],
            torch.as_tensor(mesh_gtview.faces),
            [V],
            [V_r],
            lambda_r,
            settings,
        )
    )


def check_level_weights(level_weights, num_levels: int) -> list[float]:
    weights = [float(w) for w in level_weights]
    if len(weights) != num_levels:
        raise ValueError(f"{len(weights)} level weights for {num_levels} pyramid levels")
    if all(w == 0.0 for w in weights):
        raise ValueError("all level weights are zero: no training signal")
    return weights


def progressive_silhouette_loss_batch(
    level_targets: list,
    verts_gtview: torch.Tensor,
    verts_randview: torch.Tensor,
    faces: torch.Tensor,
    views: list,
    views_r: list,
    lambda_r: float,
    level_weights,
    settings: SoftRasterSettings,
) -> torch.Tensor:
    """Weighted sum over pyramid levels, each rendered and compared at its own
    resolution; zero-weight levels are skipped entirely (no render)."""
    weights = check_level_weights(level_weights, len(level_targets))
    total = None
    for target, weight in zip(level_targets, weights):
        if weight == 0.0:
            continue
        level_settings = replace(settings, resolution=target.shape[-1])
        term = weight * silhouette_loss_batch(
            target, verts_gtview, verts_randview, faces, views, views_r,
            lambda_r, level_settings,
        )
        total = term if total is None else total + term
    return total


def progressive_silhouette_loss(
    pyramid: SilhouettePyramid,
    mesh_gtview: TriangleMesh,
    mesh_randview: TriangleMesh,
    V: Viewpoint,
    V_r: Viewpoint,
    lambda_r: float,
    level_weights,
    settings: SoftRasterSettings,
) -> float:
    """Single-sample wrapper over the batched progressive loss."""
    targets = [_to_tensor(level)[None] for level in pyramid.levels]
    return float(
        progressive_silhouette_loss_batch(
            targets,
            torch.as_tensor(mesh_gtview.vertices, dtype=torch.float64)[None],
            torch.as_tensor(mesh_randview.vertices, dtype=torch.float64)[None],
            torch.as_tensor(mesh_gtview.faces),
            [V],
            [V_r],
            lambda_r,
            level_weights,
            settings,
        )
    )


class MeshRegularizers:
    """Precomputed topology for the two mesh smoothness terms. Built once per
    face list; evaluated on any vertex tensor with that topology.

    laplacian: mean_i || v_i - mean(neighbors(v_i)) ||^2
    flatten:   mean over adjacent face pairs of (cos theta + 1)^2, theta the
               dihedral angle (pi when coplanar), computed as (1 - n_i . n_j)^2
               on unit normals.
    """

    def __init__(self, faces: np.ndarray, num_vertices: int):
        faces = np.asarray(faces, dtype=np.int64)
        # vertex adjacency from edges
        edges = set()
        for a, b, c in faces:
            for i, j in ((a, b), (b, c), (c, a)):
                edges.add((min(i, j), max(i, j)))
        degree = np.zeros(num_vertices, dtype=np.int64)
        owners, neighbors = [], []
        for i, j in sorted(edges):
            owners += [i, j]
            neighbors += [j, i]
            degree[i] += 1
            degree[j] += 1
        if (degree == 0).any():
            isolated = int(np.argmax(degree == 0))
            raise ValueError(f"vertex {isolated} is isolated (no incident face)")
        self.num_vertices = num_vertices
        self.faces = torch.as_tensor(faces)
        self._owners = torch.as_tensor(np.array(owners))
        self._neighbors = torch.as_tensor(np.array(neighbors))
        self._degree = torch.as_tensor(degree)
        # face adjacency from shared edges
        edge_faces: dict[tuple[int, int], list[int]] = {}
        for f, (a, b, c) in enumerate(faces):
            for i, j in ((a, b), (b, c), (c, a)):
                edge_faces.setdefault((min(i, j), max(i, j)), []).append(f)
        pairs = [fs for fs in edge_faces.values() if len(fs) == 2]
        self._pair_i = torch.as_tensor(np.array([p[0] for p in pairs], dtype=np.int64))
        self._pair_j = torch.as_tensor(np.array([p[1] for p in pairs], dtype=np.int64))

    @classmethod
    def for_mesh(cls, mesh: TriangleMesh) -> "MeshRegularizers":
        return cls(mesh.faces, mesh.num_vertices)

    def laplacian(self, vertices: torch.Tensor) -> torch.Tensor:
        """vertices: (V, 3) or (B, V, 3); returns a scalar tensor."""
        single = vertices.ndim == 2
        v = vertices[None] if single else vertices
        B = v.shape[0]
        gathered = v[:, self._neighbors]  # (B, 2E, 3)
        sums = v.new_zeros(B, self.num_vertices, 3).index_add(1, self._owners, gathered)
        mean = sums / self._degree.to(v.dtype)[None, :, None]
        return ((v - mean) ** 2).sum(dim=2).mean()

    def flatten(self, vertices: torch.Tensor) -> torch.Tensor:
        single = vertices.ndim == 2
        v = vertices[None] if single else vertices
        tri = v[:, self.faces]  # (B, F, 3, 3)
        n = torch.cross(tri[:, :, 1] - tri[:, :, 0], tri[:, :, 2] - tri[:, :, 0], dim=-1)
        norms = n.norm(dim=-1)
        degenerate = norms < 1e-12
        if bool(degenerate.any()):
            warnings.warn("flatten_loss: skipping pairs with degenerate faces")
        unit = n / norms.clamp(min=1e-12)[..., None]
        dot = (unit[:, self._pair_i] * unit[:, self._pair_j]).sum(dim=-1)
        ok = ~(degenerate[:, self._pair_i] | degenerate[:, self._pair_j])
        terms = (1.0 - dot) ** 2
        if bool(ok.all()):
            return terms.mean()
        return (terms * ok.to(terms.dtype)).sum() / ok.to(terms.dtype).sum().clamp(min=1)


def laplacian_loss(mesh: TriangleMesh) -> float:
    reg = MeshRegularizers.for_mesh(mesh)
    return float(reg.laplacian(torch.as_tensor(mesh.vertices, dtype=torch.float64)))


def flatten_loss(mesh: TriangleMesh) -> float:
    reg = MeshRegularizers.for_mesh(mesh)
    return float(reg.flatten(torch.as_tensor(mesh.vertices, dtype=torch.float64)))


def wrap_angle_tensor(a: torch.Tensor) -> torch.Tensor:
    """Wrap to (-pi, pi] via atan2; differentiable away from the seam."""
    return torch.atan2(torch.sin(a), torch.cos(a))


def view_loss(V: Viewpoint, V_hat: Viewpoint) -> float:
    """Euclidean norm of (elevation difference, wrapped azimuth difference)."""
    de = V.elevation - V_hat.elevation
    da = math.atan2(
        math.sin(V.azimuth - V_hat.azimuth), math.cos(V.azimuth - V_hat.azimuth)
    )
    return math.hypot(de, da)


def view_loss_batch(
    elev_a: torch.Tensor, azim_a: torch.Tensor, elev_b: torch.Tensor, azim_b: torch.Tensor
) -> torch.Tensor:
    """Mean per-sample view_loss over a batch, differentiable."""
    de = elev_a - elev_b
    da = wrap_angle_tensor(azim_a - azim_b)
    return torch.sqrt(de * de + da * da + 1e-12).mean()


def view_reconstruction_loss(V: Viewpoint, V_roundtrip: Viewpoint) -> float:
    """Same metric as view_loss, applied to a view and its encode/decode round trip."""
    return view_loss(V, V_roundtrip)


def _bce(pos_scores, neg_scores) -> float:
    pos = torch.as_tensor(pos_scores, dtype=torch.float64).reshape(-1)
    neg = torch.as_tensor(neg_scores, dtype=torch.float64).reshape(-1)
    pos = pos.clamp(PROB_EPS, 1.0 - PROB_EPS)
    neg = neg.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return float(-(torch.log(pos).mean()) - torch.log(1.0 - neg).mean())


def bce_tensor(pos: torch.Tensor, neg: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of the discriminator losses for training."""
    pos = pos.reshape(-1).clamp(PROB_EPS, 1.0 - PROB_EPS)
    neg = neg.reshape(-1).clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(torch.log(pos).mean()) - torch.log(1.0 - neg).mean()


# a critic that answers 0.5 everywhere scores ln 2 on each of the two terms
# of bce_tensor; anything above this sum means the critic is being fooled
CRITIC_CHANCE_LOSS = 2.0 * math.log(2.0)


def shape_discriminator_loss(score_M, score_Mr) -> float:
    """Cross-entropy for the shape critic: ground-truth-view meshes labeled 1,
    random-view meshes labeled 0. Scores are clamped away from {0, 1}."""
    return _bce(score_M, score_Mr)


def domain_discriminator_loss(score_synth, score_hand) -> float:
    """Cross-entropy for the domain critic: synthetic-sketch features labeled 1,
    hand-drawn labeled 0."""
    return _bce(score_synth, score_hand)


TOTAL_LOSS_COMPONENTS = ("sp", "reg", "view", "view_recon", "shape_disc")


def total_loss(
    components: dict,
    weights: LossWeights,
    domain_adaptation: bool = False,
    domain_gate: float = 1.0,
):
    """sp + reg + lambda_v * view + lambda_vr * view_recon + lambda_sd * shape_disc
    (+ lambda_dd * domain_gate * domain_disc when domain adaptation is on).
    `sp` and `reg` carry their internal weights already; `domain_gate` is a
    per-step throttle on the adversarial domain term."""
    required = list(TOTAL_LOSS_COMPONENTS) + (["domain_disc"] if domain_adaptation else [])
    missing = [k for k in required if k not in components or components[k] is None]
    if missing:
        raise ValueError(f"missing loss components: {', '.join(missing)}")
    total = (
        components["sp"]
        + components["reg"]
        + weights.lambda_v * components["view"]
        + weights.lambda_vr * components["view_recon"]
        + weights.lambda_sd * components["shape_disc"]
    )
    if domain_adaptation:
        total = total + weights.lambda_dd * domain_gate * components["domain_disc"]
    return total

"""Experiment configuration: one dataclass shared by training, evaluation and
the CLI, loadable from JSON or TOML and hashable for provenance tracking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import ViewSamplingStrategy
from .geometry import DEFAULT_CAMERA_DISTANCE
from .losses import LossWeights
from .networks import ModelSpec
from .rasterizer import SoftRasterSettings


@dataclass(frozen=True)
class TrainingConfig:
    class_label: str = "chair"
    epochs: int = 300
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0

    encoder: str = "resnet18"
    image_size: int = 224
    d_z: int = 512
    d_v: int = 64
    d_s: int = 512
    template_subdivision: int = 3
    decoder_hidden: tuple = (512, 512)
    discriminator_hidden: tuple = (256, 128)
    # adversarial critics may track a faster clock than the networks they
    # police; 1.0 keeps a single optimizer group
    discriminator_lr_mult: float = 1.0
    camera_distance: float = DEFAULT_CAMERA_DISTANCE

    sigma: float = 1e-4
    silhouette_resolution: int = 128
    pyramid_levels: int = 3
    multi_scale: bool = True
    # epoch fractions at which each level (coarse to fine) becomes active
    level_milestones: Optional[tuple] = None

    weights: LossWeights = field(default_factory=LossWeights)
    random_view_reinforcement: bool = True
    shape_discriminator: bool = True

    random_view_kind: str = "dataset-views"
    elevation_range: tuple = (-math.pi / 2, math.pi / 2)
    azimuth_range: tuple = (-math.pi, math.pi)
    view_recon_batch: int = 64

    domain_adaptation: bool = False
    unlabeled_dir: Optional[str] = None
    # which features the reversed domain gradient reaches: hand-drawn only
    # ("to-synthetic", the synthetic cloud is a fixed task-anchored target)
    # or both domains ("mutual")
    domain_align: str = "to-synthetic"
    # throttle the reversed domain push as the critic nears chance, so the
    # two-player game settles at balance instead of orbiting through it
    domain_balance: bool = False

    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only
    validate_every: int = 0  # epochs; 0 = skip intra-run validation

    def __post_init__(self):
        for name in ("epochs", "batch_size", "pyramid_levels", "view_recon_batch"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.sigma <= 0:
            raise ValueError("learning_rate and sigma must be positive")
        if self.discriminator_lr_mult <= 0:
            raise ValueError("discriminator_lr_mult must be positive")
        if self.silhouette_resolution % (2 ** (self.pyramid_levels - 1)) != 0:
            raise ValueError(
                f"silhouette_resolution {self.silhouette_resolution} not divisible "
                f"for {self.pyramid_levels} pyramid levels"
            )
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))
        object.__setattr__(
            self, "discriminator_hidden", tuple(int(h) for h in self.discriminator_hidden)
        )
        object.__setattr__(self, "elevation_range", tuple(float(v) for v in self.elevation_range))
        object.__setattr__(self, "azimuth_range", tuple(float(v) for v in self.azimuth_range))
        if self.level_milestones is not None:
            ms = tuple(float(m) for m in self.level_milestones)
            if len(ms) != self.pyramid_levels:
                raise ValueError("level_milestones must have one entry per pyramid level")
            if any(b < a for a, b in zip(ms, ms[1:])) or ms[0] != 0.0:
                raise ValueError("level_milestones must start at 0 and be non-decreasing")
            object.__setattr__(self, "level_milestones", ms)
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))
        if self.domain_adaptation and not self.unlabeled_dir:
            raise ValueError("domain_adaptation requires unlabeled_dir")
        if self.domain_align not in ("to-synthetic", "mutual"):
            raise ValueError(f"unknown domain_align {self.domain_align!r}")

    # -- derived views onto other modules ------------------------------------

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            class_label=self.class_label,
            encoder=self.encoder,
            image_size=self.image_size,
            d_z=self.d_z,
            d_v=self.d_v,
            d_s=self.d_s,
            template_subdivision=self.template_subdivision,
            decoder_hidden=self.decoder_hidden,
            discriminator_hidden=self.discriminator_hidden,
        )

    def raster_settings(self, resolution: Optional[int] = None) -> SoftRasterSettings:
        return SoftRasterSettings(
            resolution=resolution or self.silhouette_resolution, sigma=self.sigma
        )

    def effective_weights(self) -> LossWeights:
        w = self.weights
        if not self.random_view_reinforcement:
            w = dataclasses.replace(w, lambda_r=0.0)
        if not self.shape_discriminator:
            w = dataclasses.replace(w, lambda_sd=0.0)
        return w

    def level_resolutions(self) -> tuple:
        """Coarse-to-fine resolutions, finest = silhouette_resolution."""
        n = self.pyramid_levels
        return tuple(self.silhouette_resolution // 2 ** (n - 1 - i) for i in range(n))

    def milestones(self) -> tuple:
        if self.level_milestones is not None:
            return self.level_milestones
        return tuple(i / self.pyramid_levels for i in range(self.pyramid_levels))

    def level_weights_at(self, epoch: int) -> tuple:
        """Per-level loss weights for this epoch under the progressive schedule.

        Levels activate cumulatively at their milestone fraction; without the
        multi-scale schedule only the finest level is ever rendered.
        """
        if not self.multi_scale:
            return tuple(0.0 for _ in range(self.pyramid_levels - 1)) + (1.0,)
        frac = epoch / max(self.epochs, 1)
        return tuple(1.0 if frac >= m else 0.0 for m in self.milestones())

    def view_strategy(self, pool=()) -> ViewSamplingStrategy:
        return ViewSamplingStrategy(
            kind=self.random_view_kind,
            pool=tuple(pool),
            elevation_range=self.elevation_range,
            azimuth_range=self.azimuth_range,
            distance=self.camera_distance,
        )

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def save_config(config: TrainingConfig, path) -> None:
    path = Path(path)
    if path.suffix != ".json":
        raise ValueError("configs are written as .json (TOML accepted for reading)")
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path) -> TrainingConfig:
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
    elif path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    else:
        raise ValueError(f"unsupported config format {path.suffix!r}")
    return TrainingConfig.from_dict(data)

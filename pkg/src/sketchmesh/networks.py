"""Trainable components: sketch encoder with view/shape latent split, the view
autoencoder, the template-deforming shape decoder, both adversarial critics,
and the gradient reversal function that turns their objectives into a single
minimization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .geometry import TriangleMesh, Viewpoint, deform, load_template

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor; everything needed to rebuild the module graph."""

    class_label: str = "object"
    encoder: str = "tiny"
    image_size: int = 224
    d_z: int = 512
    d_v: int = 64
    d_s: int = 512
    template_subdivision: int = 3
    decoder_hidden: tuple = (512, 512)
    discriminator_hidden: tuple = (256, 128)
    max_offset: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))
        object.__setattr__(
            self, "discriminator_hidden", tuple(int(h) for h in self.discriminator_hidden)
        )
        for name in ("d_z", "d_v", "d_s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.encoder not in ("tiny", "resnet18"):
            raise ValueError(f"unknown encoder backbone {self.encoder!r}")


def _mlp(dims, final_activation=None) -> nn.Sequential:
    layers = []
    for a, b in zip(dims, dims[1:-1]):
        layers += [nn.Linear(a, b), nn.LeakyReLU(0.02)]
    layers.append(nn.Linear(dims[-2], dims[-1]))
    if final_activation is not None:
        layers.append(final_activation)
    return nn.Sequential(*layers)


def _zero_final_linear(module: nn.Sequential) -> None:
    for layer in reversed(module):
        if isinstance(layer, nn.Linear):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)
            return


class TinyBackbone(nn.Module):
    """Small strided CNN for CPU-scale experiments."""

    def __init__(self, d_z: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, 16, 5, stride=4, padding=2), nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(64, 128, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.fc = nn.Linear(128, d_z)

    def forward(self, x):
        return self.fc(self.features(x).flatten(1))


def make_backbone(name: str, d_z: int) -> nn.Module:
    if name == "tiny":
        return TinyBackbone(d_z)
    if name == "resnet18":
        from torchvision.models import resnet18

        net = resnet18(weights=None)
        net.conv1 = nn.Conv2d(1, 64, kernel_size=7, stride=2, padding=3, bias=False)
        net.fc = nn.Linear(net.fc.in_features, d_z)
        return net
    raise ValueError(f"unknown encoder backbone {name!r}")


class Encoder(nn.Module):
    """Sketch image -> (z, z_v, z_s). The backbone produces the image feature z;
    two parallel linear heads split it into the view and shape codes."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.image_size = spec.image_size
        self.backbone = make_backbone(spec.encoder, spec.d_z)
        self.view_head = nn.Linear(spec.d_z, spec.d_v)
        self.shape_head = nn.Linear(spec.d_z, spec.d_s)

    def forward(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (self.image_size, self.image_size):
            raise ValueError(
                f"expected sketch batch of shape (B, 1, {self.image_size}, "
                f"{self.image_size}), got {tuple(x.shape)}"
            )
        z = self.backbone(x)
        return z, self.view_head(z), self.shape_head(z)


def views_to_tensor(views, dtype=torch.float32) -> torch.Tensor:
    """(B, 2) tensor of (elevation, azimuth) in radians."""
    return torch.tensor([[v.elevation, v.azimuth] for v in views], dtype=dtype)


class ViewEncoder(nn.Module):
    """Viewpoint angles -> latent view code. Angles enter as (sin, cos) pairs so
    azimuth pi and -pi map to identical codes."""

    def __init__(self, spec: ModelSpec, hidden: int = 64):
        super().__init__()
        self.net = _mlp((4, hidden, hidden, spec.d_v))

    def forward(self, angles: torch.Tensor) -> torch.Tensor:
        e, a = angles[:, 0], angles[:, 1]
        emb = torch.stack([torch.sin(e), torch.cos(e), torch.sin(a), torch.cos(a)], dim=1)
        return self.net(emb)


class ViewDecoder(nn.Module):
    """Latent view code -> (elevation, azimuth). Elevation is tanh-bounded to
    [-pi/2, pi/2]; azimuth is recovered from a predicted (sin, cos) pair via
    atan2, which lands in (-pi, pi] by construction."""

    def __init__(self, spec: ModelSpec, hidden: int = 64):
        super().__init__()
        self.net = _mlp((spec.d_v, hidden, hidden, 3))

    def forward(self, code: torch.Tensor):
        out = self.net(code)
        elevation = torch.tanh(out[:, 0]) * (torch.pi / 2)
        azimuth = torch.atan2(out[:, 1], out[:, 2])
        return elevation, azimuth

    def decode_viewpoints(self, code: torch.Tensor, distance: float) -> list[Viewpoint]:
        with torch.no_grad():
            e, a = self.forward(code)
        return [
            Viewpoint(float(ei), float(ai), distance).normalized()
            for ei, ai in zip(e.tolist(), a.tolist())
        ]


class ShapeDecoder(nn.Module):
    """(z_s, view code) -> per-vertex template offsets, tanh-bounded to
    max_offset. The final layer starts at zero so an untrained decoder returns
    the template unchanged."""

    def __init__(self, spec: ModelSpec, num_vertices: int):
        super().__init__()
        self.num_vertices = num_vertices
        self.d_s = spec.d_s
        self.d_v = spec.d_v
        self.max_offset = spec.max_offset
        dims = (spec.d_s + spec.d_v,) + spec.decoder_hidden + (num_vertices * 3,)
        self.net = _mlp(dims)
        _zero_final_linear(self.net)

    def forward(self, z_s: torch.Tensor, view_code: torch.Tensor) -> torch.Tensor:
        if z_s.shape[-1] != self.d_s or view_code.shape[-1] != self.d_v:
            raise ValueError(
                f"code dimensions ({z_s.shape[-1]}, {view_code.shape[-1]}) do not match "
                f"decoder ({self.d_s}, {self.d_v})"
            )
        out = self.net(torch.cat([z_s, view_code], dim=-1))
        offsets = torch.tanh(out) * self.max_offset
        return offsets.view(-1, self.num_vertices, 3)


class ShapeDiscriminator(nn.Module):
    """Flattened vertex-offset field -> probability the mesh came from the
    ground-truth-view branch. Zero-initialized final layer gives exactly 0.5
    before training. Inputs pass through a parameter-free LayerNorm first:
    offset fields are small and their scale drifts as the decoder trains,
    which would otherwise starve the critic of gradient."""

    def __init__(self, spec: ModelSpec, num_vertices: int):
        super().__init__()
        self.num_vertices = num_vertices
        self.norm = nn.LayerNorm(num_vertices * 3, elementwise_affine=False)
        dims = (num_vertices * 3,) + spec.discriminator_hidden + (1,)
        self.net = _mlp(dims)
        _zero_final_linear(self.net)

    def forward(self, offsets: torch.Tensor) -> torch.Tensor:
        if offsets.shape[-2:] != (self.num_vertices, 3):
            raise ValueError(
                f"offset field shape {tuple(offsets.shape[-2:])} does not match "
                f"topology ({self.num_vertices}, 3)"
            )
        flat = self.norm(offsets.reshape(offsets.shape[0], -1))
        return torch.sigmoid(self.net(flat)).squeeze(-1)


class DomainDiscriminator(nn.Module):
    """Image feature z -> probability the sketch is synthetic (vs hand-drawn).
    Same parameter-free input normalization as the shape critic, for the same
    reason: raw z has no guaranteed scale."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.d_z = spec.d_z
        self.norm = nn.LayerNorm(spec.d_z, elementwise_affine=False)
        dims = (spec.d_z,) + spec.discriminator_hidden + (1,)
        self.net = _mlp(dims)
        _zero_final_linear(self.net)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.d_z:
            raise ValueError(f"feature dimension {z.shape[-1]} does not match d_z={self.d_z}")
        return torch.sigmoid(self.net(self.norm(z))).squeeze(-1)


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad.neg()


def gradient_reversal(x: torch.Tensor) -> torch.Tensor:
    """Identity in the forward pass; negates the gradient in the backward pass."""
    return _GradientReversal.apply(x)


class ModelBundle:
    """One trained model per object class: all module parameters, the template,
    and enough metadata to rebuild and reload bit-identically."""

    MODULE_NAMES = ("encoder", "view_encoder", "view_decoder", "decoder",
                    "shape_discriminator", "domain_discriminator")

    def __init__(self, spec: ModelSpec, config_hash: str = "", training_step: int = 0,
                 camera_distance: float = 2.732, seed: int = 0):
        torch.manual_seed(seed)
        self.spec = spec
        self.config_hash = config_hash
        self.training_step = training_step
        self.camera_distance = camera_distance
        self.template: TriangleMesh = load_template(spec.template_subdivision)
        self.encoder = Encoder(spec)
        self.view_encoder = ViewEncoder(spec)
        self.view_decoder = ViewDecoder(spec)
        self.decoder = ShapeDecoder(spec, self.template.num_vertices)
        self.shape_discriminator = ShapeDiscriminator(spec, self.template.num_vertices)
        self.domain_discriminator = DomainDiscriminator(spec)
        self.template_vertices = torch.as_tensor(self.template.vertices, dtype=torch.float32)

    def modules(self) -> dict:
        return {name: getattr(self, name) for name in self.MODULE_NAMES}

    def parameters(self):
        for m in self.modules().values():
            yield from m.parameters()

    def train(self):
        for m in self.modules().values():
            m.train()

    def eval(self):
        for m in self.modules().values():
            m.eval()

    def state_hash(self, module: Optional[str] = None) -> str:
        """Digest of all parameters, or of one module's when `module` is given."""
        if module is not None and module not in self.MODULE_NAMES:
            raise ValueError(f"unknown module {module!r}")
        h = hashlib.sha256()
        for name in (self.MODULE_NAMES if module is None else (module,)):
            for key, value in getattr(self, name).state_dict().items():
                h.update(key.encode())
                h.update(value.numpy().tobytes())
        return h.hexdigest()[:16]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": FORMAT_VERSION,
            "class": self.spec.class_label,
            "spec": asdict(self.spec),
            "config_hash": self.config_hash,
            "training_step": self.training_step,
            "camera_distance": self.camera_distance,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        torch.save(
            {name: module.state_dict() for name, module in self.modules().items()},
            directory / "params.pt",
        )

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported bundle format {manifest['format_version']}")
        spec_dict = dict(manifest["spec"])
        spec_dict["decoder_hidden"] = tuple(spec_dict["decoder_hidden"])
        spec_dict["discriminator_hidden"] = tuple(spec_dict["discriminator_hidden"])
        bundle = cls(
            ModelSpec(**spec_dict),
            config_hash=manifest["config_hash"],
            training_step=manifest["training_step"],
            camera_distance=manifest.get("camera_distance", 2.732),
        )
        states = torch.load(directory / "params.pt", weights_only=True)
        for name, module in bundle.modules().items():
            module.load_state_dict(states[name], strict=True)
        bundle.eval()
        return bundle


def sketch_to_tensor(sketch: np.ndarray, image_size: int) -> torch.Tensor:
    """(H, W) grayscale array in [0, 1] -> (1, 1, H, W) float tensor, with a
    strict size check (resizing belongs to the data pipeline, not the model)."""
    arr = np.asarray(sketch, dtype=np.float32)
    if arr.ndim != 2 or arr.shape != (image_size, image_size):
        raise ValueError(f"expected ({image_size}, {image_size}) sketch, got {arr.shape}")
    return torch.from_numpy(arr)[None, None]


def run_inference(
    bundle: ModelBundle, sketch: np.ndarray, viewpoint: Viewpoint | None = None
) -> tuple[TriangleMesh, Viewpoint]:
    """Single-sketch mesh generation. The predicted viewpoint is always computed
    and returned; generation is conditioned on the caller's viewpoint when one
    is given, otherwise on the prediction. Either way the conditioning view is
    re-encoded through the view encoder."""
    bundle.eval()
    x = sketch_to_tensor(sketch, bundle.spec.image_size)
    with torch.no_grad():
        _, z_v, z_s = bundle.encoder(x)
        predicted = bundle.view_decoder.decode_viewpoints(z_v, bundle.camera_distance)[0]
        chosen = predicted if viewpoint is None else viewpoint.normalized()
        code = bundle.view_encoder(views_to_tensor([chosen]))
        offsets = bundle.decoder(z_s, code)[0].numpy().astype(np.float64)
    return deform(bundle.template, offsets), predicted

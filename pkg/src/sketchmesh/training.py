"""Training orchestration: single-pass optimization of all modules (adversaries
included, via gradient reversal), random-view reinforcement, the coarse-to-fine
silhouette schedule, checkpointing, domain-adaptation fine-tuning, and a
network-free direct-fit harness for the rendering pipeline."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import TrainingConfig
from .data import LoadedDataset, ViewSamplingStrategy, draw_view
from .geometry import TriangleMesh, deform, load_template
from .losses import (
    CRITIC_CHANCE_LOSS,
    MeshRegularizers,
    batch_iou_loss,
    bce_tensor,
    progressive_silhouette_loss_batch,
    total_loss,
    view_loss_batch,
)
from .networks import ModelBundle, gradient_reversal, views_to_tensor
from .rasterizer import SoftRasterSettings, soft_silhouette_batch

log = logging.getLogger(__name__)

# slope of the domain-balance throttle around the critic's chance loss
BALANCE_SHARPNESS = 4.0


def _sketch_batch(records) -> torch.Tensor:
    arr = np.stack([r.sketch for r in records]).astype(np.float32)
    return torch.from_numpy(arr)[:, None]


class Trainer:
    """Owns one bundle, its optimizer and the seeded RNG driving every
    stochastic choice, so a run is reproducible and resumable bit-for-bit."""

    def __init__(self, bundle: ModelBundle, config: TrainingConfig, view_pool=()):
        if config.random_view_kind == "dataset-views" and not view_pool:
            raise ValueError("dataset-views random view strategy needs a non-empty view pool")
        self.bundle = bundle
        self.config = config
        self.weights = config.effective_weights()
        if config.discriminator_lr_mult != 1.0:
            # two-speed optimizer: under gradient reversal both sides share one
            # step, so the critics' only edge over the encoder is a faster clock
            disc_params = list(bundle.shape_discriminator.parameters()) + list(
                bundle.domain_discriminator.parameters()
            )
            disc_ids = {id(p) for p in disc_params}
            main_params = [p for p in bundle.parameters() if id(p) not in disc_ids]
            self.optimizer = torch.optim.Adam(
                [
                    {"params": main_params},
                    {"params": disc_params,
                     "lr": config.learning_rate * config.discriminator_lr_mult},
                ],
                lr=config.learning_rate,
            )
        else:
            self.optimizer = torch.optim.Adam(bundle.parameters(), lr=config.learning_rate)
        self.rng = np.random.default_rng(config.seed)
        self.strategy = config.view_strategy(pool=view_pool)
        # fresh views for the autoencoder cover the whole steerable range
        self.recon_strategy = ViewSamplingStrategy(
            kind="uniform-range", distance=config.camera_distance
        )
        self.regularizers = MeshRegularizers(bundle.template.faces, bundle.template.num_vertices)
        self.faces = torch.as_tensor(bundle.template.faces)
        self.settings = config.raster_settings()
        self.step_count = int(bundle.training_step)

    def _decode(self, z_s: torch.Tensor, views: list) -> tuple:
        code = self.bundle.view_encoder(views_to_tensor(views))
        offsets = self.bundle.decoder(z_s, code)
        return offsets, self.bundle.template_vertices[None] + offsets

    def train_step(self, batch, level_weights, hand_sketches: Optional[torch.Tensor] = None):
        """One optimizer update over every trainable module. Returns the loss
        component breakdown (floats) plus the weighted total actually stepped."""
        cfg, w = self.config, self.weights
        self.bundle.train()
        if len(batch[0].pyramid.levels) != cfg.pyramid_levels:
            raise ValueError(
                f"records carry {len(batch[0].pyramid.levels)} pyramid levels, "
                f"config expects {cfg.pyramid_levels}"
            )
        views = [r.viewpoint for r in batch]
        views_r = [draw_view(self.strategy, self.rng) for _ in batch]

        z, z_v, z_s = self.bundle.encoder(_sketch_batch(batch))

        # viewpoint prediction from the latent view code
        pred_e, pred_a = self.bundle.view_decoder(z_v)
        gt = views_to_tensor(views)
        view_l = view_loss_batch(pred_e, pred_a, gt[:, 0], gt[:, 1])

        # view autoencoder round trip on freshly sampled views
        recon_views = [draw_view(self.recon_strategy, self.rng) for _ in range(cfg.view_recon_batch)]
        recon = views_to_tensor(recon_views)
        rec_e, rec_a = self.bundle.view_decoder(self.bundle.view_encoder(recon))
        view_recon_l = view_loss_batch(rec_e, rec_a, recon[:, 0], recon[:, 1])

        # mesh branches; the random-view branch exists only when some consumer
        # (silhouette reinforcement or the shape critic) is active
        offsets, verts = self._decode(z_s, views)
        need_random = w.lambda_r != 0.0 or w.lambda_sd != 0.0
        if need_random:
            offsets_r, verts_r = self._decode(z_s, views_r)
        else:
            offsets_r, verts_r = None, verts  # placeholder, never rendered

        level_targets = [
            torch.from_numpy(
                np.stack([r.pyramid.levels[i].values for r in batch]).astype(np.float32)
            )
            for i in range(cfg.pyramid_levels)
        ]
        sp = progressive_silhouette_loss_batch(
            level_targets, verts, verts_r, self.faces, views, views_r,
            w.lambda_r, level_weights, self.settings,
        )

        reg_verts = torch.cat([verts, verts_r]) if need_random else verts
        reg = w.lambda_laplacian * self.regularizers.laplacian(reg_verts) + \
            w.lambda_flatten * self.regularizers.flatten(reg_verts)

        if w.lambda_sd != 0.0:
            score_m = self.bundle.shape_discriminator(gradient_reversal(offsets))
            score_r = self.bundle.shape_discriminator(gradient_reversal(offsets_r))
            sd = bce_tensor(score_m, score_r)
        else:
            sd = torch.zeros(())

        # accumulate the total in float64 so the logged component arithmetic
        # reproduces it to 1e-6; gradients still flow through the f32 graph
        components = {
            "sp": sp.double(), "reg": reg.double(), "view": view_l.double(),
            "view_recon": view_recon_l.double(), "shape_disc": sd.double(),
        }
        domain_gate = 1.0
        if hand_sketches is not None:
            z_hand, _, _ = self.bundle.encoder(hand_sketches)
            # "to-synthetic": the synthetic cloud stays a task-anchored target
            # (critic still trains on it) and only hand features receive the
            # reversed push; "mutual" reverses into both, which lets the two
            # clouds chase each other instead of converging
            z_synth_in = (
                z.detach() if cfg.domain_align == "to-synthetic" else gradient_reversal(z)
            )
            dd = bce_tensor(
                self.bundle.domain_discriminator(z_synth_in),
                self.bundle.domain_discriminator(gradient_reversal(z_hand)),
            )
            components["domain_disc"] = dd.double()
            if cfg.domain_balance:
                # throttle the reversed push as the critic approaches chance:
                # full strength while the critic separates the domains, near
                # zero once it is fooled, so the game holds its balance point
                dd_now = float(dd.detach())
                domain_gate = 1.0 / (
                    1.0 + math.exp(-BALANCE_SHARPNESS * (CRITIC_CHANCE_LOSS - dd_now))
                )
        total = total_loss(
            components, w,
            domain_adaptation=hand_sketches is not None,
            domain_gate=domain_gate,
        )

        if not bool(torch.isfinite(total)):
            breakdown = {k: float(v.detach()) for k, v in components.items()}
            raise RuntimeError(
                f"non-finite total loss at step {self.step_count}: {breakdown}"
            )
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.step_count += 1
        self.bundle.training_step = self.step_count

        out = {k: float(v.detach()) for k, v in components.items()}
        out["total"] = float(total.detach())
        if cfg.domain_balance and hand_sketches is not None:
            out["domain_gate"] = domain_gate
        return out

    # -- persistence -----------------------------------------------------------

    def save_checkpoint(self, directory, epoch: int) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.bundle.save(d / "bundle")
        torch.save(
            {"optimizer": self.optimizer.state_dict(), "torch_rng": torch.get_rng_state()},
            d / "trainer.pt",
        )
        (d / "trainer.json").write_text(
            json.dumps(
                {
                    "np_rng": self.rng.bit_generator.state,
                    "step": self.step_count,
                    "epoch": epoch,
                    "config": self.config.to_dict(),
                }
            )
        )

    @classmethod
    def resume(cls, directory, view_pool=()) -> tuple:
        """Rebuilds trainer state exactly as checkpointed; returns (trainer, epoch)."""
        d = Path(directory)
        meta = json.loads((d / "trainer.json").read_text())
        config = TrainingConfig.from_dict(meta["config"])
        bundle = ModelBundle.load(d / "bundle")
        trainer = cls(bundle, config, view_pool=view_pool)
        state = torch.load(d / "trainer.pt", weights_only=True)
        trainer.optimizer.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["torch_rng"])
        trainer.rng.bit_generator.state = meta["np_rng"]
        trainer.step_count = meta["step"]
        return trainer, meta["epoch"]


def _check_single_class(dataset: LoadedDataset, config: TrainingConfig) -> list:
    records = list(dataset)
    if not records:
        raise ValueError("dataset is empty")
    classes = sorted({r.class_label for r in records})
    if classes != [config.class_label]:
        raise ValueError(
            f"one model per class: config is for {config.class_label!r}, "
            f"dataset holds {classes}"
        )
    return records


def validation_silhouette_loss(bundle: ModelBundle, dataset, config: TrainingConfig) -> float:
    """Mean finest-level silhouette IoU loss at ground-truth views, no grad."""
    records = list(dataset)
    settings = config.raster_settings()
    bundle.eval()
    losses = []
    with torch.no_grad():
        for i in range(0, len(records), config.batch_size):
            batch = records[i : i + config.batch_size]
            _, _, z_s = bundle.encoder(_sketch_batch(batch))
            views = [r.viewpoint for r in batch]
            code = bundle.view_encoder(views_to_tensor(views))
            verts = bundle.template_vertices[None] + bundle.decoder(z_s, code)
            rendered = soft_silhouette_batch(verts, torch.as_tensor(bundle.template.faces),
                                             views, settings)
            target = torch.from_numpy(
                np.stack([r.pyramid.finest.values for r in batch]).astype(np.float32)
            )
            losses.append(float(batch_iou_loss(target, rendered)) * len(batch))
    return sum(losses) / len(records)


def train_model(
    dataset: LoadedDataset,
    config: TrainingConfig,
    out_dir=None,
    val_dataset=None,
    resume_from=None,
):
    """Epoch loop with the progressive level schedule. Returns (bundle, log),
    the log being one dict per step as written to training_log.jsonl. With a
    validation set the returned bundle carries the best-validation parameters;
    otherwise the final ones."""
    records = _check_single_class(dataset, config)
    if resume_from is not None:
        trainer, start_epoch = Trainer.resume(resume_from, view_pool=dataset.viewpoints())
    else:
        bundle = ModelBundle(
            config.model_spec(),
            config_hash=config.config_hash(),
            camera_distance=config.camera_distance,
            seed=config.seed,
        )
        trainer, start_epoch = Trainer(bundle, config, view_pool=dataset.viewpoints()), 0

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    log_fh = open(out_dir / "training_log.jsonl", "a") if out_dir is not None else None
    best_loss, best_state = math.inf, None
    try:
        for epoch in range(start_epoch, config.epochs):
            level_weights = config.level_weights_at(epoch)
            order = trainer.rng.permutation(len(records))
            for lo in range(0, len(records), config.batch_size):
                batch = [records[i] for i in order[lo : lo + config.batch_size]]
                comps = trainer.train_step(batch, level_weights)
                entry = {
                    "step": trainer.step_count,
                    "epoch": epoch,
                    "lr": config.learning_rate,
                    "active_levels": [i for i, w in enumerate(level_weights) if w != 0.0],
                    **comps,
                }
                entries.append(entry)
                if log_fh is not None:
                    log_fh.write(json.dumps(entry) + "\n")
            if (
                out_dir is not None
                and config.checkpoint_every
                and (epoch + 1) % config.checkpoint_every == 0
            ):
                trainer.save_checkpoint(out_dir / f"checkpoint_{epoch + 1:05d}", epoch + 1)
            if (
                val_dataset is not None
                and config.validate_every
                and (epoch + 1) % config.validate_every == 0
            ):
                val = validation_silhouette_loss(trainer.bundle, val_dataset, config)
                log.info("epoch %d validation silhouette loss %.4f", epoch + 1, val)
                if val < best_loss:
                    best_loss = val
                    best_state = {
                        name: {k: v.clone() for k, v in m.state_dict().items()}
                        for name, m in trainer.bundle.modules().items()
                    }
    finally:
        if log_fh is not None:
            log_fh.close()

    bundle = trainer.bundle
    if best_state is not None:
        final = validation_silhouette_loss(bundle, val_dataset, config)
        if final > best_loss:
            for name, module in bundle.modules().items():
                module.load_state_dict(best_state[name])
    if out_dir is not None:
        trainer.save_checkpoint(out_dir / "checkpoint_final", config.epochs)
        bundle.save(out_dir / "bundle")
    bundle.eval()
    return bundle, entries


def domain_adaptation_finetune(
    bundle: ModelBundle,
    dataset: LoadedDataset,
    hand_sketches,
    config: TrainingConfig,
    epochs: Optional[int] = None,
    critic_warmup_epochs: int = 0,
    critic_steps_per_batch: int = 0,
    cosine_decay: bool = False,
):
    """Fine-tunes a trained bundle so encoder features of synthetic and
    hand-drawn sketches become indistinguishable: every synthetic batch is
    paired 1:1 with an equal-size hand-drawn batch that only passes through
    the encoder to feed the domain critic.

    The reversed gradient only points at the true domain direction while the
    critic is near-optimal for the CURRENT encoder; a critic that merely
    chases can hover at chance forever while the features stay separable.
    `critic_warmup_epochs` trains only the critic on frozen features before
    the joint phase, and `critic_steps_per_batch` keeps it converged by
    running that many critic-only updates (no rendering, encoder frozen)
    before every joint batch.

    `cosine_decay` anneals the main parameter group's learning rate to zero
    over the fine-tune while the critics keep full speed: an adversarial pair
    under fixed step sizes orbits its equilibrium rather than settling, and
    shrinking only the generator's steps collapses the orbit onto the merged
    configuration. It requires a `discriminator_lr_mult` other than 1 so the
    critics live in their own group."""
    if not config.domain_adaptation:
        raise ValueError("config.domain_adaptation is off")
    records = _check_single_class(dataset, config)
    size = bundle.spec.image_size
    hand = np.stack([np.asarray(s, dtype=np.float32) for s in hand_sketches])
    if hand.ndim != 3 or hand.shape[1:] != (size, size):
        raise ValueError(f"hand-drawn sketches must be ({size}, {size}) grayscale")
    trainer = Trainer(bundle, config, view_pool=dataset.viewpoints())
    level_weights = config.level_weights_at(config.epochs)  # all scheduled levels on
    entries = []

    def hand_batch_like(batch):
        idx = trainer.rng.choice(len(hand), size=len(batch), replace=len(hand) < len(batch))
        return torch.from_numpy(hand[idx])[:, None]

    critic_opt = None
    if critic_warmup_epochs > 0 or critic_steps_per_batch > 0:
        critic_opt = torch.optim.Adam(
            bundle.domain_discriminator.parameters(),
            lr=config.learning_rate * config.discriminator_lr_mult,
        )

    def critic_only_step(batch) -> float:
        bundle.domain_discriminator.train()
        with torch.no_grad():
            z_synth, _, _ = bundle.encoder(_sketch_batch(batch))
            z_hand, _, _ = bundle.encoder(hand_batch_like(batch))
        loss = bce_tensor(
            bundle.domain_discriminator(z_synth),
            bundle.domain_discriminator(z_hand),
        )
        critic_opt.zero_grad()
        loss.backward()
        critic_opt.step()
        return float(loss.detach())

    for epoch in range(critic_warmup_epochs):
        order = trainer.rng.permutation(len(records))
        for lo in range(0, len(records), config.batch_size):
            warm = critic_only_step([records[i] for i in order[lo : lo + config.batch_size]])
            entries.append(
                {"step": -1, "epoch": epoch - critic_warmup_epochs,
                 "domain_disc_warmup": warm}
            )

    n_epochs = epochs if epochs is not None else config.epochs
    if cosine_decay and config.discriminator_lr_mult == 1.0:
        raise ValueError("cosine_decay needs discriminator_lr_mult != 1 "
                         "(the critics must keep their own learning rate)")
    batches_per_epoch = math.ceil(len(records) / config.batch_size)
    total_joint = max(n_epochs * batches_per_epoch - 1, 1)
    joint_i = 0
    for epoch in range(n_epochs):
        order = trainer.rng.permutation(len(records))
        for lo in range(0, len(records), config.batch_size):
            batch = [records[i] for i in order[lo : lo + config.batch_size]]
            for _ in range(critic_steps_per_batch):
                critic_only_step(batch)
            if cosine_decay:
                scale = 0.5 * (1.0 + math.cos(math.pi * joint_i / total_joint))
                trainer.optimizer.param_groups[0]["lr"] = config.learning_rate * scale
                joint_i += 1
            comps = trainer.train_step(batch, level_weights, hand_sketches=hand_batch_like(batch))
            entries.append({"step": trainer.step_count, "epoch": epoch, **comps})
    bundle.eval()
    return bundle, entries


def train_view_autoencoder(
    bundle: ModelBundle,
    steps: int = 8000,
    batch: int = 64,
    learning_rate: float = 1e-3,
    seed: int = 0,
) -> ModelBundle:
    """Optimizes only the view autoencoder on freshly sampled uniform views so
    that decode(encode(V)) recovers V across the whole steerable range. Cosine
    learning-rate decay tightens the end of the fit."""
    strategy = ViewSamplingStrategy(kind="uniform-range", distance=bundle.camera_distance)
    rng = np.random.default_rng(seed)
    params = list(bundle.view_encoder.parameters()) + list(bundle.view_decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=steps)
    bundle.view_encoder.train()
    bundle.view_decoder.train()
    for _ in range(steps):
        views = [draw_view(strategy, rng) for _ in range(batch)]
        angles = views_to_tensor(views)
        e, a = bundle.view_decoder(bundle.view_encoder(angles))
        loss = view_loss_batch(e, a, angles[:, 0], angles[:, 1])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
    bundle.view_encoder.eval()
    bundle.view_decoder.eval()
    return bundle


def overfit_single_object(
    silhouettes,
    views,
    steps: int = 2000,
    learning_rate: float = 0.01,
    template_subdivision: int = 3,
    sigma: float = 1e-4,
    lambda_lap: float = 0.1,
    lambda_flat: float = 0.1,
    lambda_r: float = 0.0,
    seed: int = 0,
    stop_when_loss_below: Optional[float] = None,
) -> TriangleMesh:
    """Direct per-vertex fit of the template to silhouettes of one object:
    no networks, just the renderer, the IoU objective and the regularizers.
    Sanity harness for the whole 2D-supervision pipeline. `steps` is an upper
    bound when `stop_when_loss_below` is set.

    The fit starts from a half-scale template: the unit template's rim projects
    outside the camera frame, where the silhouette objective is flat, so the
    initial offsets place every vertex at radius 0.5 (inside the frame) and
    optimization proceeds from there."""
    if len(silhouettes) != len(views):
        raise ValueError("one viewpoint per silhouette required")
    if len(silhouettes) < 8:
        raise ValueError(f"need at least 8 views, got {len(silhouettes)}")
    resolutions = {s.resolution for s in silhouettes}
    if len(resolutions) != 1:
        raise ValueError(f"silhouettes at mixed resolutions {sorted(resolutions)}")
    res = next(iter(resolutions))[0]
    template = load_template(template_subdivision)
    torch.manual_seed(seed)
    base = torch.as_tensor(template.vertices)
    faces = torch.as_tensor(template.faces)
    reg = MeshRegularizers(template.faces, template.num_vertices)
    offsets = (-0.5 * base.to(torch.float64)).clone().requires_grad_(True)
    optimizer = torch.optim.Adam([offsets], lr=learning_rate)
    targets = torch.stack(
        [torch.from_numpy(s.values.astype(np.float64)) for s in silhouettes]
    )
    settings = SoftRasterSettings(resolution=res, sigma=sigma)
    n = len(views)

    initial = None
    worse_streak = 0
    for step in range(steps):
        verts = (base + offsets).unsqueeze(0).expand(n, -1, -1)
        rendered = soft_silhouette_batch(verts, faces, views, settings)
        loss = (
            batch_iou_loss(targets, rendered)
            + lambda_lap * reg.laplacian(base + offsets)
            + lambda_flat * reg.flatten(base + offsets)
        )
        value = float(loss.detach())
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite fit loss at step {step}")
        if initial is None:
            initial = value
        worse_streak = worse_streak + 1 if value > initial else 0
        if worse_streak >= 100:
            raise RuntimeError(
                f"direct fit diverged: loss {value:.4f} above initial {initial:.4f} "
                f"for {worse_streak} consecutive steps (step {step})"
            )
        if stop_when_loss_below is not None and value < stop_when_loss_below:
            break
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    return deform(template, offsets.detach().numpy())

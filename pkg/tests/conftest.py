"""Session fixtures for the toy-scale end-to-end trainings used by the
acceptance suite. Every training is seeded; fixtures build lazily, so module
runs that never touch them stay fast."""

import numpy as np
import pytest

from sketchmesh.config import TrainingConfig
from sketchmesh.evaluation import (
    domain_discriminator_accuracy,
    domain_probe_accuracy,
    evaluate_model,
)
from sketchmesh.networks import ModelBundle
from sketchmesh.training import domain_adaptation_finetune, train_model

from helpers import build_toy_dataset, distort_sketch

# Calibrated toy scale: 50 train / 10 test chairs x 20 views trains in roughly
# ten minutes per variant on one CPU core and clears the directional margins.
# Two pyramid levels (16/32): pooling a 32px silhouette to 8px leaves almost
# nothing but boundary pixels, so the coarsest level of a 3-level schedule is
# noise at this scale.
TOY_EPOCHS = 60
TOY_LR = 1e-4
TOY_LAMBDA_R = 0.5
TOY_LEVELS = 2
TOY_MILESTONES = (0.0, 0.25)

# Adaptation fine-tune: the critic first converges on frozen features (warm-up,
# giving the "before" accuracy), then trains jointly with extra per-batch steps
# at a faster clock plus the balance gate, so its held-out accuracy holds near
# chance instead of depending on where in the adversarial cycle training stops.
DA_EPOCHS = 10
DA_LAMBDA_DD = 1.0
DA_WARMUP_EPOCHS = 15
DA_CRITIC_STEPS = 5
DA_LR_MULT = 100.0
HAND_DILATE = 2
HAND_WAVE_AMPLITUDE = 2.5

TOY_ELEVATION = (0.087, 0.611)  # 5..35 deg
TOY_AZIMUTH = (-1.309, 1.309)  # +-75 deg


def toy_training_config(**overrides):
    base = dict(
        class_label="chair",
        epochs=TOY_EPOCHS,
        batch_size=16,
        learning_rate=TOY_LR,
        seed=7,
        encoder="tiny",
        image_size=64,
        d_z=64,
        d_v=16,
        d_s=64,
        template_subdivision=2,
        decoder_hidden=(64,),
        discriminator_hidden=(32,),
        silhouette_resolution=32,
        pyramid_levels=TOY_LEVELS,
        view_recon_batch=64,
        random_view_kind="dataset-views",
        level_milestones=TOY_MILESTONES,
        weights={"lambda_r": TOY_LAMBDA_R},
    )
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_chairs")
    common = dict(
        n_views=20,
        image_size=64,
        sil_resolution=32,
        pyramid_levels=TOY_LEVELS,
        elevation_range=TOY_ELEVATION,
        azimuth_range=TOY_AZIMUTH,
    )
    return {
        "train": build_toy_dataset(root, n_objects=50, seed=100, split="train", **common),
        "test": build_toy_dataset(root, n_objects=10, seed=200, split="test", **common),
    }


@pytest.fixture(scope="session")
def toy_run_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("toy_runs")


def _train_variant(toy_data, toy_run_dir, name, **overrides):
    bundle, _ = train_model(toy_data["train"], toy_training_config(**overrides))
    bundle.save(toy_run_dir / name)
    return bundle


@pytest.fixture(scope="session")
def toy_bundle_full(toy_data, toy_run_dir):
    return _train_variant(toy_data, toy_run_dir, "full")


@pytest.fixture(scope="session")
def toy_bundle_no_rvr(toy_data, toy_run_dir):
    return _train_variant(
        toy_data, toy_run_dir, "no_rvr", random_view_reinforcement=False
    )


@pytest.fixture(scope="session")
def toy_bundle_single_scale(toy_data, toy_run_dir):
    return _train_variant(toy_data, toy_run_dir, "single_scale", multi_scale=False)


@pytest.fixture(scope="session")
def adaptation_results(toy_data, toy_run_dir, toy_bundle_full):
    """Critic held-out accuracy and pred-view voxel IoU before and after the
    adaptation fine-tune, on a private copy of the full bundle. "Before" is
    measured after the warm-up phase (critic converged on frozen features),
    "after" following the joint adversarial phase; held-out pools come from
    test-split records the fine-tune never saw. The fresh-probe numbers ride
    along as a diagnostic of residual linear separability."""
    rng = np.random.default_rng(33)

    def hand(records):
        return [
            distort_sketch(r.sketch, rng, dilate=HAND_DILATE, amplitude=HAND_WAVE_AMPLITUDE)
            for r in records
        ]

    hand_train = hand(toy_data["train"].records)
    hand_test = hand(toy_data["test"].records)
    synth_test = [r.sketch for r in toy_data["test"].records]

    def pred_view_voxel_iou(bundle):
        report = evaluate_model(
            bundle, toy_data["test"], mode="pred-view", chamfer_points=512, seed=3
        )
        return report.per_class["chair"]["voxel_iou"]

    bundle = ModelBundle.load(toy_run_dir / "full")
    pre_iou = pred_view_voxel_iou(bundle)

    config = toy_training_config(
        domain_adaptation=True,
        unlabeled_dir="inline",
        epochs=DA_EPOCHS,
        discriminator_lr_mult=DA_LR_MULT,
        domain_align="mutual",
        domain_balance=True,
        weights={"lambda_r": TOY_LAMBDA_R, "lambda_dd": DA_LAMBDA_DD},
    )
    bundle, _ = domain_adaptation_finetune(
        bundle, toy_data["train"], hand_train, config,
        epochs=0, critic_warmup_epochs=DA_WARMUP_EPOCHS,
    )
    pre_acc = domain_discriminator_accuracy(bundle, synth_test, hand_test)
    pre_probe = domain_probe_accuracy(bundle, synth_test, hand_test, seed=5)

    adapted, _ = domain_adaptation_finetune(
        bundle, toy_data["train"], hand_train, config,
        epochs=DA_EPOCHS, critic_steps_per_batch=DA_CRITIC_STEPS,
    )
    return {
        "pre_acc": pre_acc,
        "post_acc": domain_discriminator_accuracy(adapted, synth_test, hand_test),
        "pre_probe": pre_probe,
        "post_probe": domain_probe_accuracy(adapted, synth_test, hand_test, seed=5),
        "pre_iou": pre_iou,
        "post_iou": pred_view_voxel_iou(adapted),
    }

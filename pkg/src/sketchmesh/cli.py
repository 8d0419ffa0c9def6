"""Command line front end: dataset preparation, training, evaluation,
ablations, single-sketch inference, and the HTTP service.

Exit codes: 0 success, 1 usage error, 2 runtime failure (JSON on stderr).
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .config import TrainingConfig, load_config
from .data import (
    DatasetBuildConfig,
    ViewSamplingStrategy,
    build_manifest,
    build_synthetic_dataset,
    load_dataset,
    pad_to_square,
)
from .evaluation import evaluate_model, run_ablation, ABLATION_FLAGS
from .geometry import Viewpoint, export_mesh, import_mesh, joint_normalize, mesh_to_obj
from .networks import ModelBundle, run_inference
from .training import train_model


def _parse_range_deg(text: str, name: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise click.BadParameter(f"{name} must be 'lo,hi' in degrees, got {text!r}")
    return (np.radians(lo), np.radians(hi))


def _apply_overrides(config: TrainingConfig, seed, class_label) -> TrainingConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if class_label is not None:
        updates["class_label"] = class_label
    return dataclasses.replace(config, **updates) if updates else config


@click.group()
def cli():
    """Sketch-to-mesh toolkit."""


@cli.command("prepare-data")
@click.option("--meshes", required=True, type=click.Path(), help="directory of OBJ files")
@click.option("--out", required=True, type=click.Path())
@click.option("--class", "class_label", default=None, help="class label (default from --config or 'chair')")
@click.option("--split", default="train", show_default=True)
@click.option("--views", default=20, show_default=True, help="viewpoints per object")
@click.option("--image-size", default=None, type=int)
@click.option("--sil-resolution", default=None, type=int)
@click.option("--elevation-range", default="5,35", show_default=True, help="degrees, 'lo,hi'")
@click.option("--azimuth-range", default="-75,75", show_default=True, help="degrees, 'lo,hi'")
@click.option("--config", "config_path", default=None, type=click.Path(), help="training config supplying defaults")
@click.option("--seed", default=None, type=int)
@click.option("--normalize/--no-normalize", default=True, show_default=True, help="fit each mesh into the canonical unit box")
def prepare_data(meshes, out, class_label, split, views, image_size, sil_resolution,
                 elevation_range, azimuth_range, config_path, seed, normalize):
    """Render OBJ models into a synthetic sketch dataset with a manifest."""
    base = load_config(config_path) if config_path else TrainingConfig()
    class_label = class_label or base.class_label
    image_size = image_size or base.image_size
    sil_resolution = sil_resolution or base.silhouette_resolution
    seed = base.seed if seed is None else seed

    mesh_dir = Path(meshes)
    paths = sorted(mesh_dir.glob("*.obj"))
    if not paths:
        raise FileNotFoundError(f"no .obj files under {mesh_dir}")
    objects = {}
    for p in paths:
        mesh = import_mesh(p)
        objects[p.stem] = joint_normalize([mesh])[0] if normalize else mesh

    strategy = ViewSamplingStrategy(
        kind="uniform-range",
        elevation_range=_parse_range_deg(elevation_range, "--elevation-range"),
        azimuth_range=_parse_range_deg(azimuth_range, "--azimuth-range"),
        distance=base.camera_distance,
    )
    build_config = DatasetBuildConfig(
        image_size=image_size,
        sil_resolution=sil_resolution,
        views_per_object=views,
        view_strategy=strategy,
        camera_distance=base.camera_distance,
    )
    build_synthetic_dataset(out, class_label, split, objects, build_config, seed=seed)
    manifest = build_manifest(out, split)
    click.echo(json.dumps({
        "manifest": str(manifest),
        "objects": len(objects),
        "views_per_object": views,
    }))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path(), help="train split manifest")
@click.option("--out", required=True, type=click.Path())
@click.option("--val", "val_path", default=None, type=click.Path(), help="validation split manifest")
@click.option("--resume-from", default=None, type=click.Path(), help="checkpoint directory")
@click.option("--seed", default=None, type=int)
@click.option("--class", "class_label", default=None)
def train(config_path, data_path, out, val_path, resume_from, seed, class_label):
    """Train a model bundle from a config file and a dataset manifest."""
    config = _apply_overrides(load_config(config_path), seed, class_label)
    dataset = load_dataset(data_path, pyramid_levels=config.pyramid_levels)
    val_dataset = (
        load_dataset(val_path, pyramid_levels=config.pyramid_levels) if val_path else None
    )
    bundle, entries = train_model(
        dataset, config, out_dir=out, val_dataset=val_dataset, resume_from=resume_from
    )
    click.echo(json.dumps({
        "bundle": str(Path(out) / "bundle"),
        "steps": len(entries),
        "final_total": entries[-1]["total"] if entries else None,
        "config_hash": config.config_hash(),
    }))


@cli.command("eval")
@click.option("--bundle", "bundle_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path(), help="test split manifest")
@click.option("--mode", default="pred-view", show_default=True,
              type=click.Choice(["pred-view", "gt-view", "specified-view"]))
@click.option("--out", default=None, type=click.Path(), help="report path (.json; .csv written alongside)")
@click.option("--seed", default=0, show_default=True, type=int)
def eval_command(bundle_path, data_path, mode, out, seed):
    """Evaluate a trained bundle on a dataset split."""
    bundle = ModelBundle.load(bundle_path)
    dataset = load_dataset(data_path)
    report = evaluate_model(bundle, dataset, mode=mode, seed=seed)
    if out:
        report.save(out)
    click.echo(report.to_json())


def _parse_variants(text: str) -> list:
    variants = []
    for name in text.split(","):
        name = name.strip()
        if name == "none":
            variants.append(set())
            continue
        flags = set(name.split("+"))
        unknown = flags - set(ABLATION_FLAGS)
        if unknown:
            raise click.BadParameter(
                f"unknown ablation flags {sorted(unknown)}; valid: {list(ABLATION_FLAGS)}"
            )
        variants.append(flags)
    return variants


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--train-data", required=True, type=click.Path())
@click.option("--test-data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="directory for per-variant reports")
@click.option("--variants", default=None, help="comma list like 'RVR+SD+MS,SD+MS,none' (default: full plus drop-one)")
@click.option("--seed", default=0, show_default=True, type=int)
def ablate(config_path, train_data, test_data, out, variants, seed):
    """Train and evaluate feature-flag variants on a fixed dataset."""
    config = load_config(config_path)
    train_ds = load_dataset(train_data, pyramid_levels=config.pyramid_levels)
    test_ds = load_dataset(test_data, pyramid_levels=config.pyramid_levels)
    variant_sets = _parse_variants(variants) if variants else None
    reports = run_ablation(train_ds, test_ds, config, variants=variant_sets, seed=seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, report in reports.items():
        report.save(out / f"{name.replace('+', '_')}.json")
        summary[name] = report.mean
    click.echo(json.dumps(summary, indent=2))


def _load_sketch(path, image_size: int, resize: bool) -> np.ndarray:
    image = Image.open(path).convert("L")
    arr = np.asarray(image, dtype=np.float32) / 255.0
    if arr.shape != (image_size, image_size):
        if not resize:
            raise ValueError(
                f"sketch is {arr.shape[1]}x{arr.shape[0]}, model expects "
                f"{image_size}x{image_size}; pass --resize to rescale"
            )
        arr = pad_to_square(arr, image_size)
    return arr


@cli.command()
@click.option("--bundle", "bundle_path", default=None, type=click.Path(), help="a single bundle directory")
@click.option("--bundles", "bundles_path", default=None, type=click.Path(), help="directory of bundles, used with --class")
@click.option("--class", "class_label", default=None)
@click.option("--sketch", "sketch_path", required=True, type=click.Path())
@click.option("--view", "view_text", default=None, help="steer generation: 'elevation,azimuth' in degrees")
@click.option("--out", "out_path", default=None, type=click.Path(), help="OBJ output (default: stdout)")
@click.option("--resize/--no-resize", default=False)
def infer(bundle_path, bundles_path, class_label, sketch_path, view_text, out_path, resize):
    """Generate a mesh from one sketch image."""
    if bundle_path is None and bundles_path is None:
        raise click.UsageError("pass --bundle DIR, or --bundles DIR with --class NAME")
    if bundle_path is not None:
        bundle = ModelBundle.load(bundle_path)
    else:
        from .service import load_bundles

        registry = load_bundles(bundles_path)
        if class_label is None:
            raise click.UsageError(f"--bundles requires --class; available: {sorted(registry)}")
        if class_label not in registry:
            raise ValueError(
                f"unknown class {class_label!r}; available: {sorted(registry)}"
            )
        bundle = registry[class_label]
    if class_label is not None and bundle.spec.class_label != class_label:
        raise ValueError(
            f"bundle is for class {bundle.spec.class_label!r}, not {class_label!r}"
        )

    sketch = _load_sketch(sketch_path, bundle.spec.image_size, resize)
    viewpoint = None
    if view_text is not None:
        try:
            e_deg, a_deg = (float(v) for v in view_text.split(","))
        except ValueError:
            raise click.BadParameter("--view must be 'elevation,azimuth' in degrees")
        viewpoint = Viewpoint.from_degrees(e_deg, a_deg, distance=bundle.camera_distance)

    mesh, predicted = run_inference(bundle, sketch, viewpoint=viewpoint)
    e_deg, a_deg = predicted.as_degrees()
    info = {
        "predicted_viewpoint": {"elevation_deg": e_deg, "azimuth_deg": a_deg},
        "model_hash": bundle.state_hash(),
        "config_hash": bundle.config_hash,
        "vertices": mesh.num_vertices,
        "faces": mesh.num_faces,
    }
    if out_path:
        export_mesh(mesh, out_path)
        info["mesh"] = str(out_path)
        click.echo(json.dumps(info))
    else:
        click.echo(json.dumps(info), err=True)
        click.echo(mesh_to_obj(mesh), nl=False)


@cli.command()
@click.option("--bundles", "bundles_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(bundles_path, host, port):
    """Start the HTTP inference service."""
    from .service import serve as run_server

    run_server(bundles_path, host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="sketchmesh", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return 1
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except Exception as exc:
        click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

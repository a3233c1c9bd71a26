"""Command-line entry point: simulation, datasets, evaluation, feasibility."""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from .array import (ArgumentError, random_phase_vector,
                    validate_phase_vector)
from .configio import SimSetup, load_setup, save_setup, setup_to_dict
from .control import (ExactReverse, GsEngine, IdentityEngine, NeuralEngine,
                      OracleEngine, SpgdEngine, calibrate_threshold, correct,
                      feasibility_check, known_feasible_images)
from .dataset import ManifestError, generate_pairs, load_manifest, verify_manifest
from .imaging import (NoiseSpec, add_noise, load_intensity_png,
                      render_intensity_image, render_phase_image,
                      save_intensity_png, save_phase_png)
from .metrics import bucket_from_flat, pib_statistics, power_in_bucket
from .propagation import focal_field, intensity_of

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


def _log(message: str) -> None:
    click.echo(message, err=True)


def _load_setup(config_path) -> SimSetup:
    if config_path is None:
        return SimSetup()
    return load_setup(config_path)


def _snapshot(setup: SimSetup, out_dir: Path, extra: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_setup(setup, out_dir / "resolved_config.txt")
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump({"config": setup_to_dict(setup), **extra}, fh, indent=1,
                  sort_keys=True)
        fh.write("\n")


def _make_engine(name: str, setup: SimSetup, testset, model, seed: int):
    if name == "identity":
        return IdentityEngine(setup.config.fibre_count)
    if name == "gs":
        return GsEngine(setup, seed=seed)
    if name == "spgd":
        return SpgdEngine(setup)
    if name == "oracle":
        if testset is None:
            raise ArgumentError("the oracle engine requires --testset")
        manifest = load_manifest(testset)
        seeds = [entry["seed"] for entry in manifest["entries"]]
        return OracleEngine(setup, seeds)
    if name == "neural":
        if model is None:
            raise ArgumentError("the neural engine requires --model")
        return NeuralEngine(setup, model)
    raise ArgumentError(f"unknown engine {name!r}")


class _Run(click.Group):
    """Group translating domain errors into exit codes 1/2."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except (ArgumentError, ManifestError, FileNotFoundError) as exc:
            _log(f"error: {exc}")
            sys.exit(EXIT_USER)
        except Exception as exc:  # pragma: no cover - defensive
            _log(f"internal error: {exc!r}")
            sys.exit(EXIT_INTERNAL)


@click.group(cls=_Run)
def main():
    """Coherent beam combination simulation laboratory."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Plain-text key=value configuration file.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--phases", "phases_path", type=click.Path(exists=True), default=None,
              help="JSON array of per-fibre phases (radians); overrides --seed.")
@click.option("--flat", is_flag=True, help="Use the all-zero phase vector.")
@click.option("--noise-units", type=float, default=0.0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def simulate(config_path, seed, phases_path, flat, noise_units, out_dir):
    """Render one intensity/phase image pair plus metadata."""
    setup = _load_setup(config_path)
    config = setup.config
    if flat:
        phases = np.zeros(config.fibre_count)
    elif phases_path is not None:
        with open(phases_path, "r", encoding="utf-8") as fh:
            phases = validate_phase_vector(np.asarray(json.load(fh), dtype=float),
                                           config.fibre_count)
    else:
        phases = random_phase_vector(config.fibre_count, seed)
    out = Path(out_dir)
    _snapshot(setup, out, {"command": "simulate", "seed": seed,
                           "noise_units": noise_units})
    intensity = intensity_of(focal_field(config, phases,
                                         band_limited=setup.band_limited))
    image = render_intensity_image(intensity, setup.imaging)
    if noise_units > 0:
        image = add_noise(image, NoiseSpec(units=noise_units, seed=seed))
    save_intensity_png(image, out / "intensity.png")
    save_phase_png(render_phase_image(config, phases, setup.imaging),
                   out / "phase.png")
    bucket = bucket_from_flat(config, band_limited=setup.band_limited)
    meta = {
        "seed": seed,
        "phases": [float(p) for p in phases],
        "pib": power_in_bucket(intensity, bucket),
        "noise_units": noise_units,
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _log(f"wrote intensity.png, phase.png, meta.json to {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--workers", type=int, default=None,
              help="Worker processes (default: CBCSIM_WORKERS or 1).")
def generate(config_path, count, seed, out_dir, workers):
    """Generate a training/testing pair dataset with a manifest."""
    setup = _load_setup(config_path)
    out = Path(out_dir)
    _snapshot(setup, out, {"command": "generate", "count": count, "seed": seed})
    manifest = generate_pairs(setup, count, seed, out, workers=workers)
    _log(f"generated {len(manifest['entries'])} pairs in {out}")


@main.command()
@click.option("--dir", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--resim-sample", type=int, default=3, show_default=True)
def verify(dataset_dir, resim_sample):
    """Re-check manifest hashes and re-simulate a sample of entries."""
    report = verify_manifest(dataset_dir, resim_sample=resim_sample)
    click.echo(json.dumps({
        "checked": report.checked,
        "resimulated": report.resimulated,
        "failures": {str(k): v for k, v in report.failures.items()},
        "ok": report.ok,
    }, indent=1, sort_keys=True))
    if not report.ok:
        sys.exit(EXIT_USER)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--testset", type=click.Path(exists=True), required=True)
@click.option("--engine", "engine_name", default="gs", show_default=True,
              type=click.Choice(["oracle", "identity", "gs", "spgd", "neural"]))
@click.option("--noise-units", default="0,1,10,100", show_default=True,
              help="Comma-separated noise levels.")
@click.option("--count", type=int, default=None,
              help="Evaluate only the first N testset entries.")
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dataset-size", type=int, default=None,
              help="Training-set size recorded in the CSV (neural engines).")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def evaluate(config_path, testset, engine_name, noise_units, count, model,
             seed, dataset_size, out_dir):
    """Closed-loop correction quality over a testset, per noise level."""
    setup = _load_setup(config_path)
    config = setup.config
    manifest = load_manifest(testset)
    entries = manifest["entries"][:count] if count else manifest["entries"]
    levels = [float(x) for x in noise_units.split(",") if x.strip() != ""]
    engine = _make_engine(engine_name, setup, testset, model, seed)
    bucket = bucket_from_flat(config, band_limited=setup.band_limited)
    out = Path(out_dir)
    _snapshot(setup, out, {"command": "evaluate", "engine": engine_name,
                           "noise_units": levels, "testset": str(testset),
                           "count": len(entries)})

    rows = []
    per_level: dict[float, list[float]] = {u: [] for u in levels}
    for entry in entries:
        hidden = np.asarray(entry["phases"], dtype=float)
        clean = load_intensity_png(Path(testset) / entry["intensity_file"])
        before_map = intensity_of(focal_field(config, hidden,
                                              band_limited=setup.band_limited))
        pib_before = power_in_bucket(before_map, bucket)
        for units in levels:
            image = clean if units == 0 else add_noise(
                clean, NoiseSpec(units=units, seed=entry["seed"]))
            try:
                predicted = engine.retrieve(image)
                corrected = correct(hidden, predicted,
                                    np.zeros(config.fibre_count))
                after_map = intensity_of(
                    focal_field(config, corrected,
                                band_limited=setup.band_limited))
                pib_after = power_in_bucket(after_map, bucket)
                failed = ""
            except Exception as exc:
                pib_after = math.nan
                failed = str(exc)
                _log(f"case {entry['id']} noise {units}: engine failed: {exc}")
            rows.append({
                "case_id": entry["id"],
                "seed": entry["seed"],
                "noise_units": units,
                "pib_before": f"{pib_before:.6f}",
                "pib_after": "" if math.isnan(pib_after) else f"{pib_after:.6f}",
                "dataset_size": dataset_size if dataset_size is not None else "",
                "error": failed,
            })
            if not math.isnan(pib_after):
                per_level[units].append(pib_after)

    with open(out / "cases.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "case_id", "seed", "noise_units", "pib_before", "pib_after",
            "dataset_size", "error"])
        writer.writeheader()
        writer.writerows(rows)

    with open(out / "ccdf.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["noise_units", "threshold", "fraction_at_or_above"])
        for units in levels:
            if not per_level[units]:
                continue
            summary = pib_statistics(per_level[units])
            for t, frac in zip(summary.thresholds, summary.ccdf):
                writer.writerow([units, f"{t:.1f}", f"{frac:.6f}"])

    stats = {}
    for units in levels:
        if per_level[units]:
            summary = pib_statistics(per_level[units])
            stats[str(units)] = {"mean": summary.mean, "std": summary.std,
                                 "cases": len(per_level[units])}
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _log(f"evaluated {len(entries)} cases x {len(levels)} noise levels -> {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--target", "target_path", type=click.Path(exists=True),
              required=True, help="Intensity PNG to test for reachability.")
@click.option("--engine", "engine_name", default="gs", show_default=True,
              type=click.Choice(["oracle", "identity", "gs", "spgd", "neural"]))
@click.option("--reverse", "reverse_name", default="exact", show_default=True,
              type=click.Choice(["exact", "neural"]))
@click.option("--threshold", type=float, default=None,
              help="Feasibility threshold; defaults to the value stored by "
                   "'calibrate'.")
@click.option("--calibration", type=click.Path(exists=True), default=None)
@click.option("--testset", type=click.Path(exists=True), default=None)
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--reverse-model", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def feasibility(config_path, target_path, engine_name, reverse_name, threshold,
                calibration, testset, model, reverse_model, seed, out_dir):
    """Cyclic-consistency feasibility verdict for an intensity profile."""
    setup = _load_setup(config_path)
    if threshold is None:
        if calibration is None:
            raise ArgumentError("provide --threshold or --calibration")
        with open(calibration, "r", encoding="utf-8") as fh:
            threshold = float(json.load(fh)["threshold"])
    engine = _make_engine(engine_name, setup, testset, model, seed)
    if reverse_name == "exact":
        reverse = ExactReverse(setup)
    else:
        if reverse_model is None:
            raise ArgumentError("the neural reverse requires --reverse-model")
        from .control import NeuralReverse
        reverse = NeuralReverse(setup, reverse_model)
    target = load_intensity_png(target_path)
    report = feasibility_check(target, engine, reverse, threshold)
    out = Path(out_dir)
    _snapshot(setup, out, {"command": "feasibility", "engine": engine_name,
                           "reverse": reverse_name, "threshold": threshold,
                           "target": str(target_path)})
    from PIL import Image
    Image.fromarray(report.diff, mode="RGB").save(out / "diff.png", format="PNG")
    residual = report.residual if math.isfinite(report.residual) else None
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump({
            "residual": residual,
            "threshold": report.threshold,
            "feasible": report.feasible,
            "error": report.error,
            "phases": [float(p) for p in report.phases],
        }, fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(json.dumps({"residual": residual,
                           "feasible": report.feasible}))
    if report.error:
        _log(f"feasibility check failed: {report.error}")
        sys.exit(EXIT_USER)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--engine", "engine_name", default="gs", show_default=True,
              type=click.Choice(["oracle", "identity", "gs", "spgd", "neural"]))
@click.option("--reverse", "reverse_name", default="exact", show_default=True,
              type=click.Choice(["exact"]))
@click.option("--cases", type=int, default=67, show_default=True,
              help="Seeds to draw; three rotations per seed are used.")
@click.option("--seed", type=int, default=12345, show_default=True)
@click.option("--testset", type=click.Path(exists=True), default=None)
@click.option("--model", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def calibrate(config_path, engine_name, reverse_name, cases, seed, testset,
              model, out_path):
    """Calibrate the feasibility threshold on known-feasible profiles."""
    setup = _load_setup(config_path)
    engine = _make_engine(engine_name, setup, testset, model, seed)
    reverse = ExactReverse(setup)
    images = known_feasible_images(setup, seeds=range(seed, seed + cases))
    threshold, residuals = calibrate_threshold(images, engine, reverse)
    payload = {"threshold": threshold,
               "mean": float(residuals.mean()),
               "std": float(residuals.std()),
               "count": int(residuals.size),
               "residuals": [float(r) for r in residuals]}
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(json.dumps({"threshold": threshold}))


if __name__ == "__main__":
    main()

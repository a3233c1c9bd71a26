"""Deterministic, parallel generation of intensity/phase training pairs."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .array import ArgumentError, random_phase_vector
from .configio import SimSetup, setup_digest, setup_to_dict
from .imaging import (load_intensity_png, load_phase_png, raster_sha256,
                      render_intensity_image, render_phase_image,
                      save_intensity_png, save_phase_png)
from .propagation import focal_field, intensity_of

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
PARTIAL_NAME = "manifest.partial.json"


class ManifestError(ValueError):
    """Raised for missing or inconsistent dataset manifests."""


def derive_seed(base_seed: int, pair_id: int) -> int:
    """Stable 64-bit mix of (base_seed, id); order-independent generation."""
    x = (base_seed ^ (pair_id * 0x9E3779B97F4A7C15)) + 0x9E3779B97F4A7C15
    x &= 0xFFFFFFFFFFFFFFFF
    for _ in range(2):
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & 0xFFFFFFFFFFFFFFFF
        x = (x ^ (x >> 27)) * 0x94D049BB133111EB & 0xFFFFFFFFFFFFFFFF
        x ^= x >> 31
    return x


def _pair_paths(pair_id: int) -> tuple[str, str]:
    return f"pairs/{pair_id:06d}_x.png", f"pairs/{pair_id:06d}_y.png"


def _generate_one(setup: SimSetup, base_seed: int, pair_id: int, out_dir: str
                  ) -> dict:
    seed = derive_seed(base_seed, pair_id)
    phases = random_phase_vector(setup.config.fibre_count, seed)
    intensity = intensity_of(focal_field(setup.config, phases,
                                         band_limited=setup.band_limited))
    x_img = render_intensity_image(intensity, setup.imaging)
    y_img = render_phase_image(setup.config, phases, setup.imaging)
    x_rel, y_rel = _pair_paths(pair_id)
    save_intensity_png(x_img, os.path.join(out_dir, x_rel))
    save_phase_png(y_img, os.path.join(out_dir, y_rel))
    return {
        "id": pair_id,
        "seed": seed,
        "phases": [float(p) for p in phases],
        "intensity_file": x_rel,
        "phase_file": y_rel,
        "intensity_sha256": raster_sha256(x_img.pixels),
        "phase_sha256": raster_sha256(y_img.pixels),
    }


def _worker(args):
    return _generate_one(*args)


def generate_pairs(setup: SimSetup, count: int, base_seed: int, out_dir,
                   workers: int | None = None) -> dict:
    """Generate ``count`` training pairs under ``out_dir`` and write the manifest.

    Output is a pure function of (setup, base_seed, count): per-pair seeds are
    derived independently, so worker count and scheduling cannot change a
    single byte.  An interrupted run leaves a partial manifest and is resumed
    by regenerating only the missing ids.
    """
    if count < 1:
        raise ArgumentError(f"count must be >= 1, got {count}")
    out_dir = Path(out_dir)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    if workers is None:
        workers = int(os.environ.get("CBCSIM_WORKERS", "1"))

    done: dict[int, dict] = {}
    partial_path = out_dir / PARTIAL_NAME
    if partial_path.exists():
        with open(partial_path, "r", encoding="utf-8") as fh:
            partial = json.load(fh)
        if partial.get("setup_digest") == setup_digest(setup) \
                and partial.get("base_seed") == base_seed:
            for entry in partial.get("entries", []):
                path = out_dir / entry["intensity_file"]
                other = out_dir / entry["phase_file"]
                if path.exists() and other.exists():
                    done[entry["id"]] = entry

    todo = [i for i in range(count) if i not in done]
    args = [(setup, base_seed, i, str(out_dir)) for i in todo]
    try:
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for entry in pool.map(_worker, args, chunksize=8):
                    done[entry["id"]] = entry
        else:
            for a in args:
                entry = _generate_one(*a)
                done[entry["id"]] = entry
    except BaseException:
        _write_manifest(out_dir / PARTIAL_NAME, setup, base_seed, count, done,
                        partial=True)
        raise

    manifest = _write_manifest(out_dir / MANIFEST_NAME, setup, base_seed, count,
                               done, partial=False)
    if partial_path.exists():
        partial_path.unlink()
    return manifest


def _write_manifest(path: Path, setup: SimSetup, base_seed: int, count: int,
                    done: dict[int, dict], partial: bool) -> dict:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": setup_to_dict(setup),
        "setup_digest": setup_digest(setup),
        "base_seed": base_seed,
        "count": count,
        "partial": partial,
        "entries": [done[i] for i in sorted(done)],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no {MANIFEST_NAME} in {dataset_dir}")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"unsupported manifest schema {manifest.get('schema_version')!r}")
    return manifest


@dataclass(frozen=True)
class VerifyReport:
    checked: int
    failures: dict[int, str]
    resimulated: int

    @property
    def ok(self) -> bool:
        return not self.failures


def verify_manifest(dataset_dir, resim_sample: int = 3) -> VerifyReport:
    """Re-check file presence and raster hashes for every entry, and
    re-simulate a deterministic sample of entries bit-exactly."""
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    from .configio import setup_from_dict

    setup = setup_from_dict(manifest["config"])
    failures: dict[int, str] = {}
    entries = manifest["entries"]
    ids = [e["id"] for e in entries]
    if ids != sorted(set(ids)) or (ids and ids != list(range(len(ids)))):
        raise ManifestError("entry ids are not unique and dense")

    for entry in entries:
        for key, hash_key, loader in (
                ("intensity_file", "intensity_sha256", load_intensity_png),
                ("phase_file", "phase_sha256", load_phase_png)):
            path = dataset_dir / entry[key]
            if not path.exists():
                failures[entry["id"]] = f"missing {entry[key]}"
                break
            img = loader(path)
            if raster_sha256(img.pixels) != entry[hash_key]:
                failures[entry["id"]] = f"hash mismatch for {entry[key]}"
                break

    resim = 0
    sample = entries[:: max(1, len(entries) // max(1, resim_sample))][:resim_sample]
    for entry in sample:
        if entry["id"] in failures:
            continue
        phases = random_phase_vector(setup.config.fibre_count, entry["seed"])
        if [float(p) for p in phases] != entry["phases"]:
            failures[entry["id"]] = "phases do not reproduce from seed"
            continue
        intensity = intensity_of(focal_field(setup.config, phases,
                                             band_limited=setup.band_limited))
        x_img = render_intensity_image(intensity, setup.imaging)
        y_img = render_phase_image(setup.config, phases, setup.imaging)
        if raster_sha256(x_img.pixels) != entry["intensity_sha256"] \
                or raster_sha256(y_img.pixels) != entry["phase_sha256"]:
            failures[entry["id"]] = "re-simulation does not reproduce rasters"
        resim += 1

    return VerifyReport(checked=len(entries), failures=failures,
                        resimulated=resim)

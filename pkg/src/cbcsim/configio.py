"""Plain-text key=value serialisation of the simulation setup (SI metres)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .array import ArgumentError, FibreArrayConfig, GridSpec
from .imaging import ImagingSpec


@dataclass(frozen=True)
class SimSetup:
    """Everything needed to reproduce one simulation pipeline."""

    config: FibreArrayConfig = field(default_factory=FibreArrayConfig)
    imaging: ImagingSpec = field(default_factory=ImagingSpec)
    band_limited: bool = False


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def setup_to_dict(setup: SimSetup) -> dict:
    cfg = setup.config
    d = {
        "rings": cfg.rings,
        "fibre_radius": cfg.fibre_radius,
        "centre_pitch": cfg.centre_pitch,
        "gaussian_radius": cfg.gaussian_radius,
        "wavelength": cfg.wavelength,
        "focal_distance": cfg.focal_distance,
        "grid_n": cfg.grid.n,
        "grid_pitch": cfg.grid.pitch,
        "intensity_crop": setup.imaging.intensity_crop,
        "phase_crop": setup.imaging.phase_crop,
        "out_size": setup.imaging.out_size,
        "band_limited": setup.band_limited,
        "resize_method": "bilinear",
        "phase_byte_mapping": "round(255*(x+1)/2)",
    }
    if cfg.custom_positions is not None:
        d["custom_positions"] = ";".join(
            f"{x!r},{y!r}" for x, y in cfg.custom_positions)
    return d


def setup_to_text(setup: SimSetup) -> str:
    lines = [f"{k}={_fmt(v)}" for k, v in setup_to_dict(setup).items()]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def setup_from_dict(d: dict) -> SimSetup:
    d = dict(d)
    d.pop("resize_method", None)
    d.pop("phase_byte_mapping", None)
    known_int = {"rings", "grid_n", "intensity_crop", "phase_crop", "out_size"}
    known_float = {"fibre_radius", "centre_pitch", "gaussian_radius",
                   "wavelength", "focal_distance", "grid_pitch"}
    defaults = setup_to_dict(SimSetup())
    values = {}
    for key, raw in d.items():
        if key == "custom_positions":
            if isinstance(raw, str):
                pairs = [p for p in raw.split(";") if p.strip()]
                values[key] = tuple(
                    tuple(float(c) for c in p.split(",")) for p in pairs)
            else:
                values[key] = tuple(tuple(float(c) for c in p) for p in raw)
        elif key in known_int:
            values[key] = int(raw)
        elif key in known_float:
            values[key] = float(raw)
        elif key == "band_limited":
            values[key] = raw if isinstance(raw, bool) else _BOOL[str(raw).lower()]
        else:
            raise ArgumentError(f"unknown configuration key {key!r}")
    merged = {**defaults, **values}
    config = FibreArrayConfig(
        rings=merged["rings"],
        fibre_radius=merged["fibre_radius"],
        centre_pitch=merged["centre_pitch"],
        gaussian_radius=merged["gaussian_radius"],
        wavelength=merged["wavelength"],
        focal_distance=merged["focal_distance"],
        grid=GridSpec(n=merged["grid_n"], pitch=merged["grid_pitch"]),
        custom_positions=merged.get("custom_positions"),
    )
    imaging = ImagingSpec(intensity_crop=merged["intensity_crop"],
                          phase_crop=merged["phase_crop"],
                          out_size=merged["out_size"])
    return SimSetup(config=config, imaging=imaging,
                    band_limited=merged["band_limited"])


def setup_from_text(text: str) -> SimSetup:
    d = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ArgumentError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        d[key.strip()] = value.strip()
    return setup_from_dict(d)


def load_setup(path) -> SimSetup:
    with open(path, "r", encoding="utf-8") as fh:
        return setup_from_text(fh.read())


def save_setup(setup: SimSetup, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(setup_to_text(setup))


def setup_digest(setup: SimSetup) -> str:
    return hashlib.sha256(setup_to_text(setup).encode()).hexdigest()

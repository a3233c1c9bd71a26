"""Dataset access over the manifest directory protocol.

The training-pair directory contract: ``manifest.json`` describing the
simulation configuration plus ``pairs/{id:06d}_x.png`` (intensity, grayscale)
and ``pairs/{id:06d}_y.png`` (phase, R=cos/B=sin).  Forward-direction labels
are re-rendered from the manifest's phase vectors after canonicalising the
conjugate-inversion branch, so the learned intensity-to-phase mapping is
single-valued.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class PairConfig:
    rings: int
    fibre_radius: float
    centre_pitch: float
    wavelength: float
    grid_n: int
    grid_pitch: float
    phase_crop: int
    intensity_crop: int
    out_size: int
    custom_positions: tuple | None = None


def load_manifest(dataset_dir):
    path = Path(dataset_dir) / "manifest.json"
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = manifest["config"]
    custom = None
    if "custom_positions" in cfg:
        raw = cfg["custom_positions"]
        pairs = [p for p in raw.split(";") if p.strip()]
        custom = tuple(tuple(float(v) for v in p.split(",")) for p in pairs)
    config = PairConfig(
        rings=int(cfg["rings"]),
        fibre_radius=float(cfg["fibre_radius"]),
        centre_pitch=float(cfg["centre_pitch"]),
        wavelength=float(cfg["wavelength"]),
        grid_n=int(cfg["grid_n"]),
        grid_pitch=float(cfg["grid_pitch"]),
        phase_crop=int(cfg["phase_crop"]),
        intensity_crop=int(cfg["intensity_crop"]),
        out_size=int(cfg["out_size"]),
        custom_positions=custom,
    )
    return manifest, config


def fibre_positions(config: PairConfig) -> np.ndarray:
    if config.custom_positions is not None:
        return np.asarray(config.custom_positions, dtype=float)
    points = [(0.0, 0.0)]
    for r in range(1, config.rings + 1):
        corners = [(r * config.centre_pitch * math.cos(math.pi / 3 * k),
                    r * config.centre_pitch * math.sin(math.pi / 3 * k))
                   for k in range(7)]
        for k in range(6):
            x0, y0 = corners[k]
            x1, y1 = corners[k + 1]
            for t in range(r):
                points.append((x0 + t / r * (x1 - x0), y0 + t / r * (y1 - y0)))
    return np.asarray(points)


def wrap(a):
    w = np.remainder(np.asarray(a, dtype=float), 2 * np.pi)
    return np.where(w > np.pi, w - 2 * np.pi, w)


def conjugate_twin(config: PairConfig, phases: np.ndarray) -> np.ndarray | None:
    pos = fibre_positions(config)
    perm = np.empty(len(pos), dtype=int)
    for k, (x, y) in enumerate(pos):
        d = np.hypot(pos[:, 0] + x, pos[:, 1] + y)
        j = int(np.argmin(d))
        if d[j] > 1e-9:
            return None
        perm[k] = j
    twin = wrap(-np.asarray(phases, dtype=float)[perm])
    twin = wrap(twin - twin[0])
    twin[0] = 0.0
    return twin


def canonical_phases(config: PairConfig, phases: np.ndarray) -> np.ndarray:
    """Deterministic conjugate-branch representative of a phase vector."""
    phases = np.asarray(phases, dtype=float)
    twin = conjugate_twin(config, phases)
    if twin is None:
        return phases
    for a, b in zip(phases[1:], twin[1:]):
        if abs(wrap(a - b)) > 0.2:
            return phases if a < b else twin
    return phases


def _bilinear(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[..., None] if arr.ndim == 3 else (r - r0)
    fc = (c - c0)[..., None] if arr.ndim == 3 else (c - c0)
    a = arr.astype(float)
    return (a[r0, c0] * (1 - fr) * (1 - fc) + a[r1, c0] * fr * (1 - fc)
            + a[r0, c1] * (1 - fr) * fc + a[r1, c1] * fr * fc)


def render_phase_raster(config: PairConfig, phases: np.ndarray) -> np.ndarray:
    """Phase image per the manifest's recorded encoding (R=cos, B=sin,
    quantised at native resolution, cropped and bilinearly resized)."""
    n = config.grid_n
    native = np.zeros((n, n, 3), dtype=np.uint8)
    # disc membership follows the generator's convention bit for bit:
    # physical-unit coordinates, strict inequality at the boundary
    coords = (np.arange(n) - n // 2) * config.grid_pitch
    r_px = config.fibre_radius / config.grid_pitch
    for (cx, cy), phi in zip(fibre_positions(config), phases):
        row_c = cy / config.grid_pitch + n // 2
        col_c = cx / config.grid_pitch + n // 2
        r0 = max(0, int(math.floor(row_c - r_px)) - 1)
        r1 = min(n, int(math.ceil(row_c + r_px)) + 2)
        c0 = max(0, int(math.floor(col_c - r_px)) - 1)
        c1 = min(n, int(math.ceil(col_c + r_px)) + 2)
        y = coords[r0:r1, None] - cy
        x = coords[None, c0:c1] - cx
        mask = x * x + y * y < config.fibre_radius ** 2
        tile = native[r0:r1, c0:c1]
        tile[mask, 0] = int(np.rint(255 * (math.cos(phi) + 1) / 2))
        tile[mask, 2] = int(np.rint(255 * (math.sin(phi) + 1) / 2))
    crop = config.phase_crop
    start = n // 2 - crop // 2
    cropped = native[start:start + crop, start:start + crop]
    out = config.out_size
    if crop == out:
        return cropped.copy()
    coords = (np.arange(out) + 0.5) * (crop / out) - 0.5
    rows = np.broadcast_to(coords[:, None], (out, out))
    cols = np.broadcast_to(coords[None, :], (out, out))
    return np.rint(_bilinear(cropped, rows, cols)).clip(0, 255).astype(np.uint8)


def load_intensity(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def load_phase(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def to_unit(pixels: np.ndarray) -> np.ndarray:
    """uint8 raster -> float32 CHW in [-1, 1]."""
    arr = pixels.astype(np.float32) / 127.5 - 1.0
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.transpose(arr, (2, 0, 1))
    return arr


def from_unit(tensor: np.ndarray) -> np.ndarray:
    """float CHW in [-1, 1] -> uint8 raster (HW or HWC)."""
    arr = np.clip((tensor + 1.0) * 127.5, 0, 255)
    arr = np.rint(arr).astype(np.uint8)
    if arr.shape[0] == 1:
        return arr[0]
    return np.transpose(arr, (1, 2, 0))


class PairDataset:
    """Iterates training pairs as float32 CHW arrays in [-1, 1].

    ``direction='forward'`` yields (intensity, canonical phase image);
    ``'reverse'`` yields (phase image as stored, intensity).
    """

    def __init__(self, dataset_dir, direction: str = "forward",
                 limit: int | None = None, canonicalise: bool = True):
        if direction not in ("forward", "reverse"):
            raise ValueError(f"unknown direction {direction!r}")
        self.dir = Path(dataset_dir)
        self.direction = direction
        self.manifest, self.config = load_manifest(dataset_dir)
        self.entries = self.manifest["entries"]
        if limit is not None:
            self.entries = self.entries[:limit]
        self.canonicalise = canonicalise

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def image_size(self) -> int:
        return self.config.out_size

    def __getitem__(self, index: int):
        entry = self.entries[index]
        intensity = to_unit(load_intensity(self.dir / entry["intensity_file"]))
        if self.direction == "forward" and self.canonicalise:
            phases = canonical_phases(self.config,
                                      np.asarray(entry["phases"], dtype=float))
            phase = to_unit(render_phase_raster(self.config, phases))
        else:
            phase = to_unit(load_phase(self.dir / entry["phase_file"]))
        if self.direction == "forward":
            return intensity, phase
        return phase, intensity

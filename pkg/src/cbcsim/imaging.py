"""8-bit image encodings of intensity maps and phase vectors, and camera noise."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .array import (ArgumentError, FibreArrayConfig, pin_reference,
                    validate_phase_vector, _fibre_rasters)
from .propagation import IntensityMap


class GeometryError(ValueError):
    """Raised when a fibre disc cannot be located inside an image raster."""


@dataclass(frozen=True)
class ImagingSpec:
    """Crop/resize pipeline of the image encodings.

    The intensity map is cropped to ``intensity_crop`` samples around the grid
    centre and resized to ``out_size``; the exit-plane phase raster is cropped
    to ``phase_crop`` and resized likewise.
    """

    intensity_crop: int = 100
    phase_crop: int = 512
    out_size: int = 256

    def __post_init__(self):
        for name in ("intensity_crop", "phase_crop", "out_size"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")

    @staticmethod
    def native(n: int) -> "ImagingSpec":
        """Identity pipeline at grid resolution (no crop, no resize)."""
        return ImagingSpec(intensity_crop=n, phase_crop=n, out_size=n)


@dataclass(frozen=True)
class IntensityImage:
    """Single-channel 8-bit raster; ``degenerate`` marks an all-zero source."""

    pixels: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.dtype != np.uint8:
            raise ArgumentError("intensity image must be a 2-D uint8 array")


@dataclass(frozen=True)
class PhaseImage:
    """RGB 8-bit raster; R encodes cos(phase), B encodes sin(phase), G is 0."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 \
                or self.pixels.dtype != np.uint8:
            raise ArgumentError("phase image must be an (H, W, 3) uint8 array")


@dataclass(frozen=True)
class NoiseSpec:
    """Shot-like camera noise: std = units**unit_exponent * sqrt(pixel)."""

    units: float = 0.0
    seed: int = 0
    unit_exponent: float = 1.0

    def __post_init__(self):
        if self.units < 0:
            raise ArgumentError(f"noise units must be >= 0, got {self.units}")


def bilinear_sample(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                    fill: float | None = 0.0) -> np.ndarray:
    """Sample ``arr`` at fractional (row, col) positions.

    Positions outside the raster evaluate to ``fill``; ``fill=None`` clamps
    to the nearest edge instead.  Works on 2-D arrays or (H, W, C) stacks.
    """
    h, w = arr.shape[:2]
    if fill is None:
        inside = np.ones(np.shape(rows), dtype=bool)
        fill = 0.0
    else:
        inside = (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)
    r = np.clip(rows, 0, h - 1)
    c = np.clip(cols, 0, w - 1)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)
    fc = (c - c0)
    if arr.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
        inside = inside[..., None]
    a = arr.astype(float)
    out = (a[r0, c0] * (1 - fr) * (1 - fc) + a[r1, c0] * fr * (1 - fc)
           + a[r0, c1] * (1 - fr) * fc + a[r1, c1] * fr * fc)
    return np.where(inside, out, fill)


def bilinear_resize(arr: np.ndarray, out_size: int) -> np.ndarray:
    """Resize a square raster with the half-pixel-centre convention."""
    in_size = arr.shape[0]
    if in_size == out_size:
        return arr.astype(float)
    scale = in_size / out_size
    coords = (np.arange(out_size) + 0.5) * scale - 0.5
    rows = coords[:, None] + np.zeros(out_size)[None, :]
    cols = coords[None, :] + np.zeros(out_size)[:, None]
    return bilinear_sample(arr, rows, cols, fill=None)


def source_to_image_coord(native: float, crop: int, out_size: int, n: int) -> float:
    """Map a native grid coordinate through the crop/resize pipeline."""
    start = n // 2 - crop // 2
    return (native - start + 0.5) * out_size / crop - 0.5


def _crop_centre(values: np.ndarray, size: int) -> np.ndarray:
    n = values.shape[0]
    if size > n:
        raise ArgumentError(f"crop {size} exceeds raster size {n}")
    start = n // 2 - size // 2
    return values[start:start + size, start:start + size]


def render_intensity_image(intensity: IntensityMap, spec: ImagingSpec = ImagingSpec()
                           ) -> IntensityImage:
    """Crop the central region, resize, normalise the maximum to 255."""
    cropped = _crop_centre(intensity.values, spec.intensity_crop)
    resized = bilinear_resize(cropped, spec.out_size)
    peak = resized.max()
    if peak <= 0.0:
        pixels = np.zeros((spec.out_size, spec.out_size), dtype=np.uint8)
        return IntensityImage(pixels=pixels, degenerate=True)
    pixels = np.rint(resized * (255.0 / peak)).astype(np.uint8)
    return IntensityImage(pixels=pixels)


def encode_angle_byte(x: np.ndarray | float) -> np.ndarray | int:
    """Map a value in [-1, 1] to the 8-bit channel b = round(255*(x+1)/2)."""
    b = np.rint(255.0 * (np.asarray(x) + 1.0) / 2.0).astype(np.uint8)
    return b if b.ndim else int(b)


def render_phase_image(config: FibreArrayConfig, phases: np.ndarray,
                       spec: ImagingSpec = ImagingSpec()) -> PhaseImage:
    """Disc-coloured phase raster: R = cos, B = sin (8-bit), black background,
    quantised at native resolution then cropped and resized."""
    phases = validate_phase_vector(phases, config.fibre_count)
    n = config.grid.n
    native = np.zeros((n, n, 3), dtype=np.uint8)
    for (rows, cols, mask, _), phi in zip(_fibre_rasters(config), phases):
        tile = native[rows, cols]
        tile[mask, 0] = encode_angle_byte(math.cos(phi))
        tile[mask, 2] = encode_angle_byte(math.sin(phi))
        native[rows, cols] = tile
    cropped = _crop_centre(native, spec.phase_crop)
    if spec.phase_crop == spec.out_size:
        return PhaseImage(pixels=cropped.copy())
    resized = bilinear_resize(cropped, spec.out_size)
    return PhaseImage(pixels=np.rint(resized).clip(0, 255).astype(np.uint8))


def decode_phase_image(image: PhaseImage, config: FibreArrayConfig,
                       spec: ImagingSpec = ImagingSpec()) -> np.ndarray:
    """Recover piston phases from a phase image.

    For every fibre disc (geometry mapped through the crop/resize pipeline)
    the circular mean of the decoded angle over pixels within half the disc
    radius is taken, then the vector is re-referenced to the central fibre.
    """
    pixels = image.pixels
    if pixels.shape[0] != spec.out_size or pixels.shape[1] != spec.out_size:
        raise ArgumentError(
            f"image size {pixels.shape[:2]} does not match spec {spec.out_size}")
    n = config.grid.n
    scale = spec.out_size / spec.phase_crop
    radius = 0.5 * (config.fibre_radius / config.grid.pitch) * scale
    raw = np.empty(config.fibre_count)
    for k, (cx, cy) in enumerate(config.positions()):
        row_c = source_to_image_coord(cy / config.grid.pitch + n // 2,
                                      spec.phase_crop, spec.out_size, n)
        col_c = source_to_image_coord(cx / config.grid.pitch + n // 2,
                                      spec.phase_crop, spec.out_size, n)
        r0 = max(0, int(math.floor(row_c - radius)))
        r1 = min(spec.out_size, int(math.ceil(row_c + radius)) + 1)
        c0 = max(0, int(math.floor(col_c - radius)))
        c1 = min(spec.out_size, int(math.ceil(col_c + radius)) + 1)
        if r0 >= r1 or c0 >= c1:
            raise GeometryError(f"fibre {k} disc is empty after crop/resize")
        yy = np.arange(r0, r1, dtype=float)[:, None] - row_c
        xx = np.arange(c0, c1, dtype=float)[None, :] - col_c
        mask = yy * yy + xx * xx < radius * radius
        if not mask.any():
            raise GeometryError(f"fibre {k} disc is empty after crop/resize")
        tile = pixels[r0:r1, c0:c1]
        cos_part = (tile[mask, 0].astype(float) - 127.5) / 127.5
        sin_part = (tile[mask, 2].astype(float) - 127.5) / 127.5
        angles = np.arctan2(sin_part, cos_part)
        raw[k] = math.atan2(np.sin(angles).sum(), np.cos(angles).sum())
    return pin_reference(raw)


def add_noise(image: IntensityImage, spec: NoiseSpec) -> IntensityImage:
    """Per-pixel Gaussian noise with std scaling as the square root of the
    pixel value; clamped back to the 8-bit range.  Bit-reproducible per seed."""
    if spec.units == 0.0:
        return IntensityImage(pixels=image.pixels.copy(),
                              degenerate=image.degenerate)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.seed)))
    g = rng.standard_normal(image.pixels.shape)
    p = image.pixels.astype(float)
    noisy = p + (spec.units ** spec.unit_exponent) * np.sqrt(p) * g
    pixels = np.rint(noisy).clip(0, 255).astype(np.uint8)
    return IntensityImage(pixels=pixels, degenerate=image.degenerate)


def save_intensity_png(image: IntensityImage, path) -> None:
    Image.fromarray(image.pixels, mode="L").save(path, format="PNG")


def save_phase_png(image: PhaseImage, path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


def load_intensity_png(path) -> IntensityImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return IntensityImage(pixels=arr)


def load_phase_png(path) -> PhaseImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return PhaseImage(pixels=arr)


def raster_sha256(pixels: np.ndarray) -> str:
    """Digest of the raw raster contents (shape + pixel bytes)."""
    h = hashlib.sha256()
    h.update(str(pixels.shape).encode())
    h.update(np.ascontiguousarray(pixels).tobytes())
    return h.hexdigest()

"""Power-in-the-bucket metric, its flat-phase reference, and difference images."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .array import ArgumentError, FibreArrayConfig
from .imaging import IntensityImage, bilinear_sample
from .propagation import IntensityMap, focal_field, intensity_of


class MetricUndefinedError(ValueError):
    """Raised when the metric is evaluated on an all-zero raster."""


@dataclass(frozen=True)
class BucketSpec:
    """Circular integration region in raster pixel coordinates."""

    centre: tuple[float, float]
    radius: float
    reference_fraction: float

    def __post_init__(self):
        if not (self.radius > 0):
            raise ArgumentError("bucket radius must be positive")
        if not (0.0 < self.reference_fraction <= 1.0):
            raise ArgumentError("reference fraction must be in (0, 1]")

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        yy, xx = np.indices(shape)
        return ((yy - self.centre[0]) ** 2 + (xx - self.centre[1]) ** 2
                <= self.radius ** 2)

    def scaled(self, factor: float, offset: float = 0.0) -> "BucketSpec":
        """Bucket in a raster whose coordinates are ``factor * x + offset``."""
        return BucketSpec(centre=(self.centre[0] * factor + offset,
                                  self.centre[1] * factor + offset),
                          radius=self.radius * factor,
                          reference_fraction=self.reference_fraction)


def azimuthal_average(values: np.ndarray, centre: tuple[float, float],
                      r_max: int) -> np.ndarray:
    """Mean intensity on circles of integer pixel radius around ``centre``,
    sampled bilinearly (1-pixel-wide annuli)."""
    prof = np.empty(r_max + 1)
    prof[0] = bilinear_sample(values, np.array([centre[0]]),
                              np.array([centre[1]]))[0]
    for r in range(1, r_max + 1):
        m = max(8, int(2 * np.pi * r))
        ang = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
        rows = centre[0] + r * np.sin(ang)
        cols = centre[1] + r * np.cos(ang)
        prof[r] = bilinear_sample(values, rows, cols).mean()
    return prof


def first_local_minimum(profile: np.ndarray) -> int:
    """Index of the first strict turning point of a radial profile."""
    for r in range(1, len(profile) - 1):
        if profile[r] < profile[r - 1] and profile[r] <= profile[r + 1]:
            return r
    raise ArgumentError("radial profile has no local minimum")


@lru_cache(maxsize=16)
def bucket_from_flat(config: FibreArrayConfig, band_limited: bool = False
                     ) -> BucketSpec:
    """Reference bucket: the central spot of the flat-phase focal pattern.

    The centre is the flat-phase peak pixel; the radius is the first local
    minimum of the azimuthally averaged profile; the reference fraction is the
    flat-phase intensity fraction inside that circle.
    """
    flat = np.zeros(config.fibre_count)
    intensity = intensity_of(focal_field(config, flat, band_limited=band_limited))
    values = intensity.values
    peak = np.unravel_index(int(np.argmax(values)), values.shape)
    r_max = min(values.shape[0] - peak[0] - 2, peak[0] - 1,
                values.shape[1] - peak[1] - 2, peak[1] - 1)
    profile = azimuthal_average(values, peak, min(r_max, values.shape[0] // 4))
    radius = first_local_minimum(profile)
    bucket = BucketSpec(centre=(float(peak[0]), float(peak[1])),
                        radius=float(radius), reference_fraction=1.0)
    frac = _bucket_fraction(values, bucket)
    return BucketSpec(centre=bucket.centre, radius=bucket.radius,
                      reference_fraction=frac)


def _as_values(map_or_image) -> np.ndarray:
    if isinstance(map_or_image, IntensityMap):
        return map_or_image.values
    if isinstance(map_or_image, IntensityImage):
        return map_or_image.pixels.astype(float)
    return np.asarray(map_or_image, dtype=float)


def _bucket_fraction(values: np.ndarray, bucket: BucketSpec) -> float:
    h, w = values.shape
    if not (0 <= bucket.centre[0] - bucket.radius
            and bucket.centre[0] + bucket.radius <= h - 1
            and 0 <= bucket.centre[1] - bucket.radius
            and bucket.centre[1] + bucket.radius <= w - 1):
        raise ArgumentError("bucket does not lie within the raster")
    total = values.sum()
    if total <= 0.0:
        raise MetricUndefinedError("metric undefined for an all-zero raster")
    return float(values[bucket.mask(values.shape)].sum() / total)


def power_in_bucket(map_or_image, bucket: BucketSpec) -> float:
    """Intensity fraction inside the bucket, as a percentage of the
    flat-phase reference fraction.  100.0 means flat-phase quality."""
    frac = _bucket_fraction(_as_values(map_or_image), bucket)
    return 100.0 * frac / bucket.reference_fraction


def difference_image(input_image: IntensityImage, output_image: IntensityImage
                     ) -> np.ndarray:
    """Signed difference as an RGB raster: red where intensity was added,
    green where it was removed."""
    a = input_image.pixels
    b = output_image.pixels
    if a.shape != b.shape:
        raise ArgumentError(f"image dimensions differ: {a.shape} vs {b.shape}")
    d = b.astype(np.int16) - a.astype(np.int16)
    rgb = np.zeros(a.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.clip(d, 0, 255).astype(np.uint8)
    rgb[..., 1] = np.clip(-d, 0, 255).astype(np.uint8)
    return rgb


@dataclass(frozen=True)
class PibSummary:
    mean: float
    std: float
    thresholds: np.ndarray
    ccdf: np.ndarray


def pib_statistics(values) -> PibSummary:
    """Mean, standard deviation and complementary cumulative distribution
    (fraction of cases >= t for t on a 0..100 grid)."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise ArgumentError("pib_statistics requires a non-empty list")
    thresholds = np.arange(0.0, 101.0)
    ccdf = (vals[None, :] >= thresholds[:, None]).mean(axis=1)
    std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return PibSummary(mean=float(vals.mean()), std=std,
                      thresholds=thresholds, ccdf=ccdf)

"""Fibre array geometry and assembly of the exit-plane complex field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


class ArgumentError(ValueError):
    """Raised when an operation receives arguments violating its contract."""


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid: ``n`` samples per side, ``pitch`` metres apart."""

    n: int = 1000
    pitch: float = 10e-6

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise ArgumentError(f"grid n must be even and >= 2, got {self.n}")
        if not (self.pitch > 0):
            raise ArgumentError(f"grid pitch must be positive, got {self.pitch}")

    @property
    def extent(self) -> float:
        return self.n * self.pitch

    def coords(self) -> np.ndarray:
        """1-D physical coordinates; the array centroid sits at index n//2."""
        return (np.arange(self.n) - self.n // 2) * self.pitch


@dataclass(frozen=True)
class FibreArrayConfig:
    """Geometry and optical parameters of the hexagonal fibre array.

    ``rings`` counts the rings surrounding the central fibre, so the default
    of 2 yields the 19-fibre array.  ``custom_positions`` overrides the
    hexagonal layout with explicit centre coordinates (metres); the
    ring-count formula then no longer applies.
    """

    rings: int = 2
    fibre_radius: float = 500e-6
    centre_pitch: float = 1e-3
    gaussian_radius: float = 400e-6
    wavelength: float = 1e-6
    focal_distance: float = 0.25
    grid: GridSpec = field(default_factory=GridSpec)
    custom_positions: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.rings < 0:
            raise ArgumentError(f"rings must be >= 0, got {self.rings}")
        for name in ("fibre_radius", "centre_pitch", "gaussian_radius",
                     "wavelength", "focal_distance"):
            if not (getattr(self, name) > 0):
                raise ArgumentError(f"{name} must be positive")
        if not (self.gaussian_radius < self.fibre_radius):
            raise ArgumentError("gaussian_radius must be smaller than fibre_radius")
        half = self.grid.extent / 2
        for x, y in self.positions():
            if abs(x) + self.fibre_radius > half or abs(y) + self.fibre_radius > half:
                raise ArgumentError("fibre discs do not fit inside the grid extent")

    @property
    def fibre_count(self) -> int:
        if self.custom_positions is not None:
            return len(self.custom_positions)
        return 3 * self.rings * (self.rings + 1) + 1

    def positions(self) -> np.ndarray:
        """Fibre centre coordinates, shape (fibre_count, 2), metres."""
        if self.custom_positions is not None:
            return np.asarray(self.custom_positions, dtype=float).reshape(-1, 2)
        return hex_positions(self.rings, self.centre_pitch)

    def with_grid(self, n: int, pitch: float) -> "FibreArrayConfig":
        return replace(self, grid=GridSpec(n=n, pitch=pitch))


@dataclass(frozen=True)
class ComplexField:
    """Sampled scalar field on a square grid; ``samples[row, col]`` with
    x = (col - n//2) * pitch and y = (row - n//2) * pitch."""

    samples: np.ndarray
    pitch: float

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] != self.samples.shape[1]:
            raise ArgumentError("field samples must be a square 2-D array")
        if not (self.pitch > 0):
            raise ArgumentError("field pitch must be positive")

    @property
    def n(self) -> int:
        return self.samples.shape[0]


def hex_positions(rings: int, centre_pitch: float) -> np.ndarray:
    """Centre coordinates of a hexagonal close-packed array.

    Index 0 is the origin; each ring is traversed counter-clockwise starting
    on the +x axis.  Ring r holds 6r fibres, so the total count is
    3*rings*(rings+1) + 1.
    """
    if rings < 0:
        raise ArgumentError(f"rings must be >= 0, got {rings}")
    if not (centre_pitch > 0):
        raise ArgumentError(f"centre_pitch must be positive, got {centre_pitch}")
    points = [(0.0, 0.0)]
    for r in range(1, rings + 1):
        corners = [
            (r * centre_pitch * math.cos(math.pi / 3 * k),
             r * centre_pitch * math.sin(math.pi / 3 * k))
            for k in range(7)
        ]
        for k in range(6):
            x0, y0 = corners[k]
            x1, y1 = corners[k + 1]
            for t in range(r):
                f = t / r
                points.append((x0 + f * (x1 - x0), y0 + f * (y1 - y0)))
    return np.asarray(points, dtype=float)


def ring_rotation_permutation(rings: int) -> np.ndarray:
    """Index permutation mapping each fibre to the one 60 degrees ahead.

    ``phases[perm]`` is the phase vector whose focal pattern is the original
    rotated by 60 degrees about the array centre.
    """
    perm = [0]
    offset = 1
    for r in range(1, rings + 1):
        size = 6 * r
        # rotating ring r by 60 degrees advances each fibre by r slots
        perm.extend(offset + (np.arange(size) + r) % size)
        offset += size
    return np.asarray(perm, dtype=int)


def point_reflection_permutation(config: "FibreArrayConfig") -> np.ndarray | None:
    """Permutation sending each fibre to the one at the mirrored position
    (-x, -y), or None when the layout is not point-symmetric."""
    pos = config.positions()
    perm = np.empty(len(pos), dtype=int)
    for k, (x, y) in enumerate(pos):
        d = np.hypot(pos[:, 0] + x, pos[:, 1] + y)
        j = int(np.argmin(d))
        if d[j] > 1e-9:
            return None
        perm[k] = j
    return perm


def conjugate_twin(config: "FibreArrayConfig", phases: np.ndarray
                   ) -> np.ndarray | None:
    """The conjugate-inversion partner of a phase vector.

    For a point-symmetric array, negating every phase and swapping
    mirror-partner fibres yields a field whose focal intensity matches the
    original to within grid discretisation, so intensity-only retrieval can
    land on either branch.  Returns None when the layout is asymmetric and
    the ambiguity does not arise.
    """
    perm = point_reflection_permutation(config)
    if perm is None:
        return None
    phases = np.asarray(phases, dtype=float)
    return pin_reference(wrap_phase(-phases[perm]))


def wrap_phase(angle):
    """Wrap angles to (-pi, pi]; accepts scalars or arrays.

    Values already in range pass through unchanged, making the function
    exactly idempotent.
    """
    a = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ArgumentError("wrap_phase requires finite input")
    wrapped = np.remainder(a, TWO_PI)
    wrapped = np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)
    wrapped = np.where((a > -math.pi) & (a <= math.pi), a, wrapped)
    if np.isscalar(angle) or np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def random_phase_vector(fibre_count: int, seed: int) -> np.ndarray:
    """Uniform piston phases over (-pi, pi] with the central fibre pinned to 0."""
    if fibre_count < 1:
        raise ArgumentError(f"fibre_count must be >= 1, got {fibre_count}")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    phases = np.zeros(fibre_count)
    # pi - U[0, 2pi) lands exactly in (-pi, pi]
    phases[1:] = math.pi - rng.uniform(0.0, TWO_PI, size=fibre_count - 1)
    return phases


def validate_phase_vector(phases: np.ndarray, fibre_count: int | None = None) -> np.ndarray:
    phases = np.asarray(phases, dtype=float)
    if phases.ndim != 1:
        raise ArgumentError("phase vector must be 1-D")
    if fibre_count is not None and phases.size != fibre_count:
        raise ArgumentError(
            f"phase vector length {phases.size} does not match fibre count {fibre_count}")
    if not np.all(np.isfinite(phases)):
        raise ArgumentError("phase vector must be finite")
    if phases[0] != 0.0:
        raise ArgumentError("central fibre phase must be exactly 0")
    if np.any(phases <= -math.pi) or np.any(phases > math.pi):
        raise ArgumentError("phases must lie in (-pi, pi]")
    return phases


def pin_reference(phases: np.ndarray) -> np.ndarray:
    """Re-reference so the central entry is 0 and all values sit in (-pi, pi]."""
    phases = np.asarray(phases, dtype=float)
    pinned = wrap_phase(phases - phases[0])
    pinned[0] = 0.0
    return pinned


@lru_cache(maxsize=32)
def _fibre_rasters(config: FibreArrayConfig):
    """Per-fibre (row_slice, col_slice, mask, amplitude) tiles on the grid.

    Membership is strict r < fibre_radius, so tangent points between touching
    discs belong to no fibre.
    """
    grid = config.grid
    coords = grid.coords()
    tiles = []
    for cx, cy in config.positions():
        r_px = config.fibre_radius / grid.pitch
        row_c = cy / grid.pitch + grid.n // 2
        col_c = cx / grid.pitch + grid.n // 2
        r0 = max(0, int(math.floor(row_c - r_px)) - 1)
        r1 = min(grid.n, int(math.ceil(row_c + r_px)) + 2)
        c0 = max(0, int(math.floor(col_c - r_px)) - 1)
        c1 = min(grid.n, int(math.ceil(col_c + r_px)) + 2)
        y = coords[r0:r1, None] - cy
        x = coords[None, c0:c1] - cx
        rsq = x * x + y * y
        mask = rsq < config.fibre_radius ** 2
        amplitude = np.where(mask, np.exp(-rsq / config.gaussian_radius ** 2), 0.0)
        tiles.append((slice(r0, r1), slice(c0, c1), mask, amplitude))
    return tuple(tiles)


def assemble_field(config: FibreArrayConfig, phases: np.ndarray) -> ComplexField:
    """Exit-plane field: per fibre a truncated Gaussian of unit peak amplitude
    carrying that fibre's piston phase; exactly zero outside every disc."""
    phases = validate_phase_vector(phases, config.fibre_count)
    samples = np.zeros((config.grid.n, config.grid.n), dtype=complex)
    for (rows, cols, mask, amplitude), phi in zip(_fibre_rasters(config), phases):
        samples[rows, cols][mask] = amplitude[mask] * complex(math.cos(phi), math.sin(phi))
    return ComplexField(samples=samples, pitch=config.grid.pitch)


def analytic_array_power(config: FibreArrayConfig) -> float:
    """Closed-form total power of the assembled field (sum of truncated
    Gaussian integrals), for discretisation checks."""
    w = config.gaussian_radius
    r = config.fibre_radius
    per_fibre = math.pi * w * w / 2.0 * (1.0 - math.exp(-2.0 * r * r / (w * w)))
    return config.fibre_count * per_fibre

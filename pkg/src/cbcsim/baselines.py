"""Iterative phase-retrieval references: fibre-constrained alternating
projections, stochastic parallel gradient descent, and brute-force search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .array import (ArgumentError, ComplexField, FibreArrayConfig,
                    assemble_field, conjugate_twin, pin_reference,
                    random_phase_vector, wrap_phase, _fibre_rasters)
from .metrics import bucket_from_flat
from .propagation import (FocalBasis, IntensityMap, angular_spectrum,
                          angular_spectrum_back, apply_lens, focal_field,
                          intensity_of, _lens_rho_sq)


class ObjectiveError(RuntimeError):
    """Raised when an optimisation objective goes non-finite; carries the
    trace gathered so far."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = np.asarray(trace)


@dataclass(frozen=True)
class SpgdParams:
    """Hill-climber settings; the defaults were fixed by a one-time sweep."""

    perturbation: float = 0.1
    gain: float = 0.6
    max_iters: int = 2000
    target_pib: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (self.perturbation > 0):
            raise ArgumentError("perturbation must be positive")
        if self.max_iters < 1:
            raise ArgumentError("max_iters must be >= 1")


@dataclass(frozen=True)
class SpgdResult:
    phases: np.ndarray
    objective: float
    trace: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.trace)


@lru_cache(maxsize=16)
def _cached_basis(config: FibreArrayConfig, band_limited: bool, crop: int | None
                  ) -> FocalBasis:
    return FocalBasis(config, band_limited=band_limited, crop=crop)


class PibEvaluator:
    """Fast power-in-the-bucket objective via the cached focal basis.

    The propagator conserves power, so the total focal intensity is a
    constant; only the bucket region needs evaluating per phase vector.
    """

    def __init__(self, config: FibreArrayConfig, band_limited: bool = False,
                 crop: int = 256):
        crop = min(crop, config.grid.n)
        self.basis = _cached_basis(config, band_limited, crop)
        bucket = bucket_from_flat(config, band_limited=band_limited)
        self.bucket = bucket
        lo = self.basis.crop_offset
        yy, xx = np.indices((crop, crop))
        mask = ((yy + lo - bucket.centre[0]) ** 2
                + (xx + lo - bucket.centre[1]) ** 2) <= bucket.radius ** 2
        flat_idx = np.flatnonzero(mask.ravel())
        self._bucket_stack = self.basis.stack.reshape(
            self.basis.stack.shape[0], -1)[:, flat_idx].copy()
        self._total = self.basis.total_power / config.grid.pitch ** 2

    def __call__(self, phases: np.ndarray) -> float:
        e = np.exp(1j * np.asarray(phases, dtype=float)) @ self._bucket_stack
        inside = float(np.sum(e.real ** 2 + e.imag ** 2))
        return 100.0 * (inside / self._total) / self.bucket.reference_fraction

    def batch(self, phasors: np.ndarray) -> np.ndarray:
        e = phasors @ self._bucket_stack
        inside = np.sum(e.real ** 2 + e.imag ** 2, axis=-1)
        return 100.0 * (inside / self._total) / self.bucket.reference_fraction


def spgd_optimize(config: FibreArrayConfig, objective=None,
                  params: SpgdParams = SpgdParams()) -> SpgdResult:
    """Two-sided stochastic parallel gradient descent over the piston phases.

    Starts from a seeded random vector; each step draws a +-perturbation sign
    pattern (central fibre fixed), probes the objective on both sides and
    moves along the estimated gradient.  Runs until ``target_pib`` or
    ``max_iters``; returns the best iterate seen.  Deterministic per seed.

    ``objective`` maps an IntensityMap to a scalar; None selects the fast
    power-in-the-bucket objective.
    """
    count = config.fibre_count
    # perturbations draw from a jumped stream so they stay independent of the
    # seeded starting vector
    rng = np.random.Generator(np.random.Philox(key=np.uint64(params.seed)).jumped())
    phases = random_phase_vector(count, params.seed)

    if objective is None:
        evaluate = PibEvaluator(config)
    else:
        def evaluate(ph):
            return float(objective(intensity_of(focal_field(config, ph))))

    trace = []

    def checked(ph):
        value = evaluate(ph)
        if not math.isfinite(value):
            raise ObjectiveError("objective returned a non-finite value", trace)
        return value

    best_value = checked(phases)
    best_phases = phases.copy()
    for _ in range(params.max_iters):
        signs = rng.integers(0, 2, size=count) * 2.0 - 1.0
        signs[0] = 0.0
        delta = params.perturbation * signs
        j_plus = checked(phases + delta)
        j_minus = checked(phases - delta)
        phases = wrap_phase(phases + params.gain * (j_plus - j_minus) * delta)
        phases[0] = 0.0
        value = checked(phases)
        trace.append(value)
        if value > best_value:
            best_value = value
            best_phases = phases.copy()
        if params.target_pib is not None and value >= params.target_pib:
            break
    return SpgdResult(phases=best_phases, objective=best_value,
                      trace=np.asarray(trace))


def write_trace_csv(trace, path) -> None:
    """Serialise an optimisation trace as (iteration, objective) CSV rows."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, value in enumerate(np.asarray(trace, dtype=float)):
            writer.writerow([i, repr(float(value))])


def _sqrt_target(target: IntensityMap, config: FibreArrayConfig) -> np.ndarray:
    if target.values.shape != (config.grid.n, config.grid.n):
        raise ArgumentError(
            f"target shape {target.values.shape} does not match grid "
            f"{config.grid.n}")
    return np.sqrt(np.maximum(target.values, 0.0))


def resolve_conjugate_branch(target: IntensityMap, config: FibreArrayConfig,
                             phases: np.ndarray, band_limited: bool = False
                             ) -> np.ndarray:
    """Pick the better of a candidate and its conjugate-inversion twin.

    The two branches reproduce the target almost equally well, but grid
    discretisation separates their focal-amplitude residuals by orders of
    magnitude near an exact solution; choosing the smaller residual uses only
    the target, never the hidden truth.
    """
    twin = conjugate_twin(config, phases)
    if twin is None:
        return phases
    r_cand = gs_residual(target, config, phases, band_limited=band_limited)
    r_twin = gs_residual(target, config, twin, band_limited=band_limited)
    return phases if r_cand <= r_twin else twin


def gs_retrieve(target: IntensityMap, config: FibreArrayConfig,
                iterations: int, init: np.ndarray | None = None,
                band_limited: bool = False, projection: str = "disc_mean",
                with_trace: bool = False, resolve_conjugate: bool = True):
    """Alternating-projection phase retrieval against a focal intensity map.

    Each round propagates the constrained exit-plane estimate to the focal
    plane, swaps its amplitude for sqrt(target), propagates back and projects
    onto the per-fibre constraint (known Gaussian amplitude, one piston phase
    per disc, central fibre pinned to zero).  ``projection`` selects how the
    disc phase is extracted: ``disc_mean`` takes the circular mean of the
    pixel phases, ``mode_weighted`` weights them by the mode amplitude.
    ``resolve_conjugate`` settles the conjugate-inversion ambiguity of
    intensity-only retrieval by residual comparison.
    """
    amp = _sqrt_target(target, config)
    count = config.fibre_count
    phases = np.zeros(count) if init is None else np.asarray(init, dtype=float)
    rasters = _fibre_rasters(config)
    rho_sq = _lens_rho_sq(config.grid.n, config.grid.pitch)
    unlens = np.exp(1j * math.pi / (config.wavelength * config.focal_distance)
                    * rho_sq)
    errors = []
    for _ in range(iterations):
        exit_field = assemble_field(config, pin_reference(phases))
        lensed = apply_lens(exit_field, config.focal_distance, config.wavelength)
        focal = angular_spectrum(lensed, config.focal_distance,
                                 config.wavelength, band_limited=band_limited)
        modulus = np.abs(focal.samples)
        if with_trace:
            errors.append(float(np.linalg.norm(modulus - amp)))
        safe = np.maximum(modulus, np.finfo(float).tiny)
        unit = np.where(modulus > 0, focal.samples / safe, 1.0)
        swapped = ComplexField(samples=amp * unit, pitch=focal.pitch)
        back = angular_spectrum_back(swapped, config.focal_distance,
                                     config.wavelength,
                                     band_limited=band_limited)
        phases = _project_disc_phases(back.samples * unlens, rasters, projection)
    phases = pin_reference(phases)
    if resolve_conjugate:
        phases = resolve_conjugate_branch(target, config, phases,
                                          band_limited=band_limited)
    if with_trace:
        return phases, np.asarray(errors)
    return phases


def _project_disc_phases(samples: np.ndarray, rasters, projection: str
                         ) -> np.ndarray:
    out = np.empty(len(rasters))
    for k, (rows, cols, mask, amplitude) in enumerate(rasters):
        tile = samples[rows, cols][mask]
        if projection == "disc_mean":
            modulus = np.abs(tile)
            safe = np.maximum(modulus, np.finfo(float).tiny)
            unit = np.where(modulus > 0, tile / safe, 0.0)
            out[k] = math.atan2(unit.imag.sum(), unit.real.sum())
        elif projection == "mode_weighted":
            s = (tile * amplitude[mask]).sum()
            out[k] = math.atan2(s.imag, s.real)
        else:
            raise ArgumentError(f"unknown projection {projection!r}")
    return out


def gs_retrieve_basis(target: IntensityMap, config: FibreArrayConfig,
                      iterations: int, init: np.ndarray | None = None,
                      band_limited: bool = False, crop: int = 256,
                      resolve_conjugate: bool = True) -> np.ndarray:
    """Fast alternating projections in the span of the per-fibre focal fields.

    Equivalent to :func:`gs_retrieve` with the mode-weighted projection: the
    exit-plane back-projection reduces to inner products with the cached
    focal basis, so no transforms are needed per iteration.
    """
    crop = min(crop, config.grid.n)
    basis = _cached_basis(config, band_limited, crop)
    lo = basis.crop_offset
    amp = _sqrt_target(target, config)[lo:lo + crop, lo:lo + crop].ravel()
    stack = basis.stack.reshape(basis.stack.shape[0], -1)
    count = config.fibre_count
    phases = np.zeros(count) if init is None else np.asarray(init, dtype=float)
    phasors = np.exp(1j * phases)
    tiny = np.finfo(float).tiny
    for _ in range(iterations):
        e = phasors @ stack
        modulus = np.abs(e)
        unit = np.where(modulus > 0, e / np.maximum(modulus, tiny), 1.0)
        overlaps = stack.conj() @ (amp * unit)
        phasors = overlaps / np.maximum(np.abs(overlaps), tiny)
    phases = pin_reference(np.angle(phasors))
    if resolve_conjugate:
        phases = resolve_conjugate_branch(target, config, phases,
                                          band_limited=band_limited)
    return phases


def gs_residual(target: IntensityMap, config: FibreArrayConfig,
                phases: np.ndarray, band_limited: bool = False,
                crop: int = 256) -> float:
    """Normalised focal-amplitude mismatch of a candidate phase vector.

    The candidate amplitude is scaled to the least-squares match first, so
    targets in arbitrary units (e.g. decoded camera images) score 0 at an
    exact solution.
    """
    crop = min(crop, config.grid.n)
    basis = _cached_basis(config, band_limited, crop)
    lo = basis.crop_offset
    amp = _sqrt_target(target, config)[lo:lo + crop, lo:lo + crop]
    e = np.abs(basis.field_samples(phases))
    norm_e = float(np.sum(e * e))
    scale = float(np.sum(e * amp)) / max(norm_e, np.finfo(float).tiny)
    return float(np.linalg.norm(scale * e - amp)
                 / max(np.linalg.norm(amp), np.finfo(float).tiny))


def gs_retrieve_restarts(target: IntensityMap, config: FibreArrayConfig,
                         iterations: int = 250, restarts: int = 6,
                         seed: int = 0, band_limited: bool = False,
                         crop: int = 256, stop_residual: float = 0.1
                         ) -> np.ndarray:
    """Basis-space retrieval from several random starts; keeps the candidate
    with the smallest focal-amplitude mismatch and stops as soon as one
    lands below ``stop_residual``."""
    best = None
    best_res = math.inf
    for r in range(restarts):
        init = (np.zeros(config.fibre_count) if r == 0
                else random_phase_vector(config.fibre_count, seed + 7919 * r))
        phases = gs_retrieve_basis(target, config, iterations, init=init,
                                   band_limited=band_limited, crop=crop)
        res = gs_residual(target, config, phases, band_limited=band_limited,
                          crop=crop)
        if res < best_res:
            best, best_res = phases, res
        if best_res < stop_residual:
            break
    return best


def brute_force_retrieve(target: IntensityMap, config: FibreArrayConfig,
                         levels: int, keep: int = 4096) -> np.ndarray:
    """Exhaustive search over a uniform phase grid for the non-central fibres,
    minimising the L2 distance to the target map.

    A strided-pixel prefilter ranks all levels**(count-1) combinations; the
    best ``keep`` are re-scored on the full focal region.  Exact for targets
    generated on the phase grid.
    """
    count = config.fibre_count
    free = count - 1
    if levels < 2:
        raise ArgumentError("levels must be >= 2")
    total = levels ** free
    if total > 10_000_000:
        raise ArgumentError(
            f"search space {levels}^{free} exceeds the 1e7 evaluation bound")

    crop = min(256, config.grid.n)
    basis = _cached_basis(config, False, crop)
    lo = basis.crop_offset
    t_crop = target.values[lo:lo + crop, lo:lo + crop]

    grid_phases = 2.0 * math.pi * np.arange(levels) / levels - math.pi

    # prefilter scores the central region on a pixel stride
    stride = max(1, crop // 64)
    sub = (slice(crop // 4, 3 * crop // 4, stride),) * 2
    stack_sub = basis.stack[(slice(None),) + sub].reshape(count, -1)
    stack_sub = stack_sub.astype(np.complex64)
    t_sub = t_crop[sub].ravel().astype(np.float32)
    grid_phasors32 = np.exp(1j * grid_phases).astype(np.complex64)

    keep = min(keep, total)
    best_idx = np.empty(0, dtype=np.int64)
    best_d = np.empty(0, dtype=np.float32)
    for start in range(0, total, 4096):
        idx = np.arange(start, min(start + 4096, total), dtype=np.int64)
        phasors = _index_to_phasors(idx, grid_phasors32, free, levels)
        e = phasors @ stack_sub
        d = np.sum((e.real ** 2 + e.imag ** 2 - t_sub) ** 2, axis=1)
        best_idx = np.concatenate([best_idx, idx])
        best_d = np.concatenate([best_d, d])
        if best_idx.size > keep:
            order = np.argpartition(best_d, keep - 1)[:keep]
            best_idx = best_idx[order]
            best_d = best_d[order]

    stack_full = basis.stack.reshape(count, -1)
    t_full = t_crop.ravel()
    grid_phasors = np.exp(1j * grid_phases)
    best_combo = 0
    best_dist = math.inf
    for start in range(0, best_idx.size, 128):
        idx = best_idx[start:start + 128]
        phasors = _index_to_phasors(idx, grid_phasors, free, levels)
        e = phasors @ stack_full
        d = np.sum((e.real ** 2 + e.imag ** 2 - t_full) ** 2, axis=1)
        j = int(np.argmin(d))
        if d[j] < best_dist:
            best_dist = float(d[j])
            best_combo = int(idx[j])

    digits = _index_to_digits(np.array([best_combo]), free, levels)[0]
    phases = np.zeros(count)
    phases[1:] = grid_phases[digits]
    return pin_reference(wrap_phase(phases))


def _index_to_digits(idx: np.ndarray, free: int, levels: int) -> np.ndarray:
    digits = np.empty((idx.size, free), dtype=np.int64)
    rem = idx.copy()
    for k in range(free - 1, -1, -1):
        digits[:, k] = rem % levels
        rem //= levels
    return digits


def _index_to_phasors(idx: np.ndarray, grid_phasors: np.ndarray, free: int,
                      levels: int) -> np.ndarray:
    digits = _index_to_digits(idx, free, levels)
    phasors = np.empty((idx.size, free + 1), dtype=grid_phasors.dtype)
    phasors[:, 0] = 1.0
    phasors[:, 1:] = grid_phasors[digits]
    return phasors

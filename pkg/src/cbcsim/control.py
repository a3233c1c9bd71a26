"""Closed-loop phase correction, beam shaping, and cyclic-consistency checks."""

from __future__ import annotations

import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .array import (ArgumentError, pin_reference, random_phase_vector,
                    wrap_phase)
from .baselines import (SpgdParams, _cached_basis, gs_retrieve_restarts,
                        resolve_conjugate_branch)
from .configio import SimSetup
from .imaging import (IntensityImage, NoiseSpec, add_noise, bilinear_resize,
                      bilinear_sample, decode_phase_image, load_phase_png,
                      render_intensity_image, save_intensity_png)
from .metrics import bucket_from_flat, difference_image, power_in_bucket
from .propagation import IntensityMap, focal_field, intensity_of


class RetrievalEngine(Protocol):
    """Maps a focal intensity image to a piston phase vector."""

    def retrieve(self, image: IntensityImage) -> np.ndarray: ...


class ReverseOperator(Protocol):
    """Maps a piston phase vector to a focal intensity image."""

    def reverse(self, phases: np.ndarray) -> IntensityImage: ...


def correct(current: np.ndarray, predicted: np.ndarray, target: np.ndarray
            ) -> np.ndarray:
    """Per-fibre phase update: subtract the prediction, add the target
    profile, re-reference to the central fibre."""
    current = np.asarray(current, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    target = np.asarray(target, dtype=float)
    if not (current.shape == predicted.shape == target.shape):
        raise ArgumentError("phase vectors must have equal lengths")
    return pin_reference(wrap_phase(current - predicted + target))


def image_to_map(image: IntensityImage, setup: SimSetup) -> IntensityMap:
    """Embed a rendered intensity image back onto the simulation grid.

    Inverts the crop/resize pipeline (amplitude scale is arbitrary); pixels
    outside the imaged region are zero, which is where the simulated focal
    pattern carries no energy.
    """
    crop = setup.imaging.intensity_crop
    n = setup.config.grid.n
    small = bilinear_resize(image.pixels.astype(float), crop)
    values = np.zeros((n, n))
    start = n // 2 - crop // 2
    values[start:start + crop, start:start + crop] = np.maximum(small, 0.0)
    return IntensityMap(values=values, pitch=setup.config.grid.pitch)


class ExactReverse:
    """Reverse operator backed by the propagation simulator itself."""

    def __init__(self, setup: SimSetup):
        self.setup = setup

    def reverse(self, phases: np.ndarray) -> IntensityImage:
        intensity = intensity_of(focal_field(self.setup.config, phases,
                                             band_limited=self.setup.band_limited))
        return render_intensity_image(intensity, self.setup.imaging)


class IdentityEngine:
    """Null retriever: always predicts the flat (all-zero) vector."""

    def __init__(self, fibre_count: int):
        self.fibre_count = fibre_count

    def retrieve(self, image: IntensityImage) -> np.ndarray:
        return np.zeros(self.fibre_count)


class OracleEngine:
    """Answer-key retriever for upper-bound tests.

    Holds a table of (image, phases) candidates simulated up front and
    returns the entry nearest to the presented image; it never sees anything
    but the image at retrieval time.
    """

    def __init__(self, setup: SimSetup, seeds, noise: NoiseSpec | None = None):
        self.setup = setup
        self._exact: dict[bytes, np.ndarray] = {}
        self._images: list[np.ndarray] = []
        self._phases: list[np.ndarray] = []
        for seed in seeds:
            phases = random_phase_vector(setup.config.fibre_count, seed)
            image = ExactReverse(setup).reverse(phases)
            if noise is not None:
                image = add_noise(image, noise)
            self._exact[image.pixels.tobytes()] = phases
            self._images.append(image.pixels.astype(np.int16))
            self._phases.append(phases)

    def retrieve(self, image: IntensityImage) -> np.ndarray:
        hit = self._exact.get(image.pixels.tobytes())
        if hit is not None:
            return hit.copy()
        pixels = image.pixels.astype(np.int16)
        dists = [np.abs(c - pixels).sum() for c in self._images]
        return self._phases[int(np.argmin(dists))].copy()


class GsEngine:
    """Iterative alternating-projection retriever operating on the image."""

    def __init__(self, setup: SimSetup, iterations: int = 300,
                 restarts: int = 16, seed: int = 0, crop: int = 128,
                 stop_residual: float = 0.16):
        self.setup = setup
        self.iterations = iterations
        self.restarts = restarts
        self.seed = seed
        self.crop = crop
        self.stop_residual = stop_residual

    def retrieve(self, image: IntensityImage) -> np.ndarray:
        target = image_to_map(image, self.setup)
        return gs_retrieve_restarts(target, self.setup.config,
                                    iterations=self.iterations,
                                    restarts=self.restarts, seed=self.seed,
                                    band_limited=self.setup.band_limited,
                                    crop=self.crop,
                                    stop_residual=self.stop_residual)


class SpgdEngine:
    """Hill-climbing retriever minimising the image-domain mismatch."""

    def __init__(self, setup: SimSetup, params: SpgdParams | None = None,
                 crop: int = 128):
        self.setup = setup
        self.params = params or SpgdParams(gain=0.05, perturbation=0.1,
                                           max_iters=1500)
        self.crop = crop

    def retrieve(self, image: IntensityImage) -> np.ndarray:
        config = self.setup.config
        crop = min(self.crop, config.grid.n)
        basis = _cached_basis(config, self.setup.band_limited, crop)
        lo = basis.crop_offset
        target = image_to_map(image, self.setup).values[lo:lo + crop,
                                                        lo:lo + crop]
        t = target / max(target.sum(), np.finfo(float).tiny)
        stack = basis.stack.reshape(basis.stack.shape[0], -1)
        t_flat = t.ravel()

        def objective(phases):
            e = np.exp(1j * phases) @ stack
            i = e.real ** 2 + e.imag ** 2
            i /= max(i.sum(), np.finfo(float).tiny)
            return -float(np.abs(i - t_flat).sum())

        params = self.params
        rng = np.random.Generator(np.random.Philox(key=np.uint64(params.seed)))
        phases = random_phase_vector(config.fibre_count, params.seed)
        best_value = objective(phases)
        best = phases.copy()
        for _ in range(params.max_iters):
            signs = rng.integers(0, 2, size=config.fibre_count) * 2.0 - 1.0
            signs[0] = 0.0
            delta = params.perturbation * signs
            j_plus = objective(phases + delta)
            j_minus = objective(phases - delta)
            phases = wrap_phase(phases + params.gain * (j_plus - j_minus) * delta)
            phases[0] = 0.0
            value = objective(phases)
            if value > best_value:
                best_value = value
                best = phases.copy()
        target_map = image_to_map(image, self.setup)
        return resolve_conjugate_branch(target_map, config, pin_reference(best),
                                        band_limited=self.setup.band_limited)


class NeuralEngine:
    """Retriever backed by an external forward network over the PNG protocol.

    By default a single ``neural serve`` worker is kept alive and fed
    predict requests line by line; ``persistent=False`` falls back to one
    ``neural predict`` process per image.
    """

    def __init__(self, setup: SimSetup, model_path, command: str = "neural",
                 resolve_twin: bool = True, persistent: bool = True):
        self.setup = setup
        self.model_path = str(model_path)
        self.command = command
        self.resolve_twin = resolve_twin
        self.persistent = persistent
        self._worker = None

    def _ensure_worker(self):
        if self._worker is not None and self._worker.poll() is None:
            return self._worker
        self._worker = subprocess.Popen(
            [self.command, "serve", "--model", self.model_path],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        ready = self._worker.stdout.readline().strip()
        if ready != "ready":
            raise RuntimeError(f"neural serve failed to start: {ready!r}")
        return self._worker

    def close(self):
        if self._worker is not None and self._worker.poll() is None:
            try:
                self._worker.stdin.write("quit\n")
                self._worker.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            self._worker.terminate()
        self._worker = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def _predict_png(self, x_path, y_path):
        if self.persistent:
            worker = self._ensure_worker()
            worker.stdin.write(f"predict {x_path} {y_path}\n")
            worker.stdin.flush()
            answer = worker.stdout.readline().strip()
            if answer != "ok":
                raise RuntimeError(f"neural serve failed: {answer!r}")
        else:
            result = subprocess.run(
                [self.command, "predict", "--model", self.model_path,
                 "--in", str(x_path), "--out", str(y_path)],
                capture_output=True, text=True)
            if result.returncode != 0:
                raise RuntimeError(
                    f"neural predict failed ({result.returncode}): "
                    f"{result.stderr.strip()}")

    def retrieve(self, image: IntensityImage) -> np.ndarray:
        with tempfile.TemporaryDirectory(prefix="cbcsim-neural-") as tmp:
            x_path = Path(tmp) / "in.png"
            y_path = Path(tmp) / "out.png"
            save_intensity_png(image, x_path)
            self._predict_png(x_path, y_path)
            phase_img = load_phase_png(y_path)
        phases = decode_phase_image(phase_img, self.setup.config,
                                    self.setup.imaging)
        if self.resolve_twin:
            target = image_to_map(image, self.setup)
            phases = resolve_conjugate_branch(
                target, self.setup.config, phases,
                band_limited=self.setup.band_limited)
        return phases


class NeuralReverse:
    """Reverse operator backed by an external reverse network (PNG protocol)."""

    def __init__(self, setup: SimSetup, model_path, command: str = "neural"):
        self.setup = setup
        self.model_path = str(model_path)
        self.command = command

    def reverse(self, phases: np.ndarray) -> IntensityImage:
        from .imaging import load_intensity_png, render_phase_image, save_phase_png

        phase_img = render_phase_image(self.setup.config, phases,
                                       self.setup.imaging)
        with tempfile.TemporaryDirectory(prefix="cbcsim-neural-") as tmp:
            y_path = Path(tmp) / "in.png"
            x_path = Path(tmp) / "out.png"
            save_phase_png(phase_img, y_path)
            result = subprocess.run(
                [self.command, "predict", "--model", self.model_path,
                 "--in", str(y_path), "--out", str(x_path)],
                capture_output=True, text=True)
            if result.returncode != 0:
                raise RuntimeError(
                    f"neural predict failed ({result.returncode}): "
                    f"{result.stderr.strip()}")
            return load_intensity_png(x_path)


@dataclass(frozen=True)
class TrialResult:
    before: float
    after: float
    metric: str
    predicted: np.ndarray | None
    corrected: np.ndarray | None
    failed: bool = False
    error: str = ""


def closed_loop_trial(engine: RetrievalEngine, setup: SimSetup, seed: int,
                      target: np.ndarray | None = None,
                      noise: NoiseSpec | None = None) -> TrialResult:
    """Single correction trial against hidden random phases.

    The hidden vector is never passed to the engine; it only ever sees the
    (optionally noisy) rendered intensity image.  For a flat target the
    quality metric is power in the bucket; for a shaped target it is the
    normalised L1 distance between rendered intensity images.
    """
    config = setup.config
    hidden = random_phase_vector(config.fibre_count, seed)
    if target is None:
        target = np.zeros(config.fibre_count)
    before_map = intensity_of(focal_field(config, hidden,
                                          band_limited=setup.band_limited))
    image = render_intensity_image(before_map, setup.imaging)
    if noise is not None:
        image = add_noise(image, noise)
    try:
        predicted = engine.retrieve(image)
    except Exception as exc:
        return TrialResult(before=math.nan, after=math.nan, metric="none",
                           predicted=None, corrected=None, failed=True,
                           error=str(exc))
    corrected = correct(hidden, predicted, target)
    after_map = intensity_of(focal_field(config, corrected,
                                         band_limited=setup.band_limited))
    if np.any(target != 0.0):
        reference = render_intensity_image(
            intensity_of(focal_field(config, target,
                                     band_limited=setup.band_limited)),
            setup.imaging)
        before = image_l1_residual(reference,
                                   render_intensity_image(before_map,
                                                          setup.imaging))
        after = image_l1_residual(reference,
                                  render_intensity_image(after_map,
                                                         setup.imaging))
        metric = "l1"
    else:
        bucket = bucket_from_flat(config, band_limited=setup.band_limited)
        before = power_in_bucket(before_map, bucket)
        after = power_in_bucket(after_map, bucket)
        metric = "pib"
    return TrialResult(before=before, after=after, metric=metric,
                       predicted=predicted, corrected=corrected)


def image_l1_residual(a: IntensityImage, b: IntensityImage) -> float:
    """Normalised L1 difference: sum|a-b| / sum max(a,b); 0 for equal images."""
    x = a.pixels.astype(float)
    y = b.pixels.astype(float)
    if x.shape != y.shape:
        raise ArgumentError(f"image dimensions differ: {x.shape} vs {y.shape}")
    denom = np.maximum(x, y).sum()
    if denom == 0.0:
        return 0.0
    return float(np.abs(x - y).sum() / denom)


@dataclass(frozen=True)
class FeasibilityReport:
    residual: float
    feasible: bool
    threshold: float
    diff: np.ndarray
    phases: np.ndarray
    error: str = ""


def feasibility_check(target: IntensityImage, engine: RetrievalEngine,
                      reverse: ReverseOperator, threshold: float
                      ) -> FeasibilityReport:
    """Cyclic-consistency test of whether an intensity profile is reachable.

    The image is mapped to phases and back to an image; profiles outside the
    reachable set cannot survive the round trip, so a large residual flags an
    infeasible request.  An engine or reverse failure yields an error report
    (never feasible) instead of an exception.
    """
    try:
        phases = engine.retrieve(target)
        reconstructed = reverse.reverse(phases)
    except Exception as exc:
        return FeasibilityReport(residual=math.nan, feasible=False,
                                 threshold=threshold,
                                 diff=np.zeros(target.pixels.shape + (3,),
                                               dtype=np.uint8),
                                 phases=np.zeros(0), error=str(exc))
    residual = image_l1_residual(target, reconstructed)
    return FeasibilityReport(residual=residual,
                             feasible=residual <= threshold,
                             threshold=threshold,
                             diff=difference_image(target, reconstructed),
                             phases=phases)


def rotate_intensity_image(image: IntensityImage, degrees: float,
                           centre: tuple[float, float] | None = None
                           ) -> IntensityImage:
    """Bilinear rotation about the image centre (or an explicit pivot);
    out-of-frame pixels are 0."""
    pixels = image.pixels.astype(float)
    h, w = pixels.shape
    cy, cx = centre if centre is not None else ((h - 1) / 2.0, (w - 1) / 2.0)
    theta = math.radians(degrees)
    yy, xx = np.indices((h, w), dtype=float)
    dy, dx = yy - cy, xx - cx
    rows = cy + math.cos(theta) * dy - math.sin(theta) * dx
    cols = cx + math.sin(theta) * dy + math.cos(theta) * dx
    rotated = bilinear_sample(pixels, rows, cols, fill=0.0)
    return IntensityImage(pixels=np.rint(rotated).clip(0, 255).astype(np.uint8),
                          degenerate=image.degenerate)


def calibrate_threshold(images, engine: RetrievalEngine,
                        reverse: ReverseOperator) -> tuple[float, np.ndarray]:
    """Feasibility threshold from known-feasible profiles: mean + 3 std of
    their round-trip residuals."""
    residuals = []
    for image in images:
        report = feasibility_check(image, engine, reverse, threshold=math.inf)
        if report.error:
            raise RuntimeError(f"calibration case failed: {report.error}")
        residuals.append(report.residual)
    residuals = np.asarray(residuals)
    if residuals.size == 0:
        raise ArgumentError("calibration requires at least one image")
    return float(residuals.mean() + 3.0 * residuals.std()), residuals


def pattern_centre_in_image(setup: SimSetup) -> tuple[float, float]:
    """Image coordinates of the grid centre sample (the focal pattern pivot)."""
    from .imaging import source_to_image_coord

    n = setup.config.grid.n
    c = source_to_image_coord(float(n // 2), setup.imaging.intensity_crop,
                              setup.imaging.out_size, n)
    return (c, c)


def known_feasible_images(setup: SimSetup, seeds, rotations=(0.0, 60.0, 120.0)
                          ) -> list[IntensityImage]:
    """Known-feasible calibration profiles: simulated test images plus their
    array-symmetry rotations (multiples of 60 degrees about the pattern
    centre stay reachable)."""
    reverse = ExactReverse(setup)
    centre = pattern_centre_in_image(setup)
    images = []
    for seed in seeds:
        base = reverse.reverse(random_phase_vector(setup.config.fibre_count,
                                                   seed))
        for deg in rotations:
            images.append(base if deg == 0.0
                          else rotate_intensity_image(base, deg, centre=centre))
    return images


def sixfold_symmetry_score(image: IntensityImage) -> float:
    """Residual between an image and its 60-degree rotation (0 = symmetric)."""
    return image_l1_residual(image, rotate_intensity_image(image, 60.0))


def select_symmetric_target(images) -> int:
    """Index of the most 6-fold-symmetric intensity image in a sequence."""
    scores = [sixfold_symmetry_score(img) for img in images]
    if not scores:
        raise ArgumentError("no images supplied")
    return int(np.argmin(scores))

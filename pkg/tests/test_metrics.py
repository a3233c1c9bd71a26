import numpy as np
import pytest

from cbcsim.array import ArgumentError, FibreArrayConfig, random_phase_vector
from cbcsim.baselines import PibEvaluator
from cbcsim.imaging import IntensityImage
from cbcsim.metrics import (BucketSpec, MetricUndefinedError, bucket_from_flat,
                            difference_image, first_local_minimum,
                            pib_statistics, power_in_bucket)
from cbcsim.propagation import IntensityMap, focal_field, intensity_of

# flat-phase reference constants on the default 19-fibre setup,
# fixed by measurement
FLAT_BUCKET_RADIUS_19 = 7.0
FLAT_REF_FRACTION_19 = 0.635
# first profile minimum of the disc-truncated single-fibre focal spot
SINGLE_FIBRE_BUCKET_RADIUS = 40.0


class TestBucketFromFlat:
    def test_deterministic(self, cfg19):
        a = bucket_from_flat(cfg19)
        b = bucket_from_flat(cfg19)
        assert a == b

    def test_frozen_reference(self, cfg19):
        bucket = bucket_from_flat(cfg19)
        assert bucket.centre == (500.0, 500.0)
        assert bucket.radius == FLAT_BUCKET_RADIUS_19
        assert bucket.reference_fraction == pytest.approx(FLAT_REF_FRACTION_19,
                                                          abs=1e-3)

    def test_single_fibre_radius(self):
        # the profile minimum sits at the first diffraction ring of the
        # truncated mode, about twice the untruncated-Gaussian spot radius
        cfg = FibreArrayConfig(rings=0)
        bucket = bucket_from_flat(cfg)
        assert bucket.radius == SINGLE_FIBRE_BUCKET_RADIUS
        analytic_px = cfg.wavelength * cfg.focal_distance / (
            np.pi * cfg.gaussian_radius) / cfg.grid.pitch
        assert 1.5 < bucket.radius / analytic_px < 2.5

    def test_invariants(self):
        with pytest.raises(ArgumentError):
            BucketSpec(centre=(0, 0), radius=0.0, reference_fraction=0.5)
        with pytest.raises(ArgumentError):
            BucketSpec(centre=(0, 0), radius=1.0, reference_fraction=0.0)


class TestPowerInBucket:
    def test_flat_phase_is_exactly_100(self, cfg19):
        bucket = bucket_from_flat(cfg19)
        imap = intensity_of(focal_field(cfg19, np.zeros(19)))
        assert power_in_bucket(imap, bucket) == 100.0

    def test_scale_invariance(self, cfg19):
        bucket = bucket_from_flat(cfg19)
        imap = intensity_of(focal_field(cfg19, random_phase_vector(19, 2)))
        a = power_in_bucket(imap, bucket)
        b = power_in_bucket(IntensityMap(values=imap.values * 41.2,
                                         pitch=imap.pitch), bucket)
        assert b == pytest.approx(a, rel=1e-12)

    def test_all_inside_gives_inverse_reference(self):
        bucket = BucketSpec(centre=(32.0, 32.0), radius=5.0,
                            reference_fraction=0.5)
        values = np.zeros((64, 64))
        values[32, 32] = 1.0
        assert power_in_bucket(values, bucket) == pytest.approx(100.0 / 0.5)

    def test_outside_intensity_decreases_pib(self):
        bucket = BucketSpec(centre=(32.0, 32.0), radius=5.0,
                            reference_fraction=0.5)
        values = np.zeros((64, 64))
        values[32, 32] = 1.0
        base = power_in_bucket(values, bucket)
        values[5, 5] = 0.5
        assert power_in_bucket(values, bucket) < base

    def test_all_zero_undefined(self):
        bucket = BucketSpec(centre=(32.0, 32.0), radius=5.0,
                            reference_fraction=0.5)
        with pytest.raises(MetricUndefinedError):
            power_in_bucket(np.zeros((64, 64)), bucket)

    def test_bucket_outside_raster_rejected(self):
        bucket = BucketSpec(centre=(2.0, 2.0), radius=5.0,
                            reference_fraction=0.5)
        with pytest.raises(ArgumentError):
            power_in_bucket(np.ones((64, 64)), bucket)

    def test_accepts_images(self, cfg19):
        bucket = bucket_from_flat(cfg19)
        img = IntensityImage(pixels=np.full((1000, 1000), 7, dtype=np.uint8))
        value = power_in_bucket(img, bucket)
        assert value > 0

    def test_fast_evaluator_matches_full_map(self, cfg19):
        evaluator = PibEvaluator(cfg19)
        bucket = bucket_from_flat(cfg19)
        for seed in (11, 12):
            phases = random_phase_vector(19, seed)
            full = power_in_bucket(intensity_of(focal_field(cfg19, phases)),
                                   bucket)
            assert evaluator(phases) == pytest.approx(full, rel=1e-9)


class TestDifferenceImage:
    def test_identical_images_black(self):
        img = IntensityImage(pixels=np.full((8, 8), 9, dtype=np.uint8))
        assert np.all(difference_image(img, img) == 0)

    def test_added_intensity_red(self):
        a = IntensityImage(pixels=np.full((4, 4), 150, dtype=np.uint8))
        b = IntensityImage(pixels=np.full((4, 4), 200, dtype=np.uint8))
        diff = difference_image(a, b)
        assert np.all(diff[..., 0] == 50)
        assert np.all(diff[..., 1] == 0)

    def test_removed_intensity_green(self):
        a = IntensityImage(pixels=np.full((4, 4), 255, dtype=np.uint8))
        b = IntensityImage(pixels=np.zeros((4, 4), dtype=np.uint8))
        diff = difference_image(a, b)
        assert np.all(diff[..., 1] == 255)
        assert np.all(diff[..., 0] == 0)

    def test_swap_exchanges_channels(self):
        rng = np.random.default_rng(0)
        a = IntensityImage(pixels=rng.integers(0, 256, (16, 16)).astype(np.uint8))
        b = IntensityImage(pixels=rng.integers(0, 256, (16, 16)).astype(np.uint8))
        ab = difference_image(a, b)
        ba = difference_image(b, a)
        assert np.array_equal(ab[..., 0], ba[..., 1])
        assert np.array_equal(ab[..., 1], ba[..., 0])

    def test_dimension_mismatch(self):
        a = IntensityImage(pixels=np.zeros((4, 4), dtype=np.uint8))
        b = IntensityImage(pixels=np.zeros((8, 8), dtype=np.uint8))
        with pytest.raises(ArgumentError):
            difference_image(a, b)


class TestPibStatistics:
    def test_constant_list(self):
        summary = pib_statistics([100.0, 100.0])
        assert summary.mean == 100.0
        assert summary.std == 0.0

    def test_ccdf_counts(self):
        summary = pib_statistics([50.0, 95.0, 99.0, 10.0])
        at90 = summary.ccdf[summary.thresholds == 90.0][0]
        assert at90 == pytest.approx(0.5)
        assert summary.ccdf[0] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ArgumentError):
            pib_statistics([])

    def test_single_value_std_zero(self):
        assert pib_statistics([42.0]).std == 0.0


class TestRandomBaseline:
    def test_reproducible_across_seed_batches(self, cfg19):
        evaluator = PibEvaluator(cfg19)
        means = []
        for batch in (1, 2):
            vals = [evaluator(random_phase_vector(19, (batch << 32) + i))
                    for i in range(400)]
            means.append(np.mean(vals))
        assert abs(means[0] - means[1]) / np.mean(means) < 0.1


def test_first_local_minimum():
    profile = np.array([10.0, 6.0, 3.0, 4.0, 2.0])
    assert first_local_minimum(profile) == 2
    with pytest.raises(ArgumentError):
        first_local_minimum(np.array([3.0, 2.0, 1.0]))

import numpy as np
import pytest

from cbcsim.array import (ArgumentError, FibreArrayConfig, GridSpec,
                          assemble_field, conjugate_twin, pin_reference,
                          random_phase_vector, wrap_phase, _fibre_rasters)
from cbcsim.baselines import (ObjectiveError, PibEvaluator, SpgdParams,
                              SpgdResult, brute_force_retrieve, gs_residual,
                              gs_retrieve, gs_retrieve_basis,
                              gs_retrieve_restarts, resolve_conjugate_branch,
                              spgd_optimize, write_trace_csv,
                              _project_disc_phases)
from cbcsim.propagation import focal_field, intensity_of

# largest branch-aware per-fibre deviation seen over the frozen off-grid
# seeds; the coupled L2 argmin can overshoot the ideal half grid step
BRUTE_OFFGRID_BOUND = 0.65


@pytest.fixture(scope="module")
def truth7(cfg7):
    phases = random_phase_vector(7, seed=11)
    return phases, intensity_of(focal_field(cfg7, phases))


class TestGsRetrieve:
    def test_fixed_point_from_truth(self, cfg7, truth7):
        truth, target = truth7
        for kwargs in ({"projection": "disc_mean"},
                       {"projection": "mode_weighted"}):
            out = gs_retrieve(target, cfg7, 1, init=truth, **kwargs)
            assert np.max(np.abs(wrap_phase(out - truth))) <= 1e-6
        out = gs_retrieve_basis(target, cfg7, 1, init=truth)
        assert np.max(np.abs(wrap_phase(out - truth))) <= 1e-6

    def test_flat_target_attractor(self, cfg7):
        flat_map = intensity_of(focal_field(cfg7, np.zeros(7)))
        for seed in (300, 301, 302, 303, 304):
            est = gs_retrieve(flat_map, cfg7, 200,
                              init=random_phase_vector(7, seed))
            assert np.max(np.abs(wrap_phase(est))) <= 0.05

    def test_projection_idempotent(self, cfg7):
        phases = random_phase_vector(7, seed=4)
        field = assemble_field(cfg7, phases)
        projected = _project_disc_phases(field.samples, _fibre_rasters(cfg7),
                                         "disc_mean")
        assert np.max(np.abs(wrap_phase(pin_reference(projected) - phases))) \
            <= 1e-12

    def test_error_trace_monotone_weighted(self, cfg7):
        for t in range(5):
            truth = random_phase_vector(7, seed=700 + t)
            target = intensity_of(focal_field(cfg7, truth))
            _, errs = gs_retrieve(target, cfg7, 50,
                                  init=random_phase_vector(7, seed=800 + t),
                                  with_trace=True, projection="mode_weighted")
            assert np.all(np.diff(errs) <= 1e-12 * errs[:-1] + 1e-30)

    def test_error_trace_near_monotone_disc_mean(self, cfg7):
        # the circular-mean projection is not the metric projection, so small
        # upticks are possible; bound them at 1% per step
        for t in range(5):
            truth = random_phase_vector(7, seed=700 + t)
            target = intensity_of(focal_field(cfg7, truth))
            _, errs = gs_retrieve(target, cfg7, 50,
                                  init=random_phase_vector(7, seed=800 + t),
                                  with_trace=True)
            assert np.all(np.diff(errs) <= 0.01 * errs[:-1])

    def test_success_rate_smoke(self, cfg7):
        evaluator = PibEvaluator(cfg7)
        hits = 0
        for t in range(10):
            truth = random_phase_vector(7, seed=5000 + t)
            target = intensity_of(focal_field(cfg7, truth))
            est = gs_retrieve(target, cfg7, 200,
                              init=random_phase_vector(7, seed=9000 + t))
            if evaluator(pin_reference(wrap_phase(truth - est))) >= 95.0:
                hits += 1
        assert hits >= 7

    def test_shape_mismatch_rejected(self, cfg7, cfg19):
        _, target = (random_phase_vector(7, 1),
                     intensity_of(focal_field(cfg7, np.zeros(7))))
        with pytest.raises(ArgumentError):
            gs_retrieve(target, cfg19, 1)

    def test_conjugate_branch_selection(self, cfg7, truth7):
        truth, target = truth7
        twin = conjugate_twin(cfg7, truth)
        picked = resolve_conjugate_branch(target, cfg7, twin)
        assert np.max(np.abs(wrap_phase(picked - truth))) <= 1e-9

    def test_restarts_return_low_residual(self, cfg7, truth7):
        truth, target = truth7
        est = gs_retrieve_restarts(target, cfg7, iterations=150, restarts=8,
                                   seed=1)
        assert gs_residual(target, cfg7, est) < 0.05


class TestSpgd:
    def test_zero_gain_is_noop(self, cfg7):
        params = SpgdParams(gain=0.0, max_iters=50, seed=9)
        result = spgd_optimize(cfg7, params=params)
        assert np.array_equal(result.phases, random_phase_vector(7, 9))

    def test_seeded_reproducibility(self, cfg7):
        params = SpgdParams(max_iters=100, seed=17)
        a = spgd_optimize(cfg7, params=params)
        b = spgd_optimize(cfg7, params=params)
        assert np.array_equal(a.phases, b.phases)
        assert np.array_equal(a.trace, b.trace)

    def test_trace_contract(self, cfg7):
        params = SpgdParams(max_iters=80, seed=3)
        result = spgd_optimize(cfg7, params=params)
        assert isinstance(result, SpgdResult)
        assert len(result.trace) <= params.max_iters
        evaluator = PibEvaluator(cfg7)
        assert result.objective == pytest.approx(
            max(float(np.max(result.trace)),
                evaluator(random_phase_vector(7, 3))), rel=1e-12)
        assert evaluator(result.phases) == pytest.approx(result.objective,
                                                         rel=1e-12)

    def test_early_stop_at_target(self, cfg7):
        params = SpgdParams(max_iters=2000, target_pib=95.0, seed=5)
        result = spgd_optimize(cfg7, params=params)
        if result.objective >= 95.0:
            assert len(result.trace) <= 2000

    def test_improvement_in_early_iterations(self, cfg7):
        deltas = []
        for s in range(20):
            result = spgd_optimize(cfg7, params=SpgdParams(max_iters=100,
                                                           seed=500 + s))
            deltas.append(float(np.mean(np.diff(result.trace))))
        assert np.mean(deltas) > 0

    def test_custom_objective_and_abort(self, cfg7):
        calls = []

        def bad_objective(imap):
            calls.append(1)
            return float("nan")

        with pytest.raises(ObjectiveError) as info:
            spgd_optimize(cfg7, objective=bad_objective,
                          params=SpgdParams(max_iters=5, seed=1))
        assert isinstance(info.value.trace, np.ndarray)
        assert calls

    def test_trace_csv_round_trip(self, cfg7, tmp_path):
        result = spgd_optimize(cfg7, params=SpgdParams(max_iters=20, seed=2))
        path = tmp_path / "trace.csv"
        write_trace_csv(result.trace, path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "iteration,objective"
        assert len(rows) == len(result.trace) + 1
        assert float(rows[1].split(",")[1]) == result.trace[0]

    def test_invalid_params(self):
        with pytest.raises(ArgumentError):
            SpgdParams(perturbation=0.0)
        with pytest.raises(ArgumentError):
            SpgdParams(max_iters=0)


class TestBruteForce:
    def test_three_fibre_exact(self):
        tri = tuple(map(tuple, 1e-3 * np.array(
            [(0.0, 0.0), (1.0, 0.0), (0.5, np.sqrt(3) / 2)])))
        cfg = FibreArrayConfig(rings=0, grid=GridSpec(n=256, pitch=20e-6),
                               custom_positions=tri)
        levels = 8
        grid = 2 * np.pi * np.arange(levels) / levels - np.pi
        truth = pin_reference(wrap_phase(np.array([0.0, grid[3], grid[6]])))
        target = intensity_of(focal_field(cfg, truth))
        est = brute_force_retrieve(target, cfg, levels)
        assert np.max(np.abs(wrap_phase(est - truth))) == 0.0

    def test_off_grid_nearest(self, cfg7):
        truth = random_phase_vector(7, seed=4000)
        target = intensity_of(focal_field(cfg7, truth))
        est = brute_force_retrieve(target, cfg7, 8)
        twin = conjugate_twin(cfg7, truth)
        err = min(np.max(np.abs(wrap_phase(est - truth))),
                  np.max(np.abs(wrap_phase(est - twin))))
        assert err <= BRUTE_OFFGRID_BOUND

    def test_search_space_guard(self, cfg19):
        with pytest.raises(ArgumentError):
            brute_force_retrieve(
                intensity_of(focal_field(cfg19, np.zeros(19))), cfg19, 8)

    def test_levels_guard(self, cfg7):
        with pytest.raises(ArgumentError):
            brute_force_retrieve(
                intensity_of(focal_field(cfg7, np.zeros(7))), cfg7, 1)

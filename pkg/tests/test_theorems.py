"""
Monte Carlo verifiers on small batches.

Identities that hold path by path are asserted exactly; purely statistical
ones are allowed a single 3-sigma miss, matching the escalation rule.
"""

import numpy as np
import pytest

from degenerate_diffusion.condexp import FeatureBasis
from degenerate_diffusion.core_paths import AdaptedDrift, CameronMartinFn, RngSpec, make_grid
from degenerate_diffusion.errors import InvalidArgumentError
from degenerate_diffusion.simulate import sample_brownian
from degenerate_diffusion.theorems import (
    chaos_expand,
    entropy_direct,
    entropy_formula,
    entropy_inequality_check,
    innovation_path,
    monge_ampere_solve,
    represent_functional,
    simulate_batch,
    verify_chaos,
    verify_commutation,
    verify_innovation_martingale,
    verify_innovation_represent,
    verify_martingale_problem,
    verify_monge_ampere,
    verify_projection_minimality,
    verify_projector_algebra,
    verify_representation,
    verify_simulation,
    verify_wick_conditional,
    verify_zeta,
    zeta_path,
)
from degenerate_diffusion.theorems.algebra import random_sigma
from degenerate_diffusion.theorems.innovation import innovation_from_driver


def statistic(report, label):
    return next(s for s in report.statistics if s.label == label)


def at_most_one_miss(report):
    return len(report.failed_statistics) <= 1


@pytest.fixture
def exact(options):
    return options.with_changes(ridge=0.0)


class TestProjectorAlgebra:
    """Identities of the rank-revealing projector"""

    def test_random_matrices(self):
        report = verify_projector_algebra(n_matrices=200, seed=3)
        assert report.passed
        assert statistic(report, "rank mismatches").estimate.mean == 0

    def test_random_sigma_has_requested_rank(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            sigma, rank = random_sigma(rng, 3, 5)
            assert np.linalg.matrix_rank(sigma) == rank

    def test_along_rotating_frame(self, m3, small_grid, options):
        report = verify_projector_algebra(50, model=m3, grid=small_grid, n_paths=100, options=options)
        assert report.passed
        assert report.diagnostics["rank_histogram"] == [0, 100 * 8, 0]
        assert report.diagnostics["paths_with_rank_changes"] == 0


class TestSimulation:
    """Driver moments, Lipschitz contract and the Girsanov shift"""

    def test_driver_moments(self, m2, grid, options):
        report = verify_simulation(m2, grid, 4000, options)
        assert statistic(report, "declared Lipschitz constant holds").passed
        assert at_most_one_miss(report)

    def test_girsanov_shift(self, m1, grid, options):
        u = AdaptedDrift.constant([0.5])
        report = verify_simulation(m1, grid, 20000, options, u=u, dump_paths=3)
        assert at_most_one_miss(report)
        frame = report.artifacts["paths.csv"]
        assert sorted(frame["path"].unique()) == [0, 1, 2]


class TestWick:
    """Projected Wick exponentials"""

    def test_full_rank_identity_is_pathwise(self, m1, grid, options):
        h = CameronMartinFn.constant(grid, [1.0])
        report = verify_wick_conditional(m1, h, grid, 2000, options)
        assert report.passed
        assert statistic(report, "full-rank pathwise identity").passed

    def test_observed_direction_is_exact(self, m2, grid, options):
        h = CameronMartinFn.from_expression("1, 0", grid, 2)
        report = verify_wick_conditional(m2, h, grid, 2000, options)
        assert report.passed
        assert all(s.estimate.mean == pytest.approx(0.0, abs=1e-12) for s in report.statistics)

    def test_hidden_direction_in_weak_form(self, m2, grid, options):
        h = CameronMartinFn.from_expression("1, 1", grid, 2)
        report = verify_wick_conditional(m2, h, grid, 20000, options)
        assert statistic(report, "log projected wick consistency").passed
        assert at_most_one_miss(report)
        assert report.diagnostics["mean_projected_wick"]["mean"] == pytest.approx(1.0, abs=0.05)

    def test_rotating_frame(self, m3, grid, options):
        h = CameronMartinFn.from_expression("1, 0", grid, 2)
        report = verify_wick_conditional(m3, h, grid, 20000, options)
        assert statistic(report, "log projected wick consistency").passed
        assert "full-rank pathwise identity" not in [s.label for s in report.statistics]
        assert at_most_one_miss(report)
        assert report.diagnostics["mean_projected_wick"]["mean"] == pytest.approx(1.0, abs=0.05)


class TestCommutation:
    """Conditional expectation commutes with the projected integral"""

    def test_driver_drift_with_exact_basis(self, m2, grid, exact):
        u = AdaptedDrift.from_expression("sin(w1), 0", grid, 1, 2)
        basis = FeatureBasis("fourier", 1, [0])
        report = verify_commutation(m2, u, grid, 2000, exact, basis)
        assert report.passed

    def test_kernel_drift(self, m2, grid, options):
        u = AdaptedDrift.from_expression("0, sin(w2)", grid, 1, 2)
        report = verify_commutation(m2, u, grid, 10000, options, FeatureBasis("polynomial", 1, [0]))
        assert report.diagnostics["rhs_energy"]["mean"] == pytest.approx(0.0, abs=1e-20)
        assert at_most_one_miss(report)


class TestRepresentation:
    """Recovery of projected integrands"""

    def test_known_integrand_on_brownian_motion(self, m1, options):
        grid = make_grid(16)
        h = CameronMartinFn.constant(grid, [1.0])
        report = verify_representation(m1, h, grid, 20000, options, FeatureBasis("polynomial", 1, [0]))
        assert statistic(report, "known integrand relative L2 error").passed
        assert statistic(report, "constant functional captured energy").estimate.mean == 0.0
        residuals = [s for s in report.statistics if s.label.startswith("residual <= target std")]
        assert len(residuals) == 4
        assert all(s.passed for s in residuals)

    def test_projected_integrand_lives_in_range(self, m2, options):
        grid = make_grid(16)
        result = represent_functional(lambda batch: batch.X.values[:, -1, 0], m2, grid, 4000,
                                      FeatureBasis("polynomial", 1, [0]), options)
        np.testing.assert_array_equal(result.integrand[:, :, 1], 0.0)
        assert result.mean.mean == pytest.approx(0.0, abs=0.1)
        assert result.residual_l2 <= result.target_std

    def test_projection_minimality(self, m2, options):
        grid = make_grid(16)
        report = verify_projection_minimality(m2, grid, 4000, options, FeatureBasis("polynomial", 1, [0]))
        assert statistic(report, "P xi invariant under kernel shifts").passed
        assert statistic(report, "sigma (I - P) eta = 0").passed
        assert statistic(report, "projected kernel integrand captured energy").estimate.mean == 0.0

    def test_non_finite_functional(self, m1, small_grid, options):
        with pytest.raises(InvalidArgumentError):
            represent_functional(lambda batch: np.full(batch.n_paths, np.inf), m1, small_grid, 400,
                                 FeatureBasis("polynomial", 1, [0]), options)

    def test_martingale_problem(self, small_grid, options):
        from degenerate_diffusion.models import builtin_model

        report = verify_martingale_problem(builtin_model("M4"), small_grid, 20000, options)
        assert len(report.statistics) == 12
        assert at_most_one_miss(report)

    def test_continuous_generator_is_diagnostic_only(self, small_grid, options):
        from degenerate_diffusion.models import builtin_model

        report = verify_martingale_problem(builtin_model("M4"), small_grid, 2000, options)
        gaps = [key for key in report.diagnostics if key.endswith("continuous generator gap")]
        assert len(gaps) == 12
        assert not any("continuous" in s.label for s in report.statistics)


class TestChaos:
    """Iterated-integral expansions"""

    def test_linear_and_square_targets(self, m2, exact):
        grid = make_grid(256)
        h = CameronMartinFn.from_expression("1, 0.5", grid, 2)
        report = verify_chaos(m2, h, grid, 4000, exact)
        assert report.passed
        kernels = report.artifacts["kernels.json"]
        assert [k["order"] for k in kernels] == [1, 2]

    def test_first_order_kernel_is_block_average(self, m1, exact):
        grid = make_grid(16)
        result = chaos_expand(lambda batch: batch.B.terminal()[:, 0], m1, grid, 1000, 1, 4, exact)
        np.testing.assert_allclose(result.kernels[0].coeffs[:, 0], 1.0, atol=1e-10)
        assert result.residual == pytest.approx(0.0, abs=1e-10)

    def test_too_few_paths(self, m2, exact):
        grid = make_grid(16)
        with pytest.raises(InvalidArgumentError):
            chaos_expand(lambda batch: batch.B.terminal()[:, 0], m2, grid, 100, 2, 8, exact)

    def test_order_limit(self, m1, exact):
        with pytest.raises(InvalidArgumentError):
            chaos_expand(lambda batch: np.ones(batch.n_paths), m1, make_grid(8), 1000, 4, 2, exact)


class TestInnovation:
    """Innovation increments and the conditional Girsanov density"""

    def test_state_drift_innovation_is_the_driver(self, m2, grid, exact):
        B = sample_brownian(grid, RngSpec(3), 2, 2000)
        u = AdaptedDrift.from_expression("0.5*x1, 0", grid, 1, 2)
        dZ = innovation_path(m2, u, grid, B, FeatureBasis("polynomial", 1, [0]), exact)
        np.testing.assert_allclose(dZ, B.increments, atol=1e-10)

    def test_zero_drift_density_is_one(self, m2, grid, options):
        B = sample_brownian(grid, RngSpec(3), 2, 500)
        zeta = zeta_path(m2, AdaptedDrift.zero(2), grid, B, None, options)
        assert zeta.shape == (500, 33)
        np.testing.assert_allclose(zeta, 1.0)

    def test_constant_drift_density_closed_form(self, m2, grid, exact):
        B = sample_brownian(grid, RngSpec(3), 2, 2000)
        zeta = zeta_path(m2, AdaptedDrift.constant([0.5, 0.3]), grid, B, None, exact)
        expected = np.exp(-0.5 * B.terminal()[:, 0] - 0.125)
        np.testing.assert_allclose(zeta[:, -1], expected, rtol=1e-9)

    def test_martingale_property(self, m2, grid, options):
        u = AdaptedDrift.from_expression("0.5*x1, 0", grid, 1, 2)
        report = verify_innovation_martingale(m2, u, grid, 10000, options, FeatureBasis("polynomial", 1, [0]))
        assert report.name == "innovation"
        assert len(report.statistics) == 12
        assert at_most_one_miss(report)

    def test_zeta_consistency(self, m2, grid, exact):
        report = verify_zeta(m2, AdaptedDrift.constant([0.5, 0.0]), grid, 20000, exact)
        assert at_most_one_miss(report)
        assert report.diagnostics["zeta_1"]["mean"] == pytest.approx(1.0, abs=0.05)

    def test_rotating_frame_filter_is_exact_with_two_harmonics(self, m3, grid, exact):
        B = sample_brownian(grid, RngSpec(5), 2, 2000)
        data = innovation_from_driver(m3, AdaptedDrift.constant([0.5, 0.0]), grid, B,
                                      FeatureBasis("fourier", 2, [0]), exact)
        projected = data.batch.P.apply(data.batch.udot)
        np.testing.assert_allclose(data.qhat, projected, atol=1e-8)
        np.testing.assert_allclose(data.batch.P.apply(data.dZ), data.batch.P.apply(B.increments), atol=1e-8)

    def test_martingale_on_rotating_frame(self, m3, grid, options):
        report = verify_innovation_martingale(m3, AdaptedDrift.constant([0.5, 0.0]), grid, 10000, options)
        assert len(report.statistics) == 12
        assert at_most_one_miss(report)

    def test_zeta_on_rotating_frame(self, m3, grid, options):
        report = verify_zeta(m3, AdaptedDrift.constant([0.5, 0.0]), grid, 20000, options)
        assert at_most_one_miss(report)
        assert report.diagnostics["zeta_1"]["mean"] == pytest.approx(1.0, abs=0.05)

    def test_representation_against_innovation(self, m2, exact):
        grid = make_grid(16)
        h = CameronMartinFn.from_expression("1, 1", grid, 2)
        report = verify_innovation_represent(m2, AdaptedDrift.constant([0.5, 0.0]), h, grid, 20000, exact,
                                             FeatureBasis("polynomial", 1, [0]))
        assert report.name == "verify-innovation"
        assert report.passed


class TestEntropy:
    """Entropy formula, direct estimate and the Monge-Ampere loop"""

    def test_constant_drift_formula(self, m2, grid, exact):
        value = entropy_formula(m2, AdaptedDrift.constant([0.5, 0.3]), grid, 2000, None, exact)
        assert value.mean == pytest.approx(0.125, abs=1e-12)

    def test_direct_estimate_needs_state_drift(self, m2, grid, options):
        u = AdaptedDrift.from_expression("sin(w1), 0", grid, 1, 2)
        with pytest.raises(InvalidArgumentError):
            entropy_direct(m2, u, grid, 100, options)

    def test_direct_estimate_of_constant_drift(self, m2, grid, options):
        value = entropy_direct(m2, AdaptedDrift.constant([0.5, 0.0]), grid, 20000, options)
        assert value.mean == pytest.approx(0.125, abs=4 * value.std_error)

    def test_constant_drift_check(self, m2, grid, exact):
        report = entropy_inequality_check(m2, AdaptedDrift.constant([0.5, 0.3]), grid, 4000, exact,
                                          expected=0.125)
        assert statistic(report, "entropy formula - expected").passed
        assert statistic(report, "entropy formula").passed
        assert "kernel drift leaves X unchanged" not in [s.label for s in report.statistics]

    def test_kernel_drift_has_zero_entropy(self, m2, grid, exact):
        report = entropy_inequality_check(m2, AdaptedDrift.constant([0.0, 0.5]), grid, 2000, exact,
                                          expected=0.0)
        assert report.passed
        assert statistic(report, "kernel drift leaves X unchanged").estimate.mean == 0.0

    def test_driver_drift_bound_at_every_clip_level(self, m2, grid, options):
        u = AdaptedDrift.from_expression("w1 + w2, 0", grid, 1, 2)
        report = entropy_inequality_check(m2, u, grid, 4000, options, FeatureBasis("polynomial", 2, [0]),
                                          clip_levels=[0.25, 1.0])
        bounds = [s for s in report.statistics if s.label.startswith("formula - projected drift energy")]
        assert len(bounds) == 3
        assert all(s.passed for s in bounds)

    def test_monge_ampere_solution(self, m2, grid, exact):
        B = sample_brownian(grid, RngSpec(4), 2, 50)
        state, u = monge_ampere_solve(AdaptedDrift.constant([0.5, 0.0]), m2, grid, B, exact)
        np.testing.assert_allclose(state.values[:, -1, 0], B.terminal()[:, 0] - 0.5, atol=1e-12)
        assert u.state_only

    def test_monge_ampere_loop_on_rotating_frame(self, m3, exact):
        grid = make_grid(16)
        v = AdaptedDrift.from_expression("0.5*cos(x1), 0.5*sin(x1)", grid, 1, 2)
        report = verify_monge_ampere(m3, v, grid, 4000, exact)
        assert statistic(report, "Monge-Ampere residual energy").passed
        assert statistic(report, "l o X^U zeta_1 - 1").passed
        assert statistic(report, "entropy formula - v energy").passed

    def test_mismatched_pair_fails(self, m3, exact):
        grid = make_grid(16)
        v = AdaptedDrift.from_expression("0.5*cos(x1), 0.5*sin(x1)", grid, 1, 2)
        report = verify_monge_ampere(m3, v, grid, 4000, exact, negative_control=True)
        assert not statistic(report, "Monge-Ampere residual energy").passed
        assert report.diagnostics["negative_control"] is True


class TestBatches:
    """Shared batch plumbing"""

    def test_same_seed_same_batch(self, m3, small_grid, options):
        a = simulate_batch(m3, small_grid, 20, options)
        b = simulate_batch(m3, small_grid, 20, options)
        np.testing.assert_array_equal(a.X.values, b.X.values)
        np.testing.assert_array_equal(a.P.mats, b.P.mats)

    def test_subset(self, m2, small_grid, options):
        batch = simulate_batch(m2, small_grid, 20, options, AdaptedDrift.constant([0.1, 0.2]))
        part = batch.subset(np.arange(20) < 5)
        assert part.n_paths == 5
        assert part.udot.shape == (5, 8, 2)

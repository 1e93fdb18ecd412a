"""
Tests for Ito sums, Wick exponentials and ordered iterated integrals.
"""

import numpy as np
import pytest

from degenerate_diffusion.core_paths import BrownianPath, CameronMartinFn, RngSpec, estimate, make_grid
from degenerate_diffusion.errors import InvalidArgumentError, SimulationError
from degenerate_diffusion.ito import (
    SimplexKernel,
    block_edges,
    block_iterated_integrals,
    ito_integral,
    iterated_integral,
    projected_increments,
    projected_wick,
    simplex_block_tuples,
    stochastic_exponential,
    wick_exponential,
)
from degenerate_diffusion.models import builtin_model
from degenerate_diffusion.projection import ProjectorSequence, projector_path
from degenerate_diffusion.simulate import euler_solve, sample_brownian


@pytest.fixture
def increments():
    rng = np.random.default_rng(11)
    return rng.normal(0.0, 0.25, (7, 16, 2))


class TestItoSums:
    """Discrete stochastic integrals and exponentials."""

    def test_ito_integral_with_shared_integrand(self, increments):
        B = BrownianPath(increments)
        xi = np.ones((16, 2))
        np.testing.assert_allclose(ito_integral(xi, B), increments.sum(axis=(1, 2)))

    def test_integrand_shape_checked(self, increments):
        with pytest.raises(InvalidArgumentError):
            ito_integral(np.ones((3, 2)), BrownianPath(increments))

    def test_exponential_overflow(self):
        with pytest.raises(SimulationError):
            stochastic_exponential(np.full((1, 1, 1), 1e3), np.ones((1, 1, 1)), 1e-6)

    def test_identity_projector_reduces_to_wick(self, increments):
        grid = make_grid(16)
        B = BrownianPath(increments)
        h = CameronMartinFn.from_expression("cos(t), 1", grid, 2)
        P = ProjectorSequence.identity(7, 16, 2)
        np.testing.assert_allclose(projected_wick(h, P, B), wick_exponential(h, B), rtol=1e-12)
        np.testing.assert_allclose(projected_increments(P, B), increments)

    def test_rank_one_closed_form(self, increments):
        grid = make_grid(16)
        B = BrownianPath(increments)
        mats = np.zeros((7, 16, 2, 2))
        mats[:, :, 0, 0] = 1.0
        P = ProjectorSequence(mats, np.ones((7, 16), dtype=int))
        h = CameronMartinFn.constant(grid, [0.8, 1.0])
        expected = np.exp(0.8 * B.terminal()[:, 0] - 0.5 * 0.64)
        np.testing.assert_allclose(projected_wick(h, P, B), expected, rtol=1e-12)


class TestSimplexKernel:
    """Kernels on the ordered simplex."""

    def test_block_edges(self):
        np.testing.assert_array_equal(block_edges(8, 4), [0, 2, 4, 6, 8])
        np.testing.assert_array_equal(block_edges(3), [0, 1, 2, 3])
        with pytest.raises(InvalidArgumentError):
            block_edges(4, 5)

    def test_simplex_tuples_are_non_increasing(self):
        tuples = simplex_block_tuples(3, 2)
        assert len(tuples) == 6
        assert all(a >= b for a, b in tuples)

    def test_off_simplex_coefficients_rejected(self):
        coeffs = np.zeros((2, 2, 1, 1))
        coeffs[0, 1] = 1.0
        with pytest.raises(InvalidArgumentError):
            SimplexKernel(2, 1, block_edges(4, 2), coeffs)

    def test_json_round_trip_preserves_kernel(self):
        kernel = SimplexKernel.constant(np.arange(4.0).reshape(2, 2), 8, 4)
        restored = SimplexKernel.from_json(kernel.to_json())
        np.testing.assert_array_equal(restored.coeffs, kernel.coeffs)
        np.testing.assert_array_equal(restored.block_edges, kernel.block_edges)

    def test_malformed_document(self):
        with pytest.raises(InvalidArgumentError):
            SimplexKernel.from_json({"order": 1, "dim": 1, "n_steps": 4, "coeffs": [1.0]})


class TestIteratedIntegrals:
    """Ordered sums over k_1 > ... > k_q."""

    def test_order_one(self, increments):
        kernel = SimplexKernel.constant(np.array([1.0, -2.0]), 16)
        expected = increments[:, :, 0].sum(axis=1) - 2.0 * increments[:, :, 1].sum(axis=1)
        np.testing.assert_allclose(iterated_integral(kernel, increments), expected, atol=1e-12)

    def test_order_two_scalar(self, increments):
        dm = increments[:, :, :1]
        kernel = SimplexKernel.constant(np.ones((1, 1)), 16, 4)
        total = dm[:, :, 0].sum(axis=1)
        expected = 0.5 * (total ** 2 - np.sum(dm[:, :, 0] ** 2, axis=1))
        np.testing.assert_allclose(iterated_integral(kernel, dm), expected, atol=1e-12)

    def test_order_three_scalar(self, increments):
        dm = increments[:, :, :1]
        x = dm[:, :, 0]
        expected = np.zeros(x.shape[0])
        for k1 in range(16):
            for k2 in range(k1):
                expected += x[:, k1] * x[:, k2] * x[:, :k2].sum(axis=1)
        kernel = SimplexKernel.constant(np.ones((1, 1, 1)), 16)
        np.testing.assert_allclose(iterated_integral(kernel, dm), expected, atol=1e-12)

    def test_order_above_maximum(self, increments):
        kernel = SimplexKernel.constant(np.ones((1, 1, 1)), 16)
        with pytest.raises(InvalidArgumentError):
            iterated_integral(kernel, increments[:, :, :1], max_order=2)

    def test_design_matches_kernel_sums(self, increments):
        edges = block_edges(16, 4)
        rng = np.random.default_rng(2)
        kernel = SimplexKernel.constant(rng.normal(size=(2, 2)), 16, 4)
        design, labels = block_iterated_integrals(increments, edges, 2)
        weights = np.array([kernel.coeffs[blocks + dims] for blocks, dims in labels])
        np.testing.assert_allclose(design @ weights, iterated_integral(kernel, increments), atol=1e-12)

    def test_order_one_design_is_blockwise_sum(self, increments):
        edges = block_edges(16, 4)
        design, labels = block_iterated_integrals(increments, edges, 1)
        assert design.shape == (7, 8)
        column = labels.index(((2,), (1,)))
        np.testing.assert_allclose(design[:, column], increments[:, 8:12, 1].sum(axis=1))

    def test_chunking_does_not_change_results(self, monkeypatch):
        grid = make_grid(8)
        dm = sample_brownian(grid, RngSpec(9), 2, 30).increments
        kernel = SimplexKernel.constant(np.ones((2, 2)), 8, 2)
        full = iterated_integral(kernel, dm)
        monkeypatch.setattr("degenerate_diffusion.ito.CHUNK_ELEMENTS", 16)
        np.testing.assert_allclose(iterated_integral(kernel, dm), full, atol=1e-12)


class TestIsometries:
    """Second moments of discrete integrals."""

    def test_ito_isometry(self):
        grid = make_grid(16)
        B = sample_brownian(grid, RngSpec(21), 1, 20000)
        xi = np.sin(B.values()[:, :-1, :])
        value = estimate(ito_integral(xi, B) ** 2 - np.sum(xi ** 2, axis=(1, 2)) * grid.dt)
        assert abs(value.mean) <= 4 * value.std_error

    @pytest.mark.parametrize("name", ["M2", "M3"])
    def test_projected_isometry(self, name):
        grid = make_grid(16)
        model = builtin_model(name)
        B = sample_brownian(grid, RngSpec(22), 2, 20000)
        P = projector_path(model, euler_solve(model, B, None, grid), grid)
        hdot = CameronMartinFn.constant(grid, [1.0, 0.5]).hdot
        integral = np.einsum("kd,mkd->m", hdot, projected_increments(P, B))
        energy = np.sum(P.apply(np.broadcast_to(hdot, B.increments.shape)) ** 2, axis=(1, 2)) * grid.dt
        value = estimate(integral ** 2 - energy)
        assert abs(value.mean) <= 4 * value.std_error

    def test_first_and_second_orders_uncorrelated(self):
        grid = make_grid(16)
        model = builtin_model("M2")
        B = sample_brownian(grid, RngSpec(23), 2, 20000)
        dm = projected_increments(projector_path(model, euler_solve(model, B, None, grid), grid), B)
        first = iterated_integral(SimplexKernel.constant(np.array([1.0, 0.0]), 16), dm)
        second = iterated_integral(SimplexKernel.constant(np.array([[1.0, 0.0], [0.0, 0.0]]), 16, 4), dm)
        value = estimate(first * second)
        assert abs(value.mean) <= 4 * value.std_error

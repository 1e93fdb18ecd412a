"""
Tests for the model zoo, custom expression models and the generator.
"""

import numpy as np
import pytest

from degenerate_diffusion.core_paths import make_grid
from degenerate_diffusion.errors import InvalidArgumentError, ModelError
from degenerate_diffusion.expressions import CompiledExpression, split_components
from degenerate_diffusion.models import (
    BUILTIN_MODELS,
    apply_generator,
    builtin_model,
    check_lipschitz,
    check_model_adaptedness,
    coordinate_function,
    custom_model,
    euler_generator,
    eval_a,
    resolve_model,
    square_function,
    sine_function,
    standard_test_functions,
)


class TestExpressions:
    """The coefficient grammar."""

    def test_split_components(self):
        assert split_components("(sin(x1), 0)") == ["sin(x1)", "0"]
        assert split_components(["1", 2]) == ["1", "2"]

    def test_vectorised_evaluation(self):
        expr = CompiledExpression("2*x1 + t", ["t", "x1"])
        out = expr((3,), t=1.0, x1=np.array([0.0, 1.0, 2.0]))
        np.testing.assert_allclose(out, [1.0, 3.0, 5.0])

    @pytest.mark.parametrize("source", ["x2", "log(x1)", "__import__('os')", ""])
    def test_rejects_unknown_symbols(self, source):
        with pytest.raises(InvalidArgumentError):
            CompiledExpression(source, ["t", "x1"])


class TestZoo:
    """Built-in models and their aliases."""

    @pytest.mark.parametrize("name", BUILTIN_MODELS)
    def test_shapes(self, name):
        model = builtin_model(name)
        hist = np.zeros((4, 3, model.n))
        assert model.eval_sigma(2, hist).shape == (4, model.n, model.d)
        assert model.eval_b(2, hist).shape == (4, model.n)

    def test_aliases(self):
        assert builtin_model("M2").name == "M2_rank_one"
        assert resolve_model("M5").name == "M5_path_dependent"

    def test_unknown_model(self):
        with pytest.raises(InvalidArgumentError):
            builtin_model("M9")

    def test_rotating_frame(self):
        model = builtin_model("M3")
        hist = np.full((1, 1, 1), np.pi / 2)
        np.testing.assert_allclose(model.eval_sigma(0, hist), [[[0.0, 1.0]]], atol=1e-15)

    def test_running_max_reads_history(self):
        model = builtin_model("M5_running_max")
        hist = np.array([[[0.0], [np.pi / 2], [0.0]]])
        assert model.eval_sigma(2, hist)[0, 0, 0] == pytest.approx(1.5)

    @pytest.mark.parametrize("name", BUILTIN_MODELS)
    def test_declared_lipschitz_constant_holds(self, name):
        model = builtin_model(name)
        ratio = check_lipschitz(model, make_grid(16), n_pairs=50, seed=3)
        assert ratio <= model.lipschitz_K + 1e-9

    @pytest.mark.parametrize("name", BUILTIN_MODELS)
    def test_adaptedness(self, name):
        assert check_model_adaptedness(builtin_model(name), make_grid(16), 5)


class TestCustomModel:
    """Models built from expression strings."""

    SPEC = {"name": "custom_rotation", "n": 1, "d": 2, "x0": [0.1],
            "sigma": [["cos(x1)", "sin(x1)"]], "b": ["0"], "lipschitz_K": 1.0}

    def test_matches_zoo_model(self):
        grid = make_grid(8)
        custom = custom_model(self.SPEC, grid)
        zoo = builtin_model("M3")
        hist = np.linspace(-1, 1, 10).reshape(5, 2, 1)
        np.testing.assert_allclose(custom.eval_sigma(1, hist), zoo.eval_sigma(1, hist))
        np.testing.assert_array_equal(custom.x0, [0.1])

    def test_missing_field(self):
        with pytest.raises(InvalidArgumentError):
            custom_model({"n": 1, "d": 1, "b": ["0"]}, make_grid(8))

    def test_wrong_row_count(self):
        spec = dict(self.SPEC, sigma=[["1", "0"], ["0", "1"]])
        with pytest.raises(InvalidArgumentError):
            custom_model(spec, make_grid(8))

    def test_violated_lipschitz_constant(self):
        spec = {"n": 1, "d": 1, "sigma": [["sin(3*x1)"]], "b": ["0"], "lipschitz_K": 0.1}
        grid = make_grid(16)
        with pytest.raises(ModelError):
            check_lipschitz(custom_model(spec, grid), grid, seed=1)


    def test_mapping_needs_grid(self):
        with pytest.raises(InvalidArgumentError):
            resolve_model(self.SPEC)
        assert resolve_model(self.SPEC, make_grid(8)).grid.n_steps == 8

    def test_checks_reject_other_grids(self):
        model = custom_model(self.SPEC, make_grid(8))
        with pytest.raises(InvalidArgumentError):
            check_lipschitz(model, make_grid(16))
        with pytest.raises(InvalidArgumentError):
            check_model_adaptedness(model, make_grid(4), 1)


class TestDiffusionMatrix:
    """a = sigma sigma^T."""

    def test_rank_one_row(self):
        hist = np.zeros((3, 1, 1))
        np.testing.assert_allclose(eval_a(builtin_model("M2"), 0, hist), np.ones((3, 1, 1)))

    def test_identity(self):
        model = custom_model({"n": 2, "d": 2, "x0": [0.0, 0.0], "sigma": [["1", "0"], ["0", "1"]],
                              "b": ["0", "0"]}, make_grid(4))
        np.testing.assert_allclose(eval_a(model, 0, np.zeros((2, 1, 2))), np.broadcast_to(np.eye(2), (2, 2, 2)))

    def test_rotating_frame_has_unit_variance(self):
        hist = np.linspace(-4.0, 4.0, 20).reshape(10, 2, 1)
        np.testing.assert_allclose(eval_a(builtin_model("M3"), 1, hist), 1.0)

    @pytest.mark.parametrize("name", BUILTIN_MODELS)
    def test_symmetric_positive_semidefinite(self, name):
        model = builtin_model(name)
        hist = np.random.default_rng(4).normal(size=(25, 4, model.n))
        a = eval_a(model, 3, hist)
        np.testing.assert_allclose(a, np.swapaxes(a, 1, 2))
        assert np.all(np.linalg.eigvalsh(a) >= -1e-12)

    def test_short_history_rejected(self):
        with pytest.raises(ModelError):
            eval_a(builtin_model("M1"), 3, np.zeros((2, 2, 1)))


class TestTestFunctions:
    """Derivatives of the generator test functions."""

    @pytest.mark.parametrize("index", range(6))
    def test_gradient_matches_central_differences(self, index):
        f = standard_test_functions(2)[index]
        x = np.random.default_rng(5).normal(size=(8, 2))
        eps = 1e-6
        numeric = np.stack([(f.f(x + eps * e) - f.f(x - eps * e)) / (2 * eps) for e in np.eye(2)], axis=1)
        np.testing.assert_allclose(f.grad(x), numeric, rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("index", range(6))
    def test_hessian_is_symmetric_derivative_of_gradient(self, index):
        f = standard_test_functions(2)[index]
        x = np.random.default_rng(6).normal(size=(8, 2))
        eps = 1e-6
        numeric = np.stack([(f.grad(x + eps * e) - f.grad(x - eps * e)) / (2 * eps) for e in np.eye(2)], axis=2)
        hess = f.hess(x)
        np.testing.assert_allclose(hess, np.swapaxes(hess, 1, 2))
        np.testing.assert_allclose(hess, numeric, rtol=1e-5, atol=1e-7)


class TestGenerator:
    """Continuous and one-step Euler generators."""

    def test_linear_function_without_drift(self):
        hist = np.random.default_rng(7).normal(size=(5, 1, 1))
        np.testing.assert_allclose(apply_generator(builtin_model("M3"), coordinate_function(0, 1), 0, hist), 0.0)

    def test_sine_with_unit_drift(self):
        model = custom_model({"n": 1, "d": 1, "sigma": [["1"]], "b": ["1"]}, make_grid(4))
        assert apply_generator(model, sine_function(0, 1), 0, np.zeros((1, 1, 1)))[0] == pytest.approx(1.0)

    def test_square_on_brownian_motion(self):
        model = builtin_model("M1")
        hist = np.random.default_rng(0).normal(size=(6, 1, 1))
        f = square_function(0, 1)
        np.testing.assert_allclose(apply_generator(model, f, 0, hist), 1.0)
        np.testing.assert_allclose(euler_generator(model, f, 0, hist, 0.01), 1.0)

    def test_euler_generator_converges(self):
        model = builtin_model("M5")
        hist = np.random.default_rng(1).normal(size=(6, 1, 1))
        f = sine_function(0, 1)
        exact = apply_generator(model, f, 0, hist)
        coarse = np.max(np.abs(euler_generator(model, f, 0, hist, 1e-2) - exact))
        fine = np.max(np.abs(euler_generator(model, f, 0, hist, 1e-4) - exact))
        assert fine < coarse
        assert fine < 1e-3

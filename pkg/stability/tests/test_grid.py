import numpy as np
from django.test import SimpleTestCase

from stability.exceptions import ParameterError, ShapeError
from stability.numerics.grid import (
    WeightedNorm, cumint, cumint_inverse, diff, laplacian_matrix, local_derivative, make_grid, weighted_hm,
    weighted_l2,
)


class MakeGridTests(SimpleTestCase):

    def test_uniform_grid_has_n_intervals(self):
        grid = make_grid(100, 10.0)
        self.assertEqual(grid.N, 101)
        self.assertEqual(grid.nodes[0], 0.0)
        self.assertEqual(grid.nodes[-1], 10.0)

    def test_stretching_clusters_nodes_at_center(self):
        grid = make_grid(200, 12.0, stretch=(3.0, 1.0))
        mid = 0.5 * (grid.nodes[1:] + grid.nodes[:-1])
        near = grid.spacing[np.abs(mid - 3.0) < 0.5].max()
        far = grid.spacing[mid > 8.0].min()
        self.assertLess(4.0 * near, far)
        self.assertTrue(np.all(grid.spacing > 0))

    def test_rejects_bad_sizes(self):
        with self.assertRaises(ParameterError):
            make_grid(8, 10.0)
        with self.assertRaises(ParameterError):
            make_grid(100, -1.0)
        with self.assertRaises(ParameterError):
            make_grid(100, 10.0, stretch=(12.0, 1.0))


class DifferentiationTests(SimpleTestCase):

    def setUp(self):
        self.grid = make_grid(120, 4.0, stretch=(1.5, 0.5))
        self.z = self.grid.nodes

    def test_low_orders_exact_on_quadratics(self):
        f = 3.0 * self.z ** 2 - self.z
        np.testing.assert_allclose(diff(self.grid, f, 1), 6.0 * self.z - 1.0, atol=1e-8)
        np.testing.assert_allclose(diff(self.grid, f, 2), 6.0, atol=1e-6)

    def test_high_orders_exact_on_quartics(self):
        grid = make_grid(60, 2.0)
        z = grid.nodes
        np.testing.assert_allclose(diff(grid, z ** 4, 4), 24.0, atol=1e-5)
        np.testing.assert_allclose(diff(grid, z ** 4, 3), 24.0 * z, atol=1e-5)

    def test_rows_are_differentiated_independently(self):
        stack = np.stack([self.z ** 2, 2.0 * self.z])
        out = diff(self.grid, stack, 1)
        np.testing.assert_allclose(out[1], 2.0, atol=1e-10)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            diff(self.grid, np.ones(5))
        with self.assertRaises(ParameterError):
            diff(self.grid, self.z, 5)

    def test_local_derivative_off_grid(self):
        grid = make_grid(400, 4.0)
        value = local_derivative(grid, np.sin(grid.nodes), 1.234, 1)
        self.assertAlmostEqual(float(value), np.cos(1.234), places=8)
        with self.assertRaises(ParameterError):
            local_derivative(grid, grid.nodes, 5.0)


class QuadratureTests(SimpleTestCase):

    def test_weighted_l2_of_exponential(self):
        grid = make_grid(4000, 20.0)
        f = np.exp(-grid.nodes)
        self.assertAlmostEqual(float(weighted_l2(grid, f)), np.sqrt(0.5), places=4)
        self.assertAlmostEqual(float(weighted_l2(grid, f, WeightedNorm(0.5))), 1.0, places=4)

    def test_weighted_hm_adds_derivatives(self):
        grid = make_grid(4000, 20.0)
        f = np.exp(-grid.nodes)
        self.assertAlmostEqual(float(weighted_hm(grid, f, 0.0, 1)), 1.0, places=3)

    def test_negative_weight_rejected(self):
        with self.assertRaises(ParameterError):
            WeightedNorm(-1.0)

    def test_cumint_inverse_is_undone_by_cumint(self):
        grid = make_grid(300, 6.0, stretch=(2.0, 1.0))
        F = np.sin(grid.nodes) ** 2 * np.exp(-grid.nodes)
        np.testing.assert_allclose(cumint(grid, cumint_inverse(grid, F)), F, atol=1e-12)

    def test_cumint_inverse_recovers_smooth_derivative(self):
        grid = make_grid(400, 6.0)
        F = 1.0 - np.cos(grid.nodes)
        np.testing.assert_allclose(cumint_inverse(grid, F), np.sin(grid.nodes), atol=1e-3)


def observed_orders(errors):
    errors = np.asarray(errors, dtype=float)
    return np.log2(errors[:-1] / errors[1:])


class ConvergenceTests(SimpleTestCase):
    """Dyadic refinement on uniform grids; every operator is second order."""

    LEVELS = (64, 128, 256)

    def test_derivatives_of_sine_are_second_order(self):
        exact = {
            1: lambda z: np.cos(z + 0.3),
            2: lambda z: -np.sin(z + 0.3),
            3: lambda z: -np.cos(z + 0.3),
            4: lambda z: np.sin(z + 0.3),
        }
        for order, d in exact.items():
            errors = []
            for n in self.LEVELS:
                grid = make_grid(n, 2.0)
                errors.append(np.max(np.abs(diff(grid, np.sin(grid.nodes + 0.3), order) - d(grid.nodes))))
            with self.subTest(order=order):
                for p in observed_orders(errors):
                    self.assertGreaterEqual(p, 1.6)
                    self.assertLessEqual(p, 2.4)

    def test_cumint_of_cosine_is_second_order(self):
        errors = []
        for n in self.LEVELS:
            grid = make_grid(n, 3.0)
            errors.append(np.max(np.abs(cumint(grid, np.cos(grid.nodes)) - np.sin(grid.nodes))))
        for p in observed_orders(errors):
            self.assertGreaterEqual(p, 1.8)
            self.assertLessEqual(p, 2.2)

    def test_weighted_l2_quadrature_is_second_order(self):
        exact = np.sqrt(1.0 - np.exp(-4.0))
        errors = []
        for n in (20, 40, 80):
            grid = make_grid(n, 4.0)
            errors.append(abs(float(weighted_l2(grid, np.exp(-grid.nodes), WeightedNorm(0.5))) - exact))
        for p in observed_orders(errors):
            self.assertGreaterEqual(p, 1.8)
            self.assertLessEqual(p, 2.2)


class NormPropertyTests(SimpleTestCase):

    def setUp(self):
        self.grid = make_grid(200, 8.0, stretch=(2.0, 1.0))
        self.f = np.sin(self.grid.nodes) * np.exp(-self.grid.nodes)

    def test_weighted_l2_is_absolutely_homogeneous(self):
        base = float(weighted_l2(self.grid, self.f, WeightedNorm(0.3)))
        for lam in (-2.5, 0.1, -2.0 + 1.0j, 3.0j):
            with self.subTest(lam=lam):
                scaled = float(weighted_l2(self.grid, lam * self.f, WeightedNorm(0.3)))
                self.assertAlmostEqual(scaled / (abs(lam) * base), 1.0, places=12)

    def test_weighted_l2_of_zero_is_zero(self):
        self.assertEqual(float(weighted_l2(self.grid, np.zeros(self.grid.N))), 0.0)
        self.assertEqual(float(weighted_l2(self.grid, np.zeros(self.grid.N, dtype=complex), WeightedNorm(1.0))), 0.0)


class LaplacianTests(SimpleTestCase):

    def test_shapes(self):
        grid = make_grid(50, 5.0)
        self.assertEqual(laplacian_matrix(grid).shape, (grid.N - 2, grid.N - 2))
        self.assertEqual(laplacian_matrix(grid, neumann=True).shape, (grid.N - 1, grid.N - 1))

    def test_exact_on_interior_quadratic(self):
        grid = make_grid(50, 5.0, stretch=(2.0, 1.0))
        z = grid.nodes
        f = z * (5.0 - z)
        lap = laplacian_matrix(grid)
        np.testing.assert_allclose(lap @ f[1:-1], -2.0, atol=1e-8)

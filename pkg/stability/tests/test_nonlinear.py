import numpy as np
from django.test import SimpleTestCase

from stability.exceptions import ParameterError
from stability.numerics.evolve import FourierMode, evolve_linear
from stability.numerics.grid import make_grid
from stability.numerics.nonlinear import (
    dealias_mask, evolve_nonlinear, field_distance, linearization_study, low_mode_seed, proportional_gap,
    wavenumbers,
)
from stability.numerics.shear import ShearPair, TanhProfile, build_structured_data, evolve_shear


def tanh_shear():
    pair = ShearPair(TanhProfile(1.0, 1.0), TanhProfile(1.0, 0.6), "tanh-pair")
    return evolve_shear(pair, make_grid(100, 12.0), 0.05)


class TorusTests(SimpleTestCase):

    def test_wavenumbers(self):
        k1, k2 = wavenumbers(4)
        np.testing.assert_array_equal(k1[:, 0], [0, 1, -2, -1])
        np.testing.assert_array_equal(k2[0], [0, 1, -2, -1])

    def test_two_thirds_rule(self):
        mask = dealias_mask(8)
        self.assertEqual(int(mask.sum()), 25)
        self.assertFalse(mask[3, 0])

    def test_seed_is_reproducible(self):
        grid = make_grid(50, 12.0)
        a, b = low_mode_seed(grid, 8, seed=3), low_mode_seed(grid, 8, seed=3)
        np.testing.assert_array_equal(a.p_hat, b.p_hat)
        c = low_mode_seed(grid, 8, seed=4)
        self.assertGreater(field_distance(grid, a, c), 0.0)

    def test_proportional_seed(self):
        grid = make_grid(50, 12.0)
        p, q = low_mode_seed(grid, 8, ratio=1.5).physical()
        np.testing.assert_allclose(q, 1.5 * p, atol=1e-12)

    def test_resolution_is_bounded(self):
        with self.assertRaises(ParameterError):
            low_mode_seed(make_grid(50, 12.0), 17)


class NonlinearEvolutionTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.shear = tanh_shear()
        cls.state = low_mode_seed(cls.shear.grid, 8, seed=0)

    def test_linear_mode_reproduces_the_linear_solver(self):
        traj = evolve_nonlinear(self.state, self.shear, 1.0, 0.05, linear=True)
        mode = FourierMode(1, 1, self.state.p_hat[1, 1], self.state.q_hat[1, 1])
        single = evolve_linear(mode, self.shear, 0.05, dt=traj.dt)
        final = traj.samples[-1]
        np.testing.assert_allclose(final.p_hat[1, 1], single.u[-1], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(final.q_hat[1, 1], single.v[-1], rtol=1e-9, atol=1e-12)

    def test_linearization_error_is_first_order(self):
        study = linearization_study(self.state, self.shear, [1e-2, 5e-3, 2.5e-3], 0.05)
        for ratio, step in zip(study["ratios"], study["delta_ratios"]):
            self.assertLess(abs(ratio / step - 1.0), 0.3)
        self.assertEqual([r["delta"] for r in study["runs"]], [1e-2, 5e-3, 2.5e-3])

    def test_rejects_mismatched_state(self):
        other = low_mode_seed(make_grid(40, 12.0), 8)
        with self.assertRaises(ParameterError):
            evolve_nonlinear(other, self.shear, 0.01, 0.05)
        with self.assertRaises(ParameterError):
            linearization_study(self.state, self.shear, [0.01, 0.0], 0.05)


class ProportionalShearTests(SimpleTestCase):

    def test_proportional_perturbation_stays_proportional(self):
        pair = build_structured_data(TanhProfile(1.0), 1.5)
        shear = evolve_shear(pair, make_grid(100, 12.0), 0.05)
        state = low_mode_seed(shear.grid, 8, ratio=1.5)
        traj = evolve_nonlinear(state, shear, 0.01, 0.05)
        self.assertLess(proportional_gap(traj, 1.5), 1e-8)

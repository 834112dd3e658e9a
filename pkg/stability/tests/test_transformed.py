import numpy as np
from django.test import SimpleTestCase

from stability.exceptions import MonotonicityError, ParameterError
from stability.numerics.evolve import FourierMode
from stability.numerics.grid import diff, make_grid
from stability.numerics.shear import ShearPair, TanhProfile, build_structured_data, evolve_shear
from stability.numerics.transformed import (
    coupling_coefficient, default_seed, evolve_transformed, inverse_transform, transform_monotone, two_route_gap,
)

from .helpers import special_shear


def tanh_shear(t_end=0.05, n=300):
    pair = ShearPair(TanhProfile(1.0, 1.0), TanhProfile(1.0, 0.6), "tanh-pair")
    return evolve_shear(pair, make_grid(n, 12.0), t_end)


class TransformationTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.shear = tanh_shear()

    def test_physical_round_trip_is_exact(self):
        physical = inverse_transform(default_seed(self.shear.grid, 8), self.shear, 0.0)
        back = inverse_transform(transform_monotone(physical, self.shear, 0.0), self.shear, 0.0)
        scale = np.linalg.norm(np.concatenate([physical.u, physical.v]))
        gap = np.linalg.norm(np.concatenate([back.u - physical.u, back.v - physical.v])) / scale
        self.assertLessEqual(gap, 1e-8)

    def test_seed_gives_the_expected_velocity(self):
        physical = inverse_transform(default_seed(self.shear.grid, 8), self.shear, 0.0)
        z = self.shear.grid.nodes
        uz = self.shear.uz[0]
        np.testing.assert_allclose(physical.u, uz * z * np.exp(-z ** 2), atol=2e-3)
        self.assertEqual((physical.k1, physical.k2), (0, 8))

    def test_requires_streamwise_independence(self):
        z = self.shear.grid.nodes
        mode = FourierMode(1, 8, z * np.exp(-z), z * np.exp(-z))
        with self.assertRaises(ParameterError):
            transform_monotone(mode, self.shear, 0.0)

    def test_requires_monotone_shear(self):
        shear = special_shear()
        z = shear.grid.nodes
        mode = FourierMode(0, 8, z * np.exp(-z), z * np.exp(-z))
        with self.assertRaises(MonotonicityError):
            transform_monotone(mode, shear, 0.0)

    def test_coupling_vanishes_for_proportional_shear(self):
        grid = make_grid(200, 12.0)
        pair = build_structured_data(TanhProfile(1.0), 1.5)
        state = pair.sample(grid)
        coupling = coupling_coefficient(grid, state.u_derivs[1], state.v_derivs[1])
        self.assertLess(np.max(np.abs(coupling)), 1e-10)


class TransformedEvolutionTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.shear = tanh_shear()

    def test_energy_rate_has_no_skew_part(self):
        traj = evolve_transformed(default_seed(self.shear.grid, 16), self.shear, 0.05)
        self.assertLessEqual(traj.skew, 1e-10)
        self.assertTrue(np.all(traj.energy > 0))
        self.assertTrue(np.isfinite(traj.rho_hat))
        self.assertEqual(traj.summary()["k"], 16)

    def test_horizon_is_bounded_by_the_shear(self):
        with self.assertRaises(ParameterError):
            evolve_transformed(default_seed(self.shear.grid, 8), self.shear, 1.0)

    def test_two_routes_agree(self):
        shear = tanh_shear(n=600)
        gap = two_route_gap(default_seed(shear.grid, 8), shear, 0.02)
        self.assertLessEqual(gap, 1e-3)

    def test_structured_shear_keeps_vt_zero(self):
        pair = build_structured_data(TanhProfile(1.0), 1.5)
        shear = evolve_shear(pair, make_grid(200, 12.0), 0.05)
        traj = evolve_transformed(default_seed(shear.grid, 16, structured=True), shear, 0.05)
        self.assertLess(np.max(np.abs(traj.vt)), 1e-8)


class EnergyEstimateTests(SimpleTestCase):
    """Gronwall slope of the transformed energy against wavenumber."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.shear = tanh_shear()

    def drift_bound(self, shear, T):
        """2 max|u_zz/u_z|^2 + max|2 u_z d_z(v_z/u_z)| over the horizon: the k-free part of the rate."""
        bound = 0.0
        for t in (0.0, T):
            _, _, uz, vz = shear.profiles_at(t)
            drift = diff(shear.grid, uz, 1) / uz
            coupling = coupling_coefficient(shear.grid, uz, vz)
            bound = max(bound, 2.0 * np.max(np.abs(drift)) ** 2 + np.max(np.abs(coupling)))
        return bound

    def test_slope_grows_at_most_linearly_in_k(self):
        T = 0.02
        c0 = self.drift_bound(self.shear, T)
        rho = {}
        for k in (0, 8, 16, 32):
            traj = evolve_transformed(default_seed(self.shear.grid, k), self.shear, T)
            self.assertLessEqual(np.max(traj.slope), c0 + abs(k))
            rho[k] = traj.rho_hat
        for k in (8, 16, 32):
            self.assertLessEqual(rho[k], c0 + 1.0)

    def test_structured_slope_is_independent_of_k(self):
        pair = build_structured_data(TanhProfile(1.0), 1.5)
        shear = evolve_shear(pair, make_grid(300, 12.0), 0.05)
        dt = 5e-4
        slopes = []
        for k in (8, 16, 32):
            traj = evolve_transformed(default_seed(shear.grid, k, structured=True), shear, 0.01, dt)
            slopes.append(np.max(traj.slope))
        slopes = np.array(slopes)
        self.assertTrue(np.all(slopes < 0))
        self.assertLessEqual((slopes.max() - slopes.min()) / abs(slopes.mean()), 0.1)

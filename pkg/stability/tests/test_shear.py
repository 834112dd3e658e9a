import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
from django.test import SimpleTestCase
from scipy.optimize import brentq
from scipy.special import erf

from stability.exceptions import DegeneracyError, ParameterError, ShearValidationError
from stability.numerics.grid import make_grid
from stability.numerics.shear import (
    ErfProfile, ShearPair, TanhProfile, build_family, build_special_data, build_structured_data, evolve_shear,
    find_critical_points, heat_evolve, simplest_rational, smooth_step, track_critical_point,
)


def special_pair(**overrides):
    params = {"z0": 3.0, "q": 1, "l": 1, "uspp": 0.0, "vspp": -1.0, "U0": 5.0, "V0": 5.0}
    params.update(overrides)
    return build_special_data(**params)


def tanh_pair():
    return ShearPair(TanhProfile(1.0, 2.0), TanhProfile(0.9, 1.5), "tanh-pair")


def scanned_roots(pair, a, z_end=7.5, samples=400001):
    """Roots of V' - a U' from sign changes on a dense uniform scan."""
    def gap(z):
        return pair.v.derivative(z, 1) - a * pair.u.derivative(z, 1)

    z = np.linspace(1e-3, z_end, samples)
    g = gap(z)
    flips = np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)
    return [brentq(lambda s: float(gap(s)), z[i], z[i + 1], xtol=1e-15) for i in flips]


class ProfileTests(SimpleTestCase):

    def test_erf_derivatives_match_finite_differences(self):
        profile = ErfProfile(2.0, 0.7)
        h = 1e-4
        for z in (0.3, 1.1, 2.5):
            for j in range(1, 5):
                fd = (profile.derivative(z + h, j - 1) - profile.derivative(z - h, j - 1)) / (2 * h)
                self.assertAlmostEqual(float(profile.derivative(z, j)), float(fd), delta=1e-5 * (1 + abs(fd)))

    def test_tanh_derivatives_match_finite_differences(self):
        profile = TanhProfile(1.5, 0.8)
        h = 1e-4
        for z in (0.2, 0.9, 1.7):
            for j in range(1, 5):
                fd = (profile.derivative(z + h, j - 1) - profile.derivative(z - h, j - 1)) / (2 * h)
                self.assertAlmostEqual(float(profile.derivative(z, j)), float(fd), delta=1e-5 * (1 + abs(fd)))

    def test_smooth_step_limits(self):
        self.assertEqual(float(smooth_step(-0.5)), 0.0)
        self.assertEqual(float(smooth_step(1.5)), 1.0)
        self.assertAlmostEqual(float(smooth_step(0.5)), 0.5)
        self.assertEqual(float(smooth_step(-0.5, 2)), 0.0)


class SpecialDataTests(SimpleTestCase):

    def test_core_slopes_are_exact(self):
        pair = special_pair(uspp=0.3)
        z = np.linspace(2.6, 3.4, 9)
        np.testing.assert_allclose(pair.u.derivative(z, 1), 1.0 + 0.3 * (z - 3.0), atol=1e-12)
        np.testing.assert_allclose(pair.v.derivative(z, 1), 1.0 - (z - 3.0), atol=1e-12)
        np.testing.assert_allclose(pair.v.derivative(z, 2), -1.0, atol=1e-12)

    def test_vanishes_at_wall_and_reaches_far_field(self):
        pair = special_pair()
        self.assertAlmostEqual(float(pair.u(0.0)), 0.0, places=12)
        self.assertAlmostEqual(float(pair.u(30.0)), 5.0, places=8)
        self.assertAlmostEqual(float(pair.v(20.0)), 5.0, places=6)

    def test_validation(self):
        with self.assertRaises(ShearValidationError):
            special_pair(q=2, l=2)
        with self.assertRaises(ShearValidationError):
            special_pair(q=0)
        with self.assertRaises(ShearValidationError):
            special_pair(vspp=0.0)
        with self.assertRaises(ShearValidationError):
            special_pair(z0=0.2)

    def test_unknown_family(self):
        with self.assertRaises(ParameterError):
            build_family("sinusoid", {})


class HeatEvolutionTests(SimpleTestCase):

    def _error(self, n):
        grid = make_grid(n, 12.0)
        dz = 12.0 / n
        pair = ShearPair(ErfProfile(1.0), ErfProfile(2.0), "erf")
        traj = evolve_shear(pair, grid, 0.5, dt=0.05 * dz)
        exact = erf(grid.nodes / (2.0 * math.sqrt(1.5)))
        return float(np.max(np.abs(traj.u[-1] - exact)))

    def test_matches_similarity_solution_at_second_order(self):
        errors = [self._error(n) for n in (100, 200, 400)]
        self.assertLess(errors[-1], 1e-4)
        orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
        self.assertGreaterEqual(min(orders), 1.8)

    def test_boundary_values_are_held(self):
        grid = make_grid(200, 12.0)
        traj = evolve_shear(special_pair(), grid, 0.1)
        np.testing.assert_allclose(traj.u[:, 0], 0.0, atol=1e-14)
        np.testing.assert_allclose(traj.u[:, -1], 5.0, atol=1e-12)

    def test_frozen_trajectory_repeats_initial_data(self):
        grid = make_grid(100, 12.0)
        traj = evolve_shear(special_pair(), grid, 0.2, frozen=True)
        np.testing.assert_array_equal(traj.u[-1], traj.u[0])
        self.assertTrue(traj.frozen)

    def test_rejects_data_that_has_not_decayed(self):
        grid = make_grid(100, 3.0)
        with self.assertRaises(ShearValidationError):
            heat_evolve(special_pair(), 0.0, grid)

    def test_rejects_bad_times(self):
        grid = make_grid(100, 12.0)
        with self.assertRaises(ParameterError):
            evolve_shear(special_pair(), grid, -1.0)

    def test_maximum_principle(self):
        # dt / dz^2 <= 1 keeps Crank-Nicolson monotone
        grid = make_grid(400, 16.0)
        traj = evolve_shear(tanh_pair(), grid, 0.5, dt=1e-3)
        for arr, far in ((traj.u, 1.0), (traj.v, 0.9)):
            self.assertGreaterEqual(float(arr.min()), -1e-8)
            self.assertLessEqual(float(arr.max()), far + 1e-8)

    def test_structured_data_stays_proportional(self):
        grid = make_grid(300, 12.0)
        traj = evolve_shear(build_structured_data(TanhProfile(1.0), 1.5), grid, 0.2)
        np.testing.assert_allclose(traj.v, 1.5 * traj.u, rtol=0, atol=1e-12)

    def test_evolution_is_linear_in_the_data(self):
        grid = make_grid(300, 16.0)
        one = evolve_shear(tanh_pair(), grid, 0.2)
        three = evolve_shear(ShearPair(TanhProfile(3.0, 2.0), TanhProfile(2.7, 1.5), "tanh-pair"), grid, 0.2)
        np.testing.assert_allclose(three.u, 3.0 * one.u, rtol=0, atol=1e-12)
        np.testing.assert_allclose(three.v, 3.0 * one.v, rtol=0, atol=1e-12)


class CriticalPointTests(SimpleTestCase):

    def test_special_data_has_its_designed_point(self):
        grid = make_grid(600, 12.0, stretch=(3.0, 1.0))
        points = find_critical_points(special_pair().sample(grid))
        self.assertEqual(len(points), 1)
        cp = points[0]
        self.assertAlmostEqual(cp.z0, 3.0, places=6)
        self.assertEqual((cp.l, cp.q), (1, 1))
        self.assertAlmostEqual(cp.wpp, -1.0, places=6)

    def test_structured_data_has_none(self):
        grid = make_grid(400, 12.0)
        pair = build_structured_data(TanhProfile(1.0), 1.5)
        self.assertEqual(find_critical_points(pair.sample(grid)), [])

    def test_tracking_methods_agree(self):
        grid = make_grid(600, 12.0, stretch=(3.0, 1.0))
        traj = evolve_shear(special_pair(), grid, 0.1)
        cp = find_critical_points(traj.state_at(0.0))[0]
        track = track_critical_point(traj, cp)
        self.assertFalse(track.degenerate)
        self.assertLess(track.method_gap, 1e-3)
        self.assertAlmostEqual(track.f[0], 3.0, places=6)

    def test_degenerate_start_is_rejected(self):
        grid = make_grid(600, 12.0, stretch=(3.0, 1.0))
        traj = evolve_shear(special_pair(), grid, 0.05)
        cp = find_critical_points(traj.state_at(0.0))[0]
        flat = replace(cp, wpp=1e-12)
        with self.assertRaises(DegeneracyError):
            track_critical_point(traj, flat)

    def test_tanh_point_matches_a_dense_scan(self):
        pair = tanh_pair()
        cp = find_critical_points(pair.sample(make_grid(800, 16.0)))[0]
        roots = scanned_roots(pair, cp.a)
        self.assertEqual(len(roots), 1)
        self.assertAlmostEqual(cp.z0, roots[0], places=10)
        wpp = pair.v.derivative(roots[0], 2) - cp.a * pair.u.derivative(roots[0], 2)
        self.assertAlmostEqual(cp.wpp, float(wpp), places=10)

    def test_points_survive_doubled_resolution(self):
        pair = tanh_pair()
        coarse = find_critical_points(pair.sample(make_grid(800, 16.0)))
        fine = find_critical_points(pair.sample(make_grid(1600, 16.0)))
        self.assertEqual(len(coarse), len(fine))
        for a, b in zip(coarse, fine):
            self.assertEqual((a.l, a.q), (b.l, b.q))
            self.assertAlmostEqual(a.z0, b.z0, places=10)

    def test_tanh_tracking_methods_agree(self):
        grid = make_grid(8000, 16.0)
        traj = evolve_shear(tanh_pair(), grid, 0.02, dt=1e-3)
        cp = find_critical_points(traj.state_at(0.0))[0]
        track = track_critical_point(traj, cp)
        self.assertFalse(track.degenerate)
        self.assertEqual(track.f.size, traj.times.size)
        self.assertLessEqual(track.method_gap, 1e-6)


class SimplestRationalTests(SimpleTestCase):

    def test_prefers_small_denominators(self):
        self.assertEqual(simplest_rational(0.32, 0.34, 64, 0.33), Fraction(1, 3))
        self.assertEqual(simplest_rational(0.9, 1.2, 64, 1.0), 1)
        self.assertEqual(simplest_rational(-0.55, -0.45, 64, -0.5), -0.5)

    def test_gives_up_above_q_max(self):
        self.assertIsNone(simplest_rational(0.3331, 0.3332, 8, 0.33315))

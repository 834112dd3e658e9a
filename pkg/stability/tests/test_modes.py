import numpy as np
from django.test import SimpleTestCase, tag

from stability.exceptions import ParameterError, ResolutionError
from stability.numerics.grid import make_grid
from stability.numerics.modes import (
    boundary_values, build_mode, cutoff, divergence_error, fit_sandwich, predicted_sigma0, residual,
    residual_scaling_study,
)
from stability.numerics.shear import build_special_data, evolve_shear, find_critical_points, track_critical_point

from .helpers import SPECIAL, eigenpair, special_shear, special_track


class CutoffTests(SimpleTestCase):

    def test_support(self):
        x = np.array([-2.0, -1.0, 0.0, 0.4, 1.0, 2.0])
        phi, _, _ = cutoff(x, 1.0)
        np.testing.assert_array_equal(phi, [0.0, 0.0, 1.0, 1.0, 0.0, 0.0])


class ModeConstructionTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.shear = special_shear()
        cls.cp, cls.track = special_track()
        cls.mode = build_mode(cls.shear, cls.cp, eigenpair(), 16, traj=cls.track)

    def test_phase_parameters(self):
        self.assertEqual(self.mode.eps, 1.0 / 16)
        self.assertEqual((self.mode.k1, self.mode.k2), (-16, 16))

    def test_vanishes_at_the_wall(self):
        self.assertEqual(boundary_values(self.mode)["z0"], 0.0)

    def test_decays_at_the_far_boundary(self):
        self.assertLessEqual(boundary_values(self.mode)["zmax_rel"], 1e-6)

    def test_divergence_free(self):
        self.assertLess(divergence_error(self.mode), 1e-2)

    def test_residual_is_finite(self):
        report = residual(self.mode, self.shear, 0.0)
        self.assertTrue(np.isfinite(report.R1norm) and report.R1norm > 0)
        self.assertTrue(np.isfinite(report.R2norm))
        self.assertEqual(set(report.decomposition["R1"]), {"1", "2", "3", "sum"})

    def test_invalid_wavenumbers(self):
        for k in (0, 2.5, -4):
            with self.assertRaises(ParameterError):
                build_mode(self.shear, self.cp, eigenpair(), k, traj=self.track)
        with self.assertRaises(ParameterError):
            build_mode(self.shear, self.cp, eigenpair(), 16, traj=self.track, eps=0.3)

    def test_cutoff_must_stay_inside(self):
        with self.assertRaises(ParameterError):
            build_mode(self.shear, self.cp, eigenpair(), 16, traj=self.track, phi_radius=5.0)

    def test_unresolved_layer(self):
        coarse = evolve_shear(build_special_data(**SPECIAL), make_grid(20, 12.0), 0.05)
        with self.assertRaises(ResolutionError):
            build_mode(coarse, self.cp, eigenpair(), 16, traj=self.track)


class FrozenGrowthTests(SimpleTestCase):

    def test_sandwich_rate_matches_prediction(self):
        cp, track = special_track(frozen=True)
        mode = build_mode(special_shear(frozen=True), cp, eigenpair(), 32, traj=track)
        fit = fit_sandwich(mode)
        expected = predicted_sigma0(eigenpair().tau_t, cp.wpp)
        self.assertAlmostEqual(fit["sigma0"] / expected, 1.0, places=3)
        self.assertLess(fit["C0"], 1.01)
        self.assertGreater(fit["r2"], 0.999)


@tag("slow")
class ResidualScalingTests(SimpleTestCase):
    """Special data with a wide exact-quadratic core, as in configs/residual-special.yml."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        pair = build_special_data(**{**SPECIAL, "z0": 4.0, "r": 2.0})
        cls.shear = evolve_shear(pair, make_grid(900, 14.0, stretch=(4.0, 1.5)), 0.1, dt=5e-4)
        points = find_critical_points(cls.shear.state_at(0.0))
        cls.cp = min(points, key=lambda p: abs(p.z0 - 4.0))
        cls.track = track_critical_point(cls.shear, cls.cp)
        cls.study = residual_scaling_study(cls.shear, cls.cp, eigenpair(), [1 / 64, 1 / 128, 1 / 256, 1 / 512],
                                           [0.01, 0.02, 0.04, 0.08], traj=cls.track, phi_radius=3.0)

    def test_residual_decreases_with_eps(self):
        self.assertEqual(len(self.study["residual_t0"]), 4)
        self.assertEqual(self.study["eps"], sorted(self.study["eps"]))
        self.assertGreaterEqual(self.study["eps_slopes"]["total"]["slope"], 0.8)

    def test_excess_residual_is_quadratic_in_time(self):
        self.assertIn("slope", self.study["t_slope"])
        self.assertGreaterEqual(self.study["t_slope"]["slope"], 1.8)

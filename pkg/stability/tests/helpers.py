"""Shared, cached numerical fixtures for the test modules."""
import functools

from stability.numerics.grid import make_grid
from stability.numerics.layer_ode import solve_canonical
from stability.numerics.shear import build_special_data, evolve_shear, find_critical_points, track_critical_point

SPECIAL = {"z0": 3.0, "q": 1, "l": 1, "uspp": 0.0, "vspp": -1.0, "U0": 5.0, "V0": 5.0}


@functools.cache
def eigenpair():
    return solve_canonical(sign=-1, L=12.0, n=1024)


@functools.cache
def special_shear(frozen=False, t_end=0.1):
    grid = make_grid(600, 12.0, stretch=(3.0, 1.0))
    return evolve_shear(build_special_data(**SPECIAL), grid, t_end, frozen=frozen)


@functools.cache
def special_track(frozen=False, t_end=0.1):
    shear = special_shear(frozen, t_end)
    cp = find_critical_points(shear.state_at(0.0))[0]
    return cp, track_critical_point(shear, cp)

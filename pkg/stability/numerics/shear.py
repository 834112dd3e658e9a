"""
Background shear flows (u^s, v^s)(t, z): closed-form initial families, the
half-line heat evolution, and the non-degenerate critical points of
w_a^s = v^s - a u^s together with their time tracks.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_simpson, quad, solve_ivp
from scipy.interpolate import CubicSpline, make_interp_spline
from scipy.optimize import brentq, newton
from scipy.sparse.linalg import splu
from scipy.special import erf, eval_hermite

from ..exceptions import DegeneracyError, IterationError, ParameterError, ShearValidationError
from .grid import Grid1D, diff, laplacian_matrix, local_derivative

logger = logging.getLogger(__name__)

MAX_ORDER = 4
DECAY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Profile families
# ---------------------------------------------------------------------------

class ShearProfile(ABC):
    """
    One tangential component of the initial shear, with closed-form
    derivatives up to order 4.
    """
    far_field = 0.0

    @abstractmethod
    def derivative(self, z, j=0):
        """j-th z-derivative at z (j = 0 is the value)."""
        raise NotImplementedError

    def __call__(self, z):
        return self.derivative(z, 0)

    def derivatives(self, z, upto=MAX_ORDER) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.stack([self.derivative(z, j) for j in range(upto + 1)])


class ErfProfile(ShearProfile):
    """amplitude * erf(z / (2 width)); width = 1 is the heat similarity profile."""

    def __init__(self, amplitude, width=1.0):
        self.amplitude = float(amplitude)
        self.width = float(width)
        self.far_field = self.amplitude

    def derivative(self, z, j=0):
        x = np.asarray(z, dtype=float) / (2.0 * self.width)
        if j == 0:
            return self.amplitude * erf(x)
        scale = (1.0 / (2.0 * self.width)) ** j
        return (self.amplitude * scale * 2.0 / math.sqrt(math.pi)
                * (-1) ** (j - 1) * eval_hermite(j - 1, x) * np.exp(-x * x))


class TanhProfile(ShearProfile):
    def __init__(self, amplitude, width=1.0):
        self.amplitude = float(amplitude)
        self.width = float(width)
        self.far_field = self.amplitude

    def derivative(self, z, j=0):
        T = np.tanh(np.asarray(z, dtype=float) / self.width)
        S = 1.0 - T * T
        poly = {
            0: T,
            1: S,
            2: -2.0 * T * S,
            3: S * (6.0 * T * T - 2.0),
            4: 8.0 * T * S * (2.0 - 3.0 * T * T),
        }[j]
        return self.amplitude * poly / self.width ** j


class ScaledProfile(ShearProfile):
    """c times another profile (the proportional, structured component)."""

    def __init__(self, base: ShearProfile, factor):
        self.base = base
        self.factor = float(factor)
        self.far_field = self.factor * base.far_field

    def derivative(self, z, j=0):
        return self.factor * self.base.derivative(z, j)


class SampledProfile(ShearProfile):
    """Nodal data interpolated by a quintic spline so four derivatives exist."""

    def __init__(self, nodes, values):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        self._spline = make_interp_spline(nodes, values, k=5)
        self.far_field = float(values[-1])

    def derivative(self, z, j=0):
        return self._spline(np.asarray(z, dtype=float), nu=j)


def _psi(y):
    """exp(-1/y) for y > 0 and its first three derivatives."""
    live = y > 5e-3
    ys = np.where(live, y, 1.0)
    base = np.where(live, np.exp(-1.0 / ys), 0.0)
    return (
        base,
        base / ys ** 2,
        base * (1.0 - 2.0 * ys) / ys ** 4,
        base * (1.0 - 6.0 * ys + 6.0 * ys * ys) / ys ** 6,
    )


def smooth_step(y, m=0):
    """
    C-infinity step: 0 for y <= 0, 1 for y >= 1, psi(y) / (psi(y) + psi(1-y))
    in between. Returns the m-th derivative, m <= 3.
    """
    y = np.asarray(y, dtype=float)
    A = _psi(y)
    B = [(-1) ** k * d for k, d in enumerate(_psi(1.0 - y))]
    D = [a + b for a, b in zip(A, B)]
    S = [A[0] / D[0]]
    for k in range(1, m + 1):
        acc = A[k] - sum(math.comb(k, i) * D[i] * S[k - i] for i in range(1, k + 1))
        S.append(acc / D[0])
    return S[m]


class SpecialProfile(ShearProfile):
    """
    Profile whose slope is exactly (slope + curvature (z - z0)) on |z - z0| <= r,
    falls smoothly to zero across r <= |z - z0| <= r + blend, and is completed
    by a unit-mass exponential tail that carries the far-field value.
    """

    TABLE_POINTS = 40001

    def __init__(self, z0, slope, curvature, far_field, r=0.5, blend=1.0, tail=0.4):
        self.z0, self.slope, self.curvature = float(z0), float(slope), float(curvature)
        self.r, self.blend, self.tail = float(r), float(blend), float(tail)
        self.far_field = float(far_field)
        self.tail_start = self.z0 + self.r + self.blend

        self._tail_norm = 1.0
        tail_mass = quad(lambda s: self._tail(s, 0), self.tail_start, self.tail_start + 60 * self.tail, limit=200)[0]
        self._tail_norm = 1.0 / tail_mass

        core_points = [self.z0 - self.r - self.blend, self.z0 - self.r, self.z0 + self.r, self.tail_start]
        lo = max(0.0, core_points[0])
        mass0 = quad(lambda s: self._bump(s, 0), lo, self.tail_start, points=core_points[1:3], limit=200)[0]
        mass1 = quad(lambda s: (s - self.z0) * self._bump(s, 0), lo, self.tail_start, points=core_points[1:3], limit=200)[0]
        self.tail_weight = self.far_field - self.slope * mass0 - self.curvature * mass1

        self._table_end = self.tail_start + 60 * self.tail
        z_tab = np.linspace(0.0, self._table_end, self.TABLE_POINTS)
        values = cumulative_simpson(self.derivative(z_tab, 1), x=z_tab, initial=0.0)
        self._values = CubicSpline(z_tab, values)

    def _bump(self, z, m):
        x = np.asarray(z, dtype=float) - self.z0
        y = (self.r + self.blend - np.abs(x)) / self.blend
        return smooth_step(y, m) * (-np.sign(x) / self.blend) ** m

    def _tail(self, z, m):
        y = (np.asarray(z, dtype=float) - self.tail_start) / self.tail
        decay = np.exp(-np.clip(y, 0.0, None))
        total = 0.0
        for i in range(m + 1):
            total = total + math.comb(m, i) * smooth_step(y, i) * (-1.0) ** (m - i)
        return self._tail_norm * total * decay / self.tail ** m

    def derivative(self, z, j=0):
        z = np.asarray(z, dtype=float)
        if j == 0:
            return np.where(z < self._table_end, self._values(np.minimum(z, self._table_end)), self.far_field)
        m = j - 1
        x = z - self.z0
        slope = (self.slope + self.curvature * x) * self._bump(z, m)
        if m >= 1:
            slope = slope + m * self.curvature * self._bump(z, m - 1)
        return slope + self.tail_weight * self._tail(z, m)


@dataclass(frozen=True)
class ShearPair:
    """Initial data (U_s, V_s)."""
    u: ShearProfile
    v: ShearProfile
    family: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def U0(self):
        return self.u.far_field

    @property
    def V0(self):
        return self.v.far_field

    def sample(self, grid: Grid1D) -> "ShearState":
        return ShearState(
            t=0.0,
            u_derivs=self.u.derivatives(grid.nodes),
            v_derivs=self.v.derivatives(grid.nodes),
            U0=self.U0,
            V0=self.V0,
            grid=grid,
            pair=self,
        )


def build_special_data(z0, q, l, uspp, vspp, U0, V0, r=0.5, blend=1.0, tail=0.4) -> ShearPair:
    """Profiles that are exact quadratics with slopes (q, l) near z0."""
    if int(q) != q or q < 1 or int(l) != l:
        raise ShearValidationError(f"q must be a positive integer and l an integer, got q={q}, l={l}")
    q, l = int(q), int(l)
    if math.gcd(abs(l), q) != 1:
        raise ShearValidationError(f"l={l} and q={q} must be co-prime")
    if not (z0 > r > 0 and blend > 0 and tail > 0):
        raise ShearValidationError("special data needs z0 > r > 0 and positive blend and tail lengths")
    a = l / q
    if abs(vspp - a * uspp) < 1e-12:
        raise ShearValidationError("V_s''(z0) - a U_s''(z0) must be non-zero")
    pair = ShearPair(
        u=SpecialProfile(z0, q, uspp, U0, r, blend, tail),
        v=SpecialProfile(z0, l, vspp, V0, r, blend, tail),
        family="special-quadratic",
        params={"z0": z0, "q": q, "l": l, "uspp": uspp, "vspp": vspp, "U0": U0, "V0": V0,
                "r": r, "blend": blend, "tail": tail},
    )
    if abs(float(pair.u(z0))) < 1e-12:
        raise ShearValidationError("U_s(z0) must be non-zero")
    return pair


def build_structured_data(u: ShearProfile, c) -> ShearPair:
    """The proportional pair (U_s, c U_s)."""
    return ShearPair(u=u, v=ScaledProfile(u, c), family="structured", params={"c": float(c)})


def build_family(name, params) -> ShearPair:
    """Shear family selected by configuration name."""
    p = dict(params)
    if name == "erf":
        return ShearPair(ErfProfile(p["U0"], p["width_u"]), ErfProfile(p["V0"], p["width_v"]), name, p)
    if name == "tanh-pair":
        return ShearPair(TanhProfile(p["U0"], p["width_u"]), TanhProfile(p["V0"], p["width_v"]), name, p)
    if name == "special-quadratic":
        return build_special_data(p["z0"], p["q"], p["l"], p["uspp"], p["vspp"], p["U0"], p["V0"],
                                  p["r"], p["blend"], p["tail"])
    if name == "structured":
        base = {"erf": ErfProfile, "tanh": TanhProfile}[p["base"]](p["U0"], p["width_u"])
        pair = build_structured_data(base, p["c"])
        return ShearPair(pair.u, pair.v, name, p)
    raise ParameterError(f"unknown shear family {name!r}")


# ---------------------------------------------------------------------------
# States and heat evolution
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ShearState:
    """(u^s, v^s)(t, .) with derivative rows 0..4 on the grid."""
    t: float
    u_derivs: np.ndarray
    v_derivs: np.ndarray
    U0: float
    V0: float
    grid: Grid1D
    pair: ShearPair | None = None

    @property
    def u(self):
        return self.u_derivs[0]

    @property
    def v(self):
        return self.v_derivs[0]

    def w_derivs(self, a):
        return self.v_derivs - a * self.u_derivs

    @classmethod
    def from_profiles(cls, t, u, v, U0, V0, grid):
        def stack(f):
            return np.stack([f] + [diff(grid, f, j) for j in range(1, MAX_ORDER + 1)])
        return cls(t=t, u_derivs=stack(u), v_derivs=stack(v), U0=U0, V0=V0, grid=grid)


def check_decay(state: ShearState):
    scale = abs(state.U0) + abs(state.V0) + 1.0
    if max(abs(state.u[0]), abs(state.v[0])) > 1e-10 * scale:
        raise ShearValidationError("shear data must vanish at z = 0")
    gap = max(abs(state.u[-1] - state.U0), abs(state.v[-1] - state.V0))
    if gap > DECAY_TOL * scale:
        raise ShearValidationError(
            f"shear data has not reached its far-field value at Z_max (gap {gap:.2e}); "
            "enlarge z_max or use decaying data"
        )


@dataclass(frozen=True, eq=False)
class ShearTrajectory:
    """
    Heat-evolved shear sampled at every time step. Read-only after
    construction; the t = 0 state uses the closed-form derivatives.
    """
    grid: Grid1D
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    uz: np.ndarray
    vz: np.ndarray
    pair: ShearPair
    frozen: bool = False

    @property
    def t_end(self):
        return float(self.times[-1])

    def _bracket(self, t):
        if self.frozen or t <= self.times[0]:
            return 0, 0, 0.0
        if t >= self.times[-1]:
            last = self.times.size - 1
            return last, last, 0.0
        i = int(np.searchsorted(self.times, t)) - 1
        theta = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, i + 1, theta

    def _blend(self, arr, t):
        i, j, theta = self._bracket(t)
        return (1.0 - theta) * arr[i] + theta * arr[j]

    def profiles_at(self, t):
        """(u^s, v^s, u_z^s, v_z^s) at time t, linear in time between samples."""
        return (self._blend(self.u, t), self._blend(self.v, t),
                self._blend(self.uz, t), self._blend(self.vz, t))

    def state_at(self, t) -> ShearState:
        if self.frozen or t <= self.times[0]:
            state = self.pair.sample(self.grid)
            state.t = float(t)
            return state
        u, v, _, _ = self.profiles_at(t)
        return ShearState.from_profiles(float(t), u, v, self.pair.U0, self.pair.V0, self.grid)

    def rows(self, every=1):
        """(t, z, u, v) rows for CSV export."""
        for i in range(0, self.times.size, every):
            for z, u, v in zip(self.grid.nodes, self.u[i], self.v[i]):
                yield (float(self.times[i]), float(z), float(u), float(v))


def evolve_shear(pair: ShearPair, grid: Grid1D, t_end, dt=1e-3, frozen=False) -> ShearTrajectory:
    """
    Crank-Nicolson for u_t = u_zz on (0, Z_max) with u(0) = 0 and u(Z_max) = U0,
    solved for the lifted unknown u - U0 g with g = (1 - e^{-z}) / (1 - e^{-Z_max}).
    """
    if t_end < 0 or dt <= 0:
        raise ParameterError(f"need t_end >= 0 and dt > 0, got t_end={t_end}, dt={dt}")
    initial = pair.sample(grid)
    check_decay(initial)

    steps = max(1, math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    dt = t_end / steps if steps else dt
    times = np.linspace(0.0, t_end, steps + 1)
    if frozen:
        reps = (times.size, 1)
        return ShearTrajectory(grid, times, np.tile(initial.u, reps), np.tile(initial.v, reps),
                               np.tile(initial.u_derivs[1], reps), np.tile(initial.v_derivs[1], reps),
                               pair, frozen=True)

    z = grid.nodes
    denom = 1.0 - math.exp(-grid.z_max)
    lift = (1.0 - np.exp(-z)) / denom
    lift_zz = -np.exp(-z) / denom
    far = np.array([initial.U0, initial.V0])

    lap = laplacian_matrix(grid)
    eye = sp.identity(lap.shape[0], format="csc")
    solver = splu((eye - 0.5 * dt * lap).tocsc())
    explicit = (eye + 0.5 * dt * lap).tocsr()

    out = np.empty((2, times.size, grid.N))
    out[:, 0] = [initial.u, initial.v]
    state = np.stack([initial.u, initial.v]) - far[:, None] * lift[None, :]
    interior = state[:, 1:-1].T.copy()
    forcing = dt * np.outer(lift_zz[1:-1], far)
    for n in range(1, times.size):
        interior = solver.solve(explicit @ interior + forcing)
        full = np.zeros((2, grid.N))
        full[:, 1:-1] = interior.T
        out[:, n] = full + far[:, None] * lift[None, :]
    logger.debug("heat evolution to t=%.3g in %d steps on %d nodes", t_end, steps, grid.N)

    u, v = out
    uz = diff(grid, u, 1)
    vz = diff(grid, v, 1)
    uz[0], vz[0] = initial.u_derivs[1], initial.v_derivs[1]
    for arr in (u, v, uz, vz):
        arr.flags.writeable = False
    return ShearTrajectory(grid, times, u, v, uz, vz, pair)


def heat_evolve(pair: ShearPair, t, grid: Grid1D, dt=1e-3) -> ShearState:
    """Shear state at time t."""
    if t == 0:
        state = pair.sample(grid)
        check_decay(state)
        return state
    return evolve_shear(pair, grid, t, dt).state_at(t)


# ---------------------------------------------------------------------------
# Critical points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalPoint:
    z0: float
    l: int
    q: int
    wpp: float
    usp: float
    uspp: float
    vsp: float
    vspp: float

    @property
    def a(self) -> float:
        return self.l / self.q

    def as_dict(self):
        return {"z0": self.z0, "a": self.a, "l": self.l, "q": self.q, "wpp": self.wpp,
                "usp": self.usp, "uspp": self.uspp, "vsp": self.vsp, "vspp": self.vspp}


def simplest_rational(lo, hi, q_max, target):
    """
    Rational of smallest denominator in [lo, hi] (Stern-Brocot descent),
    or None when it needs a denominator above q_max. Among several integers
    the one closest to target wins.
    """
    lo, hi = Fraction(lo), Fraction(hi)
    first, last = math.ceil(lo), math.floor(hi)
    if first <= last:
        return Fraction(min(max(int(round(float(target))), first), last))
    # lo and hi share the integer part; descend on the reciprocal of the rest
    whole = math.floor(lo)
    left, right = (0, 1), (1, 0)
    lo_frac, hi_frac = lo - whole, hi - whole
    while True:
        num, den = left[0] + right[0], left[1] + right[1]
        if den > q_max:
            return None
        mediant = Fraction(num, den)
        if mediant < lo_frac:
            left = (num, den)
        elif mediant > hi_frac:
            right = (num, den)
        else:
            return whole + mediant


def _runs(mask):
    """Maximal runs of True as (start, stop) index pairs."""
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[::2], edges[1::2]))


def _slope_function(state, a):
    """z -> (V' - a U', V'' - a U'', U', U'', V', V'') near a point."""
    if state.pair is not None and state.t == 0:
        pair = state.pair

        def evaluate(z, j):
            return float(pair.v.derivative(z, j) - a * pair.u.derivative(z, j))

        def component(which, z, j):
            return float(getattr(pair, which).derivative(z, j))
    else:
        grid = state.grid
        splines = {
            "u": CubicSpline(grid.nodes, state.u_derivs[1]),
            "v": CubicSpline(grid.nodes, state.v_derivs[1]),
        }

        def component(which, z, j):
            return float(splines[which](z, j - 1))

        def evaluate(z, j):
            return component("v", z, j) - a * component("u", z, j)
    return evaluate, component


def find_critical_points(state: ShearState, q_max=64, tol_nondeg_rel=1e-3, mask_rel=1e-3):
    """
    Non-degenerate critical points z0 of V_s - a U_s with a = l/q rational,
    sorted by |w''(z0)| descending.
    """
    U1, U2 = state.u_derivs[1], state.u_derivs[2]
    V1, V2 = state.v_derivs[1], state.v_derivs[2]
    scale = np.max(np.abs(U1))
    if scale == 0:
        logger.warning("U_s' vanishes identically; no critical points")
        return []
    live = np.abs(U1) >= mask_rel * scale
    ratio = np.divide(V1, U1, out=np.zeros_like(V1), where=live)
    curvature = np.abs(V2 - ratio * U2)
    tol = tol_nondeg_rel * (np.max(np.abs(U2)) + np.max(np.abs(V2)))
    valid = live & (curvature >= tol)

    points = []
    for start, stop in _runs(valid):
        if stop - start < 3:
            continue
        seg = slice(start, stop)
        peak = start + int(np.argmax(curvature[seg]))
        core = curvature >= 0.9 * curvature[peak]
        c0, c1 = peak, peak + 1
        while c0 > start and core[c0 - 1]:
            c0 -= 1
        while c1 < stop and core[c1]:
            c1 += 1
        target = ratio[(c0 + c1 - 1) // 2]
        lo, hi = np.min(ratio[c0:c1]), np.max(ratio[c0:c1])
        frac = simplest_rational(lo, hi, q_max, target)
        if frac is None:
            frac = Fraction(float(target)).limit_denominator(q_max)
        a = frac.numerator / frac.denominator

        gap = V1[seg] - a * U1[seg]
        flips = np.flatnonzero(np.sign(gap[:-1]) * np.sign(gap[1:]) <= 0)
        if flips.size == 0:
            logger.warning("ratio %s is not attained on [%.3f, %.3f]; candidate skipped",
                           frac, state.grid.nodes[start], state.grid.nodes[stop - 1])
            continue
        evaluate, component = _slope_function(state, a)
        i = start + int(flips[np.argmin(np.abs(start + flips - (c0 + c1 - 1) // 2))])
        za, zb = state.grid.nodes[i], state.grid.nodes[min(i + 1, state.grid.N - 1)]
        fa, fb = evaluate(za, 1), evaluate(zb, 1)
        z0 = za if fa == 0 else zb if fb == 0 else brentq(lambda z: evaluate(z, 1), za, zb, xtol=1e-15)

        usp = component("u", z0, 1)
        if abs(usp) < mask_rel * scale:
            logger.warning("U_s'(z0) vanishes near z=%.4f; candidate skipped", z0)
            continue
        w2 = np.max(np.abs(state.v_derivs[2] - a * state.u_derivs[2]))
        wpp = evaluate(z0, 2)
        if abs(wpp) < tol_nondeg_rel * w2:
            logger.warning("degenerate critical point at z=%.4f (w''=%.2e); skipped", z0, wpp)
            continue
        points.append(CriticalPoint(
            z0=float(z0), l=frac.numerator, q=frac.denominator, wpp=float(wpp),
            usp=usp, uspp=component("u", z0, 2), vsp=component("v", z0, 1), vspp=component("v", z0, 2),
        ))
    points.sort(key=lambda p: -abs(p.wpp))
    logger.info("found %d critical point(s)", len(points))
    return points


@dataclass(frozen=True, eq=False)
class CriticalTrajectory:
    """
    f(t) with the background values along it. ``f_ode`` is the
    independently integrated track; ``t0`` is the first degenerate time
    (or the end of the shear trajectory).
    """
    times: np.ndarray
    f: np.ndarray
    wpp_t: np.ndarray
    w_t: np.ndarray
    uz_f: np.ndarray
    uzz_f: np.ndarray
    vz_f: np.ndarray
    vzz_f: np.ndarray
    f_ode: np.ndarray
    degenerate: bool
    t0: float
    grad_residual: float
    ratio_drift: float

    @property
    def method_gap(self) -> float:
        return float(np.max(np.abs(self.f - self.f_ode))) if self.f.size else 0.0

    def at(self, t):
        """Track quantities at time t, linearly interpolated."""
        def lerp(arr):
            return float(np.interp(t, self.times, arr))
        return {
            "f": lerp(self.f), "wpp": lerp(self.wpp_t), "w": lerp(self.w_t),
            "uz": lerp(self.uz_f), "uzz": lerp(self.uzz_f), "vz": lerp(self.vz_f), "vzz": lerp(self.vzz_f),
        }

    def summary(self):
        return {"t0": self.t0, "degenerate": self.degenerate, "f_end": float(self.f[-1]),
                "method_gap": self.method_gap, "grad_residual": self.grad_residual,
                "ratio_drift": self.ratio_drift}


def track_critical_point(traj: ShearTrajectory, start: CriticalPoint, tol_nondeg_rel=1e-3, tol_grad_rel=1e-8,
                         t_end=None) -> CriticalTrajectory:
    """
    Follow the critical point of w_a^s(t, .) by Newton at every stored time
    and, independently, by integrating f' = -d_z^3 w / d_z^2 w.
    """
    grid = traj.grid
    a = start.a
    w_nodes = traj.v - a * traj.u
    wz_nodes = traj.vz - a * traj.uz
    tol_nondeg = tol_nondeg_rel * float(np.max(np.abs(diff(grid, w_nodes[0], 2))))
    tol_grad = tol_grad_rel * float(np.max(np.abs(wz_nodes[0])))
    if abs(start.wpp) < tol_nondeg:
        raise DegeneracyError(f"|w''(z0)| = {abs(start.wpp):.2e} is below the non-degeneracy threshold")
    horizon = traj.t_end if t_end is None else min(t_end, traj.t_end)
    last = int(np.searchsorted(traj.times, horizon, side="right"))

    def local(profile, z, m):
        return float(local_derivative(grid, profile, z, m))

    f = [start.z0]
    wpp = [start.wpp]
    degenerate = False
    for i in range(1, last):
        prof = w_nodes[i]
        try:
            z = newton(lambda s: local(prof, s, 1), f[-1], fprime=lambda s: local(prof, s, 2),
                       tol=1e-13, maxiter=50)
        except RuntimeError as exc:
            raise IterationError(f"critical point tracking failed at t={traj.times[i]:.4g}") from exc
        curv = local(prof, z, 2)
        if abs(curv) < tol_nondeg or np.sign(curv) != np.sign(start.wpp):
            degenerate = True
            logger.warning("critical point degenerates at t=%.4g", traj.times[i])
            break
        f.append(z)
        wpp.append(curv)
    f = np.array(f)
    times = traj.times[:f.size]

    def rhs(t, y):
        prof = traj._blend(w_nodes, t)
        return [-local(prof, y[0], 3) / local(prof, y[0], 2)]

    if times.size > 1:
        sol = solve_ivp(rhs, (0.0, times[-1]), [start.z0], t_eval=times, rtol=1e-9, atol=1e-12,
                        max_step=float(times[1] - times[0]))
        f_ode = sol.y[0] if sol.success and sol.y.shape[1] == times.size else np.full(times.size, np.nan)
    else:
        f_ode = f.copy()

    samples = {key: [] for key in ("w", "uz", "uzz", "vz", "vzz", "grad", "ratio")}
    for i, z in enumerate(f):
        samples["w"].append(local(w_nodes[i], z, 0))
        samples["uz"].append(local(traj.u[i], z, 1))
        samples["uzz"].append(local(traj.u[i], z, 2))
        samples["vz"].append(local(traj.v[i], z, 1))
        samples["vzz"].append(local(traj.v[i], z, 2))
        samples["grad"].append(abs(local(w_nodes[i], z, 1)))
        samples["ratio"].append(samples["vz"][-1] / samples["uz"][-1])
    # t = 0 values are exact
    samples["uz"][0], samples["uzz"][0] = start.usp, start.uspp
    samples["vz"][0], samples["vzz"][0] = start.vsp, start.vspp
    samples["grad"][0] = 0.0
    samples["ratio"][0] = start.vsp / start.usp
    grad_residual = max(samples["grad"])
    if grad_residual > max(tol_grad, 1e-10):
        logger.warning("critical point gradient residual %.2e exceeds tolerance %.2e", grad_residual, tol_grad)

    t0 = float(times[-1])
    logger.info("tracked critical point to t=%.4g (degenerate=%s)", t0, degenerate)
    return CriticalTrajectory(
        times=times, f=f, wpp_t=np.array(wpp), w_t=np.array(samples["w"]),
        uz_f=np.array(samples["uz"]), uzz_f=np.array(samples["uzz"]),
        vz_f=np.array(samples["vz"]), vzz_f=np.array(samples["vzz"]),
        f_ode=np.asarray(f_ode), degenerate=degenerate, t0=t0,
        grad_residual=float(grad_residual),
        ratio_drift=float(np.max(np.abs(np.array(samples["ratio"]) - samples["ratio"][0]))),
    )

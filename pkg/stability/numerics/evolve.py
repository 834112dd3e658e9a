"""
Linearized 3D Prandtl equations for one tangential Fourier mode e^{i(k1 x + k2 y)}:

    u_t + i(k1 u^s + k2 v^s) u + w u^s_z = u_zz
    v_t + i(k1 u^s + k2 v^s) v + w v^s_z = v_zz
    w = -int_0^z (i k1 u + i k2 v)

with u = v = 0 at z = 0 and decay at Z_max, plus growth measurement and the
k-sweep behind the unbounded-growth law.
"""
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.sparse import identity
from scipy.sparse.linalg import splu
from tqdm import tqdm

from ..exceptions import DivergenceError, FittingError, LabError, ParameterError, ShapeError
from .grid import Grid1D, WeightedNorm, cumint, diff, laplacian_matrix, weighted_hm, weighted_l2
from .modes import build_mode, predicted_sigma0

logger = logging.getLogger(__name__)

MAX_SAMPLES = 400
MIN_FIT_SAMPLES = 10
MIN_R2 = 0.98
DEFAULT_WINDOW = (0.2, 0.8)


@dataclass(frozen=True, eq=False)
class FourierMode:
    """(u_hat, v_hat)(z) of one tangential mode; w_hat follows from the divergence constraint."""
    k1: int
    k2: int
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=complex)
        v = np.asarray(self.v, dtype=complex)
        if u.ndim != 1 or u.shape != v.shape:
            raise ShapeError(f"mode profiles must be equal-length vectors, got {u.shape} and {v.shape}")
        scale = max(float(np.max(np.abs(u))), float(np.max(np.abs(v))), 1.0)
        if abs(u[0]) > 1e-12 * scale or abs(v[0]) > 1e-12 * scale:
            raise ParameterError("mode profiles must vanish at z = 0")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    def w(self, grid: Grid1D):
        return divergence_w(grid, self.k1, self.k2, self.u, self.v)

    def scaled(self, factor):
        return FourierMode(self.k1, self.k2, factor * self.u, factor * self.v, self.t)

    def conjugate(self):
        return FourierMode(-self.k1, -self.k2, np.conj(self.u), np.conj(self.v), self.t)


def divergence_w(grid, k1, k2, u, v):
    return -cumint(grid, 1j * k1 * u + 1j * k2 * v)


class CrankNicolson:
    """
    Trapezoidal step for the diffusion part of X_t = X_zz + E with X(Z_max) = 0
    and either X(0) = 0 or X_z(0) = 0. Rows of X are independent profiles.
    """

    def __init__(self, grid: Grid1D, dt, neumann=False):
        lap = laplacian_matrix(grid, neumann)
        eye = identity(lap.shape[0], format="csc")
        self.unknown = slice(0 if neumann else 1, grid.N - 1)
        self.lap = lap.tocsr()
        self.explicit = (eye + 0.5 * dt * lap).tocsr()
        self.lu = splu((eye - 0.5 * dt * lap).astype(complex).tocsc())

    def step(self, X, forcing):
        """X^{n+1} from X^n and dt times the explicit right-hand side."""
        inner = X[:, self.unknown].T
        rhs = self.explicit @ inner + forcing[:, self.unknown].T
        out = np.zeros_like(X)
        out[:, self.unknown] = self.lu.solve(rhs).T
        return out

    def laplacian(self, X):
        out = np.zeros_like(X)
        out[:, self.unknown] = (self.lap @ X[:, self.unknown].T).T
        return out


def heun_cn(stepper: CrankNicolson, X, rhs, t, dt):
    """Heun predictor-corrector on the explicit part, Crank-Nicolson on diffusion."""
    E0 = rhs(t, X)
    predicted = stepper.step(X, dt * E0)
    E1 = rhs(t + dt, predicted)
    return stepper.step(X, 0.5 * dt * (E0 + E1))


def stable_dt(grid: Grid1D, k1, k2, speed):
    """Largest step allowed for wavenumber (k1, k2) under background speed max(|u^s|, |v^s|)."""
    return min(0.5 * grid.dz_min ** 2, 0.1 / (np.hypot(k1, k2) * speed + 1.0))


def sample_every(steps, samples):
    return max(1, int(np.ceil(steps / max(samples, 1))))


class Background:
    """(u^s, v^s, u^s_z, v^s_z) at time t, or frozen at the initial data."""

    def __init__(self, shear, frozen=False):
        self.shear = shear
        self.frozen = frozen
        self._initial = shear.profiles_at(0.0)

    def __call__(self, t):
        return self._initial if self.frozen else self.shear.profiles_at(t)

    @property
    def speed(self):
        u, v, _, _ = self._initial
        return float(max(np.max(np.abs(u)), np.max(np.abs(v)),
                         np.max(np.abs(self.shear.u)), np.max(np.abs(self.shear.v))))


def linear_rhs(grid, k1, k2, background, t, X):
    """
    Explicit part for a stack X = [u rows..., v rows...] of modes with
    wavenumbers k1, k2 (scalars or one value per row pair).
    """
    us, vs, uzs, vzs = background(t)
    half = X.shape[0] // 2
    u, v = X[:half], X[half:]
    k1 = np.reshape(k1, (-1, 1)) if np.ndim(k1) else k1
    k2 = np.reshape(k2, (-1, 1)) if np.ndim(k2) else k2
    w = -cumint(grid, 1j * k1 * u + 1j * k2 * v)
    advect = 1j * (k1 * us + k2 * vs)
    return np.concatenate([-advect * u - w * uzs, -advect * v - w * vzs])


@dataclass(frozen=True, eq=False)
class LinearTrajectory:
    grid: Grid1D
    k1: int
    k2: int
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    frozen: bool = False
    dt: float = 0.0

    def norms(self, norm: WeightedNorm = WeightedNorm()):
        return np.hypot(weighted_l2(self.grid, self.u, norm), weighted_l2(self.grid, self.v, norm))

    def mode(self, i=-1) -> FourierMode:
        return FourierMode(self.k1, self.k2, self.u[i], self.v[i], float(self.times[i]))

    def w(self):
        return divergence_w(self.grid, self.k1, self.k2, self.u, self.v)

    def rows(self, norm: WeightedNorm = WeightedNorm()):
        """(t, norm, d/dt log norm) rows for CSV export."""
        norms = self.norms(norm)
        logs = np.log(np.maximum(norms, np.finfo(float).tiny))
        slope = np.gradient(logs, self.times) if self.times.size > 1 else np.zeros(1)
        for row in zip(self.times, norms, slope):
            yield tuple(float(x) for x in row)


def evolve_linear(mode0: FourierMode, shear, T, dt=None, frozen=False, samples=MAX_SAMPLES) -> LinearTrajectory:
    """
    Advance one Fourier mode of the linearized equations to time T.
    ``frozen`` holds the background at its initial data.
    """
    grid = shear.grid
    if mode0.u.size != grid.N:
        raise ShapeError(f"mode has {mode0.u.size} nodes, grid has {grid.N}")
    if T <= 0:
        raise ParameterError(f"T must be positive, got {T}")
    if not frozen and T > shear.t_end + 1e-12:
        raise ParameterError(f"shear trajectory ends at t={shear.t_end}, before T={T}")
    background = Background(shear, frozen)
    bound = stable_dt(grid, mode0.k1, mode0.k2, background.speed)
    if dt is None:
        dt = bound
    elif dt > bound * (1 + 1e-12):
        raise ParameterError(f"dt={dt:.3g} violates the step bound {bound:.3g} for k=({mode0.k1}, {mode0.k2})")
    steps = int(np.ceil(T / dt - 1e-9))
    dt = T / steps
    every = sample_every(steps, samples)

    stepper = CrankNicolson(grid, dt)
    X = np.stack([mode0.u, mode0.v]).astype(complex)

    def rhs(t, state):
        return linear_rhs(grid, mode0.k1, mode0.k2, background, t, state)

    times, us, vs = [0.0], [X[0].copy()], [X[1].copy()]
    t = 0.0
    for n in range(1, steps + 1):
        X_new = heun_cn(stepper, X, rhs, t, dt)
        t = n * dt
        if not np.all(np.isfinite(X_new)):
            last = FourierMode(mode0.k1, mode0.k2, X[0], X[1], t - dt)
            raise DivergenceError(f"non-finite values at t={t:.4g}", last_state=last, time=t - dt)
        X = X_new
        if n % every == 0 or n == steps:
            times.append(t)
            us.append(X[0].copy())
            vs.append(X[1].copy())
    logger.debug("linear evolution k=(%d, %d) to T=%.3g in %d steps", mode0.k1, mode0.k2, T, steps)
    return LinearTrajectory(grid, mode0.k1, mode0.k2, np.array(times), np.array(us), np.array(vs), frozen, dt)


def measure_growth(traj, norm: WeightedNorm = WeightedNorm(), window=DEFAULT_WINDOW):
    """Least-squares slope of log ||(u, v)(t)||_{L^2_alpha} over the window (fractions of the horizon)."""
    t = traj.times
    lo, hi = window[0] * t[-1], window[1] * t[-1]
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if np.count_nonzero(sel) < MIN_FIT_SAMPLES:
        raise FittingError(f"only {np.count_nonzero(sel)} samples in the window, need {MIN_FIT_SAMPLES}")
    norms = traj.norms(norm)[sel]
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise FittingError("norm vanished or is not finite inside the fit window")
    fit = stats.linregress(t[sel], np.log(norms))
    if not np.isfinite(fit.slope):
        raise FittingError("degenerate growth fit")
    return float(fit.slope), float(fit.rvalue ** 2)


def energy_balance(traj: LinearTrajectory):
    """
    For k1 = k2 = 0: largest mismatch between d/dt ||(u, v)||^2 and
    -2 ||(u_z, v_z)||^2 at interior samples, relative to the dissipation.
    """
    energy = traj.norms() ** 2
    dissipation = 2.0 * (weighted_l2(traj.grid, diff(traj.grid, traj.u, 1)) ** 2
                         + weighted_l2(traj.grid, diff(traj.grid, traj.v, 1)) ** 2)
    rate = np.gradient(energy, traj.times)
    gap = np.abs(rate + dissipation)[1:-1]
    return float(np.max(gap / np.maximum(dissipation[1:-1], 1e-300)))


# ---------------------------------------------------------------------------
# Sweep over k
# ---------------------------------------------------------------------------

class ModeSeeds:
    """ApproxMode slice at t = 0 with (k1, k2) = (-l k, q k)."""

    def __init__(self, shear, cp, pair, traj=None, phi_radius=None):
        self.shear, self.cp, self.pair, self.traj, self.phi_radius = shear, cp, pair, traj, phi_radius

    def __call__(self, k) -> FourierMode:
        mode = build_mode(self.shear, self.cp, self.pair, k, traj=self.traj, times=[0.0],
                          phi_radius=self.phi_radius)
        u, v = mode.slice(0)
        u[0] = v[0] = 0.0
        return FourierMode(mode.k1, mode.k2, u, v)


class StructuredSeeds:
    """Proportional seed (g, c g), g = z e^{-z}, on the phase (-l k, q k) with l/q close to c."""

    def __init__(self, grid, l, q, c):
        self.grid, self.l, self.q, self.c = grid, l, q, c

    def __call__(self, k) -> FourierMode:
        z = self.grid.nodes
        g = z * np.exp(-z)
        g[0] = g[-1] = 0.0
        return FourierMode(-self.l * k, self.q * k, g.astype(complex), (self.c * g).astype(complex))


@dataclass
class GrowthEntry:
    k: int
    k1: int = 0
    k2: int = 0
    sigma: float = float("nan")
    r2: float = float("nan")
    fitted: bool = False
    window: tuple = DEFAULT_WINDOW
    resolution: dict = field(default_factory=dict)
    predicted: float | None = None
    witnesses: dict = field(default_factory=dict)
    frozen_sigma: float | None = None
    error: dict | None = None

    def as_dict(self):
        return {
            "k": self.k, "k1": self.k1, "k2": self.k2, "sigma": self.sigma, "r2": self.r2,
            "fitted": self.fitted, "window": list(self.window), "resolution": self.resolution,
            "predicted": self.predicted, "witnesses": self.witnesses, "frozen_sigma": self.frozen_sigma,
            "error": self.error,
        }


@dataclass
class GrowthReport:
    entries: list
    fit: dict
    prediction: dict
    flag: str

    @property
    def sigmas(self):
        return [e.sigma for e in self.entries if e.fitted]

    def as_dict(self):
        return {"entries": [e.as_dict() for e in self.entries], "fit": self.fit,
                "prediction": self.prediction, "flag": self.flag}


def _run_entry(seeds, shear, k, T, dt, window, norm, witness_m, frozen_too):
    entry = GrowthEntry(k=int(k), window=tuple(window))
    try:
        seed = seeds(k)
        entry.k1, entry.k2 = seed.k1, seed.k2
        traj = evolve_linear(seed, shear, T, dt)
        entry.resolution = {"N": shear.grid.N, "dz_min": shear.grid.dz_min, "dt": traj.dt}
        entry.sigma, entry.r2 = measure_growth(traj, norm, window)
        entry.fitted = entry.r2 >= MIN_R2
        final = traj.norms(norm)[-1]
        for m in witness_m:
            seed_norm = np.hypot(weighted_hm(shear.grid, seed.u, norm.alpha, m),
                                 weighted_hm(shear.grid, seed.v, norm.alpha, m))
            tangential = (1.0 + seed.k1 ** 2 + seed.k2 ** 2) ** (m / 2.0)
            entry.witnesses[str(m)] = float(final / (seed_norm * tangential))
        if frozen_too:
            entry.frozen_sigma, _ = measure_growth(evolve_linear(seed, shear, T, dt, frozen=True), norm, window)
    except LabError as exc:
        logger.warning("sweep entry k=%d failed: %s", k, exc)
        entry.error = exc.as_dict()
    return entry


def fit_power_law(ks, sigmas):
    """sigma(k) = c k^p by least squares on log |sigma| against log k, with a 95% interval on p."""
    ks, sigmas = np.asarray(ks, float), np.abs(np.asarray(sigmas, float))
    ok = (sigmas > 0) & np.isfinite(sigmas)
    n = int(np.count_nonzero(ok))
    if n < 3:
        raise FittingError(f"need at least three fitted rates, got {n}")
    fit = stats.linregress(np.log(ks[ok]), np.log(sigmas[ok]))
    half = float(stats.t.ppf(0.975, max(n - 2, 1)) * fit.stderr)
    return {"p": float(fit.slope), "c": float(np.exp(fit.intercept)),
            "ci": [float(fit.slope - half), float(fit.slope + half)], "n": n, "wide_ci": n < 4}


def sweep(shear, cp, ks, seeds, T, dt=None, window=DEFAULT_WINDOW, norm: WeightedNorm = WeightedNorm(),
          witness_m=(0, 1, 2), workers=1, tau_t=None, frozen_too=False, progress=False) -> GrowthReport:
    """
    Evolve one seed per k, measure its growth rate, and fit sigma(k) = c k^p.
    Per-k failures are recorded and the sweep continues.
    """
    ks = sorted(int(k) for k in ks)
    if len(ks) < 3:
        raise ParameterError(f"need at least three wavenumbers, got {ks}")
    if len(ks) < 4:
        logger.warning("sweep over %d wavenumbers; the exponent interval will be wide", len(ks))
    args = (T, dt, window, norm, tuple(witness_m), frozen_too)
    entries = []
    if workers <= 1:
        for k in tqdm(ks, desc="sweep", disable=not progress):
            entries.append(_run_entry(seeds, shear, k, *args))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_entry, seeds, shear, k, *args) for k in ks]
            for future in tqdm(as_completed(futures), total=len(futures), desc="sweep", disable=not progress):
                entries.append(future.result())
    entries.sort(key=lambda e: e.k)

    prediction = {}
    if cp is not None and tau_t is not None:
        sigma0 = predicted_sigma0(tau_t, cp.wpp)
        prediction = {"sigma0": float(sigma0), "c": float(sigma0 * np.sqrt(cp.q)), "p": 0.5}
        for e in entries:
            e.predicted = float(sigma0 * np.sqrt(cp.q * e.k))

    fitted = [e for e in entries if e.fitted]
    try:
        fit = fit_power_law([e.k for e in fitted], [e.sigma for e in fitted])
        sig = np.array([e.sigma for e in fitted])
        fit["ratio"] = float(np.max(np.abs(sig)) / np.min(np.abs(sig)))
    except FittingError as exc:
        fit = {"error": exc.as_dict()}
    unstable = bool(fitted) and all(e.sigma > 0 for e in fitted) and fit.get("p", 0.0) > 0.25
    flag = "unstable" if unstable else "stable"
    logger.info("sweep over k=%s: p=%s flag=%s", ks, fit.get("p"), flag)
    return GrowthReport(entries=entries, fit=fit, prediction=prediction, flag=flag)

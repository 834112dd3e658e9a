"""
Desk-scale nonlinear 3D Prandtl solver for perturbations of the shear flow.

(x, y) lives on the 2 pi torus, resolved pseudo-spectrally with at most
16 x 16 modes and 2/3 dealiasing; z is discretized by finite differences on
the shear grid. The perturbation (p, q) = (u - u^s, v - v^s) obeys

    p_t + u^s p_x + v^s p_y + w u^s_z - p_zz = -(p p_x + q p_y + w p_z)

(and likewise for q), w = -int_0^z (p_x + q_y). The linear part is the same
per-mode right-hand side as the linear solver.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..exceptions import DivergenceError, FittingError, ParameterError
from .evolve import Background, CrankNicolson, heun_cn, linear_rhs, sample_every, stable_dt
from .grid import Grid1D, WeightedNorm, cumint, diff, weighted_hm, weighted_l2

logger = logging.getLogger(__name__)

MAX_MODES = 16
STORED_SAMPLES = 20


def wavenumbers(M):
    k = np.fft.fftfreq(M, d=1.0 / M)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    return k1, k2


def dealias_mask(M):
    """2/3 rule on the integer wavenumbers of an M x M torus grid."""
    k1, k2 = wavenumbers(M)
    kmax = M // 2
    return (np.abs(k1) < (2.0 / 3.0) * kmax) & (np.abs(k2) < (2.0 / 3.0) * kmax)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Tangential Fourier coefficients (numpy fft2 convention) of (p, q) on (M, M, N)."""
    M: int
    p_hat: np.ndarray
    q_hat: np.ndarray
    t: float = 0.0

    def physical(self):
        return (np.fft.ifft2(self.p_hat, axes=(0, 1)).real,
                np.fft.ifft2(self.q_hat, axes=(0, 1)).real)

    def scaled(self, factor):
        return SpectralField(self.M, factor * self.p_hat, factor * self.q_hat, self.t)

    @classmethod
    def from_physical(cls, p, q, t=0.0):
        return cls(p.shape[0], np.fft.fft2(p, axes=(0, 1)), np.fft.fft2(q, axes=(0, 1)), t)


def low_mode_seed(grid: Grid1D, M, seed=0, kmax=2, ratio=None) -> SpectralField:
    """
    Real perturbation sum_k a_k cos(k1 x + k2 y + theta_k) g(z), g = z e^{-z},
    over |k1|, |k2| <= kmax with random a_k, theta_k; q = ratio * p when ratio is given.
    """
    if not 2 <= M <= MAX_MODES:
        raise ParameterError(f"tangential resolution must be between 2 and {MAX_MODES}, got {M}")
    rng = np.random.default_rng(seed)
    x = 2.0 * np.pi * np.arange(M) / M
    X, Y = np.meshgrid(x, x, indexing="ij")
    z = grid.nodes
    g = z * np.exp(-z)
    g[-1] = 0.0

    def field():
        out = np.zeros((M, M, grid.N))
        for k1 in range(-kmax, kmax + 1):
            for k2 in range(0, kmax + 1):
                if k2 == 0 and k1 <= 0:
                    continue
                amp, theta = rng.normal(), rng.uniform(0.0, 2.0 * np.pi)
                out += amp * np.cos(k1 * X + k2 * Y + theta)[:, :, None] * g[None, None, :]
        return out

    p = field()
    q = ratio * p if ratio is not None else field()
    return SpectralField.from_physical(p, q)


class _Layout:
    """Flattened rows [p modes..., q modes...] with per-row wavenumbers."""

    def __init__(self, grid, M):
        self.grid, self.M = grid, M
        k1, k2 = wavenumbers(M)
        self.k1, self.k2 = k1.ravel(), k2.ravel()
        self.mask = dealias_mask(M)
        self.modes = M * M

    def pack(self, field: SpectralField):
        return np.concatenate([field.p_hat.reshape(self.modes, -1), field.q_hat.reshape(self.modes, -1)])

    def unpack(self, X, t=0.0):
        shape = (self.M, self.M, self.grid.N)
        return SpectralField(self.M, X[:self.modes].reshape(shape).copy(), X[self.modes:].reshape(shape).copy(), t)

    def nonlinear(self, X):
        """Dealiased -(p p_x + q p_y + w p_z) and its q counterpart, as packed rows."""
        shape = (self.M, self.M, self.grid.N)
        p_hat, q_hat = X[:self.modes].reshape(shape), X[self.modes:].reshape(shape)
        k1, k2 = wavenumbers(self.M)
        k1, k2 = k1[:, :, None], k2[:, :, None]

        def real(a):
            return np.fft.ifft2(a, axes=(0, 1)).real

        p, q = real(p_hat), real(q_hat)
        w = real(-cumint(self.grid, 1j * k1 * p_hat + 1j * k2 * q_hat))
        out = []
        for f_hat, f in ((p_hat, p), (q_hat, q)):
            f_x, f_y = real(1j * k1 * f_hat), real(1j * k2 * f_hat)
            f_z = diff(self.grid, f, 1)
            term = np.fft.fft2(-(p * f_x + q * f_y + w * f_z), axes=(0, 1)) * self.mask[:, :, None]
            out.append(term.reshape(self.modes, -1))
        return np.concatenate(out)

    def energy(self, X, norm=WeightedNorm()):
        """Squared L^2 norm over the torus times (0, Z_max), by Parseval."""
        per_row = weighted_l2(self.grid, X, norm) ** 2
        return float((2.0 * np.pi) ** 2 / self.M ** 4 * np.sum(per_row))

    def h1_energy(self, X):
        kk = np.concatenate([self.k1 ** 2 + self.k2 ** 2] * 2)
        per_row = (1.0 + kk) * weighted_l2(self.grid, X) ** 2 + weighted_l2(self.grid, diff(self.grid, X, 1)) ** 2
        return float((2.0 * np.pi) ** 2 / self.M ** 4 * np.sum(per_row))

    def hm_norm(self, X, m, alpha):
        kk = np.concatenate([self.k1 ** 2 + self.k2 ** 2] * 2)
        per_row = (1.0 + kk) ** m * weighted_hm(self.grid, X, alpha, m) ** 2
        return float(np.sqrt((2.0 * np.pi) ** 2 / self.M ** 4 * np.sum(per_row)))


@dataclass(frozen=True, eq=False)
class NonlinearTrajectory:
    grid: Grid1D
    M: int
    delta: float
    times: np.ndarray
    energies: np.ndarray
    samples: list
    quotient: float | None
    beta_hat: float | None
    dt: float
    linear: bool = False

    def rescaled(self):
        """(u_delta - u^s) / delta at the stored samples."""
        if self.delta == 0:
            return [field.scaled(0.0) for field in self.samples]
        return [field.scaled(1.0 / self.delta) for field in self.samples]

    def rows(self):
        for t, e in zip(self.times, self.energies):
            yield float(t), float(np.sqrt(e))

    def summary(self):
        return {"delta": self.delta, "M": self.M, "dt": self.dt, "quotient": self.quotient,
                "beta_hat": self.beta_hat, "final_norm": float(np.sqrt(self.energies[-1]))}


def tangential_decay(field: SpectralField):
    """beta_hat from log max_z |p_hat_k| ~ -beta |k| over the resolved nonzero modes."""
    k1, k2 = wavenumbers(field.M)
    amp = np.max(np.abs(field.p_hat), axis=-1)
    kabs = np.hypot(k1, k2)
    ok = (kabs > 0) & dealias_mask(field.M) & (amp > 1e-14 * max(amp.max(), 1e-300))
    if np.count_nonzero(ok) < 3 or np.unique(kabs[ok]).size < 2:
        raise FittingError("not enough resolved modes for the tangential decay fit")
    fit = stats.linregress(kabs[ok], np.log(amp[ok]))
    return float(-fit.slope)


def evolve_nonlinear(state: SpectralField, shear, delta, T, dt=None, linear=False, m=1,
                     norm: WeightedNorm = WeightedNorm(), samples=STORED_SAMPLES) -> NonlinearTrajectory:
    """
    Evolve the perturbation delta * state. ``linear`` drops the nonlinear
    terms, which reproduces the per-mode linear solver on every mode.
    """
    grid = shear.grid
    M = state.M
    if not 2 <= M <= MAX_MODES:
        raise ParameterError(f"tangential resolution must be between 2 and {MAX_MODES}, got {M}")
    if state.p_hat.shape != (M, M, grid.N):
        raise ParameterError(f"state shape {state.p_hat.shape} does not match ({M}, {M}, {grid.N})")
    if T <= 0 or T > shear.t_end + 1e-12:
        raise ParameterError(f"T={T} must lie in (0, {shear.t_end}]")
    layout = _Layout(grid, M)
    background = Background(shear)
    p0, q0 = state.physical()
    amplitude = 0.0 if linear else abs(delta) * float(max(np.max(np.abs(p0)), np.max(np.abs(q0))))
    bound = stable_dt(grid, M // 2, M // 2, background.speed + amplitude)
    if dt is None:
        dt = bound
    elif dt > bound * (1 + 1e-12):
        raise ParameterError(f"dt={dt:.3g} violates the step bound {bound:.3g}")
    steps = int(np.ceil(T / dt - 1e-9))
    dt = T / steps
    every = sample_every(steps, samples)

    stepper = CrankNicolson(grid, dt)
    X = delta * layout.pack(state)
    mask_rows = np.concatenate([layout.mask.ravel()] * 2)[:, None]
    X = X * mask_rows

    def rhs(t, Y):
        out = linear_rhs(grid, layout.k1, layout.k2, background, t, Y)
        if not linear:
            out = out + layout.nonlinear(Y)
        return out

    initial_norm = layout.hm_norm(X, m, norm.alpha)
    energies, times = [layout.energy(X, norm)], [0.0]
    stored = [layout.unpack(X, 0.0)]
    sup_l2, h1_integral = np.sqrt(energies[0]), 0.0
    h1_prev = layout.h1_energy(X)
    t = 0.0
    for n in range(1, steps + 1):
        X_new = heun_cn(stepper, X, rhs, t, dt)
        t = n * dt
        if not np.all(np.isfinite(X_new)):
            raise DivergenceError(f"non-finite values at t={t:.4g}", last_state=layout.unpack(X, t - dt), time=t - dt)
        e_old, e_new = layout.energy(X, norm), layout.energy(X_new, norm)
        if e_old > 0 and e_new > 4.0 * e_old:
            raise DivergenceError(f"perturbation norm more than doubled in one step at t={t:.4g}",
                                  last_state=layout.unpack(X, t - dt), time=t - dt)
        X = X_new
        h1_now = layout.h1_energy(X)
        h1_integral += 0.5 * dt * (h1_prev + h1_now)
        h1_prev = h1_now
        sup_l2 = max(sup_l2, np.sqrt(layout.energy(X)))
        if n % every == 0 or n == steps:
            times.append(t)
            energies.append(e_new)
            stored.append(layout.unpack(X, t))

    quotient = (sup_l2 + np.sqrt(h1_integral)) / initial_norm if initial_norm > 0 else None
    try:
        beta_hat = tangential_decay(stored[-1])
    except FittingError as exc:
        logger.debug("tangential decay not fitted: %s", exc)
        beta_hat = None
    logger.debug("nonlinear evolution delta=%.3g M=%d to T=%.3g in %d steps", delta, M, T, steps)
    return NonlinearTrajectory(grid, M, float(delta), np.array(times), np.array(energies), stored,
                               quotient, beta_hat, dt, linear)


def field_distance(grid, a: SpectralField, b: SpectralField):
    """L^2 distance over the torus times (0, Z_max) between two spectral fields."""
    diff_rows = np.concatenate([(a.p_hat - b.p_hat).reshape(a.M * a.M, -1),
                                (a.q_hat - b.q_hat).reshape(a.M * a.M, -1)])
    return float(np.sqrt((2.0 * np.pi) ** 2 / a.M ** 4 * np.sum(weighted_l2(grid, diff_rows) ** 2)))


def linearization_study(state: SpectralField, shear, deltas, T, dt=None, m=1, norm=WeightedNorm()):
    """
    Distance between (u_delta - u^s)/delta and the linear solution with the
    same initial perturbation, for each delta.
    """
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if any(d <= 0 for d in deltas):
        raise ParameterError("linearization deltas must be positive")
    # the largest delta has the tightest step bound; every run shares its step
    first = evolve_nonlinear(state, shear, deltas[0], T, dt, m=m, norm=norm)
    reference = evolve_nonlinear(state, shear, 1.0, T, first.dt, linear=True, m=m, norm=norm)
    zero = state.scaled(0.0)
    scale = max(field_distance(shear.grid, f, zero) for f in reference.samples)
    runs = []
    for delta in deltas:
        run = first if delta == deltas[0] else evolve_nonlinear(state, shear, delta, T, first.dt, m=m, norm=norm)
        distance = max(field_distance(shear.grid, a, b) for a, b in zip(run.rescaled(), reference.samples))
        runs.append({"delta": delta, "distance": distance / scale, **run.summary()})
    ratios = [runs[i]["distance"] / runs[i + 1]["distance"] if runs[i + 1]["distance"] > 0 else float("inf")
              for i in range(len(runs) - 1)]
    step = [deltas[i] / deltas[i + 1] for i in range(len(deltas) - 1)]
    return {"runs": runs, "ratios": ratios, "delta_ratios": step, "linear": reference.summary()}


def proportional_gap(traj: NonlinearTrajectory, c):
    """Largest |q - c p| relative to max |p| over the stored samples."""
    worst = 0.0
    for field in traj.samples:
        p, q = field.physical()
        scale = max(float(np.max(np.abs(p))), np.finfo(float).tiny)
        worst = max(worst, float(np.max(np.abs(q - c * p))) / scale)
    return worst

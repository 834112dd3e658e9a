"""
Approximate unstable modes of the linearized 3D Prandtl equations.

A mode with tangential phase e^{i eps^{-1}(y - a x)}, eps = 1/(qk), is
assembled from a Heaviside-cut regular part and an eps^{1/4}-wide shear-layer
corrector built from the canonical eigenpair, then checked against the
linearized operator (residual and its three-term split).
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from ..exceptions import FittingError, ParameterError, ResolutionError
from .grid import Grid1D, WeightedNorm, diff, weighted_l2
from .layer_ode import LayerEigenPair
from .shear import CriticalPoint, CriticalTrajectory, ShearTrajectory, smooth_step

logger = logging.getLogger(__name__)

MIN_LAYER_NODES = 16
MAX_SAMPLES = 201
COARSE_TIME_REL = 0.1


def build_lambda(traj: CriticalTrajectory, tau_t, eps):
    """
    lambda_eps(t) = -w_a^s(t, f) + eps^{1/2} |w''(t, f)/2|^{1/2} tau~ and the
    predicted growth exponent G(t) = eps^{-1} int_0^t (-Im lambda).
    Returns (lambda, G, int_0^t lambda).
    """
    if traj.times.size == 0 or np.any(traj.wpp_t == 0):
        raise ParameterError("degenerate critical trajectory")
    lam = -traj.w_t + np.sqrt(eps) * np.sqrt(np.abs(traj.wpp_t) / 2.0) * complex(tau_t)
    phase = cumulative_trapezoid(lam, traj.times, initial=0.0) if traj.times.size > 1 else np.zeros(1, complex)
    growth = -phase.imag / eps
    return lam, growth, phase


def predicted_sigma0(tau_t, wpp):
    """sigma_0 = |Im tau~| |wpp/2|^{1/2}: growth in units of t / sqrt(eps)."""
    return abs(complex(tau_t).imag) * np.sqrt(abs(wpp) / 2.0)


def cutoff(x, radius):
    """C-infinity bump: 1 on |x| <= radius/2, 0 for |x| >= radius; value and two derivatives."""
    half = radius / 2.0
    y = (radius - np.abs(x)) / half
    dy = -np.sign(x) / half
    return smooth_step(y, 0), smooth_step(y, 1) * dy, smooth_step(y, 2) * dy ** 2


@dataclass(frozen=True, eq=False)
class ApproxMode:
    """
    Envelopes (without the factor e^{i eps^{-1} int lambda}) on (t, z):
    Uc, Vc for the tangential velocity and Wc = W^reg + W^sl, plus the
    shear-layer pieces used by the residual split. Full fields are
    Ue = i E Uc, Ve = i E Vc, We = eps^{-1} E Wc with E = e^{i eps^{-1} int lambda}.
    """
    eps: float
    k: int
    k1: int
    k2: int
    cp: CriticalPoint
    traj: CriticalTrajectory
    grid: Grid1D
    times: np.ndarray
    lam: np.ndarray
    phase: np.ndarray
    growth: np.ndarray
    Uc: np.ndarray
    Vc: np.ndarray
    Wc: np.ndarray
    Wsl: np.ndarray
    Wsl_z: np.ndarray
    Wsl_zz: np.ndarray
    track: dict
    phi_radius: float
    tau_t: complex

    @property
    def envelope(self):
        return np.exp(1j * self.phase / self.eps)

    @property
    def Ue(self):
        return 1j * self.envelope[:, None] * self.Uc

    @property
    def Ve(self):
        return 1j * self.envelope[:, None] * self.Vc

    @property
    def We(self):
        return self.envelope[:, None] * self.Wc / self.eps

    @property
    def sigma0_predicted(self):
        return predicted_sigma0(self.tau_t, self.cp.wpp)

    def norms(self, norm: WeightedNorm):
        """||(Ue, Ve)(t)||_{L^2_alpha} at every stored time."""
        base = np.hypot(weighted_l2(self.grid, self.Uc, norm), weighted_l2(self.grid, self.Vc, norm))
        return base * np.exp(self.growth)

    def slice(self, i=0):
        """(u, v) profiles at sample i, used to seed the linear evolution."""
        return self.Ue[i], self.Ve[i]

    def rows(self, every=1):
        Ue, Ve, We = self.Ue, self.Ve, self.We
        for i in range(0, self.times.size, every):
            for j, z in enumerate(self.grid.nodes):
                yield (float(self.times[i]), float(z), Ue[i, j].real, Ue[i, j].imag,
                       Ve[i, j].real, Ve[i, j].imag, We[i, j].real, We[i, j].imag)


def _layer_nodes(grid, center, width):
    return int(np.count_nonzero(np.abs(grid.nodes - center) <= width / 2.0))


def build_mode(shear: ShearTrajectory, cp: CriticalPoint, pair: LayerEigenPair, k, grid: Grid1D = None,
               traj: CriticalTrajectory = None, eps=None, phi_radius=None, times=None) -> ApproxMode:
    """Assemble the approximate mode for wavenumber k on the shear grid."""
    grid = grid or shear.grid
    if grid is not shear.grid:
        raise ParameterError("mode and shear must share one grid")
    if int(k) != k or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    k = int(k)
    eps_k = 1.0 / (cp.q * k)
    if eps is not None and not np.isclose(eps, eps_k, rtol=1e-12, atol=0.0):
        raise ParameterError(f"eps must equal 1/(q k) = {eps_k} for integer wavenumbers")
    eps = eps_k
    if traj is None:
        from .shear import track_critical_point
        traj = track_critical_point(shear, cp)

    width = eps ** 0.25
    nodes = _layer_nodes(grid, cp.z0, width)
    if nodes < MIN_LAYER_NODES:
        raise ResolutionError(f"only {nodes} nodes across the shear layer of width {width:.3g}; need {MIN_LAYER_NODES}")
    if phi_radius is None:
        phi_radius = min(cp.z0, grid.z_max - cp.z0) / 2.0
    if not 0 < phi_radius <= min(traj.f.min(), grid.z_max - traj.f.max()):
        raise ParameterError(f"phi_radius {phi_radius} must be positive and keep the cutoff inside (0, Z_max)")

    if times is None:
        stride = max(1, int(np.ceil(traj.times.size / MAX_SAMPLES)))
        index = np.arange(0, traj.times.size, stride)
    else:
        index = np.array([int(np.argmin(np.abs(traj.times - t))) for t in times])
    sample_t = traj.times[index]

    lam_all, growth_all, phase_all = build_lambda(traj, pair.tau_t, eps)
    sign = 1 if cp.wpp > 0 else -1
    layer = pair.with_sign(sign)
    a = cp.a
    z = grid.nodes

    shape = (index.size, grid.N)
    Uc, Vc, Wc, Wsl, Wsl_z, Wsl_zz = (np.empty(shape, dtype=complex) for _ in range(6))
    for row, i in enumerate(index):
        f, wpp = traj.f[i], traj.wpp_t[i]
        u, v, uz, vz = shear.profiles_at(traj.times[i])
        w = v - a * u
        c = wpp / 2.0
        scale, kappa = abs(c) ** 0.25, abs(c) ** 0.5
        tau = kappa * layer.tau_t
        x = z - f
        P, P1, P2 = layer.evaluate(scale * x / width)
        A0 = np.sqrt(eps) * kappa * P
        A1 = width * kappa * scale * P1
        A2 = kappa * scale ** 2 * P2
        H = np.heaviside(x, 0.5)
        B0 = H * (np.sqrt(eps) * tau + c * x ** 2)
        B1 = H * 2.0 * c * x
        B2 = H * 2.0 * c
        phi, phi1, phi2 = cutoff(x, phi_radius)
        Wsl[row] = phi * (A0 - B0)
        Wsl_z[row] = phi1 * (A0 - B0) + phi * (A1 - B1)
        Wsl_zz[row] = phi2 * (A0 - B0) + 2.0 * phi1 * (A1 - B1) + phi * (A2 - B2)
        Wreg = H * (w - traj.w_t[i] + np.sqrt(eps) * tau)
        Wc[row] = Wreg + Wsl[row]
        Uc[row] = H * uz + (Wsl_zz[row] * traj.uz_f[i] + Wsl_z[row] * traj.uzz_f[i]) / wpp
        Vc[row] = H * vz + (Wsl_zz[row] * traj.vz_f[i] + Wsl_z[row] * traj.vzz_f[i]) / wpp

    track = {key: getattr(traj, name)[index] for key, name in
             (("f", "f"), ("wpp", "wpp_t"), ("w", "w_t"), ("uz", "uz_f"), ("uzz", "uzz_f"),
              ("vz", "vz_f"), ("vzz", "vzz_f"))}
    logger.info("built approximate mode k=%d eps=%.4g on %d samples (%d layer nodes)", k, eps, index.size, nodes)
    return ApproxMode(
        eps=eps, k=k, k1=-cp.l * k, k2=cp.q * k, cp=cp, traj=traj, grid=grid, times=sample_t,
        lam=lam_all[index], phase=phase_all[index], growth=growth_all[index],
        Uc=Uc, Vc=Vc, Wc=Wc, Wsl=Wsl, Wsl_z=Wsl_z, Wsl_zz=Wsl_zz, track=track,
        phi_radius=float(phi_radius), tau_t=complex(pair.tau_t),
    )


# ---------------------------------------------------------------------------
# Well-formedness checks
# ---------------------------------------------------------------------------

def divergence_error(mode: ApproxMode):
    """max_t of |i eps^{-1}(Ve - a Ue) + d_z We| relative to |d_z We| (envelope form)."""
    dW = diff(mode.grid, mode.Wc, 1) / mode.eps
    lhs = 1j / mode.eps * (1j * (mode.Vc - mode.cp.a * mode.Uc)) + dW
    return float(np.max(np.abs(lhs)) / np.max(np.abs(dW)))


def boundary_values(mode: ApproxMode):
    """Wall values of (Uc, Vc, Wc) and the far-field values of (Uc, Vc), absolute and relative to the sup."""
    zmax = float(max(np.max(np.abs(mode.Uc[:, -1])), np.max(np.abs(mode.Vc[:, -1]))))
    sup = float(max(np.max(np.abs(mode.Uc)), np.max(np.abs(mode.Vc))))
    return {
        "z0": float(max(np.max(np.abs(mode.Uc[:, 0])), np.max(np.abs(mode.Vc[:, 0])), np.max(np.abs(mode.Wc[:, 0])))),
        "zmax": zmax,
        "zmax_rel": zmax / sup if sup > 0 else 0.0,
    }


def c2_mismatch(mode: ApproxMode, i=0, points=12, degree=5):
    """
    One-sided polynomial fits of W^reg + W^sl on each side of f(t): largest
    relative mismatch of value, first and second derivative at f.
    """
    z = mode.grid.nodes
    f = mode.track["f"][i]
    left = np.flatnonzero(z < f)[-points:]
    right = np.flatnonzero(z > f)[:points]
    worst = 0.0
    scale = max(float(np.max(np.abs(mode.Wc[i]))), 1.0)
    fits = []
    for idx in (left, right):
        x = z[idx] - f
        fit_re = np.polynomial.polynomial.polyfit(x, mode.Wc[i, idx].real, degree)
        fit_im = np.polynomial.polynomial.polyfit(x, mode.Wc[i, idx].imag, degree)
        fits.append(fit_re[:3] + 1j * fit_im[:3])
    for order, factor in enumerate((1.0, 1.0, 2.0)):
        worst = max(worst, abs(fits[0][order] - fits[1][order]) * factor / scale)
    return float(worst)


def localization(mode: ApproxMode, i=0, widths=8.0):
    """Largest shear-layer contribution to (Uc, Vc) outside |z - f| <= widths eps^{1/4}, relative."""
    tr = {key: val[i] for key, val in mode.track.items()}
    layer_u = (mode.Wsl_zz[i] * tr["uz"] + mode.Wsl_z[i] * tr["uzz"]) / tr["wpp"]
    layer_v = (mode.Wsl_zz[i] * tr["vz"] + mode.Wsl_z[i] * tr["vzz"]) / tr["wpp"]
    outside = np.abs(mode.grid.nodes - tr["f"]) > widths * mode.eps ** 0.25
    peak = max(np.max(np.abs(layer_u)), np.max(np.abs(layer_v)))
    if not outside.any() or peak == 0:
        return 0.0
    return float(max(np.max(np.abs(layer_u[outside])), np.max(np.abs(layer_v[outside]))) / peak)


def fit_sandwich(mode: ApproxMode, norm: WeightedNorm = WeightedNorm(), window=(0.2, 0.8)):
    """
    sigma_0 from a least-squares fit of log ||(Ue, Ve)|| against t / sqrt(eps)
    on the window, and the smallest C0 with C0^{-1} e^{s} <= ||.|| <= C0 e^{s}
    at every sample (s = sigma_0 t / sqrt(eps)).
    """
    t = mode.times
    if t.size < 3:
        raise FittingError("need at least three time samples for the amplitude fit")
    lo, hi = window[0] * t[-1], window[1] * t[-1]
    sel = (t >= lo) & (t <= hi)
    if np.count_nonzero(sel) < 3:
        raise FittingError("fewer than three samples in the fit window")
    norms = mode.norms(norm)
    s = t / np.sqrt(mode.eps)
    fit = stats.linregress(s[sel], np.log(norms[sel]))
    ratio = norms * np.exp(-fit.slope * s)
    C0 = float(np.max(np.maximum(ratio, 1.0 / ratio)))
    return {"sigma0": float(fit.slope), "C0": C0, "r2": float(fit.rvalue ** 2),
            "norm0": float(norms[0]), "sigma0_predicted": mode.sigma0_predicted}


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    eps: float
    t: float
    R1norm: float
    R2norm: float
    decomposition: dict
    decomposition_gap: float
    normalized: dict
    coarse_time: bool = False
    slopes: dict | None = None

    def as_dict(self):
        return {
            "eps": self.eps, "t": self.t, "R1norm": self.R1norm, "R2norm": self.R2norm,
            "decomposition": self.decomposition, "decomposition_gap": self.decomposition_gap,
            "normalized": self.normalized, "coarse_time": self.coarse_time, "slopes": self.slopes,
        }


def _time_derivative(arr, times, i):
    """Second-order difference in time at sample i (one-sided at the ends)."""
    n = times.size
    if n < 3:
        raise ParameterError("need at least three time samples for d/dt")
    if 0 < i < n - 1:
        return (arr[i + 1] - arr[i - 1]) / (times[i + 1] - times[i - 1])
    if i == 0:
        h = times[1] - times[0]
        return (-3.0 * arr[0] + 4.0 * arr[1] - arr[2]) / (2.0 * h)
    h = times[-1] - times[-2]
    return (3.0 * arr[-1] - 4.0 * arr[-2] + arr[-3]) / (2.0 * h)


def _coarse_derivative(arr, times, i):
    """First-order difference over the widest neighbouring interval, for the sampling check."""
    j = i + 1 if i + 1 < times.size else i - 1
    return (arr[j] - arr[i]) / (times[j] - times[i])


def residual_fields(grid, eps, lam, uz_profile, wa_profile, Uc, Wc, dUc_dt):
    """
    Envelope residual of one component:
    i [d_t Uc + i eps^{-1}(lambda + w_a) Uc - d_z^2 Uc - i eps^{-1} u_z Wc].
    """
    bracket = (dUc_dt + 1j / eps * (lam + wa_profile) * Uc - diff(grid, Uc, 2)
               - 1j / eps * uz_profile * Wc)
    return 1j * bracket


def residual(mode: ApproxMode, shear: ShearTrajectory, t, norm: WeightedNorm = WeightedNorm()) -> ResidualReport:
    """Residual of the approximate mode against the linearized operator at time t."""
    i = int(np.argmin(np.abs(mode.times - t)))
    t = float(mode.times[i])
    grid, eps, a = mode.grid, mode.eps, mode.cp.a
    z = grid.nodes
    tr = {key: val[i] for key, val in mode.track.items()}
    u, v, uz, vz = shear.profiles_at(t)
    wa = v - a * u

    # nodes swept by the interface between neighbouring samples are excluded
    lo = max(i - 1, 0)
    hi = min(i + 1, mode.times.size - 1)
    f_lo = min(mode.track["f"][lo], mode.track["f"][hi]) - 2.5 * np.max(np.diff(z))
    f_hi = max(mode.track["f"][lo], mode.track["f"][hi]) + 2.5 * np.max(np.diff(z))
    keep = (z < f_lo) | (z > f_hi)

    def norm_of(arr):
        return float(weighted_l2(grid, np.where(keep, arr, 0.0), norm))

    x = z - tr["f"]
    D = wa - tr["w"] - tr["wpp"] / 2.0 * x ** 2
    out, parts, raw, coarse = {}, {}, {}, False
    growth = np.exp(mode.growth[i])
    components = (("R1", "uz", "uzz", uz, mode.Uc), ("R2", "vz", "vzz", vz, mode.Vc))
    for name, grad_key, curv_key, prof, Xc in components:
        dX = _time_derivative(Xc, mode.times, i)
        direct = residual_fields(grid, eps, mode.lam[i], prof, wa, Xc[i], mode.Wc[i], dX)
        K = (mode.Wsl_zz * mode.track[grad_key][:, None]
             + mode.Wsl_z * mode.track[curv_key][:, None]) / mode.track["wpp"][:, None]
        taylor = prof - tr[grad_key] - tr[curv_key] * x
        split = {
            "1": -D * K[i] / eps,
            "2": taylor * mode.Wsl[i] / eps,
            "3": 1j * _time_derivative(K, mode.times, i),
        }
        raw[name] = norm_of(direct)
        out[name] = raw[name] * growth
        parts[name] = {key: norm_of(val) * growth for key, val in split.items()}
        parts[name]["sum"] = norm_of(split["1"] + split["2"] + split["3"]) * growth
        dt_fine = norm_of(dX)
        dt_gap = norm_of(dX - _coarse_derivative(Xc, mode.times, i))
        coarse = coarse or (dt_fine > 0 and dt_gap > COARSE_TIME_REL * dt_fine)
    gap = max(abs(parts[n]["sum"] - out[n]) / out[n] if out[n] > 0 else 0.0 for n in ("R1", "R2"))
    if coarse:
        logger.warning("time sampling too coarse for d/dt at t=%.4g (eps=%.4g)", t, eps)
    return ResidualReport(
        eps=eps, t=t, R1norm=out["R1"], R2norm=out["R2"],
        decomposition={n: parts[n] for n in ("R1", "R2")}, decomposition_gap=float(gap),
        normalized={"R1": raw["R1"], "R2": raw["R2"], "total": float(np.hypot(raw["R1"], raw["R2"]))},
        coarse_time=bool(coarse),
    )


def _loglog_fit(x, y, label):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if np.count_nonzero(ok) < 3:
        raise FittingError(f"fewer than three valid points for the {label} fit")
    lx, ly = np.log(x[ok]), np.log(y[ok])
    fit = stats.linregress(lx, ly)
    dof = max(int(np.count_nonzero(ok)) - 2, 1)
    half = float(stats.t.ppf(0.975, dof) * fit.stderr) if np.isfinite(fit.stderr) else float("inf")
    return {"slope": float(fit.slope), "ci": [float(fit.slope - half), float(fit.slope + half)],
            "points": int(np.count_nonzero(ok))}


def residual_scaling_study(shear: ShearTrajectory, cp: CriticalPoint, pair: LayerEigenPair, eps_list, t_list,
                           traj: CriticalTrajectory = None, norm: WeightedNorm = WeightedNorm(), phi_radius=None):
    """
    Log-log slopes of the normalized residual norms (growth factor removed)
    against eps at t = 0, and of their excess over t = 0 against t at the
    smallest eps.
    """
    eps_list = sorted(float(e) for e in eps_list)
    if len(eps_list) < 3:
        raise FittingError("need at least three eps values")
    if traj is None:
        from .shear import track_critical_point
        traj = track_critical_point(shear, cp)
    t_samples = sorted({0.0, *(float(t) for t in t_list)})
    dt = traj.times[1] - traj.times[0] if traj.times.size > 1 else 0.0
    # neighbours of every requested time for the centred d/dt
    times = sorted({max(0.0, min(traj.t0, t + s * dt)) for t in t_samples for s in (-1, 0, 1, 2)})

    by_eps = []
    for eps in eps_list:
        k = round(1.0 / (cp.q * eps))
        if not np.isclose(1.0 / (cp.q * k), eps):
            raise ParameterError(f"eps={eps} is not of the form 1/(q k)")
        mode = build_mode(shear, cp, pair, k, traj=traj, times=times, phi_radius=phi_radius)
        rep = residual(mode, shear, 0.0, norm)
        by_eps.append(rep)

    def component(rep, key):
        if key == "total":
            return rep.normalized["total"]
        name, part = key.split(".")
        return rep.decomposition[name][part]

    eps_slopes = {}
    for key in ("total", "R1.1", "R1.2", "R1.3", "R2.1", "R2.2", "R2.3"):
        try:
            eps_slopes[key] = _loglog_fit(eps_list, [component(r, key) for r in by_eps], f"eps/{key}")
        except FittingError as exc:
            eps_slopes[key] = {"error": str(exc)}

    finest = build_mode(shear, cp, pair, round(1.0 / (cp.q * eps_list[0])), traj=traj, times=times,
                        phi_radius=phi_radius)
    reps_t = [residual(finest, shear, t, norm) for t in t_samples]
    base = reps_t[0].normalized["total"]
    t_vals = [r.t for r in reps_t[1:]]
    excess = [r.normalized["total"] - base for r in reps_t[1:]]
    try:
        t_slope = _loglog_fit(t_vals, excess, "t")
    except FittingError as exc:
        t_slope = {"error": str(exc)}
    return {
        "eps": eps_list,
        "residual_t0": [r.as_dict() for r in by_eps],
        "eps_slopes": eps_slopes,
        "t_values": t_vals,
        "t_excess": excess,
        "t_slope": t_slope,
    }

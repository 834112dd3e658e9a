"""
Canonical shear-layer connection problem.

With P = (tau + s Z^2) W~, the third-order equation for (tau, W~) reads

    i P''' + (tau + s Z^2) P' - 2 s Z P = 0,   P -> 0 (Z -> -inf),
    P - (tau + s Z^2) -> 0 (Z -> +inf),

and is solved on a uniform grid of [-L, L] with P(-L) = P'(-L) = 0 and
P(L) = tau + s L^2. The matching function m(tau) = W~'(L) vanishes exactly
at the eigenvalues; Im tau < 0 roots are located by a rectangle scan and
refined by secant iteration in the complex plane.
"""
import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.optimize import newton
from scipy.sparse.linalg import splu

from ..exceptions import DegeneracyError, IterationError, NoRootError, ParameterError
from .grid import fd_matrix

logger = logging.getLogger(__name__)

SCAN_RE = (-3.0, 3.0)
SCAN_IM = (-3.0, -0.05)
SCAN_SHAPE = (25, 12)


@functools.lru_cache(maxsize=8)
def _operators(L, n):
    """Uniform nodes on [-L, L] with sixth-order derivative matrices."""
    Z = np.linspace(-L, L, n + 1)
    Z[n // 2] = 0.0
    D1 = fd_matrix(Z, 1, 7, 7).tocsr()
    D2 = fd_matrix(Z, 2, 7, 8).tocsr()
    D3 = fd_matrix(Z, 3, 9, 9).tocsr()
    return Z, D1, D2, D3


def _branch_derivative(x, f, order):
    """Sixth-order derivative of one smooth branch, one-sided at both ends."""
    centered = 7 if order <= 2 else 9
    return fd_matrix(x, order, centered, order + 6) @ f


def _solve_bvp(tau, sign, L, n):
    Z, D1, _, D3 = _operators(L, n)
    Q = tau + sign * Z ** 2
    ode = (1j * D3 + sp.diags(Q) @ D1 - sp.diags(2.0 * sign * Z)).tocsr()
    first = sp.csr_matrix(([1.0], ([0], [0])), shape=(1, n + 1))
    last = sp.csr_matrix(([1.0], ([0], [n])), shape=(1, n + 1))
    # rows 0, 1 and n carry P(-L) = 0, P'(-L) = 0 and P(L) = Q(L)
    A = sp.vstack([first, D1[0], ode[2:n], last]).tocsc()
    rhs = np.zeros(n + 1, dtype=complex)
    rhs[n] = Q[-1]
    return splu(A).solve(rhs)


def matching(tau, sign, L=12.0, n=2048):
    """m(tau) = W~'(L) for the boundary-value solution at tau."""
    P = _solve_bvp(complex(tau), sign, L, n)
    _, D1, _, _ = _operators(L, n)
    slope = (D1[-1] @ P)[0]
    return (slope - 2.0 * sign * L) / (tau + sign * L ** 2)


@dataclass(frozen=True, eq=False)
class LayerEigenPair:
    tau_t: complex
    sign: int
    L: float
    n: int
    Z: np.ndarray
    P: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    residual: float
    roots: tuple = ()
    _splines: dict = field(default_factory=dict, repr=False)

    @property
    def resolution(self):
        return self.n

    @property
    def Q(self):
        return self.tau_t + self.sign * self.Z ** 2

    @property
    def Wt(self):
        return self.P / self.Q

    def _spline(self, key):
        if key not in self._splines:
            data = getattr(self, key)
            self._splines[key] = (CubicSpline(self.Z, data.real), CubicSpline(self.Z, data.imag))
        return self._splines[key]

    def evaluate(self, Zt):
        """(P, P', P'') at arbitrary points; P = 0 left of -L and P = Q right of L."""
        Zt = np.asarray(Zt, dtype=float)
        inside = np.abs(Zt) <= self.L
        Zc = np.clip(Zt, -self.L, self.L)
        out = []
        for key, outer in (("P", self.tau_t + self.sign * Zt ** 2), ("P1", 2.0 * self.sign * Zt),
                           ("P2", 2.0 * self.sign * np.ones_like(Zt))):
            re, im = self._spline(key)
            value = re(Zc) + 1j * im(Zc)
            out.append(np.where(inside, value, np.where(Zt > 0, outer, 0.0)))
        return tuple(out)

    def with_sign(self, sign):
        """Pair for the opposite sign: tau -> -conj(tau), W~ -> conj(W~)."""
        if sign == self.sign:
            return self
        return LayerEigenPair(
            tau_t=complex(-np.conj(self.tau_t)), sign=sign, L=self.L, n=self.n, Z=self.Z,
            P=-np.conj(self.P), P1=-np.conj(self.P1), P2=-np.conj(self.P2),
            residual=self.residual, roots=tuple(complex(-np.conj(r)) for r in self.roots),
        )

    def as_dict(self):
        return {
            "sign": self.sign, "L": self.L, "n": self.n,
            "tau_re": float(self.tau_t.real), "tau_im": float(self.tau_t.imag),
            "residual": self.residual,
            "roots": [[float(r.real), float(r.imag)] for r in self.roots],
        }


def scan_landscape(sign, L, n, re_range=SCAN_RE, im_range=SCAN_IM, shape=SCAN_SHAPE):
    re_axis = np.linspace(*re_range, shape[0])
    im_axis = np.linspace(*im_range, shape[1])
    values = np.empty(shape)
    for i, re in enumerate(re_axis):
        for j, im in enumerate(im_axis):
            values[i, j] = abs(matching(complex(re, im), sign, L, n))
    return re_axis, im_axis, values


def _local_minima(values):
    padded = np.pad(values, 1, constant_values=np.inf)
    core = padded[1:-1, 1:-1]
    is_min = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_min &= core <= padded[1 + di:padded.shape[0] - 1 + di, 1 + dj:padded.shape[1] - 1 + dj]
    idx = np.argwhere(is_min)
    return sorted(map(tuple, idx), key=lambda ij: values[ij])


def _refine(guess, sign, L, n):
    try:
        root = newton(lambda tau: matching(tau, sign, L, n), complex(guess),
                      x1=complex(guess) * (1 + 1e-3) + 1e-3j, tol=1e-13, maxiter=60)
    except (RuntimeError, ZeroDivisionError) as exc:
        raise IterationError(f"secant refinement from {guess} did not converge") from exc
    if not np.isfinite(root):
        raise IterationError(f"secant refinement from {guess} diverged")
    return complex(root)


def ode_residual(Z, P, tau, s, margin=10):
    """Relative interior residual of the P-equation with independent fourth-order stencils."""
    P1 = fd_matrix(Z, 1, 5, 5) @ P
    P3 = fd_matrix(Z, 3, 5, 5) @ P
    res = 1j * P3 + (tau + s * Z ** 2) * P1 - 2.0 * s * Z * P
    scale = np.max(np.abs((tau + s * Z ** 2) * P1)) + np.max(np.abs(P3))
    inner = slice(margin, Z.size - margin)
    return float(np.max(np.abs(res[inner])) / scale)


def solve_canonical(sign=-1, L=12.0, n=2048, guess=None, max_seeds=6, re_range=SCAN_RE, im_range=SCAN_IM,
                    shape=SCAN_SHAPE) -> LayerEigenPair:
    """
    Solve the connection problem for tau with Im tau < 0. Every root found in
    the scan rectangle is kept in ``roots``; the one with the largest
    |Im tau| is returned as the eigenvalue.
    """
    if sign not in (1, -1):
        raise ParameterError(f"sign must be +1 or -1, got {sign}")
    if L < 8 or n < 512 or n % 2:
        raise ParameterError(f"need L >= 8 and an even n >= 512, got L={L}, n={n}")
    if guess is not None and not complex(guess).imag < 0:
        raise ParameterError("the initial guess must have a negative imaginary part")
    L, n = float(L), int(n)

    roots = []
    if guess is not None:
        try:
            roots.append(_refine(guess, sign, L, n))
        except IterationError:
            logger.warning("refinement from guess %s failed; scanning", guess)
    landscape = None
    if not roots:
        landscape = scan_landscape(sign, L, n, tuple(re_range), tuple(im_range), tuple(shape))
        re_axis, im_axis, values = landscape
        for i, j in _local_minima(values)[:max_seeds]:
            try:
                root = _refine(complex(re_axis[i], im_axis[j]), sign, L, n)
            except IterationError as exc:
                logger.debug("%s", exc)
                continue
            if root.imag < 0 and all(abs(root - r) > 1e-6 * max(1.0, abs(r)) for r in roots):
                roots.append(root)
    roots = [r for r in roots if r.imag < 0]
    if not roots:
        raise NoRootError("no root with Im tau < 0 in the scan rectangle", landscape=landscape)
    roots.sort(key=lambda r: -abs(r.imag))
    tau = roots[0]
    if len(roots) > 1:
        logger.warning("%d roots with Im tau < 0 found; using the one with largest |Im tau|", len(roots))

    P = _solve_bvp(tau, sign, L, n)
    Z, D1, D2, _ = _operators(L, n)
    residual = ode_residual(Z, P, tau, sign)
    logger.info("canonical eigenvalue tau=%.10f%+.10fj (sign=%d, L=%g, n=%d, residual=%.2e)",
                tau.real, tau.imag, sign, L, n, residual)
    return LayerEigenPair(tau_t=tau, sign=sign, L=L, n=n, Z=Z, P=P, P1=D1 @ P, P2=D2 @ P,
                          residual=residual, roots=tuple(roots))


# ---------------------------------------------------------------------------
# Physical rescaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShearLayerProfile:
    """
    Physical profile W(Z) with jumps at Z = 0. Arrays are right-continuous at
    0; ``left`` holds (W, W', W'') limits from Z < 0.
    """
    tau: complex
    wpp: float
    Z: np.ndarray
    W: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    left: tuple
    pair: LayerEigenPair | None = None

    @property
    def c(self):
        return self.wpp / 2.0

    @property
    def origin(self):
        return int(np.searchsorted(self.Z, 0.0))

    def branches(self, values, left_value):
        """(Z<=0 branch ending in the left limit, Z>=0 branch)."""
        k = self.origin
        return (np.append(values[:k], left_value), values[k:])

    def smooth(self, Z):
        """The continuous part S = W + 1_{Z>0}(tau + c Z^2) and two derivatives at arbitrary Z."""
        if self.pair is None:
            raise ParameterError("profile carries no eigenpair to evaluate")
        scale = abs(self.c) ** 0.25
        kappa = abs(self.c) ** 0.5
        P, P1, P2 = self.pair.evaluate(scale * np.asarray(Z, dtype=float))
        return kappa * P, kappa * scale * P1, kappa * scale ** 2 * P2


def rescale_physical(pair: LayerEigenPair, wpp, tol_nondeg=1e-8) -> ShearLayerProfile:
    """tau = |wpp/2|^{1/2} tau~ and W(Z) = S(Z) - 1_{Z>0}(tau + (wpp/2) Z^2)."""
    if abs(wpp) < tol_nondeg:
        raise DegeneracyError(f"|wpp| = {abs(wpp):.2e} is below the non-degeneracy threshold")
    sign = 1 if wpp > 0 else -1
    pair = pair.with_sign(sign)
    c = wpp / 2.0
    scale = abs(c) ** 0.25
    kappa = abs(c) ** 0.5
    tau = kappa * pair.tau_t
    Z = pair.Z / scale
    S, S1, S2 = kappa * pair.P, kappa * scale * pair.P1, kappa * scale ** 2 * pair.P2
    right = Z >= 0
    W = S - right * (tau + c * Z ** 2)
    k = int(np.searchsorted(Z, 0.0))
    left_W = S[k]
    # one-sided differentiation on each branch, never across Z = 0
    Zl, Zr = Z[:k + 1], Z[k:]
    Wl = np.append(W[:k], left_W)
    W1 = np.concatenate((_branch_derivative(Zl, Wl, 1)[:-1], _branch_derivative(Zr, W[k:], 1)))
    W2 = np.concatenate((_branch_derivative(Zl, Wl, 2)[:-1], _branch_derivative(Zr, W[k:], 2)))
    left = (left_W, _branch_derivative(Zl, Wl, 1)[-1], _branch_derivative(Zl, Wl, 2)[-1])
    return ShearLayerProfile(tau=tau, wpp=float(wpp), Z=Z, W=W, W1=W1, W2=W2, left=left, pair=pair)


def jumps(profile: ShearLayerProfile):
    k = profile.origin
    return {
        "W": complex(profile.W[k] - profile.left[0]),
        "Wp": complex(profile.W1[k] - profile.left[1]),
        "Wpp": complex(profile.W2[k] - profile.left[2]),
    }


def jump_errors(profile: ShearLayerProfile):
    """Deviation of the jumps from [W] = -tau, [W'] = 0, [W''] = -wpp."""
    j = jumps(profile)
    return {
        "W": abs(j["W"] + profile.tau),
        "Wp": abs(j["Wp"]),
        "Wpp": abs(j["Wpp"] + profile.wpp),
    }


def jump_tolerance(profile: ShearLayerProfile):
    return 1e-4 * max(abs(profile.tau), abs(profile.wpp), 1.0)


def build_wsl(profile: ShearLayerProfile):
    """
    W_sl = W + 1_{Z>0}(tau + c Z^2) with first and second derivatives; the
    indicator cancels the three jumps, so W_sl is C^2 across Z = 0.
    Returns (Wsl, Wsl1, Wsl2, jumps of Wsl).
    """
    Z, c, tau = profile.Z, profile.c, profile.tau
    right = Z >= 0
    Wsl = profile.W + right * (tau + c * Z ** 2)
    Wsl1 = profile.W1 + right * (2.0 * c * Z)
    Wsl2 = profile.W2 + right * (2.0 * c)
    k = profile.origin
    left = profile.left
    sl_jumps = {
        "W": abs(Wsl[k] - left[0]),
        "Wp": abs(Wsl1[k] - left[1]),
        "Wpp": abs(Wsl2[k] - left[2]),
    }
    return Wsl, Wsl1, Wsl2, sl_jumps


def companion_check(profile: ShearLayerProfile, usp, uspp, wpp=None):
    """
    h = (usp/wpp) W'' and U = (uspp/wpp) W' checked against their
    jump problems: ODE residuals (per side) and jump errors.
    """
    wpp = profile.wpp if wpp is None else wpp
    tau, c, Z, k = profile.tau, profile.c, profile.Z, profile.origin
    Wl, Wr = profile.branches(profile.W, profile.left[0])
    W1l, W1r = profile.branches(profile.W1, profile.left[1])
    W2l, W2r = profile.branches(profile.W2, profile.left[2])
    Zl, Zr = Z[:k + 1], Z[k:]

    report = {"h": {}, "U": {}, "W": {}}
    for name, Zb, W, W1, W2 in (("left", Zl, Wl, W1l, W2l), ("right", Zr, Wr, W1r, W2r)):
        h = usp / wpp * W2
        U = uspp / wpp * W1
        h2 = _branch_derivative(Zb, h, 2)
        U2 = _branch_derivative(Zb, U, 2)
        W3 = _branch_derivative(Zb, W, 3)
        inner = slice(6, -6)
        eqs = {
            "h": ((tau + c * Zb ** 2) * h - usp * W + 1j * h2, np.abs((tau + c * Zb ** 2) * h) + np.abs(usp * W)),
            "U": ((tau + c * Zb ** 2) * U - uspp * Zb * W + 1j * U2,
                  np.abs((tau + c * Zb ** 2) * U) + np.abs(uspp * Zb * W)),
            "W": ((tau + c * Zb ** 2) * W1 - 2 * c * Zb * W + 1j * W3,
                  np.abs((tau + c * Zb ** 2) * W1) + np.abs(2 * c * Zb * W)),
        }
        for key, (res, ref) in eqs.items():
            report[key][name] = float(np.max(np.abs(res[inner])) / max(np.max(ref), 1e-300))
        if name == "left":
            h_left, h1_left = h[-1], _branch_derivative(Zb, h, 1)[-1]
            U_left, U1_left = U[-1], _branch_derivative(Zb, U, 1)[-1]
        else:
            h_right, h1_right = h[0], _branch_derivative(Zb, h, 1)[0]
            U_right, U1_right = U[0], _branch_derivative(Zb, U, 1)[0]

    residual = {key: max(val.values()) for key, val in report.items()}
    jump_err = {
        "h": abs(h_right - h_left + usp),
        "hp": abs(h1_right - h1_left),
        "U": abs(U_right - U_left),
        "Up": abs(U1_right - U1_left + uspp),
    }
    return {"residual": residual, "jumps": jump_err,
            "tol_jump": 1e-4 * max(abs(tau), abs(wpp), abs(usp), abs(uspp), 1.0)}

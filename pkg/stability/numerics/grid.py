"""
Half-line grid: discretization of z in [0, Z_max], finite-difference
differentiation, trapezoidal quadrature and exponentially weighted norms.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import brentq

from ..exceptions import ParameterError, ShapeError

logger = logging.getLogger(__name__)

# Node density at the stretch center relative to the far field.
DENSITY_RATIO = 10.0
MIN_NODES = 16


@dataclass(eq=False)
class Grid1D:
    """
    Ordered nodes 0 = z_0 < ... < z_n = Z_max.

    Differentiation matrices are built lazily and cached per order; the
    cache never changes a result, so grids can be shared between workers.
    """
    nodes: np.ndarray
    stretch_center: float | None = None
    stretch_width: float | None = None
    _operators: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return self.nodes.size

    @property
    def z_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def dz_min(self) -> float:
        return float(self.spacing.min())

    def operator(self, order):
        if order not in self._operators:
            self._operators[order] = _fd_matrix(self.nodes, order)
        return self._operators[order]

    def describe(self) -> dict:
        """Resolution metadata attached to every numeric result."""
        return {
            "n": self.N - 1,
            "z_max": self.z_max,
            "dz_min": self.dz_min,
            "stretch_center": self.stretch_center,
            "stretch_width": self.stretch_width,
        }


@dataclass(frozen=True)
class WeightedNorm:
    """The L^2_alpha norm ||e^{alpha z} f||_{L^2}."""
    alpha: float = 0.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ParameterError(f"alpha must be non-negative, got {self.alpha}")


def make_grid(n, z_max, stretch=None) -> Grid1D:
    """
    Build a grid with n intervals on [0, z_max].

    With ``stretch=(center, width)`` the nodes are the preimages of a uniform
    partition under G(z) = z + (A-1) w [tanh((z-c)/w) + tanh(c/w)], whose
    density 1 + (A-1) sech^2((z-c)/w) clusters nodes around the center.
    """
    if int(n) != n or n < MIN_NODES:
        raise ParameterError(f"n must be an integer >= {MIN_NODES}, got {n}")
    if not (np.isfinite(z_max) and z_max > 0):
        raise ParameterError(f"z_max must be positive, got {z_max}")
    n = int(n)

    if stretch is None:
        return Grid1D(nodes=np.linspace(0.0, float(z_max), n + 1))

    center, width = (float(v) for v in stretch)
    if not 0 < center < z_max:
        raise ParameterError(f"stretch center must lie in (0, {z_max}), got {center}")
    if not width > 0:
        raise ParameterError(f"stretch width must be positive, got {width}")

    amp = (DENSITY_RATIO - 1.0) * width
    offset = np.tanh(center / width)

    def mapping(z):
        return z + amp * (np.tanh((z - center) / width) + offset)

    targets = np.linspace(0.0, mapping(z_max), n + 1)
    nodes = np.empty(n + 1)
    nodes[0], nodes[-1] = 0.0, float(z_max)
    for i in range(1, n):
        nodes[i] = brentq(lambda z: mapping(z) - targets[i], 0.0, z_max, xtol=1e-14)
    logger.debug("stretched grid n=%d dz_min=%.3e dz_max=%.3e", n, np.diff(nodes).min(), np.diff(nodes).max())
    return Grid1D(nodes=nodes, stretch_center=center, stretch_width=width)


def fd_weights(x0, x, m) -> np.ndarray:
    """Fornberg weights for the m-th derivative at x0 from the stencil x."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def fd_matrix(x, order, centered, boundary) -> sp.csr_matrix:
    """
    Sparse differentiation matrix on nodes x: centered stencils of
    ``centered`` points where they fit, one-sided stencils of ``boundary``
    points anchored at the ends otherwise.
    """
    n = x.size
    half = centered // 2
    rows, cols, vals = [], [], []
    for i in range(n):
        if half <= i < n - half:
            idx = np.arange(i - half, i + half + 1)
        elif i < half:
            idx = np.arange(0, boundary)
        else:
            idx = np.arange(n - boundary, n)
        rows.extend([i] * idx.size)
        cols.extend(idx)
        vals.extend(fd_weights(x[i], x[idx], order))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _fd_matrix(x, order):
    if order not in (1, 2, 3, 4):
        raise ParameterError(f"derivative order must be in 1..4, got {order}")
    centered = 3 if order <= 2 else 5
    return fd_matrix(x, order, centered, order + 2)


def _check_shape(grid, f):
    f = np.asarray(f)
    if f.ndim == 0 or f.shape[-1] != grid.N:
        raise ShapeError(f"profile length {f.shape[-1] if f.ndim else 0} does not match grid size {grid.N}")
    return f


def apply_operator(op, f):
    """Apply a sparse (N, N) operator along the last axis of f."""
    if f.ndim == 1:
        return op @ f
    flat = f.reshape(-1, f.shape[-1])
    return (op @ flat.T).T.reshape(f.shape)


def diff(grid: Grid1D, f, order=1):
    f = _check_shape(grid, f)
    if order not in (1, 2, 3, 4):
        raise ParameterError(f"derivative order must be in 1..4, got {order}")
    return apply_operator(grid.operator(order), f)


def weighted_l2(grid: Grid1D, f, w: WeightedNorm = WeightedNorm()):
    f = _check_shape(grid, f)
    weight = np.exp(w.alpha * grid.nodes)
    return np.sqrt(trapezoid(np.abs(weight * f) ** 2, grid.nodes, axis=-1))


def weighted_hm(grid: Grid1D, f, alpha=0.0, m=1):
    """H^m_alpha norm: (sum_{j<=m} ||e^{alpha z} d^j f||^2)^{1/2}."""
    norm = WeightedNorm(alpha)
    total = weighted_l2(grid, f, norm) ** 2
    for j in range(1, m + 1):
        total = total + weighted_l2(grid, diff(grid, f, j), norm) ** 2
    return np.sqrt(total)


def cumint(grid: Grid1D, f):
    f = _check_shape(grid, f)
    return cumulative_trapezoid(f, grid.nodes, axis=-1, initial=0)


def cumint_inverse(grid: Grid1D, F):
    """
    Exact left inverse of ``cumint`` for profiles with F(0) = 0.

    The trapezoid rule leaves the alternating vector (-1)^j undetermined;
    that component is fixed by least squares against the finite-difference
    derivative of F.
    """
    F = _check_shape(grid, F)
    h = grid.spacing
    incr = 2.0 * np.diff(F, axis=-1) / h
    sign = (-1.0) ** np.arange(grid.N)
    # f_j = incr_j - f_{j-1}, f_0 = 0, unrolled with alternating signs
    particular = np.zeros(F.shape, dtype=np.result_type(F, float))
    particular[..., 1:] = sign[1:] * np.cumsum(sign[1:] * incr, axis=-1)
    smooth = diff(grid, F, 1)
    shift = np.mean((smooth - particular) * sign, axis=-1, keepdims=True)
    return particular + shift * sign


def local_derivative(grid: Grid1D, f, z, m=0, width=9):
    """
    m-th derivative of the nodal profile f at an arbitrary point z, from the
    ``width`` nodes nearest to z (Fornberg weights, high-order accurate).
    """
    f = _check_shape(grid, f)
    if not 0 <= z <= grid.z_max:
        raise ParameterError(f"point {z} lies outside [0, {grid.z_max}]")
    nearest = int(np.searchsorted(grid.nodes, z))
    start = min(max(nearest - width // 2, 0), grid.N - width)
    idx = slice(start, start + width)
    return fd_weights(z, grid.nodes[idx], m) @ f[..., idx].T


def laplacian_matrix(grid: Grid1D, neumann=False):
    """
    Three-point d^2/dz^2 on the unknown nodes of a problem with f(Z_max) = 0
    and either f(0) = 0 (nodes 1..N-2) or f'(0) = 0 (nodes 0..N-2, ghost
    node mirrored across z = 0).
    """
    z = grid.nodes
    hm = z[1:-1] - z[:-2]
    hp = z[2:] - z[1:-1]
    lower = 2.0 / (hm * (hm + hp))
    upper = 2.0 / (hp * (hm + hp))
    main = -2.0 / (hm * hp)
    if not neumann:
        return sp.diags([lower[1:], main, upper[:-1]], [-1, 0, 1], format="csc")
    h0 = z[1] - z[0]
    main = np.concatenate([[-2.0 / h0 ** 2], main])
    upper = np.concatenate([[2.0 / h0 ** 2], upper[:-1]])
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csc")

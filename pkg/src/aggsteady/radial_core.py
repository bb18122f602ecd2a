"""Radial grids, radially decreasing densities and the height-function transform.

A density sampled on a radial grid is treated as the continuous piecewise-linear
interpolant of its node values.  Every quadrature in this module is exact for
that interpolant, so mass, level-set measures and the height transform are all
consistent with one another up to rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gamma
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

MONOTONE_TOL = 1e-12


def unit_ball_volume(n):
    """Volume of the unit ball in R^n (1 for n = 0)."""
    return np.pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


def unit_sphere_area(n):
    return n * unit_ball_volume(n)


def _shell_moment_weights(a, b, n):
    """Integrals of the two hat functions on [a, b] against the shell measure."""
    # Gauss-Legendre with enough points to be exact for degree n polynomials
    x, wq = np.polynomial.legendre.leggauss(n // 2 + 2)
    h = b - a
    r = 0.5 * (a + b)[:, None] + 0.5 * h[:, None] * x[None, :]
    dens = unit_sphere_area(n) * r ** (n - 1) * 0.5 * h[:, None] * wq[None, :]
    right = np.sum(dens * (r - a[:, None]) / h[:, None], axis=1)
    left = np.sum(dens * (b[:, None] - r) / h[:, None], axis=1)
    return left, right


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Radial nodes r_0 < ... < r_M in dimension n with shell quadrature weights.

    weights[i] is the integral of the i-th hat function against the shell
    measure omega_n r^(n-1) dr, which makes sum(f * weights) the exact integral of
    the piecewise-linear interpolant (the trapezoid rule for n = 1).
    """

    nodes: np.ndarray
    dimension: int
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        n = int(self.dimension)
        if n < 1:
            raise ValueError("dimension must be a positive integer")
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a radial grid needs at least two nodes")
        if nodes[0] < 0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("radial nodes must be strictly increasing and non-negative")
        left, right = _shell_moment_weights(nodes[:-1], nodes[1:], n)
        w = np.zeros_like(nodes)
        w[:-1] += left
        w[1:] += right
        nodes.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "dimension", n)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, radius, dimension, num_cells=4096):
        return cls(np.linspace(0.0, float(radius), int(num_cells) + 1), dimension)

    @property
    def outer_radius(self):
        return float(self.nodes[-1])

    @property
    def size(self):
        return self.nodes.size

    def ball_volume(self):
        n = self.dimension
        return unit_ball_volume(n) * (self.nodes[-1] ** n - self.nodes[0] ** n)

    def integrate(self, values):
        return float(np.dot(values, self.weights))

    def key(self):
        """Hashable identity used for kernel caches."""
        return (self.dimension, self.nodes.size, float(self.nodes[0]),
                float(self.nodes[-1]), float(np.sum(self.nodes)))


@dataclass(frozen=True, eq=False)
class RadialDensity:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise ValueError("density values must match the grid nodes")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dimension(self):
        return self.grid.dimension

    @property
    def r(self):
        return self.grid.nodes

    @property
    def mass(self):
        return self.grid.integrate(self.values)

    @property
    def linf(self):
        return float(np.max(self.values))

    @property
    def support_radius(self):
        return support_radius(self)

    def is_radially_decreasing(self, tol=MONOTONE_TOL):
        scale = max(self.linf, 1.0)
        return bool(np.all(np.diff(self.values) <= tol * scale))

    def has_plateaus(self):
        """True when the density is flat somewhere strictly inside its support."""
        v = self.values
        inside = v[:-1] > 0
        return bool(np.any((np.diff(v) >= 0) & inside & (v[1:] > 0)))

    def normalized(self, target=1.0):
        return RadialDensity(self.grid, self.values * (target / self.mass))

    def evaluate(self, r):
        r = np.asarray(r, dtype=float)
        return np.interp(r, self.grid.nodes, self.values, right=0.0)

    def with_values(self, values):
        return RadialDensity(self.grid, values)


def support_radius(rho):
    """Edge of the support of the piecewise-linear density.

    This is the first node after the last positive value (where the interpolant
    reaches zero), or the outer radius if the density is positive there.
    """
    v = rho.values
    pos = np.nonzero(v > 0)[0]
    if pos.size == 0:
        return 0.0
    last = pos[-1]
    if last == v.size - 1:
        return float(rho.grid.nodes[-1])
    return float(rho.grid.nodes[last + 1])


def lp_integral(rho, p):
    """Integral of rho^p over R^n."""
    if p <= 0:
        raise ValueError("p must be positive")
    return rho.grid.integrate(rho.values ** p)


def lp_norm(rho, p):
    """(integral of rho^p)^(1/p); exponents below 1 are allowed for the 3-m flatness norm."""
    if not np.isfinite(p):
        return linf(rho)
    if p <= 0:
        raise ValueError("p must be positive")
    return lp_integral(rho, p) ** (1.0 / p)


def moment(rho, order):
    return rho.grid.integrate(rho.values * rho.grid.nodes ** order)


def linf(rho):
    return rho.linf


# ---------------------------------------------------------------------------
# height functions


def chebyshev_mass_grid(num=4096):
    """Chebyshev mass nodes in (0,1).

    They cluster towards s = 1, where h' blows up, and also towards s = 0, where
    the level sets approach the support edge.
    """
    j = np.arange(1, num + 1)
    return 0.5 * (1.0 - np.cos(np.pi * j / (num + 1)))


def uniform_mass_grid(num=4096):
    return (np.arange(num) + 0.5) / num


@dataclass(frozen=True, eq=False)
class HeightFunction:
    """Height function h(s) on mass nodes, with derivative samples and end limits.

    `hprime_at_zero` is the limit of h' at s = 0 (one over the support measure) and
    `height_at_one` is h(1), the maximum of the density.
    """

    s: np.ndarray
    h: np.ndarray
    hprime: np.ndarray
    hprime_at_zero: float
    height_at_one: float

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        h = np.asarray(self.h, dtype=float)
        hp = np.asarray(self.hprime, dtype=float)
        if not (s.shape == h.shape == hp.shape) or s.ndim != 1:
            raise ValueError("s, h and hprime must be 1-D arrays of equal length")
        if np.any(s <= 0) or np.any(s >= 1) or np.any(np.diff(s) <= 0):
            raise ValueError("mass nodes must be strictly increasing inside (0,1)")
        if np.any(hp <= 0) or self.hprime_at_zero <= 0:
            raise ValueError("h' must be positive")
        for a in (s, h, hp):
            a.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "hprime", hp)
        object.__setattr__(self, "hprime_at_zero", float(self.hprime_at_zero))
        object.__setattr__(self, "height_at_one", float(self.height_at_one))

    def support_radius(self, n):
        return (unit_ball_volume(n) * self.hprime_at_zero) ** (-1.0 / n)

    def level_radii(self, n):
        return (unit_ball_volume(n) * self.hprime) ** (-1.0 / n)

    def check(self, tol=1e-10):
        """Return a list of violated invariants (empty when valid)."""
        problems = []
        if np.any(np.diff(self.h) <= 0):
            problems.append("h not strictly increasing")
        if np.any(np.diff(self.hprime) < -tol * np.max(self.hprime)):
            problems.append("h' decreasing somewhere")
        slopes = np.diff(self.h) / np.diff(self.s)
        if slopes.size > 1 and np.min(np.diff(slopes)) < -tol * np.max(slopes):
            problems.append("h not convex")
        return problems

    def singularity_exponent(self, lo=1e-6, hi=1e-3):
        """Least-squares p in h'(s) ~ (1-s)^(-p) over lo <= 1-s <= hi."""
        gap = 1.0 - self.s
        sel = (gap >= lo) & (gap <= hi)
        if np.count_nonzero(sel) < 3:
            raise ValueError("too few mass nodes in the fitting window")
        slope = np.polyfit(np.log(gap[sel]), np.log(self.hprime[sel]), 1)[0]
        return float(-slope)

    def resample(self, s_new):
        """Monotone re-sampling onto another mass grid."""
        s_new = np.asarray(s_new, dtype=float)
        s_ext = np.concatenate(([0.0], self.s, [1.0]))
        h_ext = np.concatenate(([0.0], self.h, [self.height_at_one]))
        hp_ext = np.concatenate(([self.hprime_at_zero], self.hprime))
        h_new = PchipInterpolator(s_ext, h_ext)(s_new)
        hp_new = PchipInterpolator(s_ext[:-1], hp_ext, extrapolate=True)(s_new)
        return HeightFunction(s_new, h_new, np.maximum.accumulate(hp_new),
                              self.hprime_at_zero, self.height_at_one)

    def combine(self, other, t):
        """Pointwise (1-t) self + t other on the shared mass grid."""
        if self.s.shape != other.s.shape or np.any(self.s != other.s):
            raise ValueError("height functions live on different mass grids")
        return HeightFunction(self.s, (1 - t) * self.h + t * other.h,
                              (1 - t) * self.hprime + t * other.hprime,
                              (1 - t) * self.hprime_at_zero + t * other.hprime_at_zero,
                              (1 - t) * self.height_at_one + t * other.height_at_one)


def _cell_tail_mass(r_lo, r_hi, v_lo, v_hi, n):
    """Exact integral of the linear function through (r_lo,v_lo),(r_hi,v_hi) on the shell."""
    x, wq = np.polynomial.legendre.leggauss(n // 2 + 2)
    h = r_hi - r_lo
    r = 0.5 * (r_lo + r_hi)[..., None] + 0.5 * h[..., None] * x
    lam = (r - r_lo[..., None]) / np.where(h > 0, h, 1.0)[..., None]
    vals = v_lo[..., None] + (v_hi - v_lo)[..., None] * lam
    return np.sum(unit_sphere_area(n) * r ** (n - 1) * vals * wq, axis=-1) * 0.5 * h


class _LevelSetModel:
    """Level-set radius and mass-below-height for a piecewise-linear density."""

    def __init__(self, rho):
        self.rho = rho
        self.r = rho.grid.nodes
        self.v = rho.values
        self.n = rho.dimension
        self.cn = unit_ball_volume(self.n)
        w = rho.grid.weights
        # mass carried strictly outside node i by the hat functions is not a clean
        # split, so integrate the interpolant cell by cell instead
        cell = _cell_tail_mass(self.r[:-1], self.r[1:], self.v[:-1], self.v[1:], self.n)
        self.tail = np.concatenate((np.cumsum(cell[::-1])[::-1], [0.0]))
        self.mass = float(np.dot(self.v, w))

    def radius(self, h):
        """Radius of {rho > h}, for 0 < h < max rho, vectorised."""
        h = np.asarray(h, dtype=float)
        # values are non-increasing; count nodes with v > h
        k = np.searchsorted(-self.v, -h, side="left")  # first index with v <= h
        k = np.clip(k, 1, self.v.size - 1)
        v_hi, v_lo = self.v[k - 1], self.v[k]
        r_lo, r_hi = self.r[k - 1], self.r[k]
        span = v_hi - v_lo
        frac = np.where(span > 0, (v_hi - h) / np.where(span > 0, span, 1.0), 1.0)
        return r_lo + frac * (r_hi - r_lo), k

    def mass_below(self, h):
        h = np.asarray(h, dtype=float)
        rad, k = self.radius(h)
        partial = _cell_tail_mass(rad, self.r[k], h, self.v[k], self.n)
        return h * self.cn * rad ** self.n + partial + self.tail[k]


def height_from_density(rho, mass_grid=None, mass_tol=1e-6):
    """Height function of a radially decreasing density on a mass grid.

    h(s) solves  integral of min(rho, h(s)) = s, and h'(s) = 1/|{rho > h(s)}|.
    """
    if mass_grid is None:
        mass_grid = chebyshev_mass_grid()
    s = np.asarray(mass_grid, dtype=float)
    if np.any(s <= 0) or np.any(s >= 1):
        raise ValueError("mass grid must lie inside (0,1)")
    if not rho.is_radially_decreasing():
        raise ValueError("density is not radially non-increasing")
    mass = rho.mass
    if abs(mass - 1.0) > mass_tol:
        raise ValueError(f"density mass {mass:.3e} differs from 1")
    rho = rho.normalized()
    model = _LevelSetModel(rho)
    top = float(rho.values[0])

    # bracket each target between consecutive node heights, then bisect
    node_mass = model.mass_below(rho.values[1:].clip(min=0.0))
    node_h = rho.values[1:]
    # s(h) increasing in h; node_h is non-increasing so reverse
    hs = np.concatenate(([0.0], node_h[::-1], [top]))
    ss = np.concatenate(([0.0], node_mass[::-1], [1.0]))
    idx = np.clip(np.searchsorted(ss, s, side="left"), 1, ss.size - 1)
    lo, hi = hs[idx - 1].copy(), hs[idx].copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = model.mass_below(mid) < s
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(hi, 1e-300)):
            break
    h = 0.5 * (lo + hi)
    rad, _ = model.radius(h)
    hprime = 1.0 / (model.cn * rad ** model.n)
    hp0 = 1.0 / (model.cn * support_radius(rho) ** model.n)
    return HeightFunction(s, h, hprime, hp0, top)


def density_from_height(height, n, grid=None, num_cells=4096):
    """Reconstruct rho(r) = h(s_r) where h'(s_r) = (c_n r^n)^(-1).

    By default the grid is uniform on [0, R] with R the support radius, so the
    support edge is a grid node.
    """
    if np.any(height.hprime <= 0):
        raise ValueError("h' must be positive")
    R = height.support_radius(n)
    if grid is None:
        grid = RadialGrid.uniform(R, n, num_cells)
    radii = height.level_radii(n)
    # points (radius, height) lie on the graph of rho, ordered by increasing radius
    # h' flat at the top means the innermost layer has positive radius
    top_flat = height.hprime.size > 1 and height.hprime[-1] <= height.hprime[-2] * (1 + 1e-12)
    rr = np.concatenate(([radii[-1] if top_flat else 0.0], radii[::-1], [R]))
    hh = np.concatenate(([height.height_at_one], height.h[::-1], [0.0]))
    r = grid.nodes
    if np.all(np.diff(rr) > 0):
        vals = PchipInterpolator(rr, hh)(np.clip(r, 0.0, R))
    else:
        # plateaus in h' give jumps in rho: keep the upper value at ties
        order = np.lexsort((-hh, rr))
        rr, hh = rr[order], hh[order]
        vals = np.interp(r, rr, hh)
    vals = np.where(r <= R, vals, 0.0)
    vals = np.clip(vals, 0.0, None)
    vals = np.minimum.accumulate(vals)
    return RadialDensity(grid, vals)


class HeightTransform(TransformerMixin, BaseEstimator):
    """Estimator wrapper: fit on a density, transform to (s, h, h') samples.

    `inverse_transform` maps a height function back onto a radial grid.
    """

    def __init__(self, mass_grid_size=4096, mass_grid="chebyshev", num_cells=4096):
        self.mass_grid_size = mass_grid_size
        self.mass_grid = mass_grid
        self.num_cells = num_cells

    def _mass_nodes(self):
        if self.mass_grid == "chebyshev":
            return chebyshev_mass_grid(self.mass_grid_size)
        if self.mass_grid == "uniform":
            return uniform_mass_grid(self.mass_grid_size)
        raise ValueError(f"unknown mass grid {self.mass_grid!r}")

    def fit(self, rho, y=None):
        self.height_ = height_from_density(rho, self._mass_nodes())
        self.dimension_ = rho.dimension
        return self

    def transform(self, X):
        """(s, h, h') columns of the height function of density X."""
        check_is_fitted(self, "height_")
        hf = height_from_density(X, self._mass_nodes())
        return np.column_stack((hf.s, hf.h, hf.hprime))

    def inverse_transform(self, height=None, grid=None):
        check_is_fitted(self, "height_")
        return density_from_height(height or self.height_, self.dimension_, grid, self.num_cells)


# ---------------------------------------------------------------------------
# analytic and random density families


def uniform_density(radius, n, num_cells=4096):
    grid = RadialGrid.uniform(radius, n, num_cells)
    return RadialDensity(grid, np.full(grid.size, 1.0 / (unit_ball_volume(n) * radius ** n)))


def tent_density(n, radius=1.0, num_cells=4096, outer=None):
    grid = RadialGrid.uniform(outer or radius, n, num_cells)
    norm = (n + 1) / (unit_ball_volume(n) * radius ** n)
    # exact on the grid only when the radius is a node
    return RadialDensity(grid, norm * np.clip(1.0 - grid.nodes / radius, 0.0, None)).normalized()


def quadratic_cap_density(n, radius=1.0, num_cells=4096, outer=None):
    """rho proportional to (L^2 - r^2)_+ with unit mass."""
    grid = RadialGrid.uniform(outer or radius, n, num_cells)
    L = radius
    # integral of (L^2 - r^2) over B_L is c_n L^(n+2) * 2/(n+2); the trapezoid
    # rule misses it by O(dx^2), so renormalise on the grid
    norm = (n + 2) / (2.0 * unit_ball_volume(n) * L ** (n + 2))
    return RadialDensity(grid, norm * np.clip(L * L - grid.nodes ** 2, 0.0, None)).normalized()


def profile_density(profile, n, radius, num_cells=4096, outer=None):
    """Unit-mass density from an arbitrary non-increasing profile on [0, radius]."""
    grid = RadialGrid.uniform(outer or radius, n, num_cells)
    vals = np.where(grid.nodes <= radius, profile(np.clip(grid.nodes, 0.0, radius)), 0.0)
    rho = RadialDensity(grid, np.clip(vals, 0.0, None))
    return rho.normalized()


def random_profile(rng, radius=None, terms=3):
    """Seeded strictly decreasing compactly supported profile, as (callable, radius).

    Sum of terms a_k (1 - (r/R)^p_k)^q_k with p_k >= 1, q_k >= 1.
    """
    R = float(radius if radius is not None else rng.uniform(0.5, 2.0))
    a = rng.uniform(0.2, 1.0, terms)
    p = rng.uniform(1.0, 4.0, terms)
    q = rng.uniform(1.0, 3.0, terms)

    def profile(r):
        x = np.clip(np.asarray(r) / R, 0.0, 1.0)
        return np.sum(a[:, None] * (1.0 - x[None, :] ** p[:, None]) ** q[:, None], axis=0)

    return profile, R


def random_density(rng, n, num_cells=4096, radius=None):
    profile, R = random_profile(rng, radius)
    return profile_density(profile, n, R, num_cells)


def barenblatt_profile(n, m, t, mass=1.0):
    """Barenblatt solution of rho_t = Laplacian(rho^m), returned as (callable, radius)."""
    alpha = n / (n * (m - 1.0) + 2.0)
    beta = alpha / n
    k = alpha * (m - 1.0) / (2.0 * m * n)
    # choose C so that the profile has the requested mass
    from scipy.special import beta as beta_fn

    p = 1.0 / (m - 1.0)
    # mass = t^0 * omega_n * int_0^X (C - k x^2)^p x^(n-1) dx, X = sqrt(C/k)
    def mass_of(C):
        X = np.sqrt(C / k)
        return unit_sphere_area(n) * C ** p * X ** n * 0.5 * beta_fn(n / 2.0, p + 1.0)

    C = (mass / mass_of(1.0)) ** (1.0 / (p + n / 2.0))
    radius = np.sqrt(C / k) * t ** beta

    def profile(r):
        x = np.asarray(r) * t ** (-beta)
        return t ** (-alpha) * np.clip(C - k * x * x, 0.0, None) ** p

    return profile, radius


# ---------------------------------------------------------------------------
# serialization


def _sidecar(path):
    path = Path(path)
    return path.with_suffix(".json")


def save_density(rho, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.column_stack((rho.grid.nodes, rho.values)), delimiter=",",
               header="r,rho", comments="", fmt="%.17g")
    _sidecar(path).write_text(json.dumps({"dimension": rho.dimension, "mass": rho.mass}, indent=2))


def load_density(path, dimension=None):
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    side = _sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    n = dimension if dimension is not None else meta.get("dimension")
    if n is None:
        raise ValueError(f"no dimension for {path}: pass one or add {side.name}")
    return RadialDensity(RadialGrid(data[:, 0], int(n)), data[:, 1])


def save_height(height, path, dimension):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.column_stack((height.s, height.h, height.hprime)), delimiter=",",
               header="s,h,hprime", comments="", fmt="%.17g")
    _sidecar(path).write_text(json.dumps({
        "dimension": int(dimension), "mass": 1.0,
        "hprime_at_zero": height.hprime_at_zero, "height_at_one": height.height_at_one,
    }, indent=2))


def load_height(path):
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(_sidecar(path).read_text())
    return HeightFunction(data[:, 0], data[:, 1], data[:, 2],
                          meta["hprime_at_zero"], meta["height_at_one"]), int(meta["dimension"])

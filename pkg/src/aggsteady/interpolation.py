"""Interpolation between radially decreasing densities through their height functions.

rho_t is the density whose height function is (1 - t) h_0 + t h_1.  Because
h'_t is affine in t, the radius R_t(s) of the level set carrying mass s obeys
R_t(s)^-n = (1 - t) R_0(s)^-n + t R_1(s)^-n, which is how the curve is evaluated
away from the stored mass nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .radial_core import (
    HeightFunction,
    chebyshev_mass_grid,
    density_from_height,
    height_from_density,
    unit_ball_volume,
)

PLATEAU_RTOL = 1e-13
# finer than the transform defaults: reconstructed curve masses stay within 1e-8
CURVE_MASS_NODES = 8192
CURVE_CELLS = 16384


class PlateauError(ValueError):
    """Raised when h'_t is flat where a strictly increasing h'_t is needed."""


class _SlopeModel:
    """Continuous model of s -> h'(s) on [0, 1).

    log h' is interpolated monotonically against x = -log(1 - s); near s = 1 the
    blow-up h' ~ (1 - s)^-p is linear in these variables, so the last slope is
    used to extrapolate past the final mass node.
    """

    def __init__(self, height):
        s = np.concatenate(([0.0], height.s))
        hp = np.concatenate(([height.hprime_at_zero], height.hprime))
        hp = np.maximum.accumulate(hp)
        self.x = -np.log1p(-s)
        self.y = np.log(hp)
        self.spline = PchipInterpolator(self.x, self.y, extrapolate=False)
        dx = self.x[-1] - self.x[-2]
        self.tail_slope = max((self.y[-1] - self.y[-2]) / dx, 0.0)

    def log_hprime(self, s):
        x = -np.log1p(-np.clip(np.asarray(s, dtype=float), 0.0, 1.0 - 1e-300))
        inside = x <= self.x[-1]
        out = np.where(inside, self.spline(np.minimum(x, self.x[-1])), 0.0)
        return np.where(inside, out, self.y[-1] + self.tail_slope * (x - self.x[-1]))

    def __call__(self, s):
        return np.exp(self.log_hprime(s))


class _HeightModel:
    """Monotone model of s -> h(s) on [0, 1] with the end anchors h(0)=0, h(1)=max rho."""

    def __init__(self, height):
        s = np.concatenate(([0.0], height.s, [1.0]))
        h = np.concatenate(([0.0], height.h, [height.height_at_one]))
        self.spline = PchipInterpolator(s, h)

    def __call__(self, s):
        return self.spline(np.clip(np.asarray(s, dtype=float), 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class InterpolationCurve:
    """Curve t -> rho_t between two height functions on a shared mass grid."""

    start: HeightFunction
    end: HeightFunction
    dimension: int

    def __post_init__(self):
        if self.start.s.shape != self.end.s.shape or np.any(self.start.s != self.end.s):
            raise ValueError("endpoint height functions must share a mass grid")
        object.__setattr__(self, "_models", (
            _SlopeModel(self.start), _SlopeModel(self.end),
            _HeightModel(self.start), _HeightModel(self.end)))

    @classmethod
    def from_densities(cls, rho0, rho1, mass_grid=None):
        if rho0.dimension != rho1.dimension:
            raise ValueError("endpoint densities live in different dimensions")
        s = chebyshev_mass_grid(CURVE_MASS_NODES) if mass_grid is None else np.asarray(mass_grid, dtype=float)
        return cls(height_from_density(rho0, s), height_from_density(rho1, s), rho0.dimension)

    @classmethod
    def from_heights(cls, h0, h1, dimension, mass_grid=None):
        """Re-sample both endpoints monotonically onto one mass grid if needed."""
        if mass_grid is not None:
            h0, h1 = h0.resample(mass_grid), h1.resample(mass_grid)
        elif h0.s.shape != h1.s.shape or np.any(h0.s != h1.s):
            h1 = h1.resample(h0.s)
        return cls(h0, h1, dimension)

    @property
    def mass_grid(self):
        return self.start.s

    @property
    def endpoint_radii(self):
        n = self.dimension
        return self.start.support_radius(n), self.end.support_radius(n)

    def support_radius(self, t):
        R0, R1 = self.endpoint_radii
        n = self.dimension
        return ((1 - t) * R0 ** (-n) + t * R1 ** (-n)) ** (-1.0 / n)

    def height_at(self, t):
        _check_time(t)
        return self.start.combine(self.end, t)

    def density_at(self, t, grid=None, num_cells=CURVE_CELLS):
        return density_from_height(self.height_at(t), self.dimension, grid, num_cells)

    # -- continuous evaluation in the mass variable ---------------------------
    def hprime(self, s, t):
        f0, f1 = self._models[0], self._models[1]
        return (1 - t) * f0(s) + t * f1(s)

    def heights(self, s):
        """(h_0(s), h_1(s)) from the monotone models."""
        return self._models[2](s), self._models[3](s)

    def layer_radius(self, s, t):
        """Radius of the level set of rho_t that carries mass s."""
        return (unit_ball_volume(self.dimension) * self.hprime(s, t)) ** (-1.0 / self.dimension)

    def is_degenerate(self):
        return bool(np.array_equal(self.start.h, self.end.h)
                    and np.array_equal(self.start.hprime, self.end.hprime))


def _check_time(t):
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t={t} lies outside [0, 1]")


def curve_at(curve, t, grid=None, num_cells=CURVE_CELLS):
    return curve.density_at(t, grid, num_cells)


def _plateau_check(curve, t):
    hp = curve.height_at(t).hprime
    flat = np.diff(hp) <= PLATEAU_RTOL * hp[1:]
    if np.all(flat):
        raise PlateauError("h'_t is constant: the level sets do not single out a mass "
                           "coordinate (endpoints have plateaus)")


def solve_srt(curve, r, t, tol=1e-12):
    """Mass coordinate s with h'_t(s) = 1 / (c_n r^n), by bisection on the monotone h'_t."""
    _check_time(t)
    _plateau_check(curve, t)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    Rt = curve.support_radius(t)
    if np.any(r <= 0) or np.any(r >= Rt):
        raise ValueError(f"radius outside the open support (0, {Rt:.6g})")
    n = curve.dimension
    target = np.log(1.0 / (unit_ball_volume(n) * r ** n))
    f0, f1 = curve._models[0], curve._models[1]

    def log_hp(s):
        return np.log((1 - t) * np.exp(f0.log_hprime(s)) + t * np.exp(f1.log_hprime(s)))

    # bisection in x = -log(1 - s) keeps resolution near s = 1
    lo = np.zeros_like(r)
    hi = np.full_like(r, 1.0)
    while True:
        s_hi = -np.expm1(-hi)
        short = log_hp(s_hi) < target
        if not np.any(short):
            break
        hi = np.where(short, 2.0 * hi, hi)
        if np.max(hi) > 700:
            raise PlateauError("h'_t does not reach the requested level")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = log_hp(-np.expm1(-mid)) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(np.exp(-lo) - np.exp(-hi)) < tol:
            break
    s = -np.expm1(-0.5 * (lo + hi))
    return s if s.size > 1 else float(s[0])


def transport_field(curve, r, t):
    """Velocity v(r, t) = r (h_0 - h_1)(s_rt) / (n h_t(s_rt))."""
    if curve.is_degenerate():
        return np.zeros_like(np.asarray(r, dtype=float))
    s = np.atleast_1d(solve_srt(curve, r, t))
    h0, h1 = curve.heights(s)
    ht = (1 - t) * h0 + t * h1
    v = np.asarray(r, dtype=float) * (h0 - h1) / (curve.dimension * ht)
    return v if v.size > 1 else float(v[0])


def velocity_ratio_bound(curve):
    """sup_s max(h_0/h_1, h_1/h_0) / n, a t-independent bound on |v|/r."""
    h0, h1 = curve.start.h, curve.end.h
    ratio = np.maximum(h0 / h1, h1 / h0)
    top = max(curve.start.height_at_one / curve.end.height_at_one,
              curve.end.height_at_one / curve.start.height_at_one)
    return float(max(np.max(ratio), top)) / curve.dimension


@dataclass(frozen=True)
class LipschitzBound:
    kinetic: float
    crude: float
    sup_speed: float
    constant: float


def kinetic_energy(curve, t, num_cells=1024):
    """Integral of |v|^2 rho_t over R^n on a radial grid inside the support."""
    rho = curve.density_at(t, num_cells=num_cells)
    r = rho.r
    inside = (r > 0) & (r < curve.support_radius(t) * (1 - 1e-9))
    v = np.zeros_like(r)
    if np.any(inside) and not curve.is_degenerate():
        v[inside] = np.atleast_1d(transport_field(curve, r[inside], min(max(t, 1e-12), 1 - 1e-12)))
    return rho.grid.integrate(v * v * rho.values)


def wasserstein_lipschitz_bound(curve, t1, t2, num_times=11, num_cells=1024):
    """Benamou-Brenier style bounds on d_2(rho_t1, rho_t2).

    kinetic: (sup_t integral |v|^2 rho_t)^(1/2) |t2 - t1|, sup over a t-sample of [t1, t2].
    crude:   C max(R_0, R_1) |t2 - t1| with C = sup max(h_0/h_1, h_1/h_0) / n.
    """
    _check_time(t1)
    _check_time(t2)
    dt = abs(t2 - t1)
    C = velocity_ratio_bound(curve)
    crude = C * max(curve.endpoint_radii) * dt
    if dt == 0 or curve.is_degenerate():
        return LipschitzBound(0.0, 0.0 if curve.is_degenerate() else crude, 0.0, C)
    ts = np.linspace(min(t1, t2), max(t1, t2), num_times)
    speed = max(kinetic_energy(curve, t, num_cells) for t in ts)
    return LipschitzBound(float(np.sqrt(speed) * dt), float(crude), float(np.sqrt(speed)), C)


def _radial_cdf(rho):
    """Mass inside radius r at the grid nodes (exact for the piecewise-linear profile)."""
    from .radial_core import _cell_tail_mass

    r, v = rho.r, rho.values
    cells = _cell_tail_mass(r[:-1], r[1:], v[:-1], v[1:], rho.dimension)
    return np.concatenate(([0.0], np.cumsum(cells)))


def quantile_distance_1d(rho0, rho1, num=4096):
    """d_2 between two even densities on the line, from their quantile functions.

    For an even density the quantile at 1/2 + q/2 is the radius enclosing mass q,
    so d_2^2 = integral over q in (0, 1) of |r_0(q) - r_1(q)|^2.
    """
    if rho0.dimension != 1 or rho1.dimension != 1:
        raise ValueError("the quantile formula is one-dimensional")
    x, w = np.polynomial.legendre.leggauss(num)
    q = 0.5 * (x + 1.0)
    w = 0.5 * w
    radii = []
    for rho in (rho0, rho1):
        cdf = _radial_cdf(rho) / rho.mass
        keep = np.concatenate(([True], np.diff(cdf) > 0))
        radii.append(np.interp(q, cdf[keep], rho.r[keep]))
    return float(np.sqrt(np.sum(w * (radii[0] - radii[1]) ** 2)))


def continuity_residual(curve, t, num_cells=512, dt=1e-4):
    """Max of |d_t rho + r^(1-n) d_r(r^(n-1) v rho)| relative to max |d_t rho|.

    Evaluated on a common grid strictly inside the support of rho_t.
    """
    n = curve.dimension
    R = min(curve.support_radius(t - dt), curve.support_radius(t + dt), curve.support_radius(t))
    r = np.linspace(0.0, R, num_cells + 1)[1:-1]
    r = r[(r > 0.05 * R) & (r < 0.9 * R)]
    rho = lambda tt: _density_values(curve, tt, r)
    drho = (rho(t + dt) - rho(t - dt)) / (2 * dt)
    flux = r ** (n - 1) * np.atleast_1d(transport_field(curve, r, t)) * rho(t)
    div = np.gradient(flux, r) / r ** (n - 1)
    scale = np.max(np.abs(drho))
    return float(np.max(np.abs(drho + div)) / scale) if scale > 0 else 0.0


def _density_values(curve, t, r):
    s = np.atleast_1d(solve_srt(curve, r, t))
    h0, h1 = curve.heights(s)
    return (1 - t) * h0 + t * h1


def density_values(curve, t, r):
    """rho_t(r) = h_t(s_rt) pointwise, r strictly inside the support."""
    return _density_values(curve, t, np.atleast_1d(np.asarray(r, dtype=float)))


__all__ = [
    "InterpolationCurve",
    "LipschitzBound",
    "PlateauError",
    "continuity_residual",
    "curve_at",
    "density_values",
    "kinetic_energy",
    "quantile_distance_1d",
    "solve_srt",
    "transport_field",
    "velocity_ratio_bound",
    "wasserstein_lipschitz_bound",
]

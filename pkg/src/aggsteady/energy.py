"""Entropy, interaction energy and their behaviour along interpolation curves.

Two evaluation routes are provided for each functional:

* physical space, on a radial grid (``entropy``, ``interaction``);
* mass coordinates, through the height function (``entropy_from_height``,
  ``LayerInteraction``).  A radially decreasing density is a superposition of
  uniform balls B(0, R(s)) of density h'(s), so

      I[rho] = 1/2 double integral over (s1, s2) of mean W(|X - Y|),
               X uniform in B(0, R(s1)), Y uniform in B(0, R(s2)).

  Along an interpolation curve the radii R_t(s) move smoothly with t, which
  makes second differences in t free of grid noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import lens_volume
from .potentials import Potential, convolve
from .radial_core import (
    RadialDensity,
    RadialGrid,
    lp_integral,
    unit_ball_volume,
    unit_sphere_area,
)

_GL_PAIR = 32


def _check_m(m):
    if m <= 1:
        raise ValueError("entropies with m <= 1 are outside the supported range")


# ---------------------------------------------------------------------------
# entropy


def entropy(rho, m):
    """1/(m-1) times the integral of rho^m."""
    _check_m(m)
    return lp_integral(rho, m) / (m - 1.0)


def entropy_from_height(height, m):
    """m/(m-1) times the integral of h(s)^(m-1) over (0, 1), trapezoid with end anchors."""
    _check_m(m)
    s = np.concatenate(([0.0], height.s, [1.0]))
    h = np.concatenate(([0.0], height.h, [height.height_at_one]))
    return m / (m - 1.0) * float(np.trapezoid(h ** (m - 1.0), s))


def entropy_on_curve(curve, t, m):
    return entropy_from_height(curve.height_at(t), m)


# ---------------------------------------------------------------------------
# physical-space interaction


def _coarsen(rho, max_nodes):
    if rho.grid.size <= max_nodes:
        return rho
    R = rho.support_radius
    grid = RadialGrid.uniform(R, rho.dimension, max_nodes - 1)
    coarse = RadialDensity(grid, rho.evaluate(grid.nodes))
    return coarse


def _check_integrable(W, n):
    if W.is_riesz and W.riesz_exponent <= -n:
        raise ValueError(f"Riesz exponent k={W.riesz_exponent} <= -n is not locally integrable")


def interaction(rho, W, max_nodes=None):
    """1/2 integral of rho (W * rho), by the sphere-averaged kernel on the radial grid.

    Large grids are resampled onto at most `max_nodes` nodes (the dense kernel is
    quadratic in the node count).
    """
    _check_integrable(W, rho.dimension)
    if max_nodes is None:
        max_nodes = 2049 if rho.dimension == 1 else 513
    rho = _coarsen(rho, max_nodes)
    return 0.5 * rho.grid.integrate(rho.values * convolve(rho, W))


# ---------------------------------------------------------------------------
# interaction between uniform balls


def _riesz_ball_integral(k, n, L):
    """Integral of W_k(|x|) over B(0, L) in R^n."""
    L = np.asarray(L, dtype=float)
    om = unit_sphere_area(n)
    out = np.zeros_like(L)
    pos = L > 0
    Lp = np.where(pos, L, 1.0)
    if k == 0:
        val = unit_ball_volume(n) * Lp ** n * (np.log(Lp) - 1.0 / n)
    else:
        val = om * Lp ** (n + k) / (k * (n + k))
    return np.where(pos, val, out)


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u)


class BallPairRule:
    """Quadrature for the law of |X - Y|, X ~ U(B(0, R)), Y ~ U(B(0, r)), pairwise.

    The distance density is omega_n d^(n-1) V(d) / (c_n^2 R^n r^n) with V the lens
    volume.  On [0, |R - r|] the lens is the smaller ball, so that piece has
    closed forms for Riesz kernels; on [|R - r|, R + r] a smoothstep-mapped
    Gauss-Legendre rule absorbs the square-root behaviour at both ends.
    """

    def __init__(self, n, R, r, order=_GL_PAIR):
        self.n = int(n)
        self.R = np.asarray(R, dtype=float)
        self.r = np.asarray(r, dtype=float)
        x, w = np.polynomial.legendre.leggauss(order)
        u = 0.5 * (x + 1.0)
        phi, dphi = _smoothstep(u)
        self._u, self._phi, self._w = u, phi, 0.5 * w * dphi
        n = self.n
        cn = unit_ball_volume(n)
        self.lo = np.abs(self.R - self.r)
        self.hi = self.R + self.r
        self.small = np.minimum(self.R, self.r)
        self.norm = 1.0 / (cn * cn * self.R ** n * self.r ** n)
        span = (self.hi - self.lo)[..., None]
        self.d = self.lo[..., None] + span * phi
        lens = lens_volume(n, self.R[..., None], self.r[..., None], self.d)
        self.weights = (unit_sphere_area(n) * self.d ** (n - 1) * lens * span * self._w
                        * self.norm[..., None])
        # inner piece: generic nodes d = L u^3 for kernels without a closed form
        L = self.lo[..., None]
        self.d_inner = L * u ** 3
        self.w_inner = (unit_sphere_area(n) * self.d_inner ** (n - 1) * 3.0 * L * u * u * 0.5 * w
                        * cn * self.small[..., None] ** n * self.norm[..., None])

    def mean(self, W):
        """E W(|X - Y|) for every pair."""
        if W.kind == "step":
            return self.exceed(W.params["a"])
        if W.kind == "quadratic" or (W.is_riesz and W.riesz_exponent == 2.0):
            return self.n / (self.n + 2.0) * 0.5 * (self.R ** 2 + self.r ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            outer = np.sum(np.where(self.weights > 0, W.value(self.d), 0.0) * self.weights, axis=-1)
        if W.is_riesz:
            inner = (_riesz_ball_integral(W.riesz_exponent, self.n, self.lo)
                     * unit_ball_volume(self.n) * self.small ** self.n * self.norm)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.where(self.w_inner > 0, W.value(self.d_inner), 0.0)
            inner = np.sum(vals * self.w_inner, axis=-1)
        return outer + inner

    def exceed(self, a):
        """P(|X - Y| >= a) for every pair."""
        n = self.n
        if n == 1:
            return exceed_fraction_1d(self.R, self.r, a)
        cn = unit_ball_volume(n)
        lo, hi = self.lo, self.hi
        inner = cn * np.minimum(a, lo) ** n * cn * self.small ** n * self.norm
        top = np.clip(a, lo, hi)
        span = (top - lo)[..., None]
        d = lo[..., None] + span * self._phi
        lens = lens_volume(n, self.R[..., None], self.r[..., None], d)
        mid = np.sum(unit_sphere_area(n) * d ** (n - 1) * lens * span * self._w, axis=-1) * self.norm
        return np.clip(1.0 - inner - mid, 0.0, 1.0)


def ball_pair_mean(W, n, R, r, order=_GL_PAIR):
    """Mean of W(|X - Y|) for X, Y uniform on B(0, R), B(0, r)."""
    return BallPairRule(n, R, r, order).mean(W)


def exceed_fraction_1d(R, r, a):
    """P(|X - Y| >= a) for X ~ U(-R, R), Y ~ U(-r, r), by the three-case closed form."""
    f = 1.0 / (2.0 * np.asarray(R, dtype=float))
    g = 1.0 / (2.0 * np.asarray(r, dtype=float))
    return pair_integrand_1d(f, g, a)


def mass_quadrature(num=96):
    """Nodes and weights on (0, 1), clustered at both ends by the smoothstep map."""
    x, w = np.polynomial.legendre.leggauss(num)
    u = 0.5 * (x + 1.0)
    phi, dphi = _smoothstep(u)
    return phi, 0.5 * w * dphi


class LayerInteraction:
    """Interaction energy of a superposition of uniform balls.

    radii[i] carries mass weights[i]; the energy is
    1/2 sum_ij weights_i weights_j E W(|X_i - X_j|).
    """

    def __init__(self, n, radii, weights, order=_GL_PAIR):
        radii = np.asarray(radii, dtype=float)
        weights = np.asarray(weights, dtype=float)
        i, j = np.triu_indices(radii.size)
        self.n = n
        self.pair_weight = np.where(i == j, 1.0, 2.0) * weights[i] * weights[j]
        self.rule = BallPairRule(n, radii[i], radii[j], order)

    def energy(self, W):
        _check_integrable(W, self.n)
        return 0.5 * float(np.dot(self.pair_weight, self.rule.mean(W)))


def interaction_from_height(height, n, W, num=96, slope_model=None):
    from .interpolation import _SlopeModel

    s, w = mass_quadrature(num)
    model = slope_model or _SlopeModel(height)
    radii = (unit_ball_volume(n) * model(s)) ** (-1.0 / n)
    return LayerInteraction(n, radii, w).energy(W)


def curve_layers(curve, t, num=96, order=_GL_PAIR):
    s, w = mass_quadrature(num)
    return LayerInteraction(curve.dimension, curve.layer_radius(s, t), w, order)


def interaction_on_curve(curve, t, W, num=96):
    """I[rho_t] in mass coordinates; W may be one potential or a sequence of them."""
    layers = curve_layers(curve, t, num)
    if isinstance(W, Potential):
        return layers.energy(W)
    return np.array([layers.energy(w) for w in W])


# ---------------------------------------------------------------------------
# one-dimensional step potential: case analysis


def classify_1d(f, g, a, tol=0.0):
    """Case labels for rectangles of heights f = h'(s1), g = h'(s2) and step length a.

    1: the two intervals never reach distance a; 2: one interval is so much wider
    that the narrow one sits inside its a-shrunk core; 3: partial overlap;
    0: a boundary between cases (within `tol`).
    """
    f, g = np.broadcast_arrays(np.asarray(f, dtype=float), np.asarray(g, dtype=float))
    half_sum = 0.5 / f + 0.5 / g
    half_gap = np.abs(0.5 / f - 0.5 / g)
    case = np.full(f.shape, 3, dtype=int)
    case = np.where(half_sum < a - tol, 1, case)
    case = np.where(half_gap > a + tol, 2, case)
    edge = (np.abs(half_sum - a) <= tol) | (np.abs(half_gap - a) <= tol)
    return np.where(edge, 0, case)


def pair_integrand_1d(f, g, a):
    """Fraction of the rectangle pair with |x - y| >= a, by case."""
    f, g = np.broadcast_arrays(np.asarray(f, dtype=float), np.asarray(g, dtype=float))
    half_sum = 0.5 / f + 0.5 / g
    half_gap = np.abs(0.5 / f - 0.5 / g)
    wide = np.minimum(f, g)  # the wider interval has the smaller height
    case3 = f / (4 * g) + g / (4 * f) + a * a * f * g - a * f - a * g + 0.5
    out = np.where(half_gap >= a, 1.0 - 2.0 * a * wide, case3)
    return np.where(half_sum <= a, 0.0, out)


def pair_second_derivative_1d(f, g, df, dg, a):
    """d^2/dt^2 of the pair integrand when f, g move linearly with speeds df, dg."""
    f, g, df, dg = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (f, g, df, dg)))
    val = (g * df ** 2 / (2 * f ** 3) + f * dg ** 2 / (2 * g ** 3)
           + (2 * a * a - 1 / (2 * f * f) - 1 / (2 * g * g)) * df * dg)
    return np.where(classify_1d(f, g, a) == 3, val, 0.0)


def discriminant_1d(f, g, a):
    """Discriminant of the case-3 quadratic form in (f', g').

    Equals 4 (a - x + y)(a + x - y)(a + x + y)(a - x - y) with x = 1/2f, y = 1/2g,
    which is negative throughout case 3.
    """
    x = 0.5 / np.asarray(f, dtype=float)
    y = 0.5 / np.asarray(g, dtype=float)
    return 4 * (a - x + y) * (a + x - y) * (a + x + y) * (a - x - y)


def quadratic_form_discriminant_1d(f, g, a):
    """B^2 - 4AC computed directly from the second-derivative coefficients."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    A = g / (2 * f ** 3)
    C = f / (2 * g ** 3)
    B = 2 * a * a - 1 / (2 * f * f) - 1 / (2 * g * g)
    return B * B - 4 * A * C


@dataclass
class CaseTally:
    counts: dict
    value: float


def interaction_on_curve_1d(curve, t, a, num=256, tol=1e-12):
    """Step-potential interaction for n = 1 by explicit case dispatch.

    Returns a CaseTally with the energy and how many node pairs fell in each case.
    """
    if curve.dimension != 1:
        raise ValueError("the case analysis is one-dimensional")
    s, w = mass_quadrature(num)
    hp = curve.hprime(s, t)
    f, g = np.meshgrid(hp, hp, indexing="ij")
    ties = np.isclose(f, g, rtol=0, atol=0) & ~np.eye(num, dtype=bool)
    g = np.where(ties, g * (1 + 4 * np.finfo(float).eps), g)
    case = classify_1d(f, g, a, tol)
    vals = pair_integrand_1d(f, g, a)
    counts = {c: int(np.sum(case == c)) for c in (0, 1, 2, 3)}
    return CaseTally(counts, 0.5 * float(w @ vals @ w))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EnergyReport:
    S: float
    I: float
    E: float
    m: float
    potential: dict
    quadrature: dict = field(default_factory=dict)

    @classmethod
    def build(cls, S, I, m, W, **meta):
        return cls(float(S), float(I), float(S) + float(I), float(m), W.describe(), meta)

    def as_dict(self):
        return {"S": self.S, "I": self.I, "E": self.E, "m": self.m,
                "potential": self.potential, "quadrature": self.quadrature}


def free_energy(rho, m, W, max_nodes=None):
    S = entropy(rho, m)
    I = interaction(rho, W, max_nodes)
    return EnergyReport.build(S, I, m, W, route="physical", nodes=int(rho.grid.size))


def energy_on_curve(curve, t, m, W, num=96):
    S = entropy_on_curve(curve, t, m)
    I = interaction_on_curve(curve, t, W, num)
    return EnergyReport.build(S, I, m, W, route="mass", layers=num,
                              mass_nodes=int(curve.mass_grid.size))


@dataclass
class ConvexityCertificate:
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray
    E: np.ndarray
    m: float
    scale: float
    degenerate: bool
    passed: bool
    summary: str

    def second_differences(self, name):
        v = getattr(self, name)
        return v[:-2] - 2 * v[1:-1] + v[2:]

    def rows(self):
        return [(float(a), float(b), float(c), float(d))
                for a, b, c, d in zip(self.t, self.S, self.I, self.E)]


def certify_convexity(curve, m, W, tgrid=41, num=96, tol=1e-7):
    """Second differences of S, I and E along the curve.

    PASS for m >= 2 means every second difference of I is positive (above
    1e-10 times the energy scale) and those of E are above -tol * scale.  For
    m < 2 the verdict reports whether entropy concavity was observed and whether E
    lost convexity somewhere.
    """
    ts = np.linspace(0.0, 1.0, tgrid) if np.isscalar(tgrid) else np.asarray(tgrid, dtype=float)
    S = np.array([entropy_on_curve(curve, t, m) for t in ts])
    I = np.array([interaction_on_curve(curve, t, W, num) for t in ts])
    E = S + I
    scale = max(float(np.max(np.abs(E))), float(np.max(np.abs(S))), float(np.max(np.abs(I))), 1e-300)
    degenerate = curve.is_degenerate()
    d2 = lambda v: v[:-2] - 2 * v[1:-1] + v[2:]
    dS, dI, dE = d2(S), d2(I), d2(E)
    if degenerate:
        return ConvexityCertificate(ts, S, I, E, m, scale, True, True,
                                    "PASS (identical endpoints, zero variation)")
    if m >= 2:
        ok = bool(np.min(dI) > 1e-10 * scale and np.min(dE) > -tol * scale)
        msg = (f"{'PASS' if ok else 'FAIL'}: min d2I={np.min(dI):.3e}, min d2E={np.min(dE):.3e}, "
               f"scale={scale:.3e}")
        return ConvexityCertificate(ts, S, I, E, m, scale, False, ok, msg)
    concave = bool(np.max(dS) <= tol * scale)
    lost = bool(np.min(dE) < -tol * scale)
    msg = (f"INFO m<2: entropy {'concave' if concave else 'not concave'} "
           f"(max d2S={np.max(dS):.3e}); E {'loses' if lost else 'keeps'} convexity "
           f"(min d2E={np.min(dE):.3e})")
    return ConvexityCertificate(ts, S, I, E, m, scale, False, True, msg)


def endpoint_slopes(curve, m, W, ts=(1e-2, 1e-3, 1e-4), num=96):
    """|E[rho_t] - E[rho_0]| / t for small t; tends to zero when rho_0 is critical."""
    E0 = energy_on_curve(curve, 0.0, m, W, num).E
    slopes = np.array([abs(energy_on_curve(curve, t, m, W, num).E - E0) / t for t in ts])
    return slopes, E0


@dataclass
class DilationTable:
    lambdas: np.ndarray
    S: np.ndarray
    I: np.ndarray

    @property
    def E(self):
        return self.S + self.I

    def small_scale_exponent(self, offset=0.0, count=None):
        """Slope of log(E - offset) against log(lambda) over the smallest lambdas."""
        lam = self.lambdas
        order = np.argsort(lam)
        take = order[: count or max(3, lam.size // 2)]
        y = np.log(np.abs(self.E[take] - offset))
        return float(np.polyfit(np.log(lam[take]), y, 1)[0])


def dilate(rho, lam):
    """rho_lambda(x) = lambda^n rho(lambda x): unit mass, support scaled by 1/lambda."""
    n = rho.dimension
    grid = RadialGrid(rho.grid.nodes / lam, n)
    return RadialDensity(grid, rho.values * lam ** n)


def dilation_scan(rho, m, W, lambdas, max_nodes=None):
    lambdas = np.asarray(lambdas, dtype=float)
    S = np.array([entropy(dilate(rho, lam), m) for lam in lambdas])
    I = np.array([interaction(dilate(rho, lam), W, max_nodes) for lam in lambdas])
    return DilationTable(lambdas, S, I)


__all__ = [
    "BallPairRule",
    "CaseTally",
    "ConvexityCertificate",
    "DilationTable",
    "EnergyReport",
    "LayerInteraction",
    "ball_pair_mean",
    "certify_convexity",
    "classify_1d",
    "curve_layers",
    "dilate",
    "dilation_scan",
    "discriminant_1d",
    "endpoint_slopes",
    "energy_on_curve",
    "entropy",
    "entropy_from_height",
    "entropy_on_curve",
    "exceed_fraction_1d",
    "free_energy",
    "interaction",
    "interaction_from_height",
    "interaction_on_curve",
    "interaction_on_curve_1d",
    "mass_quadrature",
    "pair_integrand_1d",
    "pair_second_derivative_1d",
    "quadratic_form_discriminant_1d",
]

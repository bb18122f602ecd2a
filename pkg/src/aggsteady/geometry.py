"""Ball-intersection geometry behind the n-dimensional interaction convexity.

Notation: B_r is centred at the origin and the unit ball B_1 is centred at
distance s.  s1 is the distance from the origin to the plane through the
intersection sphere, l the radius of that sphere, and S(R, r) the Heron
quantity of the triangle with sides R, r, 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import betainc, beta as beta_fn

from .radial_core import unit_ball_volume, unit_sphere_area


def heron(R, r):
    """(R+r+1)(-R+r+1)(R-r+1)(R+r-1); 16 times the squared triangle area."""
    R = np.asarray(R, dtype=float)
    r = np.asarray(r, dtype=float)
    return (R + r + 1) * (-R + r + 1) * (R - r + 1) * (R + r - 1)


def chord_foot(r, s):
    return (s * s + r * r - 1.0) / (2.0 * s)


def chord_half_length(r, s):
    return np.sqrt(np.clip(heron(s, r), 0.0, None)) / (2.0 * s)


def c_tilde(n):
    """c_(n-1) omega_n / (2^(n-1) c_n^2), which equals n c_(n-1) / (2^(n-1) c_n)."""
    return unit_ball_volume(n - 1) * unit_sphere_area(n) / (2 ** (n - 1) * unit_ball_volume(n) ** 2)


def cap_integral(n, x):
    """Integral of (1 - y^2)^((n-1)/2) over [x, 1], for x in [-1, 1]."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    if n == 1:
        return 1.0 - x
    if n == 2:
        return 0.5 * (np.arccos(x) - x * np.sqrt(1.0 - x * x))
    if n == 3:
        return 2.0 / 3.0 - x + x ** 3 / 3.0
    a = 0.5 * (n + 1)
    half = 0.5 * beta_fn(0.5, a)
    return half * (1.0 - np.sign(x) * betainc(0.5, a, x * x))


def ball_intersection(n, r, s):
    """A(r, 1; s) = |B_r(0) intersect B_1(s e)|."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    r, s = np.broadcast_arrays(r, s)
    out = np.zeros(r.shape)
    cn = unit_ball_volume(n)
    contained = s <= np.abs(1.0 - r)
    out = np.where(contained, cn * np.minimum(r, 1.0) ** n, out)
    lens = (~contained) & (s < r + 1.0)
    if np.any(lens):
        ss = np.where(lens, s, 1.0)
        rr = np.where(lens, r, 1.0)
        s1 = chord_foot(rr, ss)
        c = unit_ball_volume(n - 1)
        val = c * (cap_integral(n, ss - s1) + rr ** n * cap_integral(n, s1 / rr))
        out = np.where(lens, val, out)
    return out


def ball_intersection_partials(n, r, s):
    """Closed-form (A_s, A_r) inside the lens regime |1 - r| < s < 1 + r."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    c = unit_ball_volume(n - 1)
    s1 = chord_foot(r, s)
    l = chord_half_length(r, s)
    a_s = -c * l ** (n - 1)
    a_r = c * l ** (n - 1) * s1 / r + c * n * r ** (n - 1) * cap_integral(n, s1 / r)
    return a_s, a_r


def lens_volume(n, R, r, d):
    """|B_R(0) intersect B_r(d e)| by scaling the unit-ball formula."""
    R = np.asarray(R, dtype=float)
    return R ** n * ball_intersection(n, np.asarray(r) / R, np.asarray(d) / R)


def exceed_fraction(n, R, r, rtol=1e-13):
    """I(R, r): fraction of B_R x B_r with |x - y| > 1, by 1-D quadrature of A."""
    R = float(R)
    r = float(r)
    if R + r <= 1.0:
        return 0.0
    if abs(R - r) >= 1.0:
        big = max(R, r)
        return 1.0 - big ** (-n)
    cn = unit_ball_volume(n)
    om = unit_sphere_area(n)

    def integrand(s):
        return float(ball_intersection(n, r, s)) * om * s ** (n - 1)

    lo, hi = R, r + 1.0
    breaks = [b for b in (abs(1.0 - r),) if lo < b < hi]
    total = 0.0
    edges = [lo] + breaks + [hi]
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rtol, limit=200)
        total += val
    return 1.0 - R ** (-n) + total / (cn * cn * R ** n * r ** n)


@dataclass(frozen=True)
class GeometryBundle:
    R: float
    r: float
    heron: float
    I: float
    U: float
    V: float
    W: float
    u: float
    v: float
    w: float


def second_derivative_coefficients(n, R, r):
    """Closed forms of U = W, V and the quadratic-form coefficients u, v, w."""
    R = np.asarray(R, dtype=float)
    r = np.asarray(r, dtype=float)
    S = heron(R, r)
    ct = c_tilde(n)
    Sp = np.clip(S, 0.0, None) ** ((n - 1) / 2.0)
    U = ct * R * r * Sp
    V = -0.5 * ct * (R * R + r * r - 1.0) * Sp
    u = (R / r) ** (n + 1) * U
    w = (r / R) ** (n + 1) * U
    return U, V, U, u, V, w


def interaction_geometry_nd(n, R, r, with_integral=True):
    S = float(heron(R, r))
    U, V, Wc, u, v, w = (float(x) for x in second_derivative_coefficients(n, R, r))
    I = exceed_fraction(n, R, r) if with_integral else float("nan")
    return GeometryBundle(float(R), float(r), S, I, U, V, Wc, u, v, w)


def second_derivative_in_t(n, R, r, alpha, beta):
    """d^2/dt^2 I(R(t), r(t)) when R^-n and r^-n move with constant speeds alpha, beta."""
    _, _, _, u, v, w = second_derivative_coefficients(n, R, r)
    return (u * alpha ** 2 + 2 * v * alpha * beta + w * beta ** 2) / n ** 2


def finite_difference_coefficients(n, R, r, step=1e-3):
    """U, V, W from centred differences of the quadrature-based I(R, r)."""
    f = lambda a, b: exceed_fraction(n, a, b)
    p = n + 1

    def I_R(a, b):
        return (f(a + step, b) - f(a - step, b)) / (2 * step)

    def I_r(a, b):
        return (f(a, b + step) - f(a, b - step)) / (2 * step)

    def F(a, b):
        return a ** p * b ** p * I_R(a, b)

    def G(a, b):
        return a ** p * b ** p * I_r(a, b)

    U = (F(R + step, r) - F(R - step, r)) / (2 * step)
    Wc = (G(R, r + step) - G(R, r - step)) / (2 * step)
    I_Rr = (f(R + step, r + step) - f(R + step, r - step)
            - f(R - step, r + step) + f(R - step, r - step)) / (4 * step * step)
    V = R ** p * r ** p * I_Rr
    return U, V, Wc

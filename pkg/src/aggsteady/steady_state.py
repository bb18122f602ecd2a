"""Radial steady states of the aggregation-diffusion equation.

A steady state satisfies m/(m-1) rho^(m-1) + W * rho = C on its support, so it
is a fixed point of

    Phi(rho) = ((m-1)/m (C - W * rho))_+^(1/(m-1)),

with C fixed by the mass constraint.  The solver iterates a damped version of
this map on a radial grid that follows the free boundary.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator

from .potentials import convolver
from .radial_core import RadialDensity, RadialGrid, quadratic_cap_density

log = logging.getLogger(__name__)
REMNANT = 1e-14


class SteadyStateError(RuntimeError):
    """Solver failure carrying the residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass
class SteadyState:
    density: RadialDensity
    C: float
    residual: float
    laplacian_at_zero: float
    support_radius: float
    m: float
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False)

    @property
    def nondegenerate(self):
        return self.laplacian_at_zero < 0

    def summary(self):
        return {"C": self.C, "residual": self.residual, "supportRadius": self.support_radius,
                "laplacianAtZero": self.laplacian_at_zero, "iterations": self.iterations,
                "converged": self.converged, "m": self.m, "mass": self.density.mass}


def velocity_potential(rho, W, m, potential=None):
    """xi = m/(m-1) rho^(m-1) + W * rho at the nodes."""
    phi = convolver(rho.grid, W)(rho.values) if potential is None else potential
    return m / (m - 1.0) * rho.values ** (m - 1.0) + phi


def _profile(phi, C, m):
    return np.clip((m - 1.0) / m * (C - phi), 0.0, None) ** (1.0 / (m - 1.0))


def mass_multiplier(phi, grid, m, mass=1.0):
    """C such that ((m-1)/m (C - phi))_+^(1/(m-1)) has the requested mass."""
    lo = float(np.min(phi))
    gap = max(1.0, float(np.max(phi) - lo))
    hi = lo + gap
    f = lambda C: grid.integrate(_profile(phi, C, m)) - mass
    for _ in range(200):
        if f(hi) > 0:
            break
        hi = lo + 2.0 * (hi - lo)
    else:
        raise SteadyStateError(f"mass root not bracketed in C in [{lo:.6g}, {hi:.6g}]")
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def free_boundary(grid, phi, C):
    """Radius where C - phi changes sign, by linear interpolation of the smooth phi."""
    r = grid.nodes
    inside = np.nonzero(C - phi > 0)[0]
    if inside.size == 0:
        return 0.0
    i = inside[-1]
    if i == r.size - 1:
        return float(r[-1])
    a, b = C - phi[i], C - phi[i + 1]
    return float(r[i] + a / (a - b) * (r[i + 1] - r[i]))


def laplacian_at_origin(rho, nodes=5):
    """n times the second derivative at 0, from a least-squares fit rho ~ a + b r^2."""
    r = rho.r[:nodes]
    v = rho.values[:nodes]
    b = np.polyfit(r * r, v, 1)[0]
    return float(2.0 * rho.dimension * b)


def euler_lagrange_residual(rho, W, m, potential=None):
    """(residual, C): best constant and sup deviation of xi over the support nodes."""
    xi = velocity_potential(rho, W, m, potential)
    on = rho.values > 0
    if not np.any(on):
        return np.inf, np.nan
    lo, hi = float(np.min(xi[on])), float(np.max(xi[on]))
    return 0.5 * (hi - lo), 0.5 * (hi + lo)


def _regrid(rho, radius, num_cells, mass):
    grid = RadialGrid.uniform(radius, rho.dimension, num_cells)
    vals = rho.evaluate(grid.nodes)
    new = RadialDensity(grid, vals)
    return new.normalized(mass)


def default_cells(n):
    return 4096 if n == 1 else 1024


def solve_steady(W, m, n, init=None, *, mass=1.0, num_cells=None, tol=1e-8, step_tol=1e-10,
                 damping=0.5, max_iter=20000, min_damping=1.0 / 1024, raise_on_failure=True):
    """Damped fixed-point iteration for the Euler-Lagrange identity.

    The grid is uniform on [0, 2 L] with L the current support radius, and is
    rebuilt whenever the support leaves [0.3, 0.8] of the outer radius.
    """
    if m <= 1:
        raise ValueError("m must exceed 1")
    num_cells = num_cells or default_cells(n)
    if init is None:
        init = quadratic_cap_density(n, 1.0, num_cells)
    if init.dimension != n:
        raise ValueError("initial density has the wrong dimension")
    rho = _regrid(init, 2.0 * init.support_radius, num_cells, mass)
    tau = damping
    history = []
    last = np.inf
    for it in range(1, max_iter + 1):
        conv = convolver(rho.grid, W)
        phi = conv(rho.values)
        res, _ = euler_lagrange_residual(rho, W, m, phi)
        C = mass_multiplier(phi, rho.grid, m, mass)
        cand = _profile(phi, C, m)
        change = rho.grid.integrate(np.abs(cand - rho.values)) * tau
        history.append((res, change, tau))
        if res < tol and change < step_tol:
            break
        if res > last and tau > min_damping:
            tau *= 0.5
        last = res
        mixed = (1 - tau) * rho.values + tau * cand
        # damping leaves geometrically decaying remnants outside the new support
        mixed[(cand == 0) & (mixed < REMNANT * np.max(mixed))] = 0.0
        new = RadialDensity(rho.grid, mixed).normalized(mass)
        edge = free_boundary(rho.grid, phi, C)
        outer = rho.grid.outer_radius
        if edge > 0.8 * outer or edge < 0.3 * outer:
            new = _regrid(new, 2.0 * max(edge, new.support_radius), num_cells, mass)
            last = np.inf
        rho = new
    else:
        msg = (f"no convergence after {max_iter} iterations: residual {history[-1][0]:.3e}, "
               f"step {history[-1][1]:.3e}")
        if raise_on_failure:
            raise SteadyStateError(msg, history)
        log.warning(msg)
        return _package(rho, W, m, phi, history, converged=False)
    return _package(rho, W, m, phi, history, converged=True)


def _package(rho, W, m, phi, history, converged):
    res, C = euler_lagrange_residual(rho, W, m, phi)
    return SteadyState(rho, C, res, laplacian_at_origin(rho), free_boundary(rho.grid, phi, C), m,
                       len(history), converged, history)


@dataclass
class VerificationReport:
    residual: float
    C: float
    weak_residual: float
    exterior_violation: float
    support_radius: float

    def ok(self, tol):
        return self.residual < tol and self.exterior_violation <= tol


def verify_steady(rho, W, m, widths=(0.25, 0.5, 1.0, 2.0)):
    """Sup residual on the support plus a weak-form residual.

    The weak form tests grad rho^m + rho grad(W * rho) = 0 against Gaussians
    psi(r) = exp(-(r/sigma)^2):  - int rho^m Lap psi + int rho phi' psi' = 0.
    """
    phi = convolver(rho.grid, W)(rho.values)
    res, C = euler_lagrange_residual(rho, W, m, phi)
    off = rho.values == 0
    exterior = float(np.max(C - phi[off])) if np.any(off) else 0.0
    n = rho.dimension
    r = rho.r
    dphi = np.gradient(phi, r)
    L = max(free_boundary(rho.grid, phi, C), rho.r[1])
    worst = 0.0
    for w in widths:
        sig = w * L
        psi = np.exp(-(r / sig) ** 2)
        dpsi = -2 * r / sig ** 2 * psi
        lap = (-2 * n / sig ** 2 + 4 * r * r / sig ** 4) * psi
        a = rho.grid.integrate(rho.values ** m * lap)
        b = rho.grid.integrate(rho.values * dphi * dpsi)
        scale = rho.grid.integrate(np.abs(rho.values ** m * lap)) + rho.grid.integrate(
            np.abs(rho.values * dphi * dpsi))
        worst = max(worst, abs(-a + b) / scale if scale > 0 else 0.0)
    return VerificationReport(res, C, worst, max(exterior, 0.0), free_boundary(rho.grid, phi, C))


# ---------------------------------------------------------------------------
# uniqueness scans


def profile_distance(a, b, num=8192):
    """L1 distance between two radial densities on a common fine grid."""
    n = a.dimension
    R = max(a.support_radius, b.support_radius)
    grid = RadialGrid.uniform(R, n, num)
    return grid.integrate(np.abs(a.evaluate(grid.nodes) - b.evaluate(grid.nodes)))


@dataclass
class ScanReport:
    states: list
    clusters: list
    failures: list
    threshold: float

    @property
    def num_clusters(self):
        return len(self.clusters)

    def representatives(self):
        return [self.states[c[0]] for c in self.clusters]


def cluster_states(states, threshold):
    clusters = []
    for i, st in enumerate(states):
        if st is None:
            continue
        for c in clusters:
            if profile_distance(states[c[0]].density, st.density) < threshold:
                c.append(i)
                break
        else:
            clusters.append([i])
    return clusters


def uniqueness_scan(W, m, n, inits, threshold=1e-3, jobs=1, **opts):
    """Solve from every initial density and cluster the limits by L1 distance.

    Members that fail to converge are listed in `failures` with their message.
    """
    inits = list(inits)

    def run(init):
        try:
            return solve_steady(W, m, n, init, **opts), None
        except SteadyStateError as exc:
            return None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, inits))
    else:
        results = [run(x) for x in inits]
    states = [r[0] for r in results]
    failures = [(i, r[1]) for i, r in enumerate(results) if r[1] is not None]
    return ScanReport(states, cluster_states(states, threshold), failures, threshold)


def diverse_inits(n, count=10, num_cells=None, seed=0):
    """Initial densities of varying support radius and flatness (seeded)."""
    from .radial_core import profile_density

    num_cells = num_cells or default_cells(n)
    rng = np.random.default_rng(seed)
    radii = np.geomspace(0.3, 6.0, count)
    out = []
    for i, R in enumerate(radii):
        p = rng.uniform(1.0, 4.0)
        q = [0.5, 1.0, 2.0, 4.0][i % 4]
        out.append(profile_density(lambda r, R=R, p=p, q=q: (1 - (r / R) ** p) ** q, n, R, num_cells))
    return out


class SteadyStateSolver(BaseEstimator):
    """Estimator wrapper around `solve_steady`.

    fit(init) runs the solver and exposes density_, C_, residual_,
    support_radius_ and laplacian_at_zero_; score() returns minus the residual.
    """

    def __init__(self, potential=None, m=2.0, dimension=1, mass=1.0, tol=1e-8, damping=0.5,
                 num_cells=None, max_iter=20000):
        self.potential = potential
        self.m = m
        self.dimension = dimension
        self.mass = mass
        self.tol = tol
        self.damping = damping
        self.num_cells = num_cells
        self.max_iter = max_iter

    def fit(self, init=None, y=None):
        st = solve_steady(self.potential, self.m, self.dimension, init, mass=self.mass,
                          num_cells=self.num_cells, tol=self.tol, damping=self.damping,
                          max_iter=self.max_iter)
        self.state_ = st
        self.density_ = st.density
        self.C_ = st.C
        self.residual_ = st.residual
        self.support_radius_ = st.support_radius
        self.laplacian_at_zero_ = st.laplacian_at_zero
        self.n_iter_ = st.iterations
        return self

    def predict(self, r):
        return self.density_.evaluate(r)

    def score(self, init=None, y=None):
        return -euler_lagrange_residual(self.density_, self.potential, self.m)[0]


__all__ = [
    "ScanReport",
    "SteadyState",
    "SteadyStateError",
    "SteadyStateSolver",
    "VerificationReport",
    "cluster_states",
    "diverse_inits",
    "euler_lagrange_residual",
    "free_boundary",
    "laplacian_at_origin",
    "mass_multiplier",
    "profile_distance",
    "solve_steady",
    "uniqueness_scan",
    "velocity_potential",
    "verify_steady",
]

"""Explicit finite-volume solver for rho_t = div(rho grad xi), xi = m/(m-1) rho^(m-1) + W * rho.

Cells are the hat-function control volumes of a uniform radial grid, so the
discrete mass is exactly `grid.integrate`.  Fluxes live on the midpoints between
nodes, use the upwind density, and telescope, which gives exact mass
conservation and the semi-discrete identity dE/dt = -D with

    D = sum over faces of A_f rho_upwind (xi_(i+1) - xi_i)^2 / dr.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .potentials import convolver
from .radial_core import RadialDensity, RadialGrid, lp_integral, lp_norm, moment, unit_sphere_area
from .steady_state import SteadyStateError, solve_steady, verify_steady

log = logging.getLogger(__name__)

DIAGNOSTIC_COLUMNS = ("t", "mass", "S", "I", "E", "D", "norm3m", "firstMoment", "linf",
                      "supportRadius")


class EvolutionError(RuntimeError):
    pass


@dataclass
class EvolutionState:
    density: RadialDensity
    time: float
    diagnostics: dict = field(default_factory=dict)


class _Operator:
    """Grid-bound pieces of the scheme: face areas, spacing, convolution."""

    def __init__(self, grid, W, m):
        r = grid.nodes
        self.grid = grid
        self.dr = float(r[1] - r[0])
        faces = 0.5 * (r[:-1] + r[1:])
        n = grid.dimension
        self.area = unit_sphere_area(n) * faces ** (n - 1)
        self.volume = np.asarray(grid.weights)
        self.conv = convolver(grid, W)
        self.m = m

    def potential(self, values):
        return self.conv(values)

    def xi(self, values, phi):
        m = self.m
        return m / (m - 1.0) * values ** (m - 1.0) + phi

    def fluxes(self, values, xi):
        """Outward flux through each face and the upwind density used."""
        dxi = np.diff(xi)
        upwind = np.where(dxi > 0, values[1:], values[:-1])
        coef = self.area * upwind / self.dr
        return -coef * dxi, upwind, dxi

    def dissipation(self, values, xi):
        _, upwind, dxi = self.fluxes(values, xi)
        return float(np.sum(self.area * upwind * dxi * dxi) / self.dr)

    def energy(self, values, phi):
        m = self.m
        S = float(np.dot(self.volume, values ** m)) / (m - 1.0)
        I = 0.5 * float(np.dot(self.volume, values * phi))
        return S, I

    def stable_step(self, values, xi, cfl):
        dxi = np.diff(xi)
        # outflow from the upwind cell must not exceed its content
        speed = self.area * np.abs(dxi) / self.dr
        out = np.zeros_like(values)
        np.add.at(out, np.where(dxi > 0, np.arange(1, values.size), np.arange(values.size - 1)), speed)
        with np.errstate(divide="ignore", over="ignore"):
            dt_adv = np.min(np.where(out > 0, self.volume / np.where(out > 0, out, 1.0), np.inf))
        # linearised porous-medium diffusion
        peak = self.m * np.maximum(values[:-1], values[1:]) ** (self.m - 1.0)
        coef = self.area * peak / self.dr
        diff = np.zeros_like(values)
        diff[:-1] += coef
        diff[1:] += coef
        with np.errstate(divide="ignore", over="ignore"):
            dt_diff = np.min(np.where(diff > 0, self.volume / (2.0 * np.where(diff > 0, diff, 1.0)), np.inf))
        dt = cfl * min(dt_adv, dt_diff)
        return float(dt) if np.isfinite(dt) else 1.0


def _expand(rho):
    """Same spacing, twice the outer radius, zero padding."""
    r = rho.r
    dr = r[1] - r[0]
    extra = r.size - 1
    nodes = np.concatenate((r, r[-1] + dr * np.arange(1, extra + 1)))
    grid = RadialGrid(nodes, rho.dimension)
    return RadialDensity(grid, np.concatenate((rho.values, np.zeros(extra))))


def _diagnostics(rho, op, phi, xi, t, m):
    S, I = op.energy(rho.values, phi)
    p = 3.0 - m
    return {
        "t": t, "mass": rho.mass, "S": S, "I": I, "E": S + I, "D": op.dissipation(rho.values, xi),
        "norm3m": lp_norm(rho, p), "firstMoment": moment(rho, 1), "linf": rho.linf,
        "supportRadius": rho.support_radius,
    }


@dataclass
class Trajectory:
    rows: list
    snapshots: list
    m: float
    steps: int = 0
    halvings: int = 0
    max_mass_drift: float = 0.0
    max_energy_rise: float = 0.0
    dissipated: float = 0.0
    dissipated_left: float = 0.0
    monotone_violations: int = 0

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    @property
    def final(self):
        return self.snapshots[-1][1]

    def edi_gap(self, rule="trapezoid"):
        """(E(T) + integral of D dt - E(0)) / |E(0)|; the inequality asks for <= 1e-6.

        rule="left" uses D at the start of each step, which overestimates the
        integral by O(dt) for the explicit scheme.
        """
        E = self.column("E")
        total = self.dissipated if rule == "trapezoid" else self.dissipated_left
        return float((E[-1] + total - E[0]) / max(abs(E[0]), 1e-300))


class Evolver:
    """Explicit upwind evolution with CFL control.

    Each step is retried with half the time step when it would create negative
    density beyond `clip_tol` or raise the energy by more than `energy_tol` |E|.
    """

    def __init__(self, W, m, cfl=0.4, expand_at=0.9, energy_tol=1e-8, clip_tol=1e-12,
                 check_monotone=True, remnant=1e-14):
        if m <= 1:
            raise ValueError("m must exceed 1")
        self.W = W
        self.m = float(m)
        self.cfl = cfl
        self.expand_at = expand_at
        self.energy_tol = energy_tol
        self.clip_tol = clip_tol
        self.check_monotone = check_monotone
        self.remnant = remnant
        self._op = None

    def _operator(self, grid):
        if self._op is None or self._op.grid is not grid:
            self._op = _Operator(grid, self.W, self.m)
        return self._op

    def _advance(self, values, op, xi, dt):
        flux, _, _ = op.fluxes(values, xi)
        div = np.zeros_like(values)
        div[:-1] += flux
        div[1:] -= flux
        return values - dt * div / op.volume

    def step(self, state, dt=None):
        """One accepted explicit step; returns (new_state, dt_used, halvings)."""
        rho = state.density
        op = self._operator(rho.grid)
        values = rho.values
        phi = op.potential(values)
        xi = op.xi(values, phi)
        S, I = op.energy(values, phi)
        E0 = S + I
        D0 = op.dissipation(values, xi)
        limit = op.stable_step(values, xi, self.cfl)
        dt = min(dt, limit) if dt is not None else limit
        halvings = 0
        mass0 = float(np.dot(op.volume, values))
        while True:
            new = self._advance(values, op, xi, dt)
            scale = max(float(np.max(values)), 1e-300)
            ok = np.min(new) >= -self.clip_tol * scale
            if ok:
                new = np.clip(new, 0.0, None)
                # upwinding leaks geometrically small mass one cell per step past the front
                new[new < self.remnant * scale] = 0.0
                mass1 = float(np.dot(op.volume, new))
                if mass1 > 0:
                    new *= mass0 / mass1
                phi1 = op.potential(new)
                E1 = sum(op.energy(new, phi1))
                if E1 <= E0 + self.energy_tol * abs(E0) + 1e-300:
                    break
            halvings += 1
            dt *= 0.5
            if halvings > 40:
                raise EvolutionError("time step collapsed: negative density or energy growth")
        out = RadialDensity(rho.grid, new)
        if self.check_monotone and not out.is_radially_decreasing(1e-9):
            log.debug("radial monotonicity lost at t=%g", state.time + dt)
        D1 = op.dissipation(new, op.xi(new, phi1))
        diag = {"E": E1, "D": D1, "D_prev": D0, "E_prev": E0}
        return EvolutionState(out, state.time + dt, diag), dt, halvings

    def run(self, init, t_max, max_steps=1_000_000, snapshot_every=None, record_every=1,
            stop=None):
        """Evolve until t_max (or max_steps); `stop(state, row)` may end the run early."""
        rho = init
        state = EvolutionState(rho, 0.0)
        op = self._operator(rho.grid)
        phi = op.potential(rho.values)
        rows = [_diagnostics(rho, op, phi, op.xi(rho.values, phi), 0.0, self.m)]
        snapshots = [(0.0, rho)]
        traj = Trajectory(rows, snapshots, self.m)
        mass_ref = rho.mass
        steps = 0
        while state.time < t_max and steps < max_steps:
            rho = state.density
            if rho.support_radius > self.expand_at * rho.grid.outer_radius:
                rho = _expand(rho)
                state = EvolutionState(rho, state.time)
            new, dt, halv = self.step(state, min(t_max - state.time, np.inf))
            steps += 1
            traj.halvings += halv
            traj.dissipated += 0.5 * (new.diagnostics["D"] + new.diagnostics["D_prev"]) * dt
            traj.dissipated_left += new.diagnostics["D_prev"] * dt
            traj.max_energy_rise = max(traj.max_energy_rise,
                                       (new.diagnostics["E"] - new.diagnostics["E_prev"])
                                       / max(abs(new.diagnostics["E_prev"]), 1e-300))
            mass = new.density.mass
            traj.max_mass_drift = max(traj.max_mass_drift, abs(mass - rho.mass) / mass_ref)
            if self.check_monotone and not new.density.is_radially_decreasing(1e-9):
                traj.monotone_violations += 1
            state = new
            last = steps >= max_steps or state.time >= t_max
            if steps % record_every == 0 or last:
                op = self._operator(state.density.grid)
                phi = op.potential(state.density.values)
                row = _diagnostics(state.density, op, phi, op.xi(state.density.values, phi),
                                   state.time, self.m)
                rows.append(row)
                if stop is not None and stop(state, row):
                    last = True
            if (snapshot_every and steps % snapshot_every == 0) or last:
                snapshots.append((state.time, state.density))
            if last:
                break
        traj.steps = steps
        return traj


def evolve(W, m, init, t_max, **kwargs):
    run_opts = {k: kwargs.pop(k) for k in ("max_steps", "snapshot_every", "record_every", "stop")
                if k in kwargs}
    return Evolver(W, m, **kwargs).run(init, t_max, **run_opts)


# ---------------------------------------------------------------------------
# flatness bookkeeping


def gagliardo_nirenberg_theta(n, m):
    return 2.0 * n * (2.0 - m) / ((3.0 - m) * (2.0 + n))


@dataclass
class FlatnessReport:
    t: np.ndarray
    norm: np.ndarray
    direct_rate: np.ndarray
    budget_rate: np.ndarray
    theta: float
    threshold: float | None
    crossed: bool

    @property
    def sup_norm(self):
        return float(np.max(self.norm))


def flatness_budget(rho, W, m):
    """Right side of d/dt int rho^(3-m) = (3-m)[-(2-m) m |grad rho|^2 - (2-m) J],

    J = int rho^(2-m) grad rho . grad(W * rho).  Derivatives by centred differences.
    """
    r = rho.r
    v = rho.values
    phi = convolver(rho.grid, W)(v)
    grad = np.gradient(v, r)
    dphi = np.gradient(phi, r)
    gn = rho.grid.integrate(grad * grad)
    J = rho.grid.integrate(v ** (2.0 - m) * grad * dphi)
    return (3.0 - m) * (-(2.0 - m) * m * gn - (2.0 - m) * J)


def track_flatness(trajectory, W, m, threshold=None):
    """Flatness norm along the snapshots and d/dt int rho^(3-m) computed two ways."""
    if not (1.0 < m < 2.0):
        raise ValueError("the flatness budget is stated for 1 < m < 2")
    times = np.array([t for t, _ in trajectory.snapshots])
    p = 3.0 - m
    integrals = np.array([lp_integral(rho, p) for _, rho in trajectory.snapshots])
    norm = integrals ** (1.0 / p)
    direct = np.gradient(integrals, times) if times.size > 1 else np.zeros(1)
    budget = np.array([flatness_budget(rho, W, m) for _, rho in trajectory.snapshots])
    n = trajectory.snapshots[0][1].dimension
    crossed = bool(threshold is not None and np.any(norm >= threshold))
    return FlatnessReport(times, norm, direct, budget, gagliardo_nirenberg_theta(n, m),
                          threshold, crossed)


# ---------------------------------------------------------------------------
# steady-state extraction


@dataclass
class Extraction:
    state: object
    verification: object
    window_dissipation: float
    window_change: float
    polished: bool
    first_moment: float
    first_moment_bound: float | None


def first_moment_bound(W, initial_energy, constant=1.0, mass=1.0):
    """C / eps (3 R eps - w1(3R) + 2 E[rho_0]) for a tail-modified potential.

    The energy is taken with the potential shifted to w1 + w2 (so w1(3R) = 0 and
    the middle term vanishes).  C comes from an external comparison estimate and is
    a parameter.
    """
    if W.kind != "modified":
        return None
    R, eps = W.params["R"], W.params["epsilon"]
    at = np.asarray(3 * R)
    shift = float(W.value(at)) - float(W.w1_value(at)) - float(W.w2_value(at))
    energy = initial_energy - 0.5 * shift * mass * mass
    return constant / eps * (3 * R * eps - float(W.w1_value(at)) + 2 * energy)


def extract_steady(trajectory, W, m, window=5, dissipation_tol=1e-10, change_tol=1e-8,
                   polish=True, tol=1e-8, require_vanishing=True, moment_constant=1.0,
                   max_iter=20000):
    """Steady-state candidate from the tail of a trajectory.

    The candidate is the last snapshot once the dissipation over the last
    `window` records and the L1 change across the window are small.  With
    `polish`, the damped fixed-point solver is restarted from it.
    """
    rows = trajectory.rows[-window:]
    Dmax = max(row["D"] for row in rows)
    snaps = trajectory.snapshots
    last = snaps[-1][1]
    ref = snaps[max(0, len(snaps) - window)][1]
    from .steady_state import profile_distance

    change = profile_distance(ref, last)
    if require_vanishing and (Dmax > dissipation_tol and change > change_tol) and not polish:
        raise EvolutionError(f"dissipation tail does not vanish (D={Dmax:.3e}, "
                             f"L1 change={change:.3e})")
    state = last
    polished = False
    if polish:
        try:
            st = solve_steady(W, m, last.dimension, last, num_cells=last.grid.size - 1, tol=tol,
                              mass=last.mass, max_iter=max_iter)
            state = st.density
            polished = True
        except SteadyStateError as exc:
            raise EvolutionError(f"polishing failed: {exc}") from exc
    report = verify_steady(state, W, m)
    bound = first_moment_bound(W, trajectory.rows[0]["E"], moment_constant,
                               trajectory.rows[0]["mass"])
    return Extraction(state, report, Dmax, change, polished, moment(state, 1), bound)


__all__ = [
    "DIAGNOSTIC_COLUMNS",
    "EvolutionError",
    "EvolutionState",
    "Evolver",
    "Extraction",
    "FlatnessReport",
    "Trajectory",
    "evolve",
    "extract_steady",
    "first_moment_bound",
    "flatness_budget",
    "gagliardo_nirenberg_theta",
    "track_flatness",
]

"""Iterated tail modification: potentials with an ever growing list of steady states (1 < m < 2).

Each level keeps the current potential on [0, 2R], replaces its tail by a gentle
slope epsilon and looks for a new, flatter steady state.  The slope is picked by
a dyadic search driven by short evolutions from flat initial data.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .evolution import EvolutionError, Evolver, extract_steady, gagliardo_nirenberg_theta
from .potentials import forge_tail
from .radial_core import lp_norm, quadratic_cap_density, unit_sphere_area
from .steady_state import SteadyStateError, euler_lagrange_residual, solve_steady

log = logging.getLogger(__name__)


class ForgeError(RuntimeError):
    """Epsilon search failed; `attempts` holds one diagnostic dict per slope tried."""

    def __init__(self, message, attempts=None, threshold=None):
        super().__init__(message)
        self.attempts = list(attempts or [])
        self.threshold = threshold


def _young_factor(p):
    if p == 1.0 or np.isinf(p):
        return 1.0
    dual = p / (p - 1.0)
    return np.sqrt(p ** (1.0 / p) / dual ** (1.0 / dual))


def young_constant(q, r, n):
    """Sharp constant in |f * g|_s <= C |f|_q |g|_r on R^n, 1/q + 1/r = 1 + 1/s."""
    s = 1.0 / (1.0 / q + 1.0 / r - 1.0)
    s_dual = s / (s - 1.0)
    return float((_young_factor(q) * _young_factor(r) * _young_factor(s_dual)) ** n)


def near_field_norm(W, q, n):
    """L^q norm over R^n of the near-field part w1 (supported in the ball of radius 3R)."""
    R = W.params["R"]
    f = lambda r: np.abs(float(W.w1_value(np.asarray(r)))) ** q * r ** (n - 1)
    total = 0.0
    for lo, hi in ((0.0, R), (R, 2 * R), (2 * R, 3 * R)):
        total += integrate.quad(f, lo, hi, limit=200)[0]
    return float((unit_sphere_area(n) * total) ** (1.0 / q))


@dataclass
class FlatnessThreshold:
    """delta_0 with C(W, R) delta_0^(2-m) < m/4, C = Young constant x |w1|_(3-m)."""

    delta0: float
    exponent: int
    constant: float
    young: float
    w1_norm: float
    m: float
    mode: str

    def as_dict(self):
        return {"delta0": self.delta0, "exponent": self.exponent, "constant": self.constant,
                "young": self.young, "w1Norm": self.w1_norm, "m": self.m, "mode": self.mode}


def flatness_threshold(W, m, n, a, max_exponent=80):
    """Largest 2^-j below `a` meeting the smallness condition for the near-field term."""
    q = 3.0 - m
    p = 2.0 * (3.0 - m) / (m - 1.0)
    young = young_constant(q, 2.0, n)
    assert abs(1.0 / q + 0.5 - 1.0 - 1.0 / p) < 1e-12
    w1 = near_field_norm(W, q, n)
    C = young * w1
    for j in range(1, max_exponent + 1):
        d = 2.0 ** -j
        if d < a and C * d ** (2.0 - m) < m / 4.0:
            return FlatnessThreshold(d, j, C, young, w1, m, "young")
    raise ForgeError(f"no dyadic delta_0 down to 2^-{max_exponent}")


def empirical_threshold(a):
    """Largest 2^-j strictly below `a`, with no smallness condition."""
    j = int(np.floor(-np.log2(a))) + 1
    return FlatnessThreshold(2.0 ** -j, j, np.nan, np.nan, np.nan, np.nan, "empirical")


def tail_laplacian_sup(W, n, num=20001):
    """Sampled sup of |w2'' + (n-1) w2'/r| on [2R, 4R]."""
    R = W.params["R"]
    r = np.linspace(2 * R, 4 * R, num)
    return float(np.max(np.abs(W.w2_laplacian(r, n))))


def epsilon_condition(W, m, n, delta0, gn_constant=1.0):
    """Left side of the slope smallness condition, to compare against m/4.

    C(n, R) eps is the measured tail Laplacian sup times gn_constant^(2/theta);
    the Gagliardo-Nirenberg constant is a parameter.
    """
    theta = gagliardo_nirenberg_theta(n, m)
    C_eps = tail_laplacian_sup(W, n) * gn_constant ** (2.0 / theta)
    return C_eps * delta0 ** (3.0 - m - 2.0 / theta) / (3.0 - m)


def cap_radius_for_norm(n, m, target):
    """Radius of the unit-mass quadratic cap whose L^(3-m) norm equals `target`."""
    p = 3.0 - m
    unit = lp_norm(quadratic_cap_density(n, 1.0, 8192), p)
    # |cap_L|_p = L^(-n (1 - 1/p)) |cap_1|_p
    return (unit / target) ** (1.0 / (n * (1.0 - 1.0 / p)))


@dataclass
class Attempt:
    epsilon: float
    init_radius: float
    init_norm: float
    sup_norm: float
    steps: int
    horizon: float
    crossed: bool
    polished: bool
    final_norm: float
    residual: float
    support_radius: float
    accepted: bool
    reason: str
    state: object = field(default=None, repr=False)
    trajectory: object = field(default=None, repr=False)

    def as_dict(self):
        return {k: getattr(self, k) for k in ("epsilon", "init_radius", "init_norm", "sup_norm",
                                              "steps", "horizon", "crossed", "polished",
                                              "final_norm", "residual", "support_radius",
                                              "accepted", "reason")}


def try_epsilon(W, m, n, R, epsilon, delta0, *, steps=3000, num_cells=2048, tol=1e-8,
                residual_tol=1e-6, max_radius=1e7, polish_iter=3000):
    """Flat-data evolution and extraction for one slope.

    The initial cap is as wide as the natural flat scale 1.5 eps^(-2/3), and at
    least wide enough that its L^(3-m) norm is delta0 / 2.
    """
    Wf = forge_tail(W, R, epsilon)
    p = 3.0 - m
    radius = max(1.5 * epsilon ** (-2.0 / 3.0), cap_radius_for_norm(n, m, 0.5 * delta0), 4 * R)
    common = dict(epsilon=epsilon, init_radius=radius)
    if radius > max_radius:
        return Attempt(**common, init_norm=np.nan, sup_norm=np.nan, steps=0, horizon=0.0,
                       crossed=False, polished=False, final_norm=np.nan, residual=np.nan,
                       support_radius=np.nan, accepted=False,
                       reason=f"flat data below delta0 needs support radius {radius:.3e}"), Wf
    init = quadratic_cap_density(n, radius, num_cells, outer=radius / 0.6)
    init_norm = lp_norm(init, p)

    def stop(state, row):
        return row["norm3m"] >= delta0

    traj = Evolver(Wf, m, check_monotone=False).run(init, np.inf, max_steps=steps,
                                                    snapshot_every=max(1, steps // 20),
                                                    record_every=10, stop=stop)
    norms = traj.column("norm3m")
    sup = float(np.max(norms))
    base = dict(common, init_norm=init_norm, sup_norm=sup, steps=traj.steps,
                horizon=traj.rows[-1]["t"], crossed=sup >= delta0, trajectory=traj)
    if sup >= delta0:
        return Attempt(**base, polished=False, final_norm=float(norms[-1]), residual=np.nan,
                       support_radius=traj.final.support_radius, accepted=False,
                       reason="flatness lost during evolution"), Wf
    try:
        ext = extract_steady(traj, Wf, m, tol=tol, polish=True, max_iter=polish_iter)
    except EvolutionError as exc:
        return Attempt(**base, polished=False, final_norm=float(norms[-1]), residual=np.nan,
                       support_radius=traj.final.support_radius, accepted=False,
                       reason=str(exc)), Wf
    state = ext.state
    final = lp_norm(state, p)
    res = ext.verification.residual
    ok = final <= delta0 and res < residual_tol
    reason = "accepted" if ok else (f"extracted norm {final:.3e} exceeds delta0" if final > delta0
                                    else f"residual {res:.3e}")
    return Attempt(**base, polished=ext.polished, final_norm=final, residual=res,
                   support_radius=ext.verification.support_radius, accepted=ok, reason=reason,
                   state=state), Wf


@dataclass
class ForgeLevel:
    level: int
    potential: object
    state: object
    R: float
    epsilon: float | None
    norm: float
    support_radius: float
    residual: float
    threshold: FlatnessThreshold | None = None
    young_threshold: FlatnessThreshold | None = None
    attempts: list = field(default_factory=list)
    previous_residuals: list = field(default_factory=list)

    def row(self):
        return {"level": self.level, "R": self.R, "epsilon": self.epsilon, "norm3m": self.norm,
                "supportRadius": self.support_radius, "residual": self.residual}


def search_epsilon(W, m, n, R, delta0, exponents=range(1, 25), jobs=1, **opts):
    """Try eps = 2^-j in order and return (accepted Attempt, potential, attempts)."""
    exponents = list(exponents)
    attempts = []
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(lambda j: try_epsilon(W, m, n, R, 2.0 ** -j, delta0, **opts),
                                    exponents))
        for att, Wf in results:
            attempts.append(att)
            if att.accepted:
                return att, Wf, attempts
    else:
        for j in exponents:
            att, Wf = try_epsilon(W, m, n, R, 2.0 ** -j, delta0, **opts)
            log.info("eps=2^-%d: %s", j, att.reason)
            attempts.append(att)
            if att.accepted:
                return att, Wf, attempts
    raise ForgeError("no slope in the dyadic search keeps the flow flat", attempts)


def forge_iterate(W0, m, n=1, R0=2.0, a=None, max_levels=1, threshold="young", exponents=None,
                  jobs=1, base_state=None, **opts):
    """Levels 0..max_levels of the construction.

    threshold="young" uses the smallness condition for delta_0 (and fails with
    diagnostics when no affordable flat data can meet it); "empirical" uses the
    largest dyadic value below a.  The Young threshold is reported either way.
    """
    if not (1.0 < m < 2.0):
        raise ValueError("the construction needs 1 < m < 2")
    if base_state is None:
        base_state = solve_steady(W0, m, n)
    p = 3.0 - m
    states = [base_state.density]
    levels = [ForgeLevel(0, W0, base_state.density, np.nan, None, lp_norm(base_state.density, p),
                         base_state.support_radius, base_state.residual)]
    W = W0
    for level in range(1, max_levels + 1):
        R = max([R0, 2.0 ** level] + [lv.support_radius for lv in levels])
        floor = 0.5 * min(lv.norm for lv in levels) if a is None else a
        young = flatness_threshold(forge_tail(W, R, 0.5), m, n, floor)
        chosen = young if threshold == "young" else empirical_threshold(floor)
        exps = exponents if exponents is not None else range(1, 25)
        try:
            att, Wf, attempts = search_epsilon(W, m, n, R, chosen.delta0, exps, jobs, **opts)
        except ForgeError as exc:
            exc.threshold = chosen
            raise
        previous = [euler_lagrange_residual(rho, Wf, m)[0] for rho in states]
        levels.append(ForgeLevel(level, Wf, att.state, R, att.epsilon, att.final_norm,
                                 att.support_radius, att.residual, chosen, young, attempts,
                                 previous))
        states.append(att.state)
        W = Wf
    return levels


__all__ = [
    "Attempt",
    "FlatnessThreshold",
    "ForgeError",
    "ForgeLevel",
    "cap_radius_for_norm",
    "empirical_threshold",
    "epsilon_condition",
    "flatness_threshold",
    "forge_iterate",
    "near_field_norm",
    "search_epsilon",
    "tail_laplacian_sup",
    "try_epsilon",
    "young_constant",
]

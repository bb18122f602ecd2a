"""Command line entry point: scenario resolution, subcommands and the report index.

A scenario is a JSON object (see schemas/scenario.schema.json).  Values come from a
builtin preset, then a --config file, then explicit flags.  Every subcommand writes
its CSV artifacts and a summary.json with PASS/FAIL checks into --out.
"""

from __future__ import annotations

import csv
import json
import logging
import subprocess
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import click
import jsonschema
import numpy as np

from . import energy, evolution, forge, geometry, interpolation, steady_state
from .potentials import parse_potential, potential_from_dict
from .radial_core import (
    barenblatt_profile,
    density_from_height,
    height_from_density,
    load_density,
    profile_density,
    quadratic_cap_density,
    random_density,
    tent_density,
    uniform_density,
)

log = logging.getLogger("aggsteady")

COMMANDS = ("height", "interpolate", "energy", "certify", "steady", "scan", "evolve", "forge",
            "geometry")


@dataclass
class Scenario:
    name: str
    command: str
    m: float | None = None
    n: int | None = None
    potential: object = None
    init: str | None = None
    end: str | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)
    out: str | None = None

    def as_dict(self):
        return asdict(self)

    def output_dir(self):
        return Path(self.out) if self.out else Path("out") / self.name


BUILTINS = {
    "height-roundtrip": dict(command="height", m=2.0, n=1, init="random:seed=0"),
    "hprime-exponent-n1": dict(command="height", m=2.0, n=1, potential="quadratic",
                               init="steady", options={"exponent": True}),
    "hprime-exponent-n2": dict(command="height", m=2.0, n=2, potential="quadratic",
                               init="steady", options={"exponent": True}),
    "hprime-exponent-n3": dict(command="height", m=2.0, n=3, potential="quadratic",
                               init="steady", options={"exponent": True}),
    "tent-pair": dict(command="certify", m=2.0, n=1, potential="riesz:k=2",
                      init="tent:radius=1", end="cap:radius=1.5"),
    "tent-pair-interpolate": dict(command="interpolate", m=2.0, n=1, init="tent:radius=1",
                                  end="cap:radius=1.5"),
    "endpoint-flatness": dict(command="energy", m=2.0, n=1, potential="quadratic",
                              init="steady", end="tent:radius=2",
                              options={"flatness": True}),
    "quadratic-m2-n1": dict(command="steady", m=2.0, n=1, potential="quadratic",
                            options={"oracle_radius": 3.0 ** (1.0 / 3.0)}),
    "uniqueness-riesz2": dict(command="scan", m=2.5, n=1, potential="riesz:k=2"),
    "uniqueness-forged": dict(command="scan", m=2.0, n=1,
                              potential={"kind": "modified", "params": {
                                  "base": {"kind": "quadratic"}, "R": 2.0, "epsilon": 0.1}}),
    "forge-level1": dict(command="forge", m=1.5, n=1, potential="quadratic",
                         options={"threshold": "empirical"}),
    "forge-level1-young": dict(command="forge", m=1.5, n=1, potential="quadratic",
                               options={"threshold": "young"}),
    "barenblatt-1.5-1": dict(command="evolve", m=1.5, n=1, potential="constant",
                             init="barenblatt:t=1", options={"t_max": 9.0, "num_cells": 150}),
    "barenblatt-2-1": dict(command="evolve", m=2.0, n=1, potential="constant",
                           init="barenblatt:t=1", options={"t_max": 9.0, "num_cells": 150}),
    "barenblatt-2-2": dict(command="evolve", m=2.0, n=2, potential="constant",
                           init="barenblatt:t=1", options={"t_max": 9.0, "num_cells": 150}),
    "geometry-n1": dict(command="geometry", n=1),
    "geometry-n2": dict(command="geometry", n=2),
    "geometry-n3": dict(command="geometry", n=3),
}


def schema(name):
    text = resources.files("aggsteady").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(obj, name):
    try:
        jsonschema.validate(obj, schema(name))
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise click.UsageError(f"{name}.{path}: {exc.message}") from None


def resolve_scenario(command, builtin, config, overrides):
    data = {}
    if builtin:
        if builtin not in BUILTINS:
            raise click.UsageError(f"unknown builtin {builtin!r}; choose from "
                                   f"{', '.join(sorted(BUILTINS))}")
        data.update(BUILTINS[builtin], name=builtin)
    if config:
        loaded = json.loads(Path(config).read_text())
        if not isinstance(loaded, dict) or not loaded:
            raise click.UsageError("scenario: empty configuration")
        data.update(loaded)
    for key, val in overrides.items():
        if val is None:
            continue
        if key == "options":
            data["options"] = {**data.get("options", {}), **val}
        else:
            data[key] = val
    data.setdefault("command", command)
    if data["command"] != command:
        raise click.UsageError(f"scenario.command: {data['command']!r} does not match "
                               f"subcommand {command!r}")
    data.setdefault("name", f"{command}-custom")
    _validate(data, "scenario")
    needs_m = command not in ("height", "interpolate", "geometry")
    if needs_m and data.get("m") is None:
        raise click.UsageError("scenario.m: required for this subcommand")
    if command != "geometry" and data.get("n") is None:
        raise click.UsageError("scenario.n: required for this subcommand")
    return Scenario(**data)


# ---------------------------------------------------------------------------
# builders


def build_potential(source):
    if source is None:
        raise click.UsageError("scenario.potential: required for this subcommand")
    if isinstance(source, dict):
        return potential_from_dict(source)
    return parse_potential(source)


def build_density(source, scenario, cells=4096):
    """Parse `family:key=val,...`, the word `steady`, or a CSV path."""
    n = scenario.n
    if source is None:
        raise click.UsageError("scenario.init: required for this subcommand")
    if source == "steady":
        W = build_potential(scenario.potential)
        return steady_state.solve_steady(W, scenario.m, n).density
    path = Path(source)
    if path.suffix == ".csv":
        return load_density(path, n)
    family, _, rest = source.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, _, val = item.partition("=")
        params[key.strip()] = float(val)
    cells = int(params.pop("cells", cells))
    if family == "tent":
        return tent_density(n, params.get("radius", 1.0), cells)
    if family == "cap":
        return quadratic_cap_density(n, params.get("radius", 1.0), cells)
    if family == "uniform":
        return uniform_density(params.get("radius", 1.0), n, cells)
    if family == "random":
        seed = int(params.get("seed", scenario.seed))
        return random_density(np.random.default_rng(seed), n, cells)
    if family == "barenblatt":
        prof, R = barenblatt_profile(n, scenario.m, params.get("t", 1.0))
        return profile_density(prof, n, R, cells, outer=2.2 * R)
    raise click.UsageError(f"scenario.init: unknown density family {family!r}")


# ---------------------------------------------------------------------------
# output


class Output:
    def __init__(self, scenario):
        self.scenario = scenario
        self.dir = scenario.output_dir()
        self.dir.mkdir(parents=True, exist_ok=True)
        self.checks = []
        self.metrics = {}
        self.artifacts = []

    def check(self, name, value, threshold, passed):
        self.checks.append({"name": name, "value": _num(value), "threshold": _num(threshold),
                            "passed": bool(passed)})

    def csv(self, name, header, rows):
        path = self.dir / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        self.artifacts.append(name)

    def finish(self):
        status = "PASS" if all(c["passed"] for c in self.checks) else "FAIL"
        summary = {"scenario": self.scenario.as_dict(), "status": status, "checks": self.checks,
                   "metrics": {k: _num(v) for k, v in self.metrics.items()},
                   "artifacts": sorted(self.artifacts)}
        jsonschema.validate(summary, schema("summary"))
        (self.dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        for c in self.checks:
            click.echo(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['value']} "
                       f"(threshold {c['threshold']})")
        click.echo(f"{status}  {self.scenario.name} -> {self.dir}")
        return 0 if status == "PASS" else 1


def _num(x):
    if x is None or isinstance(x, (str, bool)):
        return x
    x = float(x)
    return x if np.isfinite(x) else str(x)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# ---------------------------------------------------------------------------
# subcommand bodies


def run_height(sc, out):
    rho = build_density(sc.init, sc)
    h = height_from_density(rho)
    back = density_from_height(h, sc.n, rho.grid)
    err = rho.grid.integrate(np.abs(back.values - rho.values))
    out.csv("height.csv", ["s", "h", "hprime"], zip(h.s, h.h, h.hprime))
    out.check("roundtrip_l1", err, 1e-6, err < 1e-6)
    out.metrics.update(supportRadius=h.support_radius(sc.n), heightAtOne=h.height_at_one)
    if sc.options.get("exponent"):
        p = h.singularity_exponent()
        target = sc.n / (sc.n + 2.0)
        out.metrics["exponent"] = p
        out.check("hprime_exponent", p, target, abs(p - target) <= 0.1 * target)


def run_interpolate(sc, out):
    rho0 = build_density(sc.init, sc)
    rho1 = build_density(sc.end, sc)
    curve = interpolation.InterpolationCurve.from_densities(rho0, rho1)
    times = sc.options.get("times", [0.0, 0.25, 0.5, 0.75, 1.0])
    rows = []
    worst = 0.0
    for t in times:
        rho_t = curve.density_at(t, num_cells=sc.options.get("num_cells", 4096))
        worst = max(worst, abs(rho_t.mass - 1.0))
        rows.append((t, rho_t.mass, curve.support_radius(t), rho_t.linf))
        out.csv(f"density_t{t:g}.csv", ["r", "rho"], zip(rho_t.r, rho_t.values))
    out.csv("curve.csv", ["t", "mass", "supportRadius", "linf"], rows)
    out.check("mass_drift", worst, 1e-6, worst < 1e-6)


def run_energy(sc, out):
    W = build_potential(sc.potential)
    rho = build_density(sc.init, sc)
    rep = energy.free_energy(rho, sc.m, W)
    out.metrics.update(S=rep.S, I=rep.I, E=rep.E)
    if sc.options.get("flatness"):
        curve = interpolation.InterpolationCurve.from_densities(rho, build_density(sc.end, sc))
        ts = sc.options.get("times", [1e-2, 1e-3, 1e-4])
        slopes, E0 = energy.endpoint_slopes(curve, sc.m, W, ts)
        out.csv("endpoint_slopes.csv", ["t", "slope"], zip(ts, slopes))
        decreasing = bool(np.all(np.diff(slopes) < 0))
        out.check("slopes_decreasing", float(decreasing), 1.0, decreasing)
        out.check("smallest_slope", slopes[-1], 1e-3 * abs(E0), slopes[-1] < 1e-3 * abs(E0))
    else:
        out.check("energy_finite", rep.E, None, np.isfinite(rep.E))


def run_certify(sc, out):
    W = build_potential(sc.potential)
    curve = interpolation.InterpolationCurve.from_densities(build_density(sc.init, sc),
                                                            build_density(sc.end, sc))
    cert = energy.certify_convexity(curve, sc.m, W, tgrid=sc.options.get("tgrid", 41))
    out.csv("certificate.csv", ["t", "S", "I", "E"], cert.rows())
    out.metrics.update(minSecondDifferenceI=np.min(cert.second_differences("I")),
                       minSecondDifferenceE=np.min(cert.second_differences("E")),
                       scale=cert.scale)
    click.echo(cert.summary)
    out.check("convexity", float(cert.passed), 1.0, cert.passed)


def run_steady(sc, out):
    W = build_potential(sc.potential)
    init = build_density(sc.init, sc) if sc.init else None
    st = steady_state.solve_steady(W, sc.m, sc.n, init, tol=sc.options.get("tol", 1e-8))
    rep = steady_state.verify_steady(st.density, W, sc.m)
    out.csv("steady.csv", ["r", "rho"], zip(st.density.r, st.density.values))
    out.metrics.update(st.summary())
    out.metrics["weakResidual"] = rep.weak_residual
    out.check("residual", st.residual, 1e-8, st.residual < 1e-8)
    L = sc.options.get("oracle_radius")
    if L is not None:
        out.check("support_radius", abs(st.support_radius - L), 1e-4,
                  abs(st.support_radius - L) < 1e-4)


def run_scan(sc, out, jobs):
    W = build_potential(sc.potential)
    inits = steady_state.diverse_inits(sc.n, sc.options.get("count", 10), seed=sc.seed)
    rep = steady_state.uniqueness_scan(W, sc.m, sc.n, inits,
                                       threshold=sc.options.get("threshold", 1e-3), jobs=jobs)
    rows = []
    for ci, members in enumerate(rep.clusters):
        for i in members:
            st = rep.states[i]
            rows.append((i, ci, st.support_radius, st.residual))
    out.csv("clusters.csv", ["init", "cluster", "supportRadius", "residual"], rows)
    out.metrics.update(clusters=rep.num_clusters, failures=len(rep.failures))
    expected = sc.options.get("expected_clusters", 1)
    out.check("clusters", rep.num_clusters, expected,
              rep.num_clusters == expected and not rep.failures)


def run_evolve(sc, out):
    W = build_potential(sc.potential)
    rho = build_density(sc.init, sc, cells=sc.options.get("num_cells", 400))
    opts = sc.options
    traj = evolution.evolve(W, sc.m, rho, opts.get("t_max", 1.0),
                            max_steps=opts.get("max_steps", 1_000_000),
                            record_every=opts.get("record_every", 20))
    cols = evolution.DIAGNOSTIC_COLUMNS
    out.csv("diagnostics.csv", cols, ([row[c] for c in cols] for row in traj.rows))
    out.csv("final.csv", ["r", "rho"], zip(traj.final.r, traj.final.values))
    out.check("mass_drift_per_step", traj.max_mass_drift, 1e-12, traj.max_mass_drift < 1e-12)
    out.check("energy_rise_per_step", traj.max_energy_rise, 1e-8, traj.max_energy_rise <= 1e-8)
    gap = traj.edi_gap()
    out.check("edi_gap", gap, 1e-6, gap <= 1e-6)
    out.metrics.update(steps=traj.steps, halvings=traj.halvings)
    if sc.init and sc.init.startswith("barenblatt"):
        t0 = float(sc.init.partition("t=")[2] or 1.0)
        T = traj.column("t") + t0
        L = traj.column("linf")
        sel = T > 2 * t0
        alpha = -np.polyfit(np.log(T[sel]), np.log(L[sel]), 1)[0]
        target = sc.n / (sc.n * (sc.m - 1.0) + 2.0)
        out.metrics["decayExponent"] = alpha
        out.check("decay_exponent", alpha, target, abs(alpha - target) <= 0.05 * target)


def run_forge(sc, out, jobs):
    W = build_potential(sc.potential)
    mode = sc.options.get("threshold", "young")
    try:
        levels = forge.forge_iterate(W, sc.m, sc.n, threshold=mode, jobs=jobs,
                                     max_levels=sc.options.get("levels", 1))
    except forge.ForgeError as exc:
        out.csv("attempts.csv", list(forge.Attempt.__dataclass_fields__)[:13],
                ([a.as_dict()[k] for k in a.as_dict()] for a in exc.attempts))
        if exc.threshold is not None:
            out.metrics.update({f"threshold.{k}": v for k, v in exc.threshold.as_dict().items()
                                if k != "mode"})
        click.echo(f"epsilon search failed: {exc}")
        out.check("epsilon_search", 0.0, 1.0, False)
        return
    out.csv("levels.csv", ["level", "R", "epsilon", "norm3m", "supportRadius", "residual"],
            ([lv.row()[k] for k in ("level", "R", "epsilon", "norm3m", "supportRadius", "residual")]
             for lv in levels))
    last = levels[-1]
    out.csv("attempts.csv", list(last.attempts[0].as_dict()),
            ([a.as_dict()[k] for k in a.as_dict()] for a in last.attempts))
    for lv in levels[1:]:
        prev = min(p.norm for p in levels[: lv.level])
        out.check(f"level{lv.level}_residual", lv.residual, 1e-6, lv.residual < 1e-6)
        out.check(f"level{lv.level}_norm_halved", lv.norm, 0.5 * prev, lv.norm <= 0.5 * prev)
        worst = max(lv.previous_residuals)
        out.check(f"level{lv.level}_previous_still_steady", worst, 1e-6, worst < 1e-6)
        sup = max(a.sup_norm for a in lv.attempts if a.accepted)
        young = lv.young_threshold.delta0
        out.check(f"level{lv.level}_flatness_below_young_delta0", sup, young, sup < young)
        out.csv(f"state_level{lv.level}.csv", ["r", "rho"], zip(lv.state.r, lv.state.values))


def run_geometry(sc, out):
    n = sc.n or 1
    rng = np.random.default_rng(sc.seed)
    count = sc.options.get("samples", 10000)
    R = rng.uniform(0.55, 3.0, count)
    r = rng.uniform(0.55, 3.0, count)
    S = geometry.heron(R, r)
    keep = S > 1e-6
    R, r, S = R[keep], r[keep], S[keep]
    _, _, _, u, v, w = geometry.second_derivative_coefficients(n, R, r)
    lhs = u * w - v * v
    rhs = geometry.c_tilde(n) ** 2 / 4.0 * S ** n
    err = float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)))
    out.check("quadratic_form_identity", err, 1e-10, err < 1e-10)
    out.metrics.update(samples=int(keep.sum()), cTilde=geometry.c_tilde(n))
    if n == 2:
        lens = float(geometry.ball_intersection(2, 1.0, 1.0))
        out.metrics["lens"] = lens
        exact = 2 * np.pi / 3 - np.sqrt(3) / 2
        out.check("lens_r1_s1", abs(lens - exact), 1e-6, abs(lens - exact) < 1e-6)


# ---------------------------------------------------------------------------
# click wiring


def _scenario_options(fn):
    opts = [
        click.option("--builtin", help="Name of a builtin scenario preset."),
        click.option("--config", type=click.Path(exists=True, dir_okay=False),
                     help="Scenario JSON file."),
        click.option("--m", "m", type=float, help="Diffusion exponent m."),
        click.option("--n", "n", type=int, help="Space dimension."),
        click.option("--potential", help="Potential, e.g. riesz:k=2, quadratic, or JSON."),
        click.option("--init", help="Initial density: family:key=val, 'steady' or a CSV path."),
        click.option("--end", help="Second endpoint density (interpolate, certify, energy)."),
        click.option("--seed", type=int, help="Seed for randomized families."),
        click.option("--option", "option", multiple=True, metavar="KEY=JSON",
                     help="Solver option; repeatable."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--name", help="Scenario name (default from the preset)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _parse_options(pairs):
    out = {}
    for item in pairs:
        key, sep, val = item.partition("=")
        if not sep:
            raise click.UsageError(f"--option expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out or None


def _dispatch(command, body, jobs=None, **kw):
    overrides = dict(m=kw["m"], n=kw["n"], potential=kw["potential"], init=kw["init"],
                     end=kw["end"], seed=kw["seed"], out=kw["out"], name=kw["name"],
                     options=_parse_options(kw["option"]))
    sc = resolve_scenario(command, kw["builtin"], kw["config"], overrides)
    out = Output(sc)
    if jobs is None:
        body(sc, out)
    else:
        body(sc, out, jobs)
    raise SystemExit(out.finish())


@click.group()
@click.option("--verbose", is_flag=True, help="Log solver progress.")
def main(verbose):
    """Radial aggregation-diffusion toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def _simple(command, body, with_jobs=False):
    if with_jobs:
        @click.option("--jobs", type=int, default=1, show_default=True,
                      help="Worker threads.")
        @_scenario_options
        def cmd(jobs, **kw):
            _dispatch(command, body, jobs, **kw)
    else:
        @_scenario_options
        def cmd(**kw):
            _dispatch(command, body, **kw)
    cmd.__doc__ = body.__doc__ or f"Run the {command} scenario."
    main.command(command)(cmd)


run_height.__doc__ = "Height function of a density, round trip and h' exponent."
run_interpolate.__doc__ = "Densities along the height interpolation curve."
run_energy.__doc__ = "Free energy of a density, optionally its slope at a curve endpoint."
run_certify.__doc__ = "Convexity certificate of S, I and E along a curve."
run_steady.__doc__ = "Steady state by damped fixed-point iteration."
run_scan.__doc__ = "Uniqueness scan over diverse initial densities."
run_evolve.__doc__ = "Explicit finite-volume evolution with diagnostics."
run_forge.__doc__ = "Tail-modified potential with an additional flat steady state."
run_geometry.__doc__ = "Ball-intersection identities behind the convexity proof."

for _name, _body in (("height", run_height), ("interpolate", run_interpolate),
                     ("energy", run_energy), ("certify", run_certify), ("steady", run_steady),
                     ("evolve", run_evolve), ("geometry", run_geometry)):
    _simple(_name, _body)
_simple("scan", run_scan, with_jobs=True)
_simple("forge", run_forge, with_jobs=True)


def build_id():
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, cwd=Path(__file__).parent,
                             timeout=10)
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def build_index(root):
    rows = []
    for path in sorted(Path(root).glob("*/summary.json")):
        data = json.loads(path.read_text())
        checks = data["checks"]
        rows.append({"scenario": data["scenario"]["name"],
                     "command": data["scenario"]["command"],
                     "status": data["status"],
                     "passed": sum(c["passed"] for c in checks),
                     "total": len(checks),
                     "path": str(path.parent),
                     "build": build_id()})
    return rows


@main.command("report")
@click.option("--root", type=click.Path(file_okay=False), default="out", show_default=True,
              help="Directory holding one sub-directory per scenario.")
@click.option("--out", type=click.Path(file_okay=False), help="Where to write the index.")
def report(root, out):
    """Collect scenario summaries into index.csv and index.json."""
    rows = build_index(root) if Path(root).exists() else []
    dest = Path(out or root)
    dest.mkdir(parents=True, exist_ok=True)
    fields = ["scenario", "command", "status", "passed", "total", "path", "build"]
    with (dest / "index.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    index = {"build": build_id(), "scenarios": rows}
    jsonschema.validate(index, schema("index"))
    (dest / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    click.echo(f"{len(rows)} scenario(s) indexed in {dest}")


@main.command("builtins")
def list_builtins():
    """List builtin scenario presets."""
    for name in sorted(BUILTINS):
        click.echo(f"{name:24s} {BUILTINS[name]['command']}")


if __name__ == "__main__":
    main()

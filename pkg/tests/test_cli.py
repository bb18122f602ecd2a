import csv
import json

import jsonschema
import pytest
from click.testing import CliRunner

from aggsteady.cli import BUILTINS, main, schema


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return CliRunner()


def _summary(path):
    data = json.loads((path / "summary.json").read_text())
    jsonschema.validate(data, schema("summary"))
    return data


def test_certify_builtin_passes(runner, tmp_path):
    res = runner.invoke(main, ["certify", "--builtin", "tent-pair", "--out", "cert",
                               "--option", "tgrid=11"])
    assert res.exit_code == 0, res.output
    assert "PASS" in res.output
    data = _summary(tmp_path / "cert")
    assert data["status"] == "PASS"
    with open(tmp_path / "cert" / "certificate.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "S", "I", "E"] and len(rows) == 12


def test_steady_builtin_meets_the_oracle(runner, tmp_path):
    res = runner.invoke(main, ["steady", "--builtin", "quadratic-m2-n1", "--out", "st"])
    assert res.exit_code == 0, res.output
    names = {c["name"]: c for c in _summary(tmp_path / "st")["checks"]}
    assert names["residual"]["passed"] and names["support_radius"]["passed"]


def test_flags_override_the_preset(runner, tmp_path):
    res = runner.invoke(main, ["height", "--builtin", "height-roundtrip", "--n", "2",
                               "--init", "cap:radius=2,cells=512", "--out", "h"])
    assert res.exit_code == 0, res.output
    sc = _summary(tmp_path / "h")["scenario"]
    assert sc["n"] == 2 and sc["init"] == "cap:radius=2,cells=512"


def test_usage_errors(runner, tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    res = runner.invoke(main, ["steady", "--config", str(empty)])
    assert res.exit_code == 2 and "empty" in res.output
    res = runner.invoke(main, ["steady", "--builtin", "no-such-preset"])
    assert res.exit_code == 2
    res = runner.invoke(main, ["steady", "--builtin", "tent-pair"])
    assert res.exit_code == 2 and "does not match" in res.output
    res = runner.invoke(main, ["steady", "--n", "1", "--potential", "quadratic"])
    assert res.exit_code == 2 and "scenario.m" in res.output
    res = runner.invoke(main, ["steady", "--m", "2", "--n", "1", "--potential", "quadratic",
                               "--option", "novalue"])
    assert res.exit_code == 2


def test_report_on_an_empty_root(runner, tmp_path):
    res = runner.invoke(main, ["report", "--root", "nothing", "--out", "idx"])
    assert res.exit_code == 0, res.output
    index = json.loads((tmp_path / "idx" / "index.json").read_text())
    assert index["scenarios"] == [] and index["build"]
    jsonschema.validate(index, schema("index"))
    with open(tmp_path / "idx" / "index.csv") as fh:
        assert next(csv.reader(fh))[0] == "scenario"


def test_report_collects_scenarios(runner, tmp_path):
    for name in ("geometry-n1", "geometry-n2"):
        res = runner.invoke(main, ["geometry", "--builtin", name, "--out", f"out/{name}"])
        assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["report"])
    assert res.exit_code == 0
    index = json.loads((tmp_path / "out" / "index.json").read_text())
    assert [r["scenario"] for r in index["scenarios"]] == ["geometry-n1", "geometry-n2"]
    assert all(r["status"] == "PASS" and r["build"] for r in index["scenarios"])


def test_outputs_are_deterministic(runner, tmp_path):
    args = ["interpolate", "--builtin", "tent-pair-interpolate", "--option", "num_cells=1024"]
    for out in ("a", "b"):
        assert runner.invoke(main, args + ["--out", out]).exit_code == 0
    for name in ("curve.csv", "density_t0.5.csv", "summary.json"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        if name == "summary.json":
            a, b = (json.loads(x) for x in (a, b))
            a["scenario"].pop("out"), b["scenario"].pop("out")
        assert a == b


def test_builtin_listing(runner):
    res = runner.invoke(main, ["builtins"])
    assert res.exit_code == 0
    assert len(res.output.strip().splitlines()) == len(BUILTINS)
    for name, preset in BUILTINS.items():
        jsonschema.validate({**preset, "name": name}, schema("scenario"))

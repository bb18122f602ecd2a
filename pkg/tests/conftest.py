import numpy as np
import pytest

# label per acceptance criterion, in report order
CRITERIA = {
    "C01": "height round trip and h' identity",
    "C02": "entropy convexity trichotomy",
    "C03": "interaction convexity along curves",
    "C04": "ball-intersection identities",
    "C05": "one-dimensional discriminant",
    "C06": "quadratic steady-state oracle",
    "C07": "uniqueness scan for m >= 2",
    "C08a": "level-1 forge: second steady state",
    "C08b": "level-1 forge: flow stays below the Young delta_0",
    "C09": "evolution fidelity",
    "C10": "endpoint flatness of E",
    "C11": "h' singularity exponent",
}

_verdicts = {}


@pytest.fixture
def verdict():
    """verdict(key, passed, detail) records one acceptance line."""

    def record(key, passed, detail=""):
        _verdicts[key] = (bool(passed), detail)

    return record


@pytest.fixture(scope="session")
def forge_levels():
    """Level 0 and level 1 of the construction for quadratic W, m = 3/2, n = 1 (~90 s)."""
    from aggsteady import forge_iterate, quadratic

    return forge_iterate(quadratic(), 1.5, 1, R0=2.0, max_levels=1, threshold="empirical")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for key, label in CRITERIA.items():
        passed, detail = _verdicts.get(key, (False, "not run"))
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {key}  {label}: {detail}")

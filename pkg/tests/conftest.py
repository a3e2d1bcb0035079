import math

import pytest

from riskyhjm import (ConstantVol, DefaultModel, FlatCurve, ForwardFieldSpec, RiskyDateModel, ScenarioSpec,
                      UniformKernel, build_time_grid)
from riskyhjm.measure import DETERMINISTIC, MARKED


def atom_spec(atoms=(0.5,), g0=math.log(2), b=0.0, beta=0.0, h=0.0, f0=0.03, steps=50, n_paths=2000,
              seed=5, weights=()):
    grid = build_time_grid(1.0, steps, atoms)
    fields = ForwardFieldSpec(FlatCurve(f0), FlatCurve(g0), ConstantVol((b,)), ConstantVol((beta,)), 1)
    risky = RiskyDateModel(DETERMINISTIC, 1.0, atoms=tuple(grid.snap(u) for u in atoms), weights=weights)
    return ScenarioSpec("atoms", grid, fields, risky, DefaultModel(base=h), n_paths=n_paths, master_seed=seed)


def news_spec(rate=2.0, g0=0.005, b=0.01, steps=40, n_paths=2000, seed=3, cap=None, h=0.0):
    grid = build_time_grid(1.0, steps)
    fields = ForwardFieldSpec(FlatCurve(0.03), FlatCurve(g0), ConstantVol((b,)), ConstantVol((0.0,)), 1)
    risky = RiskyDateModel(MARKED, 1.0, rate=FlatCurve(rate), kernel=UniformKernel(), max_announcements=cap)
    return ScenarioSpec("news", grid, fields, risky, DefaultModel(base=h), n_paths=n_paths, master_seed=seed)


@pytest.fixture
def make_atom_spec():
    return atom_spec


@pytest.fixture
def make_news_spec():
    return news_spec


# ---------------------------------------------------------------------------
# one pass/fail line per acceptance criterion
# ---------------------------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    name, title = mark.args
    entry = _criteria.setdefault(name, {"title": title, "ok": True, "tests": 0})
    if rep.when == "call":
        entry["tests"] += 1
    if rep.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda s: int(s[2:])):
        e = _criteria[name]
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"{name} {verdict}: {e['title']} ({e['tests']} checks)")

"""Property-based checks of the model invariants."""

from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from riskyhjm import (ConstantVol, DefaultModel, FlatCurve, ForwardFieldSpec, LinearCurve, NoArbitrageDrift,
                      RiskyDateModel, ScenarioSpec, UniformKernel, WindowKernel, build_time_grid,
                      jump_probability)
from riskyhjm.core import ExpDecayVol
from riskyhjm.drift import integrated_residual, step_drift
from riskyhjm.measure import DETERMINISTIC, MARKED, TruncatedExpKernel
from riskyhjm.recovery import LossLaw, RecoveryModel, xi_from_events
from riskyhjm.scenario import parse_scenario, serialize_scenario

small = st.floats(-0.05, 0.05, allow_nan=False)
unit = st.floats(0.0, 1.0, allow_nan=False)


@given(st.integers(3, 15), st.integers(1, 3), st.data())
@settings(max_examples=60, deadline=None)
def test_discrete_drift_makes_every_maturity_a_martingale(n, nf, data):
    i = data.draw(st.integers(0, n - 2))
    delta = np.append(np.array(data.draw(st.lists(st.floats(0.001, 0.2), min_size=n - 1, max_size=n - 1))), 0.0)
    b = np.array(data.draw(st.lists(small, min_size=nf * n, max_size=nf * n))).reshape(nf, n)
    beta = np.array(data.draw(st.lists(small, min_size=nf * n, max_size=nf * n))).reshape(nf, n)
    M = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)), dtype=float)[None, :]
    a, alpha = step_drift(b, beta, delta, i, M)
    for k in range(i + 1, n):
        j, l = np.arange(i + 1, k), np.arange(i + 1, k + 1)
        drift = (a[0, j] * delta[j]).sum() + (M[0, l] * alpha[0, l]).sum()
        vol = (b[:, j] * delta[j]).sum(axis=1) + (M[0, l] * beta[:, l]).sum(axis=1)
        assert abs(drift - 0.5 * vol @ vol) <= 1e-12 * max(1.0, abs(drift))


@given(st.floats(0.0, 0.05), st.floats(0.0, 2.0), st.floats(0.0, 0.05),
       st.lists(st.tuples(st.floats(0.15, 1.0), st.integers(1, 3)), max_size=3),
       st.floats(0.0, 0.1), st.floats(0.0, 0.1), st.booleans())
@settings(max_examples=40, deadline=None)
def test_continuous_drift_solves_the_integrated_condition(sb, lam, sbeta, atoms, t, g_level, marked):
    risky = RiskyDateModel(MARKED, 1.0, rate=FlatCurve(1.0), kernel=UniformKernel()) if marked \
        else RiskyDateModel(DETERMINISTIC, 1.0)
    d = NoArbitrageDrift(ExpDecayVol((sb,), lam), ConstantVol((sbeta,)), risky)
    atoms = Counter({u: w for u, w in atoms})
    g = lambda u: np.full(np.shape(u), g_level)
    for T in [t + 0.01, 0.5, 1.0] + sorted(atoms):
        if T > t:
            assert abs(integrated_residual(d, t, T, atoms, g)) < 1e-10


@given(st.lists(st.tuples(unit, unit), max_size=8))
def test_recovery_process_is_monotone_in_unit_interval(events):
    grid = build_time_grid(1.0, 20)
    xi = xi_from_events(events, grid)
    assert xi[0] == 1.0 or any(s == 0.0 for s, _ in events)
    assert np.all(np.diff(xi) <= 0) and np.all((xi >= 0) & (xi <= 1))


@given(st.floats(0.0, 50.0), st.integers(1, 4))
def test_jump_probability_range(g, w):
    p = jump_probability(g, w)
    assert 0.0 <= p <= 1.0
    assert p >= jump_probability(g, 1) - 1e-15


@given(st.floats(0.0, 0.999), st.sampled_from([UniformKernel(), WindowKernel(0.2), TruncatedExpKernel(4.0)]))
@settings(max_examples=40, deadline=None)
def test_cell_masses_form_a_distribution(t, kernel):
    nodes = np.linspace(0.0, 1.0, 31)
    m = kernel.cell_masses(t, nodes, 1.0)
    assert abs(m.sum() - 1.0) < 1e-9 and np.all(m >= 0)


@given(st.lists(st.floats(0.0, 1.0), max_size=5), st.integers(1, 50))
def test_extra_nodes_become_grid_nodes(extra, steps):
    grid = build_time_grid(1.0, steps, extra)
    for x in extra:
        assert abs(grid.snap(x) - x) <= 1e-12
    assert np.all(np.diff(grid.nodes) > 0)


@given(st.floats(-0.02, 0.08), st.floats(-0.01, 0.01), st.floats(0.0, 0.5),
       st.lists(st.floats(0.05, 1.0), max_size=3, unique=True), st.floats(0.0, 0.02),
       st.integers(1, 10**6), st.integers(10, 100), st.booleans())
@settings(max_examples=40, deadline=None)
def test_serialization_round_trip(f0, slope, g0, atoms, b, seed, steps, with_recovery):
    grid = build_time_grid(1.0, steps, atoms)
    fields = ForwardFieldSpec(LinearCurve(f0, slope), FlatCurve(g0), ConstantVol((b, b / 2)),
                              ConstantVol((0.0, 0.0)), 2)
    risky = RiskyDateModel(DETERMINISTIC, 1.0, atoms=tuple(sorted(grid.snap(u) for u in atoms)))
    rec = RecoveryModel(atom_loss=LossLaw((0.0, 0.5), (0.5, 0.5)), event_rate=0.3) if with_recovery else None
    spec = ScenarioSpec("p", grid, fields, risky, DefaultModel(base=0.0 if with_recovery else 0.01),
                        n_paths=1000, master_seed=seed, recovery=rec)
    assert parse_scenario(serialize_scenario(spec)) == spec

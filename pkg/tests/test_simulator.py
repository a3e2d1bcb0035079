import math
from dataclasses import replace

import numpy as np
import pytest

from riskyhjm import (JAtom, MeasureRealization, PathFailure, bond_surface, run_scenario, simulate_default,
                      simulate_forward_fields, simulate_path, validate_scenario)
from riskyhjm.errors import ModelError
from riskyhjm.simulator import initial_prices
from riskyhjm.core import ConstantVol

from conftest import atom_spec, news_spec


def test_initial_prices_closed_form():
    spec = atom_spec(atoms=(0.5,), g0=math.log(1.25), f0=0.03, h=0.01)
    P0 = initial_prices(spec)
    assert P0[0] == 1.0
    assert P0[-1] == pytest.approx(math.exp(-0.03) / 1.25, rel=1e-13)


def test_path_fields_and_surface():
    spec = news_spec(steps=20)
    path = simulate_path(spec, 3)
    n = len(spec.grid.nodes)
    assert path.f_field.shape == (n, n)
    assert np.all(np.isnan(path.f_field[np.tril_indices(n, -1)]))
    assert path.numeraire.X0[0] == 1.0
    surf = bond_surface(spec, path)
    alive = spec.grid.nodes < path.default_time
    np.testing.assert_allclose(np.diag(surf.prices), alive.astype(float))


def test_same_seed_same_ensemble_any_workers():
    spec = news_spec(n_paths=2500, steps=20)
    e1 = run_scenario(spec, workers=1)
    e2 = run_scenario(spec, workers=2)
    for k in ("disc_s1", "disc_s2", "price_s1", "default_times"):
        assert np.array_equal(getattr(e1, k), getattr(e2, k))


def test_merton_small_run():
    spec = atom_spec(atoms=(0.5,), g0=math.log(1.25), h=0.01, n_paths=20000, steps=20)
    ens = run_scenario(spec)
    mean, se = ens.discounted_stats()
    target = math.exp(-0.03) / 1.25
    assert abs(mean[-1, -1] - target) < 4 * se[-1, -1]


def test_negative_g_is_a_path_failure():
    spec = atom_spec(atoms=(0.9,), g0=0.001, beta=0.2, n_paths=200, steps=20)
    with pytest.raises(PathFailure) as exc:
        run_scenario(spec)
    assert all(e.code == "NegativeJumpProbability" for e in exc.value.failures.values())
    ens = run_scenario(spec, raise_on_failure=False)
    assert ens.n_paths == 200 - len(ens.failures)


def test_j_atoms_are_not_simulated():
    spec = atom_spec()
    spec = replace(spec, risky=replace(spec.risky, j_atoms=(JAtom(0.2, 1.0, ((0.5, 1.0),)),)))
    with pytest.raises(ModelError):
        run_scenario(replace(spec, n_paths=10))


def test_forward_fields_and_default_helpers():
    spec = atom_spec(b=0.01, steps=20)
    real = MeasureRealization([(0.0, 0.5)])
    f, g = simulate_forward_fields(spec, real, 1)
    assert np.isfinite(f[-1, -1]) and np.isfinite(g[-1, -1])
    taus = [simulate_default(spec, real, g, s) for s in range(4000)]
    freq = np.mean([t == 0.5 for t in taus])
    assert abs(freq - 0.5) < 4 * math.sqrt(0.25 / 4000)


def test_validation_of_scenarios():
    assert validate_scenario(atom_spec()).ok
    spec = atom_spec(g0=-0.1)
    assert not validate_scenario(spec).ok
    with pytest.raises(ModelError):
        atom_spec().with_violation("iii", 0.1)


def test_violation_copies():
    spec = atom_spec()
    assert spec.with_violation(None, 0.1) is spec
    assert spec.with_violation("iv", 0.01).drift.shift == 0.01
    assert spec.with_violation("i", 0.01).default.rate_shift == 0.01
    assert spec.with_violation("ii", 0.1).default.jump_shift == 0.1


def test_four_factor_run_completes():
    spec = news_spec(n_paths=500, steps=20)
    fields = replace(spec.fields, vol_b=ConstantVol((0.01, 0.005, 0.003, 0.002)),
                     vol_beta=ConstantVol((0.0,) * 4), n_factors=4)
    ens = run_scenario(replace(spec, fields=fields))
    mean, se = ens.discounted_stats()
    assert np.all(np.isfinite(mean[:, -1]))

import math
from dataclasses import replace

import numpy as np
import pytest

from riskyhjm import JAtom, run_scenario, simulate_path
from riskyhjm.simulator import draw_path_inputs
from riskyhjm.verifier import (compensating_measure_link, jump_frequency_test, logG_oracle, martingale_test,
                               refine, stoch_exp_oracle, widened_threshold)

from conftest import atom_spec, news_spec


def test_widening():
    assert widened_threshold(4.0, 1) == 4.0
    assert widened_threshold(4.0, 210) == pytest.approx(4.0 + math.sqrt(2 * math.log(210)))


def test_tiny_run_is_inconclusive():
    ens = run_scenario(news_spec(n_paths=10, steps=10))
    rep = martingale_test(ens)
    assert rep.verdict == "inconclusive"
    assert np.all(rep.se > 0) and np.all(np.isfinite(rep.z))


def test_martingale_pass_and_drift_shift_detected():
    # default-free, so the Monte Carlo noise comes from the diffusion only
    spec = atom_spec(atoms=(), n_paths=20000, steps=20, b=0.01)
    assert martingale_test(run_scenario(spec)).verdict == "pass"
    bad = martingale_test(run_scenario(spec.with_violation("iv", 0.01)))
    assert bad.verdict == "fail"
    assert abs(bad.z_at(0.5, 1.0)) > 5


def test_jump_frequencies():
    rep = jump_frequency_test(run_scenario(atom_spec(g0=math.log(2), n_paths=4000, steps=10)))
    assert abs(rep.frequency[0] - 0.5) < 4 * rep.se[0]
    assert rep.verdict == "pass"
    rep0 = jump_frequency_test(run_scenario(atom_spec(g0=0.0, n_paths=1000, steps=10)))
    assert rep0.frequency[0] == 0.0 and rep0.verdict == "pass"


def test_two_atoms_default_probability():
    spec = atom_spec(atoms=(0.3, 0.7), g0=math.log(2), n_paths=8000, steps=10)
    ens = run_scenario(spec)
    p = np.isfinite(ens.default_times).mean()
    assert abs(p - 0.75) < 4 * math.sqrt(0.75 * 0.25 / 8000)


def test_jump_shift_detected():
    spec = atom_spec(g0=math.log(2), n_paths=4000, steps=10).with_violation("ii", 0.1)
    assert jump_frequency_test(run_scenario(spec)).verdict == "fail"


def test_oracles_exact_without_volatility():
    spec = atom_spec(atoms=(0.3, 0.7), g0=math.log(2), h=0.05, steps=20)
    for p in range(5):
        path = simulate_path(spec, p)
        assert float(logG_oracle(path, 0.5, 1.0, spec=spec)) == 0.0
        assert float(stoch_exp_oracle(path, 1.0, spec=spec)) == 0.0


def test_oracles_without_announcements():
    spec = atom_spec(atoms=(), b=0.0, steps=10)
    path = simulate_path(spec, 0)
    assert float(logG_oracle(path, 0.5, 1.0, spec=spec)) == 0.0
    assert float(stoch_exp_oracle(path, 1.0, spec=spec)) == 0.0


def test_defaulted_path_is_zero_in_both_forms():
    spec = atom_spec(atoms=(0.5,), g0=5.0, steps=10)
    path = next(simulate_path(spec, p) for p in range(50) if simulate_path(spec, p).default_time == 0.5)
    res = stoch_exp_oracle(path, 1.0, spec=spec, tol=1e-12)
    assert res.ok and float(res) == 0.0


def test_oracles_first_order():
    spec = atom_spec(atoms=(0.5, 0.8), g0=math.log(2), b=0.01, beta=0.05, h=0.01, steps=25)
    out = []
    for level in range(3):
        worst_l = worst_s = 0.0
        for p in range(10):
            s, inp = spec, draw_path_inputs(spec, p)
            for _ in range(level):
                s, inp = refine(s, inp)
            path = simulate_path(s, p, inp)
            worst_l = max(worst_l, float(logG_oracle(path, 0.8, 1.0, spec=s)))
            worst_s = max(worst_s, float(stoch_exp_oracle(path, 1.0, spec=s)))
        out.append((worst_l, worst_s))
    for a, b in zip(out, out[1:]):
        assert a[0] / b[0] == pytest.approx(2.0, rel=0.3)
        assert a[1] / b[1] == pytest.approx(2.0, rel=0.3)


def test_refine_keeps_the_brownian_path():
    spec = atom_spec(b=0.01, steps=10)
    inp = draw_path_inputs(spec, 0)
    fine_spec, fine = refine(spec, inp, 4)
    assert len(fine_spec.grid.nodes) == 41
    np.testing.assert_allclose(fine.dW.reshape(10, 4, -1).sum(axis=1), inp.dW, atol=1e-15)


def test_compensating_measure_link():
    spec = atom_spec()
    spec = replace(spec, risky=replace(spec.risky, j_atoms=(JAtom(0.2, 1.0, ((0.5, 1.0),)),)))
    res = compensating_measure_link(spec, 0.2, g=lambda u: np.full(np.shape(u), math.log(2)))
    assert res.exact == pytest.approx(math.log(2))
    assert res.estimate == pytest.approx(math.log(2))
    ac = compensating_measure_link(news_spec(), 0.4)
    assert ac.estimate == ac.exact == 0.0

import numpy as np
import pytest

from riskyhjm import (FlatCurve, JAtom, MeasureRealization, RiskyDateModel, TruncatedExpKernel, UniformKernel,
                      WindowKernel, build_time_grid, compensator_density, mu_bar, simulate_announcements)
from riskyhjm.errors import EmptySupport, KernelNotNormalized, NodeOutOfRange
from riskyhjm.measure import (DETERMINISTIC, MARKED, FunctionKernel, announcement_times, check_kernel,
                              compensator_atoms, kernel_table)


@pytest.mark.parametrize("kernel", [UniformKernel(), WindowKernel(0.3), TruncatedExpKernel(3.0)])
@pytest.mark.parametrize("t", [0.0, 0.4, 0.95])
def test_kernels_normalized_on_remaining_horizon(kernel, t):
    check_kernel(kernel, t, 1.0)
    nodes = np.linspace(0, 1, 41)
    m = kernel.cell_masses(t, nodes, 1.0)
    assert m.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(m[nodes <= t] == 0)


def test_bad_kernels():
    with pytest.raises(KernelNotNormalized):
        check_kernel(FunctionKernel(lambda t, u, h: np.full(np.shape(u), 2.0)), 0.0, 1.0)
    with pytest.raises(EmptySupport):
        check_kernel(FunctionKernel(lambda t, u, h: np.zeros(np.shape(u))), 0.0, 1.0)


def test_risky_date_outside_horizon():
    with pytest.raises(NodeOutOfRange):
        RiskyDateModel(DETERMINISTIC, 1.0, atoms=(2.0,))


def test_deterministic_realization_and_counts():
    grid = build_time_grid(1.0, 10)
    model = RiskyDateModel(DETERMINISTIC, 1.0, atoms=(0.3, 0.7), weights=(1, 2))
    real = simulate_announcements(model, grid, 0)
    assert real.announced_by(0.0) == {grid.snap(0.3): 1, grid.snap(0.7): 2}
    assert mu_bar(real, 0.5) == 1 and mu_bar(real, 1.0) == 3
    assert real.future_atoms(0.5) == {grid.snap(0.7): 2}


def test_marks_are_after_announcements_and_on_nodes():
    grid = build_time_grid(1.0, 50)
    model = RiskyDateModel(MARKED, 1.0, rate=FlatCurve(5.0), kernel=WindowKernel(0.2))
    real = simulate_announcements(model, grid, 1)
    assert real.marks
    for s, u in real.marks:
        assert u > s
        grid.index(s), grid.index(u)
        assert u - s <= 0.2 + grid.dt + 1e-12


def test_announcement_cap():
    grid = build_time_grid(1.0, 50)
    model = RiskyDateModel(MARKED, 1.0, rate=FlatCurve(50.0), kernel=UniformKernel(), max_announcements=2)
    for seed in range(20):
        assert len(announcement_times(model, grid, np.random.default_rng(seed))) <= 2


def test_announcement_count_is_poisson():
    grid = build_time_grid(1.0, 20)
    model = RiskyDateModel(MARKED, 1.0, rate=FlatCurve(3.0), kernel=UniformKernel())
    counts = [len(announcement_times(model, grid, np.random.default_rng(s))) for s in range(4000)]
    assert np.mean(counts) == pytest.approx(3.0, abs=4 * np.sqrt(3.0 / 4000))


def test_compensator_pieces():
    model = RiskyDateModel(MARKED, 1.0, rate=FlatCurve(2.0), kernel=UniformKernel(),
                           j_atoms=(JAtom(0.2, 1.0, ((0.5, 1.0),)),))
    assert compensator_density(model, 0.5, 0.75) == pytest.approx(2.0 / 0.5)
    assert compensator_density(model, 0.5, 0.25) == 0.0
    assert compensator_atoms(model, 0.2) == {"J": 1.0, "F": [(0.5, 1.0)]}
    assert compensator_atoms(model, 0.3) == {}


def test_kernel_table_rows():
    grid = build_time_grid(1.0, 10)
    model = RiskyDateModel(MARKED, 1.0, rate=FlatCurve(1.0), kernel=UniformKernel())
    tab = kernel_table(model, grid)
    np.testing.assert_allclose(tab[:-1].sum(axis=1), 1.0)
    np.testing.assert_allclose(tab[-1], 0.0)


def test_realization_rejects_date_not_after_announcement():
    with pytest.raises(ValueError):
        MeasureRealization([(0.5, 0.5)])

"""The random measure of risky-date announcements.

An announcement at time ``sigma`` designates a future risky date ``tau > sigma``.
Two kinds are simulatable: deterministic atoms all announced at time 0, and a
marked point process with announcement intensity ``kappa(t)`` and date kernel
``q(t, u)``. The compensator is ``xi_t(du) dt = kappa(t) q(t, u) du dt``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .core import Curve, FlatCurve, TimeGrid
from .errors import EmptySupport, KernelNotNormalized, ModelError, NodeOutOfRange

DETERMINISTIC = "deterministic_atoms"
MARKED = "marked_point_process"
NORM_TOL = 1e-8


# ---------------------------------------------------------------------------
# date kernels q(t, .) on (t, horizon]
# ---------------------------------------------------------------------------


class DateKernel:
    """Density in ``u`` on ``(t, horizon]``; subclasses give ``cdf`` in closed form."""

    def density(self, t, u, horizon):
        raise NotImplementedError

    def cdf(self, t, u, horizon):
        """``int_t^u q(t, v) dv`` for an array ``u``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.zeros(len(u))
        for k, x in enumerate(u):
            if x > t:
                hi = min(x, horizon)
                out[k] = integrate.quad(lambda v: float(self.density(t, np.array([v]), horizon)[0]),
                                        t, hi, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
        return out

    def cell_masses(self, t, nodes, horizon):
        """Mass of ``q(t, .)`` on each cell ``(nodes[l-1], nodes[l]]``; 0 for nodes <= t."""
        c = self.cdf(t, nodes, horizon)
        m = np.zeros(len(nodes))
        m[1:] = np.diff(c)
        m[nodes <= t] = 0.0
        return np.maximum(m, 0.0)

    def to_dict(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serializable")


@dataclass(frozen=True)
class UniformKernel(DateKernel):
    """Uniform on ``(t, horizon]``."""

    def density(self, t, u, horizon):
        u = np.asarray(u, dtype=float)
        if horizon <= t:
            return np.zeros(np.shape(u))
        return np.where((u > t) & (u <= horizon), 1.0 / (horizon - t), 0.0)

    def cdf(self, t, u, horizon):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if horizon <= t:
            return np.zeros(len(u))
        return np.clip((u - t) / (horizon - t), 0.0, 1.0)

    def to_dict(self):
        return {"family": "uniform"}


@dataclass(frozen=True)
class WindowKernel(DateKernel):
    """Uniform on ``(t, min(t + width, horizon)]``."""

    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ModelError(f"window width must be positive, got {self.width!r}")

    def _hi(self, t, horizon):
        return min(t + self.width, horizon)

    def density(self, t, u, horizon):
        u = np.asarray(u, dtype=float)
        hi = self._hi(t, horizon)
        if hi <= t:
            return np.zeros(np.shape(u))
        return np.where((u > t) & (u <= hi), 1.0 / (hi - t), 0.0)

    def cdf(self, t, u, horizon):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        hi = self._hi(t, horizon)
        if hi <= t:
            return np.zeros(len(u))
        return np.clip((u - t) / (hi - t), 0.0, 1.0)

    def to_dict(self):
        return {"family": "window", "width": self.width}


@dataclass(frozen=True)
class TruncatedExpKernel(DateKernel):
    """Exponential waiting time with rate ``rate``, conditioned on ``u <= horizon``."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ModelError(f"kernel rate must be positive, got {self.rate!r}")

    def density(self, t, u, horizon):
        u = np.asarray(u, dtype=float)
        if horizon <= t:
            return np.zeros(np.shape(u))
        z = -np.expm1(-self.rate * (horizon - t))
        return np.where((u > t) & (u <= horizon), self.rate * np.exp(-self.rate * (u - t)) / z, 0.0)

    def cdf(self, t, u, horizon):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if horizon <= t:
            return np.zeros(len(u))
        z = -np.expm1(-self.rate * (horizon - t))
        x = np.clip(u - t, 0.0, horizon - t)
        return -np.expm1(-self.rate * x) / z

    def to_dict(self):
        return {"family": "truncated_exponential", "rate": self.rate}


@dataclass(frozen=True)
class FunctionKernel(DateKernel):
    """User density ``fn(t, u_array, horizon)``; normalization is checked, not imposed."""

    fn: Callable

    def density(self, t, u, horizon):
        u = np.asarray(u, dtype=float)
        vals = np.asarray(self.fn(t, u, horizon), dtype=float)
        return np.where((u > t) & (u <= horizon), vals, 0.0)


def check_kernel(kernel: DateKernel, t: float, horizon: float):
    """Raise if ``q(t, .)`` is empty or does not integrate to one."""
    total = float(kernel.cdf(t, np.array([horizon]), horizon)[0])
    if total <= 0.0:
        raise EmptySupport(f"date kernel has no mass on ({t:g}, {horizon:g}]")
    if abs(total - 1.0) > NORM_TOL:
        raise KernelNotNormalized(f"date kernel integrates to {total:.12g} at t={t:g}")


# ---------------------------------------------------------------------------
# model and realization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JAtom:
    """Predictable announcement date with compensator jump ``mass`` and a finite
    kernel ``F(t; du) = sum_k prob_k delta_{u_k}``. Only the condition checker
    consumes these; the simulator refuses them."""

    time: float
    mass: float
    points: tuple  # ((u, prob), ...)


@dataclass(frozen=True)
class RiskyDateModel:
    kind: str
    horizon: float
    atoms: tuple = ()
    weights: tuple = ()
    rate: Curve = FlatCurve(0.0)
    rate_bound: float | None = None
    kernel: DateKernel | None = None
    max_announcements: int | None = None
    j_atoms: tuple = ()

    def __post_init__(self):
        if self.kind not in (DETERMINISTIC, MARKED):
            raise ModelError(f"unknown risky-date kind {self.kind!r}")
        if self.kind == DETERMINISTIC:
            if self.weights and len(self.weights) != len(self.atoms):
                raise ModelError("atoms and weights differ in length")
            for u in self.atoms:
                if not (0.0 < u <= self.horizon):
                    raise NodeOutOfRange(f"risky date {u!r} outside (0, {self.horizon}]")
            for w in self.weights:
                if int(w) != w or w < 1:
                    raise ModelError(f"atom multiplicity must be a positive integer, got {w!r}")
        elif self.kernel is None:
            raise ModelError("marked point process needs a date kernel")
        for ja in self.j_atoms:
            if not (0.0 <= ja.time <= self.horizon):
                raise NodeOutOfRange(f"J atom {ja.time!r} outside [0, {self.horizon}]")
            for u, _ in ja.points:
                if not (ja.time < u <= self.horizon):
                    raise NodeOutOfRange(f"J atom kernel point {u!r} outside ({ja.time}, {self.horizon}]")

    @property
    def atom_weights(self) -> tuple:
        return tuple(self.weights) if self.weights else (1,) * len(self.atoms)

    def intensity(self, t):
        if self.kind == DETERMINISTIC:
            return np.zeros(np.shape(t))
        return np.asarray(self.rate(t), dtype=float)

    def intensity_bound(self, grid: TimeGrid) -> float:
        if self.rate_bound is not None:
            return float(self.rate_bound)
        fine = np.linspace(0.0, grid.horizon, 4 * len(grid.nodes) + 1)
        return float(np.max(self.intensity(fine), initial=0.0)) * (1.0 + 1e-9)

    def expected_count(self, a: float, b: float) -> float:
        """``int_a^b kappa(s) ds``."""
        if self.kind == DETERMINISTIC or b <= a:
            return 0.0
        if isinstance(self.rate, FlatCurve):
            return float(self.rate.level) * (b - a)
        return integrate.quad(lambda s: float(self.intensity(np.array([s]))[0]), a, b,
                              epsabs=1e-13, epsrel=1e-11)[0]

    def cell_masses(self, t: float, nodes: np.ndarray) -> np.ndarray:
        if self.kind == DETERMINISTIC or t >= self.horizon:
            return np.zeros(len(nodes))
        return self.kernel.cell_masses(t, nodes, self.horizon)


@dataclass
class MeasureRealization:
    """Realized marks ``(sigma_n, tau_n)`` sorted by announcement time."""

    marks: list = field(default_factory=list)

    def __post_init__(self):
        self.marks = sorted((float(s), float(u)) for s, u in self.marks)
        for s, u in self.marks:
            if not u > s:
                raise ModelError(f"risky date {u!r} not after announcement {s!r}")

    def announced_by(self, t: float) -> Counter:
        """Multiset of risky dates announced by ``t`` (the atoms of ``mu_t``)."""
        return Counter(u for s, u in self.marks if s <= t)

    def future_atoms(self, t: float) -> Counter:
        """Atoms of ``mu_t`` strictly after ``t``."""
        return Counter(u for s, u in self.marks if s <= t < u)

    def risky_dates(self) -> list:
        return sorted(set(u for _, u in self.marks))


def mu_bar(real: MeasureRealization, t: float) -> int:
    """``#{n : tau_n <= t}``."""
    return sum(1 for _, u in real.marks if u <= t)


def mu_bar_jump(real: MeasureRealization, t: float) -> int:
    return sum(1 for _, u in real.marks if u == t)


def compensator_density(model: RiskyDateModel, t: float, u: float) -> float:
    """``kappa(t) q(t, u)``; zero for ``u <= t`` and for deterministic atoms."""
    if model.kind == DETERMINISTIC or u <= t:
        return 0.0
    return float(model.intensity(np.array([t]))[0] * model.kernel.density(t, np.array([u]), model.horizon)[0])


def compensator_atoms(model: RiskyDateModel, t: float) -> dict:
    """Atoms of the compensator at time ``t``: mass of J and the kernel points."""
    out = {}
    for ja in model.j_atoms:
        if ja.time == t:
            out.setdefault("J", 0.0)
            out["J"] += ja.mass
            out.setdefault("F", []).extend(ja.points)
    return out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def announcement_times(model: RiskyDateModel, grid: TimeGrid, rng: np.random.Generator) -> list:
    """Arrival times of announcements on ``(0, horizon]`` by thinning against
    ``sup kappa``. With ``max_announcements`` the intensity drops to zero once
    that many have arrived."""
    bound = model.intensity_bound(grid)
    cap = model.max_announcements
    out = []
    if bound <= 0 or cap == 0:
        return out
    t = 0.0
    while True:
        t += rng.exponential(1.0 / bound)
        if t > grid.horizon:
            break
        k = float(model.intensity(np.array([t]))[0])
        if k > bound * (1 + 1e-9):
            raise ModelError(f"intensity {k:g} at t={t:g} exceeds the thinning bound {bound:g}")
        if rng.uniform() * bound <= k:
            out.append(t)
            if cap is not None and len(out) >= cap:
                break
    return out


def kernel_table(model: RiskyDateModel, grid: TimeGrid) -> np.ndarray:
    """Row ``j`` holds the cell masses of ``q(t_j, .)`` over the grid cells."""
    nodes = grid.nodes
    tab = np.zeros((len(nodes), len(nodes)))
    if model.kind == DETERMINISTIC:
        return tab
    for j in range(len(nodes) - 1):
        tab[j] = model.cell_masses(nodes[j], nodes)
    return tab


def draw_marks(model: RiskyDateModel, grid: TimeGrid, rng: np.random.Generator,
               table: np.ndarray | None = None) -> list:
    """Grid-snapped marks ``(sigma_hat, tau)``.

    An announcement at ``s`` takes effect at the first node ``sigma_hat >= s``;
    its risky date is drawn from the cell masses of ``q(sigma_hat, .)``, which
    places it on a node strictly after ``sigma_hat``. Announcements taking
    effect at the horizon carry no future date and are dropped.
    """
    nodes = grid.nodes
    marks = []
    for s in announcement_times(model, grid, rng):
        j = grid.first_at_or_after(s)
        if j >= len(nodes) - 1:
            continue
        m = table[j] if table is not None else model.cell_masses(nodes[j], nodes)
        total = m.sum()
        if total <= 0.0:
            raise EmptySupport(f"date kernel has no mass after {nodes[j]:g}")
        if abs(total - 1.0) > NORM_TOL:
            raise KernelNotNormalized(f"date kernel integrates to {total:.12g} at t={nodes[j]:g}")
        c = np.cumsum(m)
        l = int(np.searchsorted(c, rng.uniform() * c[-1], side="right"))
        l = max(min(l, len(nodes) - 1), j + 1)
        marks.append((float(nodes[j]), float(nodes[l])))
    return marks


def simulate_announcements(model: RiskyDateModel, grid: TimeGrid, rng_seed) -> MeasureRealization:
    """One realization of the marks. ``rng_seed`` may be an int or a Generator."""
    if model.kind == DETERMINISTIC:
        marks = []
        for u, w in zip(model.atoms, model.atom_weights):
            marks.extend([(0.0, grid.snap(u))] * int(w))
        return MeasureRealization(marks)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return MeasureRealization(draw_marks(model, grid, rng))

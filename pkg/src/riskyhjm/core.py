"""Shared domain types: time grids, initial curves, volatility fields, path and
surface containers, and checks of the standing model assumptions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import NodeOutOfRange, NonPositiveHorizon, UnsnappedAtom

SNAP_RTOL = 1e-12


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Common time/maturity grid. Running times and maturities share ``nodes``."""

    horizon: float
    n_steps: int
    nodes: np.ndarray

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def maturity_nodes(self) -> np.ndarray:
        return self.nodes

    @property
    def steps(self) -> np.ndarray:
        """Widths of the (possibly non-uniform) intervals between nodes."""
        return np.diff(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def _tol(self):
        return SNAP_RTOL * max(1.0, self.horizon)

    def index(self, t: float) -> int:
        """Index of the node equal to ``t``; raises ``UnsnappedAtom`` otherwise."""
        j = int(np.searchsorted(self.nodes, t))
        for k in (j - 1, j):
            if 0 <= k < len(self.nodes) and abs(self.nodes[k] - t) <= self._tol():
                return k
        raise UnsnappedAtom(f"time {t!r} is not a grid node")

    def snap(self, t: float) -> float:
        return float(self.nodes[self.index(t)])

    def first_after(self, t: float) -> int:
        """Index of the first node strictly greater than ``t`` (len(nodes) if none)."""
        j = int(np.searchsorted(self.nodes, t, side="right"))
        while j < len(self.nodes) and self.nodes[j] - t <= self._tol():
            j += 1
        return j

    def first_at_or_after(self, t: float) -> int:
        j = int(np.searchsorted(self.nodes, t, side="left"))
        if j > 0 and abs(self.nodes[j - 1] - t) <= self._tol():
            return j - 1
        return j

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return (self.horizon == other.horizon and self.n_steps == other.n_steps
                and np.array_equal(self.nodes, other.nodes))

    def __hash__(self):
        return hash((self.horizon, self.n_steps, self.nodes.tobytes()))


def build_time_grid(horizon: float, n_steps: int, extra_nodes: Sequence[float] = ()) -> TimeGrid:
    """Uniform grid on ``[0, horizon]`` with ``extra_nodes`` merged in.

    Extra nodes within ``1e-12`` (relative) of an existing node are collapsed
    onto that node, so every atom ends up bit-equal to a grid node.
    """
    if not np.isfinite(horizon) or horizon <= 0:
        raise NonPositiveHorizon(f"horizon must be > 0, got {horizon!r}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise NonPositiveHorizon(f"n_steps must be a positive integer, got {n_steps!r}")
    n_steps = int(n_steps)
    tol = SNAP_RTOL * max(1.0, horizon)
    base = np.linspace(0.0, horizon, n_steps + 1)
    nodes = list(base)
    for x in extra_nodes:
        x = float(x)
        if not np.isfinite(x) or x < -tol or x > horizon + tol:
            raise NodeOutOfRange(f"node {x!r} outside [0, {horizon}]")
        arr = np.asarray(nodes)
        if np.min(np.abs(arr - x)) > tol:
            nodes.append(min(max(x, 0.0), horizon))
    nodes = np.unique(np.asarray(nodes, dtype=float))
    return TimeGrid(float(horizon), n_steps, nodes)


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


class Curve:
    """Deterministic function of maturity, evaluated on arrays."""

    def __call__(self, u):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serializable")


@dataclass(frozen=True)
class FlatCurve(Curve):
    level: float

    def __call__(self, u):
        return np.full(np.shape(u), float(self.level))

    def to_dict(self):
        return {"family": "flat", "level": self.level}


@dataclass(frozen=True)
class LinearCurve(Curve):
    level: float
    slope: float

    def __call__(self, u):
        return self.level + self.slope * np.asarray(u, dtype=float)

    def to_dict(self):
        return {"family": "linear", "level": self.level, "slope": self.slope}


@dataclass(frozen=True)
class TabulatedCurve(Curve):
    """Piecewise-linear interpolation of tabulated values, flat beyond the ends."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or len(self.times) == 0:
            raise ValueError("tabulated curve needs equally many (>0) times and values")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("tabulated curve times must be strictly ascending")

    def __call__(self, u):
        return np.interp(u, self.times, self.values)

    def to_dict(self):
        return {"family": "tabulated", "times": list(self.times), "values": list(self.values)}


@dataclass(frozen=True)
class FunctionCurve(Curve):
    fn: Callable

    def __call__(self, u):
        u = np.asarray(u, dtype=float)

        def safe(x):
            # a point where the user function blows up is reported as non-finite
            try:
                return self.fn(x)
            except (ZeroDivisionError, OverflowError):
                return math.nan
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.vectorize(safe, otypes=[float])(u)


# ---------------------------------------------------------------------------
# volatility fields
# ---------------------------------------------------------------------------


class VolField:
    """R^n-valued volatility field ``(t, T) -> b(t, T)``.

    ``__call__(t, T)`` takes a scalar ``t`` and an array ``T`` and returns an
    array of shape ``(n_factors, len(T))``. Built-in families vanish for
    ``T < t``; :func:`validate_spec` checks that for user callables.
    """

    n_factors: int

    def __call__(self, t, T):
        raise NotImplementedError

    def integral(self, t, T):
        """``int_t^T b(t, u) du`` as an ``(n_factors,)`` array."""
        if T <= t:
            return np.zeros(self.n_factors)
        out = np.empty(self.n_factors)
        for k in range(self.n_factors):
            out[k] = integrate.quad(lambda u: self(t, np.array([u]))[k, 0], t, T,
                                    epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return out

    @property
    def is_zero(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serializable")


@dataclass(frozen=True)
class ConstantVol(VolField):
    """``b(t, T) = sigma * 1{T >= t}`` per factor."""

    sigma: tuple

    @property
    def n_factors(self):
        return len(self.sigma)

    def __call__(self, t, T):
        T = np.atleast_1d(np.asarray(T, dtype=float))
        s = np.asarray(self.sigma, dtype=float)[:, None]
        return s * (T >= t)[None, :]

    def integral(self, t, T):
        return np.asarray(self.sigma, dtype=float) * max(T - t, 0.0)

    @property
    def is_zero(self):
        return not np.any(self.sigma)

    def to_dict(self):
        return {"family": "constant", "sigma": list(self.sigma)}


@dataclass(frozen=True)
class ExpDecayVol(VolField):
    """``b(t, T) = sigma * exp(-decay (T - t)) * 1{T >= t}`` per factor."""

    sigma: tuple
    decay: float

    @property
    def n_factors(self):
        return len(self.sigma)

    def __call__(self, t, T):
        T = np.atleast_1d(np.asarray(T, dtype=float))
        s = np.asarray(self.sigma, dtype=float)[:, None]
        tau = np.maximum(T - t, 0.0)
        return s * (np.exp(-self.decay * tau) * (T >= t))[None, :]

    def integral(self, t, T):
        s = np.asarray(self.sigma, dtype=float)
        tau = max(T - t, 0.0)
        if self.decay == 0:
            return s * tau
        return s * (-np.expm1(-self.decay * tau) / self.decay)

    @property
    def is_zero(self):
        return not np.any(self.sigma)

    def to_dict(self):
        return {"family": "exp_decay", "sigma": list(self.sigma), "decay": self.decay}


@dataclass(frozen=True)
class FunctionVol(VolField):
    """Wraps a user callable ``fn(t, T_array) -> (n_factors, len(T))`` array."""

    fn: Callable
    n_factors: int

    def __call__(self, t, T):
        T = np.atleast_1d(np.asarray(T, dtype=float))
        out = np.asarray(self.fn(t, T), dtype=float)
        return out.reshape(self.n_factors, len(T))


def zero_vol(n_factors: int) -> ConstantVol:
    return ConstantVol(tuple([0.0] * n_factors))


# ---------------------------------------------------------------------------
# specification containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardFieldSpec:
    """Initial curves and volatilities of the two forward-rate fields ``f`` and ``g``.

    ``drift`` holds the drift object produced by
    :func:`riskyhjm.drift.no_arbitrage_drift`; ``None`` means "use the
    engine-computed drift". A deliberately mis-specified drift is expressed as
    a shifted drift object, never by editing curves.
    """

    f0: Curve
    g0: Curve
    vol_b: VolField
    vol_beta: VolField
    n_factors: int
    drift: object = None

    def __post_init__(self):
        if self.n_factors < 1:
            raise ValueError("n_factors must be positive")
        for name in ("vol_b", "vol_beta"):
            if getattr(self, name).n_factors != self.n_factors:
                raise ValueError(f"{name} has {getattr(self, name).n_factors} factors, "
                                 f"expected {self.n_factors}")


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, msg: str):
        self.violations.append(msg)

    def extend(self, other: "ValidationReport"):
        self.violations.extend(other.violations)

    def __str__(self):
        if self.ok:
            return "no violations"
        return "\n".join(f"- {v}" for v in self.violations)


def validate_spec(fields: ForwardFieldSpec, grid: TimeGrid, lipschitz: float = 1e3,
                  max_nodes: int = 60) -> ValidationReport:
    """Check the standing assumptions on curves and volatilities on the grid.

    Continuity of the initial curves is proxied by ``|df0| <= lipschitz * du``
    between successive nodes.
    """
    rep = ValidationReport()
    nodes = grid.nodes
    sub = nodes if len(nodes) <= max_nodes else nodes[np.linspace(0, len(nodes) - 1, max_nodes).astype(int)]

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for name, curve in (("f0", fields.f0), ("g0", fields.g0)):
            vals = np.asarray(curve(nodes), dtype=float)
            bad = ~np.isfinite(vals)
            if bad.any():
                rep.add(f"initial curve {name} not finite at {nodes[bad][0]:g}")
                continue
            if not np.isfinite(integrate.trapezoid(np.abs(vals), nodes)):
                rep.add(f"initial curve {name} not integrable")
            jumps = np.abs(np.diff(vals)) > lipschitz * np.diff(nodes) + 1e-15
            if jumps.any():
                k = int(np.argmax(jumps))
                rep.add(f"initial curve {name} discontinuous near {nodes[k + 1]:g} "
                        f"(|jump| {abs(vals[k + 1] - vals[k]):.3g} exceeds {lipschitz:g} per year)")

        for name, vol in (("b", fields.vol_b), ("beta", fields.vol_beta)):
            sq = np.zeros(len(sub))
            reported = False
            for i, t in enumerate(sub):
                vals = vol(t, sub)
                if not np.all(np.isfinite(vals)):
                    rep.add(f"volatility {name} not finite at t={t:g}")
                    reported = True
                    break
                before = sub < t
                if not reported and np.any(vals[:, before] != 0):
                    T_bad = sub[before][np.any(vals[:, before] != 0, axis=0)][0]
                    rep.add(f"volatility {name} nonzero for T < t (t={t:g}, T={T_bad:g})")
                    reported = True
                sq[i] = integrate.trapezoid(np.sum(vals ** 2, axis=0), sub)
            if not reported and not np.isfinite(integrate.trapezoid(sq, sub)):
                rep.add(f"volatility {name} not square integrable")

    drift = fields.drift
    if drift is not None and hasattr(drift, "vanishes_before"):
        for t in sub[1:]:
            if not drift.vanishes_before(t, sub[sub < t]):
                rep.add(f"drift nonzero for T < t (t={t:g})")
                break
    return rep


# ---------------------------------------------------------------------------
# path and surface containers
# ---------------------------------------------------------------------------


@dataclass
class Numeraire:
    """Money-market account ``X0_t = exp(int_0^t r_s ds)`` sampled on the grid."""

    short_rate: np.ndarray
    X0: np.ndarray

    def __post_init__(self):
        if self.X0[0] != 1.0:
            raise ValueError("numeraire must start at 1")


@dataclass
class PathState:
    """One simulated world on the grid.

    ``f_field[i, j]`` and ``g_field[i, j]`` hold ``f(t_i, T_j)`` for ``j >= i``
    and NaN below the diagonal. ``brownian_increments`` has shape
    ``(n_factors, n_steps)``.
    """

    seed: int
    path_index: int
    grid: TimeGrid
    brownian_increments: np.ndarray
    announcements: list
    default_time: float
    f_field: np.ndarray
    g_field: np.ndarray
    numeraire: Numeraire
    intensity: np.ndarray
    jump_probabilities: dict = field(default_factory=dict)
    recovery: np.ndarray | None = None
    alpha: dict = field(default_factory=dict)

    @property
    def survival(self) -> np.ndarray:
        """``1 - H_t`` on the grid."""
        return (self.grid.nodes < self.default_time).astype(float)


@dataclass
class BondSurface:
    """``P(t_i, T_j)`` and ``P(t_i, T_j) / X0_{t_i}``; NaN where ``T_j < t_i``."""

    grid: TimeGrid
    prices: np.ndarray
    discounted: np.ndarray

    def price(self, t: float, T: float) -> float:
        return float(self.prices[self.grid.index(t), self.grid.index(T)])

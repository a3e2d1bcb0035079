"""Desk-scale checks that discounted bond prices are martingales, plus
per-path oracles for the log-G and stochastic-exponential representations.

The martingale test compares, on every mesh point ``(t, T)`` with ``t > 0``,
the sample mean of ``P(t,T) / X0_t`` with ``P(0,T)``. A local martingale is
tested as a true martingale: every in-scope price is bounded, so the two
notions cannot be told apart by simulation.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .core import PathState, TimeGrid
from .drift import ConditionReport, check_conditions
from .measure import DETERMINISTIC, MeasureRealization

MIN_PATHS = 1000          # below this the martingale verdict is report-only
SE_FLOOR = 1e-12          # relative floor keeping standard errors positive


def widened_threshold(z_threshold: float, n_points: int) -> float:
    """``z + sqrt(2 ln M)``: keeps the family-wise false-alarm rate roughly flat in ``M``."""
    return z_threshold + math.sqrt(2.0 * math.log(max(n_points, 1)))


# ---------------------------------------------------------------------------
# martingale test
# ---------------------------------------------------------------------------


@dataclass
class MartingaleReport:
    t: np.ndarray
    T: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    target: np.ndarray
    z: np.ndarray
    z_threshold: float
    threshold: float
    n_paths: int
    runtime: float
    inconclusive: bool = False

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z))) if self.z.size else 0.0

    @property
    def failing(self) -> list:
        """Mesh points ``(t, T, z)`` beyond the widened threshold."""
        bad = np.flatnonzero(np.abs(self.z) > self.threshold)
        return [(float(self.t[k]), float(self.T[k]), float(self.z[k])) for k in bad]

    @property
    def verdict(self) -> str:
        if self.inconclusive:
            return "inconclusive"
        return "fail" if self.failing else "pass"

    def z_at(self, t: float, T: float) -> float:
        k = np.flatnonzero(np.isclose(self.t, t, rtol=0, atol=1e-9) & np.isclose(self.T, T, rtol=0, atol=1e-9))
        if not len(k):
            raise KeyError(f"({t:g}, {T:g}) is not a mesh point")
        return float(self.z[k[0]])

    def summary(self) -> dict:
        worst = int(np.argmax(np.abs(self.z))) if self.z.size else None
        return {
            "verdict": self.verdict,
            "n_paths": int(self.n_paths),
            "mesh_points": int(self.z.size),
            "z_threshold": float(self.z_threshold),
            "widened_threshold": float(self.threshold),
            "max_abs_z": self.max_abs_z,
            "worst_point": None if worst is None else {"t": float(self.t[worst]), "T": float(self.T[worst]),
                                                      "z": float(self.z[worst])},
            "failing_points": [{"t": t, "T": T, "z": z} for t, T, z in self.failing],
            "runtime_seconds": float(self.runtime),
        }

    def rows(self):
        return zip(self.t, self.T, self.mean, self.se, self.target, self.z)


def martingale_test(ensemble, grid: TimeGrid | None = None, z_threshold: float | None = None) -> MartingaleReport:
    """z-scores of the mean discounted price against ``P(0, T)`` on the mesh."""
    t0 = time.perf_counter()
    grid = grid or ensemble.grid
    z_threshold = ensemble.spec.tolerance_z if z_threshold is None else float(z_threshold)
    nodes = grid.nodes
    mean, se = ensemble.discounted_stats()
    target = ensemble.initial
    ts, Ts, ms, ses, tg = [], [], [], [], []
    for m, i in enumerate(ensemble.mesh):
        if i == 0:
            continue  # P(0, T) / X0_0 is the target itself
        for k in ensemble.mesh:
            if k >= i:
                ts.append(nodes[i]); Ts.append(nodes[k])
                ms.append(mean[m, k]); ses.append(se[m, k]); tg.append(target[k])
    ms, tg = np.asarray(ms, float), np.asarray(tg, float)
    ses = np.maximum(np.nan_to_num(np.asarray(ses, float)), SE_FLOOR * np.maximum(np.abs(tg), 1e-300))
    z = np.nan_to_num((ms - tg) / ses)
    return MartingaleReport(np.asarray(ts), np.asarray(Ts), ms, ses, tg, z, z_threshold,
                            widened_threshold(z_threshold, len(z)), int(ensemble.n_paths),
                            ensemble.runtime + time.perf_counter() - t0,
                            inconclusive=ensemble.n_paths < MIN_PATHS)


# ---------------------------------------------------------------------------
# jump frequencies at risky dates
# ---------------------------------------------------------------------------


@dataclass
class JumpFrequencyReport:
    """Per risky date: survivors, observed default frequency (mean realized loss
    under recovery), the reference ``1 - exp(-g w)`` averaged over survivors,
    its Poisson-binomial standard error and the z-score."""

    times: np.ndarray
    survivors: np.ndarray
    frequency: np.ndarray
    expected: np.ndarray
    se: np.ndarray
    z: np.ndarray
    mean_g: np.ndarray
    z_threshold: float
    no_data: list = field(default_factory=list)

    @property
    def threshold(self) -> float:
        """Per-date threshold, widened for the number of dates tested."""
        return widened_threshold(self.z_threshold, len(self.times))

    @property
    def pooled_z(self) -> float:
        """All dates together: total defaults against the summed probabilities."""
        var = float(np.sum((self.se * self.survivors) ** 2))
        diff = float(np.sum((self.frequency - self.expected) * self.survivors))
        if var == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / math.sqrt(var)

    @property
    def failing(self) -> list:
        out = []
        for k, u in enumerate(self.times):
            if self.se[k] > 0:
                bad = abs(self.z[k]) > self.threshold
            else:
                bad = self.frequency[k] != self.expected[k]
            if bad:
                out.append(float(u))
        return out

    @property
    def verdict(self) -> str:
        if not len(self.times):
            return "no data"
        return "fail" if self.failing or abs(self.pooled_z) > self.z_threshold else "pass"

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "z_threshold": float(self.z_threshold),
            "widened_threshold": float(self.threshold),
            "pooled_z": self.pooled_z,
            "atoms": [{"time": float(u), "survivors": int(s), "frequency": float(f), "expected": float(e),
                       "se": float(q), "z": float(z), "mean_g": float(g)}
                      for u, s, f, e, q, z, g in zip(self.times, self.survivors, self.frequency, self.expected,
                                                     self.se, self.z, self.mean_g)],
            "failing_atoms": self.failing,
            "no_data": list(self.no_data),
        }


def jump_frequency_test(ensemble, z_threshold: float = 4.0) -> JumpFrequencyReport:
    """Conditional default frequency among survivors at each risky date."""
    nodes = ensemble.grid.nodes
    surv = ensemble.atom_survivors
    seen = np.flatnonzero(surv > 0)
    no_data = []
    if ensemble.spec.risky.kind == DETERMINISTIC:
        for u in ensemble.spec.risky.atoms:
            k = ensemble.grid.index(u)
            if surv[k] == 0:
                no_data.append(float(u))
    s = surv[seen]
    freq = ensemble.atom_defaults[seen] / s
    expected = ensemble.atom_p_sum[seen] / s
    se = np.sqrt(ensemble.atom_p_var[seen]) / s
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (freq - expected) / np.where(se > 0, se, 1.0), 0.0)
    mean_g = ensemble.atom_g_sum[seen] / s
    return JumpFrequencyReport(nodes[seen], s, freq, expected, se, z, mean_g, float(z_threshold), no_data)


# ---------------------------------------------------------------------------
# per-path oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    residual: float
    tol: float | None = None

    @property
    def ok(self) -> bool:
        return self.tol is None or self.residual <= self.tol

    def __float__(self):
        return float(self.residual)


def _announcements_at(path: PathState, grid: TimeGrid) -> dict:
    """Node index of the effective date -> list of announced risky-date node indices."""
    out = {}
    for s, u in path.announcements:
        out.setdefault(grid.index(s), []).append(grid.index(u))
    return out


def _g_row(grid, row, i):
    x, y = grid.nodes[i:], row[i:]
    return lambda u: np.interp(u, x, y)


def _log_g_terms(spec, path: PathState, i_t: int, K: int) -> list:
    """Terms of the right-hand side of the log-G decomposition up to node ``i_t``.

    Contributions: the initial atoms, ``+g(s,s)`` when time passes an announced
    risky date, ``-alpha_bar ds - beta_bar dW`` with the continuous drift, and
    ``-g(s,u)`` for each announcement taking effect at ``s``.
    """
    grid = spec.grid
    nodes = grid.nodes
    drift = spec.drift
    G = path.g_field
    dW = path.brownian_increments
    ann = _announcements_at(path, grid)
    terms = [-G[0, k] for k in ann.get(0, []) if k <= K]
    active = Counter(k for k in ann.get(0, []))
    for i in range(i_t):
        t, d = nodes[i], nodes[i + 1] - nodes[i]
        live = {nodes[k]: w for k, w in active.items() if i < k <= K}
        if live:
            atoms = Counter({nodes[k]: w for k, w in active.items() if k > i})
            alpha = drift.alpha(t, atoms, _g_row(grid, G[i], i))
            beta = spec.fields.vol_beta(t, np.array(sorted(live)))
            for (u, w), col in zip(sorted(live.items()), beta.T):
                terms.append(-w * alpha[u] * d)
                terms.append(-w * float(col @ dW[:, i]))
        k1 = i + 1
        if k1 <= K and active.get(k1):
            terms.append(active[k1] * G[k1, k1])
        for k in ann.get(k1, []):
            active[k] += 1
            if k <= K:
                terms.append(-G[k1, k])
    return terms


def _direct_log_g(path: PathState, grid: TimeGrid, i_t: int, K: int) -> list:
    real = MeasureRealization(path.announcements)
    out = []
    for u, w in real.announced_by(grid.nodes[i_t]).items():
        k = grid.index(u)
        if i_t < k <= K:
            out.extend([-path.g_field[i_t, k]] * w)
    return out


def logG_oracle(path: PathState, t: float, T: float, tol: float | None = None, *, spec) -> OracleResult:
    """``|log G(t,T) - RHS|`` where ``log G = -sum g(t, tau_n)`` over announced
    dates in ``(t, T]`` and RHS is the discretized semimartingale decomposition
    built with the continuous drift of ``spec``. Exactly zero without volatility;
    first order in ``dt`` otherwise."""
    grid = spec.grid
    i_t, K = grid.index(t), grid.index(T)
    if K < i_t:
        return OracleResult(0.0, tol)
    terms = _direct_log_g(path, grid, i_t, K) + [-x for x in _log_g_terms(spec, path, i_t, K)]
    return OracleResult(abs(math.fsum(terms)), tol)


def _a_bar(spec, t: float, T: float, atoms: Counter, g) -> float:
    """``int_t^T a(t,u) du`` in closed form for the volatility part, by
    quadrature for the news compensation."""
    drift = spec.drift
    bb = drift.b_bar(t, T)
    val = 0.5 * float(bb @ bb) + drift.shift * (T - t)
    inner = sorted(u for u in atoms if t < u <= T)
    if inner:
        beta = spec.fields.vol_beta(t, np.array(inner))
        for col, u in zip(beta.T, inner):
            val += atoms[u] * float(col @ (bb - drift.b_bar(t, u)))
    if spec.risky.kind != DETERMINISTIC and T > t:
        val += integrate.quad(lambda u: float(drift.news(t, np.array([u]), g)[0]), t, T,
                              epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return val


def stoch_exp_oracle(path: PathState, T: float, tol: float | None = None, *, spec) -> OracleResult:
    """Max over grid times ``t <= T`` of ``|E(X - H - [X, H])_t - P(t, T)|``.

    The stochastic exponential is multiplied out step by step: a continuous
    factor ``exp(dX^c - |v|^2 dt / 2)`` with the continuous drift, a jump factor
    ``1 + dX^d = exp(dY)`` at news and risky dates, and ``1 - dH`` (or the
    recovery factor) at default. Logs are accumulated with exact summation so
    that vol-free deterministic paths give exactly zero.
    """
    grid = spec.grid
    nodes = grid.nodes
    K = grid.index(T)
    drift = spec.drift
    F, G = path.f_field, path.g_field
    dW = path.brownian_increments
    ann = _announcements_at(path, grid)
    delta = np.append(grid.steps, 0.0)
    xi = path.recovery if path.recovery is not None else (nodes < path.default_time).astype(float)

    # log P(0, T) in the simulator's quadrature, term by term
    logs = [-F[0, j] * delta[j] for j in range(K)] + [-G[0, k] for k in ann.get(0, []) if k <= K]
    active = Counter(ann.get(0, []))
    worst = 0.0
    for i in range(K + 1):
        # direct price at t_i and the product form, compared in log space
        direct = [-F[i, j] * delta[j] for j in range(i, K)]
        direct += [-G[i, k] * w for k, w in active.items() if i < k <= K]
        if xi[i] > 0:
            p = xi[i] * math.exp(math.fsum(direct))
            worst = max(worst, p * abs(math.expm1(math.fsum(logs + [-x for x in direct]))))
        if i == K:
            break
        t, d = nodes[i], delta[i]
        atoms = Counter({nodes[k]: w for k, w in active.items() if k > i})
        live = Counter({u: w for u, w in atoms.items() if u <= nodes[K]})
        g = _g_row(grid, G[i], i)
        v = drift.b_bar(t, nodes[K]) + drift.beta_bar(t, nodes[K], live)
        alpha = drift.alpha(t, atoms, g) if live else {}
        alpha_bar = math.fsum(w * alpha[u] for u, w in live.items())
        dxc = (F[i, i] - _a_bar(spec, t, nodes[K], live, g) - alpha_bar + 0.5 * float(v @ v)) * d \
            - float(v @ dW[:, i])
        logs.append(dxc - 0.5 * float(v @ v) * d)
        k1 = i + 1
        if active.get(k1) and k1 <= K:
            logs.append(active[k1] * G[k1, k1])      # dY at a passing risky date
        for k in ann.get(k1, []):
            active[k] += 1
            if k <= K:
                logs.append(-G[k1, k])               # dY at news
    return OracleResult(worst, tol)


def refine(spec, inputs, factor: int = 2):
    """``(spec, inputs)`` on a grid whose steps are each split in ``factor``.

    The Brownian path is kept: every coarse increment is split by a Brownian
    bridge, ``dW / m + sqrt(h / m) (Z_j - mean Z)``, with ``Z`` drawn from a
    generator keyed on the path index. Marks, clocks and node uniforms carry
    over to the matching fine nodes.
    """
    from dataclasses import replace
    grid = spec.grid
    m = int(factor)
    h = grid.steps
    pieces = [grid.nodes[i] + h[i] * np.arange(m) / m for i in range(len(h))]
    nodes = np.concatenate(pieces + [grid.nodes[-1:]])
    fine = TimeGrid(grid.horizon, grid.n_steps * m, nodes)
    dW = inputs.dW
    nf = dW.shape[1]
    rng = np.random.default_rng([int(inputs.index), m, 7])
    z = rng.standard_normal((len(h), m, nf))
    z -= z.mean(axis=1, keepdims=True)
    fdW = (dW[:, None, :] / m + np.sqrt(h / m)[:, None, None] * z).reshape(len(h) * m, nf)
    uniforms = np.ones(len(nodes))
    uniforms[::m] = inputs.uniforms
    xi = None
    if inputs.xi_factor is not None:
        xi = np.ones(len(nodes))
        xi[::m] = inputs.xi_factor
    fine_inputs = replace(inputs, dW=fdW, uniforms=uniforms, xi_factor=xi)
    return replace(spec, grid=fine, mesh_stride=None), fine_inputs


# ---------------------------------------------------------------------------
# compensating measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkResult:
    time: float
    estimate: float
    se: float
    exact: float

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.estimate == self.exact else math.inf
        return (self.estimate - self.exact) / self.se


def compensating_measure_link(spec, t: float, g=None, n_samples: int = 100_000, seed: int = 0) -> LinkResult:
    """Expected announcement jump ``E[sum g(t,u) mu({t} x du)]`` against
    ``int g(t,u) mu^p({t} x du)``.

    At a declared J atom the announcement happens with probability ``mass`` and
    lands on one of the atom's points, so the estimate is a Monte Carlo mean.
    Elsewhere the compensator has no mass at ``t``, raw announcement times have
    a continuous law, and both sides are zero.
    """
    g = spec.fields.g0 if g is None else g
    for ja in spec.risky.j_atoms:
        if abs(ja.time - t) <= 1e-12:
            us = np.array([u for u, _ in ja.points], dtype=float)
            pr = np.array([p for _, p in ja.points], dtype=float)
            gv = np.asarray(g(us), dtype=float)
            rng = np.random.default_rng(seed)
            hit = rng.uniform(size=n_samples) < min(ja.mass, 1.0)
            pick = rng.choice(len(us), size=n_samples, p=pr / pr.sum())
            x = np.where(hit, gv[pick], 0.0) * max(ja.mass, 1.0)
            exact = ja.mass * float(pr @ gv)
            return LinkResult(t, float(x.mean()), float(x.std(ddof=1) / math.sqrt(n_samples)), exact)
    return LinkResult(t, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# full verification
# ---------------------------------------------------------------------------


@dataclass
class Verification:
    martingale: MartingaleReport
    jumps: JumpFrequencyReport
    conditions: ConditionReport
    break_condition: str | None = None
    magnitude: float = 0.0

    @property
    def failing(self) -> list:
        out = []
        if self.martingale.verdict == "fail":
            out.append("martingale")
        if self.jumps.verdict == "fail":
            out.append("jump_frequency")
        out += [f"condition ({c})" for c in self.conditions.failing]
        return out

    @property
    def verdict(self) -> str:
        if self.failing:
            return "fail"
        return "inconclusive" if self.martingale.inconclusive else "pass"

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "failing": self.failing,
            "break_condition": self.break_condition,
            "magnitude": float(self.magnitude),
            "martingale": self.martingale.summary(),
            "jump_frequency": self.jumps.summary(),
            "conditions": self.conditions.summary(),
        }


def verify_scenario(spec, break_condition: str | None = None, magnitude: float = 0.0,
                    workers: int | None = None, ensemble=None) -> tuple:
    """Run (or reuse) an ensemble and all checks; returns ``(Verification, Ensemble)``."""
    from .simulator import run_scenario
    spec = spec.with_violation(break_condition, magnitude)
    ens = ensemble if ensemble is not None else run_scenario(spec, workers=workers)
    mart = martingale_test(ens, spec.grid, spec.tolerance_z)
    jumps = jump_frequency_test(ens, spec.tolerance_z)
    conds = check_conditions(spec, ens.records)
    return Verification(mart, jumps, conds, break_condition, magnitude), ens

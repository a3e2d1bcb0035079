"""Pathwise simulation of forward fields, announcements, default and bond prices.

Paths are processed in fixed-size chunks by a vectorized Euler engine. Every
random input of a path comes from that path's own streams (see :mod:`rng`),
chunk boundaries do not depend on the worker count, and chunk statistics are
reduced in path-index order, so an ensemble is bit-identical for a given
master seed however many workers produce it.

Discretization. With nodes ``T_0 < ... < T_n`` and widths ``delta_j``,

    log P(t_i, T_k) = -sum_{i<=j<k} f(t_i, T_j) delta_j
                      - sum_{i<l<=k} M_l g(t_i, T_l)          (before default)

where ``M_l`` counts announced risky dates at ``T_l``; the short rate is
``r_i = f(t_i, t_i) - h_i``. The drift from :func:`drift.step_drift` makes each
discounted price an exact one-step martingale up to O(dt^2) news terms.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .core import BondSurface, ForwardFieldSpec, Numeraire, PathState, TimeGrid, ValidationReport, validate_spec
from .drift import DefaultModel, NoArbitrageDrift, jump_probability, no_arbitrage_drift, step_drift
from .errors import ModelError, NegativeJumpProbability, NonFiniteField, PathFailure
from .measure import DETERMINISTIC, MeasureRealization, RiskyDateModel, check_kernel, draw_marks, kernel_table
from .recovery import RecoveryModel, event_times

CHUNK = 1000
WORKERS_ENV = "RISKYHJM_WORKERS"


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    grid: TimeGrid
    fields: ForwardFieldSpec
    risky: RiskyDateModel
    default: DefaultModel = DefaultModel()
    n_paths: int = 1000
    master_seed: int = 0
    recovery: RecoveryModel | None = None
    derive_short_rate: bool = True
    mesh_stride: int | None = None
    tolerance_z: float = 4.0
    keep_paths: int = 8

    @property
    def drift(self) -> NoArbitrageDrift:
        d = self.fields.drift
        return d if isinstance(d, NoArbitrageDrift) else no_arbitrage_drift(self.fields, self.risky)

    @property
    def mesh(self) -> np.ndarray:
        """Indices of the (t, T) mesh nodes used for statistics and reports."""
        n = len(self.grid.nodes)
        stride = self.mesh_stride or max(1, int(round((n - 1) / 20)))
        idx = list(range(0, n, stride))
        if idx[-1] != n - 1:
            idx.append(n - 1)
        return np.asarray(idx)

    def with_violation(self, condition: str | None, magnitude: float) -> "ScenarioSpec":
        """Copy with a controlled violation of condition i, ii or iv injected."""
        if condition is None or magnitude == 0:
            return self
        if condition == "iv":
            return replace(self, fields=replace(self.fields, drift=self.drift.with_shift(magnitude)))
        if condition == "i":
            return replace(self, default=replace(self.default, rate_shift=magnitude))
        if condition == "ii":
            if self.recovery is not None:
                return replace(self, recovery=replace(self.recovery, pin_shift=magnitude))
            return replace(self, default=replace(self.default, jump_shift=magnitude))
        raise ModelError(f"unknown condition {condition!r}; expected one of i, ii, iv")


def validate_scenario(spec: ScenarioSpec) -> ValidationReport:
    """Standing assumptions plus model admissibility checks, as a report."""
    rep = validate_spec(spec.fields, spec.grid)
    risky = spec.risky
    if risky.horizon != spec.grid.horizon:
        rep.add(f"risky-date model horizon {risky.horizon:g} differs from grid horizon {spec.grid.horizon:g}")
    for u in risky.atoms:
        try:
            spec.grid.index(u)
        except ModelError as exc:
            rep.add(str(exc))
    if risky.kind != DETERMINISTIC:
        nodes = spec.grid.nodes[:-1]
        kap = risky.intensity(nodes)
        for t, k in zip(nodes, kap):
            if k > 0:
                try:
                    check_kernel(risky.kernel, t, risky.horizon)
                except ModelError as exc:
                    rep.add(str(exc))
                    break
        if risky.rate_bound is not None and np.any(kap > risky.rate_bound):
            rep.add(f"announcement intensity exceeds the thinning bound {risky.rate_bound:g}")
    g0 = spec.fields.g0(spec.grid.nodes)
    if spec.recovery is None and np.any(g0 < 0):
        rep.add("initial curve g0 negative: jump probabilities at risky dates would be negative")
    if spec.recovery is not None:
        if not spec.fields.vol_beta.is_zero:
            rep.add("recovery requires deterministic g at risky dates (vol_beta must be zero)")
        if spec.default.base or spec.default.slope:
            rep.add("recovery replaces the default intensity; set the default intensity to zero")
        try:
            spec.recovery.g_pin(1)
        except ModelError as exc:
            rep.add(str(exc))
    if spec.n_paths < 0:
        rep.add("n_paths must be non-negative")
    return rep


# ---------------------------------------------------------------------------
# per-path random inputs
# ---------------------------------------------------------------------------


@dataclass
class PathInputs:
    """All random inputs of one path, drawn up front from its own streams."""

    index: int
    dW: np.ndarray            # (n_steps, n_factors)
    marks: list               # [(sigma_hat, tau)]
    arrivals: list            # raw announcement times, for the intensity cap
    exp_clock: float          # unit exponential for the intensity default
    uniforms: np.ndarray      # (n,) Bernoulli uniforms at nodes
    xi_factor: np.ndarray | None = None   # (n,) recovery factor applied at each node


def draw_path_inputs(spec: ScenarioSpec, index: int, table=None) -> PathInputs:
    grid = spec.grid
    n = len(grid.nodes)
    nf = spec.fields.n_factors
    g_w = rngmod.path_generator(spec.master_seed, index, rngmod.BROWNIAN)
    dW = g_w.standard_normal((n - 1, nf)) * np.sqrt(grid.steps)[:, None]

    if spec.risky.kind == DETERMINISTIC:
        marks = [(0.0, grid.snap(u)) for u, w in zip(spec.risky.atoms, spec.risky.atom_weights) for _ in range(int(w))]
        arrivals = []
    else:
        g_n = rngmod.path_generator(spec.master_seed, index, rngmod.NEWS)
        marks = draw_marks(spec.risky, grid, g_n, table)
        arrivals = [s for s, _ in marks]

    g_d = rngmod.path_generator(spec.master_seed, index, rngmod.DEFAULT)
    exp_clock = g_d.exponential()
    uniforms = g_d.uniform(size=n)

    xi_factor = None
    if spec.recovery is not None:
        g_r = rngmod.path_generator(spec.master_seed, index, rngmod.RECOVERY)
        rec = spec.recovery
        xi_factor = np.ones(n)
        dates = sorted(u for _, u in marks)
        losses = rec.atom_loss.sample(g_r.uniform(size=len(dates)))
        for u, e in zip(dates, losses):
            xi_factor[grid.index(u)] *= 1.0 - e
        times = event_times(rec, grid.horizon, g_r)
        e_ev = rec.event_loss.sample(g_r.uniform(size=len(times)))
        for s, e in zip(times, e_ev):
            xi_factor[max(grid.first_at_or_after(s), 1)] *= 1.0 - e
    return PathInputs(index, dW, marks, arrivals, exp_clock, uniforms, xi_factor)


# ---------------------------------------------------------------------------
# chunk engine
# ---------------------------------------------------------------------------


@dataclass
class ChunkResult:
    """Statistics of one chunk; sums are shifted by the initial price row."""

    n: int
    price_s1: np.ndarray
    price_s2: np.ndarray
    price_cv: np.ndarray
    disc_s1: np.ndarray
    disc_s2: np.ndarray
    disc_cv: np.ndarray
    fwd_s1: np.ndarray
    fwd_s2: np.ndarray
    default_times: np.ndarray
    marks: list
    atom_survivors: np.ndarray      # per node: paths alive with an atom there
    atom_defaults: np.ndarray       # per node: defaults (realized losses under recovery) at the atom
    atom_p_sum: np.ndarray          # per node: sum of 1 - exp(-g w)
    atom_p_var: np.ndarray          # per node: sum of the variances of the default indicator (loss)
    atom_g_sum: np.ndarray          # per node: sum of g(u,u) over survivors
    records: list
    failures: dict


def initial_prices(spec: ScenarioSpec) -> np.ndarray:
    """``P(0, T_k)`` on the grid with the simulator's quadrature rule."""
    grid = spec.grid
    nodes = grid.nodes
    f0 = spec.fields.f0(nodes)
    g0 = _initial_g(spec)
    delta = np.append(grid.steps, 0.0)
    logp = -np.concatenate([[0.0], np.cumsum(f0[:-1] * delta[:-1])])
    M0 = np.zeros(len(nodes))
    if spec.risky.kind == DETERMINISTIC:
        for u, w in zip(spec.risky.atoms, spec.risky.atom_weights):
            M0[grid.index(u)] += w
    logp -= np.cumsum(M0 * g0)
    return np.exp(logp)


def _initial_g(spec: ScenarioSpec) -> np.ndarray:
    g0 = np.asarray(spec.fields.g0(spec.grid.nodes), dtype=float)
    if spec.recovery is not None:
        g0 = np.full_like(g0, spec.recovery.g_pin(1))
    return g0


class _Engine:
    """Vectorized Euler engine for a batch of paths sharing one scenario."""

    def __init__(self, spec: ScenarioSpec, table: np.ndarray | None = None):
        self.spec = spec
        grid = spec.grid
        self.nodes = grid.nodes
        self.n = len(self.nodes)
        self.delta = np.append(grid.steps, 0.0)
        self.mesh = spec.mesh
        fs = spec.fields
        # vols are deterministic; sample each row once
        self.b = np.stack([fs.vol_b(t, self.nodes) for t in self.nodes])          # (n, nf, n)
        self.beta = np.stack([fs.vol_beta(t, self.nodes) for t in self.nodes])
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.beta))):
            from .errors import NonFiniteVol
            raise NonFiniteVol("volatility not finite on the grid")
        self.beta_zero = not np.any(self.beta)
        self.f0 = np.asarray(fs.f0(self.nodes), dtype=float)
        self.g0 = _initial_g(spec)
        self.P0 = initial_prices(spec)
        risky = spec.risky
        self.marked = risky.kind != DETERMINISTIC
        if risky.j_atoms:
            raise ModelError("predictable announcement dates (J atoms) cannot be simulated")
        if self.marked:
            self.table = kernel_table(risky, grid) if table is None else table
            self.Lam = np.array([risky.expected_count(self.nodes[i], self.nodes[i + 1]) for i in range(self.n - 1)])
        self.shift = spec.drift.shift
        self.rec = spec.recovery

    def run(self, inputs: list, keep: int = 0) -> ChunkResult:
        spec, n, nodes, delta = self.spec, self.n, self.nodes, self.delta
        P = len(inputs)
        nm = len(self.mesh)
        dm = spec.default
        rec = self.rec
        f = np.broadcast_to(self.f0, (P, n)).copy()
        g = np.broadcast_to(self.g0, (P, n)).copy()
        M = np.zeros((P, n))
        by_node = {}
        for p, inp in enumerate(inputs):
            for s, u in inp.marks:
                by_node.setdefault(int(np.searchsorted(nodes, s)), []).append((p, int(np.searchsorted(nodes, u))))
        for p, k in by_node.pop(0, []):
            M[p, k] += 1
        cap = spec.risky.max_announcements if self.marked else None
        if cap is not None:
            arr = np.full((P, max([len(inp.arrivals) for inp in inputs] + [1])), np.inf)
            for p, inp in enumerate(inputs):
                arr[p, :len(inp.arrivals)] = inp.arrivals
        logX = np.zeros(P)
        alive = np.ones(P, dtype=bool)
        ok = np.ones(P, dtype=bool)
        xi = np.ones(P)
        # conditional moments of the survival/recovery factor given fields and marks
        m1 = np.ones(P)
        m2 = np.ones(P)
        cum_h = np.zeros(P)
        tau = np.full(P, np.inf)
        E = np.array([inp.exp_clock for inp in inputs])
        U = np.stack([inp.uniforms for inp in inputs]) if P else np.zeros((0, n))
        dW = np.stack([inp.dW for inp in inputs]) if P else np.zeros((0, n - 1, spec.fields.n_factors))
        xif = np.stack([inp.xi_factor for inp in inputs]) if rec is not None and P else None
        if rec is not None:
            e1a = 1.0 - rec.atom_loss.mean
            e2a = float(np.dot(rec.atom_loss.probs, (1.0 - np.asarray(rec.atom_loss.values)) ** 2))
            e2e = float(np.dot(rec.event_loss.probs, (1.0 - np.asarray(rec.event_loss.values)) ** 2))

        c0 = self.P0
        stats = {k: np.zeros((nm, n)) for k in ("price_s1", "price_s2", "price_cv", "disc_s1", "disc_s2",
                                                 "disc_cv", "fwd_s1", "fwd_s2")}
        a_surv = np.zeros(n); a_def = np.zeros(n); a_p = np.zeros(n); a_pv = np.zeros(n); a_g = np.zeros(n)
        failures = {}

        keep = min(keep, P)
        rec_f = np.full((keep, n, n), np.nan)
        rec_g = np.full((keep, n, n), np.nan)
        rec_r = np.zeros((keep, n)); rec_h = np.zeros((keep, n)); rec_X = np.ones((keep, n))
        rec_xi = np.ones((keep, n))
        rec_jp = [dict() for _ in range(keep)]
        mesh_pos = {int(k): m for m, k in enumerate(self.mesh)}

        for i in range(n):
            if keep:
                rec_f[:, i, i:] = f[:keep, i:]
                rec_g[:, i, i:] = g[:keep, i:]
                rec_X[:, i] = np.exp(logX[:keep])
                rec_xi[:, i] = xi[:keep] * alive[:keep]
            if i in mesh_pos:
                self._accumulate(stats, mesh_pos[i], i, f, g, M, xi * alive, m1, m2, logX, ok, c0)
            f_tt = f[:, i].copy()
            r, h = self._rate_and_intensity(f_tt)
            r = r + dm.rate_shift
            if keep:
                rec_r[:, i] = r[:keep]; rec_h[:, i] = h[:keep]
            if i == n - 1:
                break

            # ---- step i -> i + 1
            d = delta[i]
            logX += r * d

            news = None
            if self.marked:
                lam = self.Lam[i]
                if cap is not None:
                    lam = np.where((arr <= nodes[i]).sum(axis=1) < cap, lam, 0.0)
                if np.any(lam):
                    mrow = self.table[i + 1]  # cell masses of q(t_{i+1}, .)
                    # news_j attaches to cell (T_j, T_{j+1}] and the atom at T_{j+1}
                    with np.errstate(divide="ignore", invalid="ignore"):
                        coef = np.where(delta[:-1] > 0, mrow[1:] / (delta[:-1] * d), 0.0)
                    if self.beta_zero:
                        # g never moves, so the news term is common to all paths
                        nw = np.zeros(n)
                        nw[:-1] = np.expm1(-self.g0[1:]) * coef
                        news = nw[None, :] * lam[:, None] if np.ndim(lam) else nw * lam
                    else:
                        nw = np.zeros((P, n))
                        nw[:, :-1] = np.expm1(-g[:, 1:]) * coef[None, :]
                        news = nw * lam[:, None] if np.ndim(lam) else nw * lam
            a, alpha = step_drift(self.b[i], self.beta[i], delta, i, None if self.beta_zero else M, news, self.shift)
            dw = dW[:, i, :]
            if a.ndim == 2 or np.any(a[i + 1:]) or np.any(self.b[i]):
                f[:, i + 1:] += (a[:, i + 1:] if a.ndim == 2 else a[None, i + 1:]) * d + dw @ self.b[i][:, i + 1:]
            if not self.beta_zero:
                g[:, i + 1:] += (alpha[:, i + 1:] if alpha.ndim == 2 else alpha[None, i + 1:]) * d \
                    + dw @ self.beta[i][:, i + 1:]
            bad = ok & ~(np.isfinite(f[:, i + 1]) & np.isfinite(g[:, i + 1]))
            for p in np.flatnonzero(bad):
                failures[inputs[p].index] = NonFiniteField(f"field not finite at t={nodes[i + 1]:g}")
            ok &= ~bad

            k = i + 1
            atom = (M[:, k] > 0) & ok
            if rec is None:
                # intensity default during (t_i, t_{i+1}]
                prev = cum_h.copy()
                cum_h += h * d
                m1 *= np.exp(-h * d)
                hit = alive & (cum_h >= E)
                if np.any(hit):
                    with np.errstate(divide="ignore", invalid="ignore"):
                        frac = np.where(h > 0, (E - prev) / (h * d), 1.0)
                    tau[hit] = nodes[i] + np.clip(frac[hit], 0.0, 1.0) * d
                    alive &= ~hit
                # Bernoulli default at a risky date t_{i+1}
                neg = atom & alive & (g[:, k] < 0)
                for p in np.flatnonzero(neg):
                    failures[inputs[p].index] = NegativeJumpProbability(
                        f"g = {g[p, k]:.6g} < 0 at risky date {nodes[k]:g}")
                ok &= ~neg
                atom &= ~neg
                if np.any(atom):
                    idx = np.flatnonzero(atom)
                    pj = np.atleast_1d(np.asarray(
                        dm.jump_probability(np.maximum(g[idx, k], 0.0), M[idx, k]), dtype=float))
                    m1[idx] *= 1.0 - pj
                    live = alive[idx]
                    jumped = live & (U[idx, k] < pj)
                    tau[idx[jumped]] = nodes[k]
                    alive[idx[jumped]] = False
                    # reference probabilities come from g alone, not from any injected shift
                    p0 = np.atleast_1d(jump_probability(np.maximum(g[idx, k], 0.0), M[idx, k]))
                    a_surv[k] += live.sum(); a_def[k] += jumped.sum()
                    a_p[k] += p0[live].sum(); a_pv[k] += (p0 * (1 - p0))[live].sum()
                    a_g[k] += g[idx[live], k].sum()
                    for q, pr in zip(idx, pj):
                        if q < keep:
                            rec_jp[q][float(nodes[k])] = float(pr)
                m2 = m1
            else:
                lam_e = rec.event_rate * d
                m1 *= np.exp(-lam_e * rec.event_loss.mean)
                m2 *= np.exp(-lam_e * (1.0 - e2e))
                if np.any(atom):
                    idx = np.flatnonzero(atom)
                    live = alive[idx]
                    m1[idx] *= e1a ** M[idx, k]
                    m2[idx] *= e2a ** M[idx, k]
                    # at a risky date the realized loss fraction is compared with
                    # Delta C = 1 - exp(-g w); its variance comes from the loss law
                    pr = np.atleast_1d(jump_probability(g[idx, k], M[idx, k]))
                    w = M[idx, k]
                    a_surv[k] += live.sum()
                    a_def[k] += (1.0 - xif[idx, k])[live].sum()
                    a_p[k] += pr[live].sum()
                    a_pv[k] += (e2a ** w - e1a ** (2 * w))[live].sum()
                    a_g[k] += g[idx[live], k].sum()
                    for q, v in zip(idx, pr):
                        if q < keep:
                            rec_jp[q][float(nodes[k])] = float(v)
                xi *= xif[:, k]
                dead = alive & (xi <= 0.0)
                tau[dead] = nodes[k]
                alive &= ~dead

            # announcements taking effect at t_{i+1}
            for p, kk in by_node.pop(k, []):
                M[p, kk] += 1

        records = []
        for q in range(keep):
            inp = inputs[q]
            records.append(PathState(
                seed=rngmod.derive_seed(spec.master_seed, inp.index, rngmod.BROWNIAN),
                path_index=inp.index, grid=spec.grid,
                brownian_increments=inp.dW.T.copy(),
                announcements=list(inp.marks), default_time=float(tau[q]),
                f_field=rec_f[q], g_field=rec_g[q],
                numeraire=Numeraire(rec_r[q], rec_X[q]), intensity=rec_h[q],
                jump_probabilities=rec_jp[q],
                recovery=rec_xi[q] if rec is not None else None))
        return ChunkResult(int(ok.sum()), **stats, default_times=tau[ok], marks=[inp.marks for inp in inputs],
                           atom_survivors=a_surv, atom_defaults=a_def, atom_p_sum=a_p, atom_p_var=a_pv,
                           atom_g_sum=a_g, records=records, failures=failures)

    def _accumulate(self, stats, m, i, f, g, M, factor, m1, m2, logX, ok, c0):
        """Add mesh row ``i`` to the chunk sums.

        ``Z`` is the pre-default price; the realized price is ``factor * Z``.
        ``cv`` accumulates ``Z^2 Var(factor | fields, marks)``, a lower bound of
        the estimator variance that stays reliable when defaults are rare.
        """
        n, delta = self.n, self.delta
        fd = f[ok, i:] * delta[None, i:]
        logz = np.zeros(fd.shape)
        logz[:, 1:] = -np.cumsum(fd[:, :-1], axis=1)
        later = (np.arange(i, n) > i)[None, :]
        logz -= np.cumsum(M[ok, i:] * g[ok, i:] * later, axis=1)
        Z = np.exp(logz)
        cvar = np.maximum(m2[ok] - m1[ok] ** 2, 0.0)[:, None]
        disc = np.exp(-logX[ok])[:, None]
        for name, Zs in (("price", Z), ("disc", Z * disc)):
            dp = Zs * factor[ok, None] - c0[None, i:]
            stats[f"{name}_s1"][m, i:] = dp.sum(axis=0)
            stats[f"{name}_s2"][m, i:] = (dp * dp).sum(axis=0)
            stats[f"{name}_cv"][m, i:] = (Zs * Zs * cvar).sum(axis=0)
        dfw = f[ok, i:] - self.f0[None, i:]
        stats["fwd_s1"][m, i:] = dfw.sum(axis=0)
        stats["fwd_s2"][m, i:] = (dfw * dfw).sum(axis=0)

    def _rate_and_intensity(self, f_tt):
        if self.rec is not None:
            c = self.rec.c_ac()
            return f_tt - c, np.full_like(f_tt, c)
        h = self.spec.default.intensity(f_tt)
        return f_tt - h, h


# ---------------------------------------------------------------------------
# ensemble
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    """Aggregated statistics of a run on the mesh rows ``mesh`` (all maturity nodes)."""

    spec: ScenarioSpec
    n_paths: int
    mesh: np.ndarray
    initial: np.ndarray
    price_s1: np.ndarray
    price_s2: np.ndarray
    price_cv: np.ndarray
    disc_s1: np.ndarray
    disc_s2: np.ndarray
    disc_cv: np.ndarray
    fwd_s1: np.ndarray
    fwd_s2: np.ndarray
    default_times: np.ndarray
    marks: list
    atom_survivors: np.ndarray
    atom_defaults: np.ndarray
    atom_p_sum: np.ndarray
    atom_p_var: np.ndarray
    atom_g_sum: np.ndarray
    records: list
    failures: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def grid(self) -> TimeGrid:
        return self.spec.grid

    def _mean_se(self, s1, s2, shift, cv=None):
        """Mean and standard error; the variance is floored by the mean
        conditional variance of the default/recovery factor when given."""
        n = self.n_paths
        if n == 0:
            nan = np.full(s1.shape, np.nan)
            return nan, nan
        m = s1 / n
        var = np.maximum(s2 / n - m * m, 0.0) * (n / max(n - 1, 1))
        if cv is not None:
            var = np.maximum(var, cv / n)
        return m + shift, np.sqrt(var / n)

    def price_stats(self):
        return self._mean_se(self.price_s1, self.price_s2, self.initial[None, :], self.price_cv)

    def discounted_stats(self):
        return self._mean_se(self.disc_s1, self.disc_s2, self.initial[None, :], self.disc_cv)

    def forward_stats(self):
        f0 = np.asarray(self.spec.fields.f0(self.grid.nodes), dtype=float)
        return self._mean_se(self.fwd_s1, self.fwd_s2, f0[None, :])

    def mesh_table(self):
        """Rows ``(t, T, mean_price, se, mean_discounted, se)`` on the mesh with ``T >= t``."""
        nodes = self.grid.nodes
        pm, pse = self.price_stats()
        dmn, dse = self.discounted_stats()
        rows = []
        for m, i in enumerate(self.mesh):
            for k in self.mesh:
                if k >= i:
                    rows.append((nodes[i], nodes[k], pm[m, k], pse[m, k], dmn[m, k], dse[m, k]))
        return rows

    def announcement_counts(self) -> np.ndarray:
        return np.array([len(mk) for mk in self.marks])


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run_chunk(spec, table, lo, hi, keep):
    eng = _Engine(spec, table)
    inputs = [draw_path_inputs(spec, p, eng.table if eng.marked else None) for p in range(lo, hi)]
    return eng.run(inputs, keep=max(0, min(keep - lo, hi - lo)))


def run_scenario(spec: ScenarioSpec, workers: int | None = None, raise_on_failure: bool = True) -> Ensemble:
    """Simulate ``spec.n_paths`` paths and aggregate statistics in path order."""
    t0 = time.perf_counter()
    workers = workers or _workers()
    grid = spec.grid
    n = len(grid.nodes)
    eng = _Engine(spec)
    table = eng.table if eng.marked else None
    bounds = [(lo, min(lo + CHUNK, spec.n_paths)) for lo in range(0, spec.n_paths, CHUNK)]
    if workers > 1 and len(bounds) > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=workers)(delayed(_run_chunk)(spec, table, lo, hi, spec.keep_paths)
                                           for lo, hi in bounds)
    else:
        results = [_run_chunk(spec, table, lo, hi, spec.keep_paths) for lo, hi in bounds]

    nm = len(spec.mesh)
    z2 = lambda: np.zeros((nm, n))
    acc = {k: z2() for k in ("price_s1", "price_s2", "price_cv", "disc_s1", "disc_s2", "disc_cv",
                             "fwd_s1", "fwd_s2")}
    atoms = {k: np.zeros(n) for k in ("atom_survivors", "atom_defaults", "atom_p_sum", "atom_p_var", "atom_g_sum")}
    taus, marks, records, failures = [], [], [], {}
    n_ok = 0
    for res in results:
        n_ok += res.n
        for k in acc:
            acc[k] += getattr(res, k)
        for k in atoms:
            atoms[k] += getattr(res, k)
        taus.append(res.default_times)
        marks.extend(res.marks)
        records.extend(res.records)
        failures.update(res.failures)
    if failures and raise_on_failure:
        raise PathFailure(failures)
    return Ensemble(spec, n_ok, spec.mesh, initial_prices(spec), **acc,
                    default_times=np.concatenate(taus) if taus else np.zeros(0),
                    marks=marks, **atoms, records=records, failures=failures,
                    runtime=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# single-path API
# ---------------------------------------------------------------------------


def simulate_path(spec: ScenarioSpec, index: int = 0, inputs: PathInputs | None = None) -> PathState:
    """One fully recorded path (fields on the whole grid)."""
    eng = _Engine(spec)
    inp = inputs or draw_path_inputs(spec, index, eng.table if eng.marked else None)
    res = eng.run([inp], keep=1)
    if res.failures:
        raise PathFailure(res.failures)
    return res.records[0]


def simulate_forward_fields(spec: ScenarioSpec, realization: MeasureRealization, rng):
    """``(f_field, g_field)`` for given marks and Brownian draws from ``rng``
    (a seed or Generator); default is switched off so the fields are complete."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    grid = spec.grid
    n = len(grid.nodes)
    dW = gen.standard_normal((n - 1, spec.fields.n_factors)) * np.sqrt(grid.steps)[:, None]
    marks = [(grid.snap(s), grid.snap(u)) for s, u in realization.marks]
    inp = PathInputs(0, dW, marks, [s for s, _ in marks], np.inf, np.ones(n), None)
    quiet = replace(spec, default=replace(spec.default, base=0.0, slope=0.0), recovery=None)
    path = simulate_path(quiet, inputs=inp)
    return path.f_field, path.g_field


def simulate_default(spec: ScenarioSpec, realization: MeasureRealization, g_field: np.ndarray, rng,
                     f_field: np.ndarray | None = None) -> float:
    """``min(E_h, B)``: intensity clock against ``int h``, Bernoulli at risky dates."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    grid = spec.grid
    nodes = grid.nodes
    dm = spec.default
    E = gen.exponential()
    counts = {}
    for _, u in realization.marks:
        counts[grid.index(u)] = counts.get(grid.index(u), 0) + 1
    cum = 0.0
    for i in range(len(nodes) - 1):
        f_tt = f_field[i, i] if f_field is not None else float(spec.fields.f0(np.array([nodes[i]]))[0])
        h = float(dm.intensity(np.array([f_tt]))[0])
        d = nodes[i + 1] - nodes[i]
        if cum + h * d >= E:
            return float(nodes[i] + (E - cum) / h)
        cum += h * d
        k = i + 1
        if k in counts:
            p = float(dm.jump_probability(g_field[k, k], counts[k]))
            if gen.uniform() < p:
                return float(nodes[k])
    return math.inf


def bond_surface(spec: ScenarioSpec, path: PathState) -> BondSurface:
    """``P(t,T) = xi_t (1 - H_t) exp(-sum f delta - sum g)`` and ``P / X0`` on the grid."""
    grid = spec.grid
    nodes = grid.nodes
    n = len(nodes)
    delta = np.append(grid.steps, 0.0)
    prices = np.full((n, n), np.nan)
    real = MeasureRealization(path.announcements)
    surv = nodes < path.default_time
    xi = path.recovery if path.recovery is not None else np.ones(n)
    for i in range(n):
        atoms = real.announced_by(nodes[i])
        Mrow = np.zeros(n)
        for u, w in atoms.items():
            k = grid.index(u)
            if k > i:
                Mrow[k] += w
        logp = np.zeros(n - i)
        logp[1:] = -np.cumsum(path.f_field[i, i:-1] * delta[i:-1])
        logp -= np.cumsum(Mrow[i:] * path.g_field[i, i:])
        val = xi[i] if path.recovery is not None else float(surv[i])
        if path.recovery is not None and not surv[i]:
            val = 0.0
        prices[i, i:] = val * np.exp(logp)
    disc = prices / path.numeraire.X0[:, None]
    return BondSurface(grid, prices, disc)

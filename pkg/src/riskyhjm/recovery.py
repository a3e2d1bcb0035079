"""Recovery of market value.

At each credit event the bond loses a fraction ``e_n`` of its value, so the
recovery process is ``xi_t = prod_{tau_n <= t} (1 - e_n)``. Credit events occur
at realized risky dates (one loss draw per atom instance) and, independently,
at the jumps of a Poisson process with rate ``theta``. Loss laws are finitely
supported, which makes every compensator piece exactly computable:

    C_ac(t) = theta(t) E[e],     Delta C at an atom = 1 - (1 - E[e])^w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BondSurface, TimeGrid
from .errors import LossOutOfRange, ModelError, TotalExpectedLossAtAtom


@dataclass(frozen=True)
class LossLaw:
    """Finitely supported law of the fractional loss ``e`` in ``[0, 1]``."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ModelError("loss law needs equally many (>0) values and probabilities")
        for e in self.values:
            if not (0.0 <= e <= 1.0):
                raise LossOutOfRange(f"loss fraction {e!r} outside [0, 1]")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-12:
            raise ModelError(f"loss probabilities must be non-negative and sum to 1, got {self.probs}")

    @property
    def mean(self) -> float:
        return math.fsum(e * p for e, p in zip(self.values, self.probs))

    def sample(self, u):
        """Inverse-CDF draw for uniforms ``u``."""
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        idx = np.searchsorted(c, np.asarray(u, dtype=float), side="right")
        return np.asarray(self.values, dtype=float)[np.minimum(idx, len(c) - 1)]

    def to_dict(self):
        return {"values": list(self.values), "probs": list(self.probs)}


SURE_TOTAL_LOSS = LossLaw((1.0,), (1.0,))


@dataclass(frozen=True)
class RecoveryModel:
    """``pin_shift`` mis-pins Delta C at atoms (violation injection only)."""

    atom_loss: LossLaw = SURE_TOTAL_LOSS
    event_rate: float = 0.0
    event_loss: LossLaw = SURE_TOTAL_LOSS
    pin_shift: float = 0.0

    def __post_init__(self):
        if self.event_rate < 0:
            raise ModelError(f"event rate must be non-negative, got {self.event_rate!r}")

    def c_ac(self, t=None) -> float:
        return self.event_rate * self.event_loss.mean

    def delta_c(self, w: int = 1) -> float:
        return 1.0 - (1.0 - self.atom_loss.mean) ** w

    def g_pin(self, w: int = 1) -> float:
        """Per-instance ``g`` at an atom, ``-log(1 - Delta C) / w``, including any mis-pin."""
        dc = self.delta_c(w) + self.pin_shift
        if dc >= 1.0:
            raise TotalExpectedLossAtAtom(f"expected loss {dc:g} at an atom makes g infinite")
        if dc < 0:
            raise ModelError(f"compensator jump {dc:g} is negative")
        return -math.log1p(-dc) / w


def xi_from_events(events, grid: TimeGrid) -> np.ndarray:
    """``xi`` sampled on the grid from ``(time, loss)`` events."""
    xi = np.ones(len(grid.nodes))
    for s, e in sorted(events):
        if not (0.0 <= e <= 1.0):
            raise LossOutOfRange(f"loss fraction {e!r} outside [0, 1]")
        # an event inside (t_{k-1}, t_k] applies at t_k; xi_0 = 1 always
        xi[max(grid.first_at_or_after(s), 1):] *= 1.0 - e
    return xi


def event_times(model: RecoveryModel, horizon: float, rng: np.random.Generator) -> np.ndarray:
    if model.event_rate <= 0:
        return np.zeros(0)
    n = rng.poisson(model.event_rate * horizon)
    return np.sort(rng.uniform(0.0, horizon, n))


def recovery_events(model: RecoveryModel, risky_dates, horizon: float, rng: np.random.Generator) -> list:
    """Credit events: one loss per risky-date instance plus the theta events."""
    risky_dates = sorted(risky_dates)
    out = [(u, float(e)) for u, e in zip(risky_dates, model.atom_loss.sample(rng.uniform(size=len(risky_dates))))]
    times = event_times(model, horizon, rng)
    out += [(float(s), float(e)) for s, e in zip(times, model.event_loss.sample(rng.uniform(size=len(times))))]
    return sorted(out)


def recovery_path(model: RecoveryModel, realization, rng, grid: TimeGrid) -> np.ndarray:
    """Grid-sampled ``xi`` for one path; ``rng`` is a seed or Generator."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dates = [u for _, u in realization.marks]
    return xi_from_events(recovery_events(model, dates, grid.horizon, rng), grid)


def compute_recovery_drift(fields, model: RecoveryModel, risky, t: float, T, realization=None, g=None):
    """Drifts and pins under recovery of market value.

    Returns ``(a, alpha, pins)``: ``a`` and ``alpha`` use the same Lebesgue/atom
    split as the zero-recovery drift (the loss process does not enter them when
    loss and news never coincide), and ``pins`` maps each atom of ``mu_t`` to
    the value ``g(u*, u*)`` must take, ``-log(1 - Delta C) / w``.
    """
    from .drift import compute_drift
    from .measure import MeasureRealization

    realization = realization or MeasureRealization([])
    a, alpha = compute_drift(fields, risky, realization, t, T, g=g)
    atoms = realization.future_atoms(t)
    pins = {u: model.g_pin(1) for u in atoms}
    return a, alpha, pins


def short_rate(f_tt, model: RecoveryModel, t=None):
    """``r = f(t,t) - C_ac(t)``."""
    return np.asarray(f_tt, dtype=float) - model.c_ac(t)


def price_with_recovery(spec, path) -> BondSurface:
    """``P(t,T) = xi_t exp(-int_t^T f - sum g)``; see :func:`riskyhjm.simulator.bond_surface`."""
    from .simulator import bond_surface
    return bond_surface(spec, path)

"""Centralized and decentralized broadcast triggers, event log, dwell times.

Agents are indexed ``0..n-1`` (real, holding ``y_i``) and ``n..n+m-1``
(virtual, holding ``mu_l``).  The decentralized error rule compares the
squared sampling error against ``gamma_i**2`` times the squared held field.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dynamics import PrimalDualState, g_field, mu_field
from .errors import ConfigError
from .graph import AugmentedNetwork
from .problem import ProblemInstance

STATE = "state-broadcast"
MULTIPLIER = "multiplier-broadcast"
SYNC = "sync-cascade"
ERROR_RULE = "error-threshold"
PROXIMITY_RULE = "proximity-rule"
EVERY_STEP = "every-step"

KINDS = (STATE, MULTIPLIER, SYNC)
CAUSES = (ERROR_RULE, PROXIMITY_RULE, EVERY_STEP)


def kappa_bound(lo: float, hi: float) -> float:
    return min(0.5, 2.0 * lo / (5.0 + 3.0 * hi))


def gamma_sq_bound(lo: float, hi: float) -> float:
    return min(1.0 / 12.0, lo * lo / (2.0 * (5.0 + 3.0 * hi) * (hi + 2.0)))


@dataclass(frozen=True)
class TriggerParams:
    kappa: float
    gamma: np.ndarray
    r_min: np.ndarray
    bound_lo: float
    bound_hi: float

    def __post_init__(self):
        lo, hi = self.bound_lo, self.bound_hi
        if not 0 < lo <= hi:
            raise ConfigError(f"invalid curvature bounds ({lo}, {hi})")
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        r_min = np.atleast_1d(np.asarray(self.r_min, dtype=float))
        if gamma.shape != r_min.shape:
            raise ConfigError("gamma and r_min lengths differ")
        if not 0 < self.kappa < kappa_bound(lo, hi):
            raise ConfigError(f"kappa={self.kappa} outside (0, {kappa_bound(lo, hi)})")
        gb = gamma_sq_bound(lo, hi)
        if np.any(r_min <= 0) or np.any(r_min ** 2 >= gamma ** 2) or np.any(gamma ** 2 >= gb):
            raise ConfigError(f"need 0 < r_min^2 < gamma^2 < {gb:.6g}")
        gamma.setflags(write=False)
        r_min.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "r_min", r_min)

    def as_dict(self) -> dict:
        return {"kappa": self.kappa, "gamma": self.gamma.tolist(), "r_min": self.r_min.tolist(),
                "bound_lo": self.bound_lo, "bound_hi": self.bound_hi}


def select_params(lo: float, hi: float, n_agents: int, safety: float = 0.9) -> TriggerParams:
    """Pick kappa, gamma_i and r_min_i strictly inside their admissible ranges."""
    if not lo > 0:
        raise ConfigError("lower curvature bound must be positive")
    kappa = safety * kappa_bound(lo, hi)
    gamma = safety * math.sqrt(gamma_sq_bound(lo, hi))
    g = np.full(n_agents, gamma)
    return TriggerParams(kappa, g, g / 2.0, lo, hi)


def h_function(p: ProblemInstance, params: TriggerParams, y_held, mu_held) -> float:
    lo, hi, k = params.bound_lo, params.bound_hi, params.kappa
    r = mu_field(p, y_held)
    g = g_field(p, y_held, mu_held)
    return (1.0 - 2.0 * k) * float(r @ r) + (lo - 0.5 * (5.0 + 3.0 * hi) * k) * float(g @ g)


def centralized_lhs(params: TriggerParams, e_y, e_mu) -> float:
    k, hi = params.kappa, params.bound_hi
    return (2.0 + hi) / k * float(e_y @ e_y) + 1.5 / k * float(e_mu @ e_mu)


def centralized_should_trigger(p: ProblemInstance, params: TriggerParams,
                               state: PrimalDualState) -> bool:
    e_y, e_mu = state.e_y, state.e_mu
    if not (np.any(e_y) or np.any(e_mu)):
        return False
    return centralized_lhs(params, e_y, e_mu) >= h_function(p, params, state.y_held, state.mu_held)


def proximity_gap(i: int, state: PrimalDualState, network: AugmentedNetwork) -> float:
    """``r_i(t)``: newest neighbour broadcast minus own newest, both before t."""
    t = state.t
    lb = state.last_broadcast
    nb = [lb[j] for j in network.neighbors[i] if lb[j] < t]
    own = lb[i] if lb[i] < t else -math.inf
    if not nb or own == -math.inf:
        return math.nan
    return max(nb) - own


def decentralized_should_trigger(i: int, p: ProblemInstance, params: TriggerParams,
                                 state: PrimalDualState, network: AugmentedNetwork,
                                 time_scale: float = 1.0) -> str | None:
    """Reference single-agent predicate; returns the cause or ``None``.

    ``time_scale`` is the optimization-layer gain; the proximity window
    in wall time is ``r_min_i / time_scale``.
    """
    n = p.n
    r = proximity_gap(i, state, network)
    if 0 < r <= params.r_min[i] / time_scale:
        return PROXIMITY_RULE
    g2 = params.gamma[i] ** 2
    if i < n:
        e = state.y[i] - state.y_held[i]
        gi = g_field(p, state.y_held, state.mu_held)[i]
        if e != 0 and e * e >= g2 * gi * gi:
            return ERROR_RULE
    else:
        l = i - n
        e = state.mu[l] - state.mu_held[l]
        rl = mu_field(p, state.y_held)[l]
        if e != 0 and e * e >= g2 * rl * rl:
            return ERROR_RULE
    return None


class NeighborIndex:
    """CSR neighbour lists for vectorized ``max`` over augmented neighbours."""

    def __init__(self, neighbors, size: int | None = None):
        size = len(neighbors) if size is None else size
        self.size = size
        lists = [list(nb) for nb in neighbors]
        self.has_nb = np.array([len(nb) > 0 for nb in lists])
        # isolated agents point at themselves so reduceat stays well-defined
        flat = [nb if nb else [i] for i, nb in enumerate(lists)]
        self.idx = np.array([j for nb in flat for j in nb], dtype=int)
        self.ptr = np.cumsum([0] + [len(nb) for nb in flat])[:-1].astype(int)

    @classmethod
    def from_network(cls, network: AugmentedNetwork) -> "NeighborIndex":
        return cls(network.neighbors)

    def newest(self, last: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(last[self.idx], self.ptr)


def decentralized_fire(y, mu, y_held, mu_held, g_held, r_held, last, t,
                       gamma_sq, window, nbr: NeighborIndex, active=None):
    """Vectorized triggers for all agents at one tick.

    ``g_held`` and ``r_held`` are the fields at the held values.  Returns
    ``(fire, proximity)`` boolean masks over the ``n+m`` agents.
    """
    n = len(y)
    gap = nbr.newest(last) - last
    # ledger entries are all strictly before t, except the common t=0 start
    proximity = (gap > 0) & (gap <= window) & nbr.has_nb & (last < t)
    ey = y - y_held
    em = mu - mu_held
    err = np.empty(len(last), dtype=bool)
    err[:n] = (ey != 0) & (ey * ey >= gamma_sq[:n] * g_held * g_held)
    err[n:] = (em != 0) & (em * em >= gamma_sq[n:] * r_held * r_held)
    fire = proximity | err
    if active is not None:
        fire &= active
        proximity &= active
    return fire, proximity


class EventLog:
    """Append-only broadcast records stored in numpy chunks."""

    def __init__(self):
        self._t: list[np.ndarray] = []
        self._agent: list[np.ndarray] = []
        self._kind: list[np.ndarray] = []
        self._cause: list[np.ndarray] = []
        self._cache = None
        self._last_t = -math.inf

    def record(self, t: float, agents, kinds, causes) -> None:
        agents = np.atleast_1d(np.asarray(agents, dtype=np.int64))
        if t < self._last_t:
            raise ValueError("event timestamps must be non-decreasing")
        self._last_t = t
        k = len(agents)
        self._t.append(np.full(k, t))
        self._agent.append(agents)
        self._kind.append(np.broadcast_to(np.asarray(kinds, dtype=np.int8), (k,)).copy())
        self._cause.append(np.broadcast_to(np.asarray(causes, dtype=np.int8), (k,)).copy())
        self._cache = None

    def _arrays(self):
        if self._cache is None:
            if self._t:
                self._cache = tuple(np.concatenate(x) for x in
                                    (self._t, self._agent, self._kind, self._cause))
            else:
                self._cache = (np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int8),
                               np.zeros(0, np.int8))
        return self._cache

    @property
    def t(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def agent(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def kind(self) -> np.ndarray:
        return self._arrays()[2]

    @property
    def cause(self) -> np.ndarray:
        return self._arrays()[3]

    def __len__(self) -> int:
        return len(self.t)

    def records(self) -> Iterator[tuple[float, int, str, str]]:
        t, a, k, c = self._arrays()
        for i in range(len(t)):
            yield float(t[i]), int(a[i]), KINDS[k[i]], CAUSES[c[i]]

    def counts(self, n_agents: int) -> np.ndarray:
        return np.bincount(self.agent, minlength=n_agents)

    def times_of(self, agent: int) -> np.ndarray:
        return self.t[self.agent == agent]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "agent_id", "kind", "cause"])
            for t, a, k, c in self.records():
                w.writerow([repr(t), a + 1, k, c])


@dataclass
class DwellReport:
    min_gap_global: float
    min_gap_per_agent: np.ndarray
    count_per_agent: np.ndarray


def dwell_time_report(log: EventLog, n_agents: int | None = None) -> DwellReport:
    """Minimum gaps between distinct broadcast instants, globally and per agent."""
    if len(log) == 0:
        raise ValueError("empty event log")
    n_agents = int(log.agent.max()) + 1 if n_agents is None else n_agents
    instants = np.unique(log.t)
    g = float(np.min(np.diff(instants))) if len(instants) > 1 else math.inf
    per = np.full(n_agents, math.inf)
    for i in range(n_agents):
        ti = log.times_of(i)
        if len(ti) > 1:
            per[i] = float(np.min(np.diff(ti)))
    return DwellReport(g, per, log.counts(n_agents))


def synchronous_instants(log: EventLog, n_agents: int, include_start: float | None = 0.0):
    """Times at which every agent broadcast in the same tick."""
    t, a = log.t, log.agent
    out = set() if include_start is None else {float(include_start)}
    for ti in np.unique(t):
        if len(np.unique(a[t == ti])) == n_agents:
            out.add(float(ti))
    return sorted(out)


def post_sync_gaps(log: EventLog, n_agents: int, include_start: float | None = 0.0):
    """For each synchronous instant, the delay until the next broadcast."""
    inst = np.unique(log.t)
    gaps = []
    for ts in synchronous_instants(log, n_agents, include_start):
        later = inst[inst > ts]
        if len(later):
            gaps.append((ts, float(later[0] - ts)))
    return gaps


def isolated_gaps(log: EventLog, neighbors, start: float = 0.0):
    """Error-rule broadcasts that followed a silent neighbourhood.

    Yields ``(agent, gap)`` where no neighbour broadcast during
    ``[previous own broadcast, this broadcast)``.
    """
    t, a, c = log.t, log.agent, log.cause
    out = []
    for i, nb in enumerate(neighbors):
        own = np.concatenate([[start], t[a == i]])
        causes = c[a == i]
        nb_t = np.sort(t[np.isin(a, list(nb))]) if nb else np.zeros(0)
        for k in range(1, len(own)):
            if CAUSES[causes[k - 1]] != ERROR_RULE:
                continue
            lo, hi = own[k - 1], own[k]
            j = np.searchsorted(nb_t, lo, side="left")
            if j < len(nb_t) and nb_t[j] < hi:
                continue
            out.append((i, float(hi - lo)))
    return out

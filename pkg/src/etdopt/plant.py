"""Uncertain scalar agents, the error observer and the rejection controller.

Agent ``i`` evolves as ``x' = p(x) + dp(x) + (b + db) u``.  The controller
only sees ``p`` and ``b``; ``dp`` and ``db`` stay inside the plant.  The
observer tracks ``e = x - y`` and the lumped disturbance acting on it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import rk4
from .errors import ConfigError, DivergenceError

log = logging.getLogger(__name__)

VecFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AgentPlant:
    p_known: Callable[[float], float]
    delta_p: Callable[[float], float]
    b_known: float
    delta_b: float
    rho_b: float
    lipschitz_p: float

    def __post_init__(self):
        if self.b_known == 0:
            raise ConfigError("b must be nonzero")
        if abs(self.delta_b) > self.rho_b:
            raise ConfigError(f"|delta_b|={abs(self.delta_b)} exceeds rho_b={self.rho_b}")

    def rhs(self, x: float, u: float) -> float:
        return self.p_known(x) + self.delta_p(x) + (self.b_known + self.delta_b) * u

    def check_lipschitz(self, lo: float = -10.0, hi: float = 10.0, samples: int = 201) -> bool:
        xs = np.linspace(lo, hi, samples)
        ps = np.array([self.p_known(x) for x in xs])
        slopes = np.abs(np.diff(ps) / np.diff(xs))
        return bool(np.all(slopes <= self.lipschitz_p * (1 + 1e-9) + 1e-12))


def linear_plant(a: float, b: float, da: float = 0.0, db: float = 0.0,
                 rho_b: float | None = None) -> AgentPlant:
    """``x' = (a + da) x + (b + db) u``."""
    rho = abs(db) if rho_b is None else rho_b
    return AgentPlant(lambda x: a * x, lambda x: da * x, b, db, rho, abs(a))


@dataclass
class ObserverState:
    e_hat: float | np.ndarray
    e_bar_hat: float | np.ndarray
    eps: float | np.ndarray
    k1: float = 2.0
    k2: float = 1.0
    alpha: float = -10.0

    def __post_init__(self):
        if np.any(np.asarray(self.eps) <= 0):
            raise ConfigError("observer eps must be positive")
        if self.alpha >= 0:
            raise ConfigError("controller alpha must be negative")


def ladrc_gain_margin(L_p: float, rho_b: float, b: float, k1: float, k2: float):
    """Evaluate the observer gain condition ``(L_p + rho_b/b) k2 < L``.

    Returns ``(L, satisfied)``; ``L`` is ``None`` when its denominator
    vanishes.
    """
    if b == 0:
        raise ConfigError("b must be nonzero")
    a2 = k1 * k1 + (k2 - 1.0) ** 2
    den = -a2 + math.sqrt(a2 * (k1 * k1 + (k2 + 1.0) ** 2))
    if den == 0:
        return None, False
    L = 2.0 * k1 * k2 / den
    return L, bool((L_p + rho_b / b) * k2 < L)


def plant_step(plant: AgentPlant, x: float, u: float, dt: float) -> float:
    """RK4 step of one agent with ``u`` held over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = rk4(lambda z: np.array([plant.rhs(z[0], u)]), np.array([float(x)]), dt)[0]
    if not math.isfinite(out):
        raise DivergenceError("plant state became non-finite")
    return float(out)


def control_law(obs: ObserverState, p_known, b_known, y):
    """``u = (alpha e_hat - e_bar_hat - p(e_hat + y) + p(y)) / b``."""
    return (obs.alpha * obs.e_hat - obs.e_bar_hat - p_known(obs.e_hat + y) + p_known(y)) / b_known


def _observer_rhs(obs: ObserverState, p_known, b_known, w, y, u):
    def f(z):
        e, eb = z
        innov = w - e
        return np.array([
            eb + (p_known(e + y) - p_known(y)) + obs.k1 / obs.eps * innov + b_known * u,
            obs.k2 / obs.eps ** 2 * innov,
        ])
    return f


def advance_observer(obs: ObserverState, p_known, b_known, x, y, dt: float):
    """In-place variant of :func:`observer_controller_step`; returns ``u``."""
    u = control_law(obs, p_known, b_known, y)
    f = _observer_rhs(obs, p_known, b_known, x - y, y, u)
    z = rk4(f, np.array([obs.e_hat, obs.e_bar_hat], dtype=float), dt)
    if np.ndim(obs.e_hat) == 0:
        obs.e_hat, obs.e_bar_hat = float(z[0]), float(z[1])
    else:
        obs.e_hat, obs.e_bar_hat = z[0], z[1]
    return u


def observer_controller_step(obs: ObserverState, p_known, b_known, x, y, dt: float):
    """Compute the control for this step, then advance the observer.

    Only the known model ``(p_known, b_known)``, the measurement ``x`` and
    the local ``y`` are used.  ``x - y`` is held over the step.  Works on
    scalars or on aligned arrays of agents.  Returns ``(new_obs, u)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    new = ObserverState(obs.e_hat, obs.e_bar_hat, obs.eps, obs.k1, obs.k2, obs.alpha)
    u = advance_observer(new, p_known, b_known, x, y, dt)
    return new, u


@dataclass
class PlantBank:
    """All agents' plants as vectorized callables over the agent axis."""

    p_known: VecFn
    delta_p: VecFn
    b_known: np.ndarray
    delta_b: np.ndarray
    rho_b: np.ndarray
    lipschitz_p: np.ndarray
    description: dict

    @property
    def n(self) -> int:
        return len(self.b_known)

    def rhs(self, x, u):
        return self.p_known(x) + self.delta_p(x) + (self.b_known + self.delta_b) * u

    def step(self, x, u, dt):
        x = rk4(lambda z: self.rhs(z, u), x, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("plant state became non-finite")
        return x

    def agent(self, i: int) -> AgentPlant:
        def pk(x, i=i):
            v = np.zeros(self.n)
            v[i] = x
            return float(self.p_known(v)[i])

        def dp(x, i=i):
            v = np.zeros(self.n)
            v[i] = x
            return float(self.delta_p(v)[i])

        return AgentPlant(pk, dp, float(self.b_known[i]), float(self.delta_b[i]),
                          float(self.rho_b[i]), float(self.lipschitz_p[i]))


def linear_bank(a, b, da=None, db=None, rho_b=None, description=None) -> PlantBank:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da = np.zeros_like(a) if da is None else np.asarray(da, dtype=float)
    db = np.zeros_like(b) if db is None else np.asarray(db, dtype=float)
    rho = np.abs(db) if rho_b is None else np.broadcast_to(np.asarray(rho_b, float), b.shape).copy()
    if np.any(b == 0):
        raise ConfigError("b must be nonzero")
    if np.any(np.abs(db) > rho + 1e-15):
        raise ConfigError("|delta_b| exceeds rho_b")
    desc = {"model": "linear", "a": a.tolist(), "b": b.tolist(),
            "delta_a": da.tolist(), "delta_b": db.tolist(), "rho_b": rho.tolist()}
    if description:
        desc.update(description)
    return PlantBank(lambda x: a * x, lambda x: da * x, b, db, rho, np.abs(a), desc)

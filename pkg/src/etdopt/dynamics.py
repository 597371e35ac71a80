"""Primal-dual vector fields and their fixed-step integration.

``g_field`` and ``mu_field`` are evaluated at held (last broadcast) values.
Between broadcasts they are constant, so the held-mode advance is exact.
The continuous mode feeds current values back and uses RK4.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError
from .problem import ProblemInstance

DIVERGENCE_LIMIT = 1e9


@dataclass
class PrimalDualState:
    t: float
    y: np.ndarray
    mu: np.ndarray
    y_held: np.ndarray
    mu_held: np.ndarray
    last_broadcast: np.ndarray

    @classmethod
    def initial(cls, y0, m: int, t0: float = 0.0) -> "PrimalDualState":
        y0 = np.array(y0, dtype=float)
        mu0 = np.zeros(m)
        return cls(t0, y0, mu0, y0.copy(), mu0.copy(), np.full(len(y0) + m, t0))

    def copy(self) -> "PrimalDualState":
        return PrimalDualState(self.t, self.y.copy(), self.mu.copy(), self.y_held.copy(),
                               self.mu_held.copy(), self.last_broadcast.copy())

    @property
    def e_y(self) -> np.ndarray:
        return self.y - self.y_held

    @property
    def e_mu(self) -> np.ndarray:
        return self.mu - self.mu_held


def _check_dims(p: ProblemInstance, y, mu=None):
    if np.shape(y) != (p.n,):
        raise ValueError(f"y has shape {np.shape(y)}, expected ({p.n},)")
    if mu is not None and np.shape(mu) != (p.m,):
        raise ValueError(f"mu has shape {np.shape(mu)}, expected ({p.m},)")


def g_field(p: ProblemInstance, y_held, mu_held) -> np.ndarray:
    """``-grad f(y) - C^T (C y - d) - C^T mu`` at the held values."""
    _check_dims(p, y_held, mu_held)
    C, d = p.constraints.C, p.constraints.d
    return -p.gradient(y_held) - C.T @ (C @ y_held - d + mu_held)


def mu_field(p: ProblemInstance, y_held) -> np.ndarray:
    _check_dims(p, y_held)
    return p.constraints.C @ y_held - p.constraints.d


def lyapunov(p: ProblemInstance, y, mu, y_star, mu_star) -> float:
    """``v = |g(y,mu)|^2/2 + |Cy-d|^2/2 + |y-y*|^2/2 + |mu-mu*|^2/2``."""
    g = g_field(p, y, mu)
    r = mu_field(p, y)
    return 0.5 * float(g @ g + r @ r + np.sum((y - y_star) ** 2) + np.sum((mu - mu_star) ** 2))


def _guard(t: float, y: np.ndarray, mu: np.ndarray) -> None:
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(mu))):
        raise DivergenceError(f"non-finite state at t={t:.6g}")
    norm = float(np.sqrt(y @ y + mu @ mu))
    if norm > DIVERGENCE_LIMIT:
        raise DivergenceError(f"|(y, mu)| = {norm:.3e} exceeds {DIVERGENCE_LIMIT:.0e} at t={t:.6g}")


def rk4(f, z: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_continuous(p: ProblemInstance, state: PrimalDualState, dt: float,
                    gain: float = 1.0) -> PrimalDualState:
    """One RK4 step of the flow with held values tied to current values."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = p.n

    def f(z):
        y, mu = z[:n], z[n:]
        return gain * np.concatenate([g_field(p, y, mu), mu_field(p, y)])

    z = rk4(f, np.concatenate([state.y, state.mu]), dt)
    y, mu = z[:n], z[n:]
    t = state.t + dt
    _guard(t, y, mu)
    return replace(state, t=t, y=y, mu=mu, y_held=y.copy(), mu_held=mu.copy())


def step_held(p: ProblemInstance, state: PrimalDualState, dt: float,
              gain: float = 1.0) -> PrimalDualState:
    """Advance ``(y, mu)`` with the held values frozen over the step.

    Held values and the broadcast ledger are left untouched; only the
    event-trigger layer changes them.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = state.y + gain * dt * g_field(p, state.y_held, state.mu_held)
    mu = state.mu + gain * dt * mu_field(p, state.y_held)
    t = state.t + dt
    _guard(t, y, mu)
    return replace(state, t=t, y=y, mu=mu)

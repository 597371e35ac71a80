"""Equality-constrained separable convex problems and their KKT oracle.

The problem is ``min sum_i f_i(y_i)  s.t.  C y = d`` with scalar, strictly
convex ``f_i``.  Everything here is immutable once built.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleError, InvalidProblemError, OracleUnsupportedError

log = logging.getLogger(__name__)

ScalarFn = Callable[[float], float]


@dataclass(frozen=True)
class ScalarObjective:
    """One agent's cost ``f_i``.

    Quadratics are ``a*x**2 + b*x + c``.  Custom objectives carry their own
    value, first and second derivative evaluators plus curvature bounds.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    second_deriv_lo: float = 0.0
    second_deriv_hi: float = 0.0
    value_fn: ScalarFn | None = field(default=None, compare=False, repr=False)
    grad_fn: ScalarFn | None = field(default=None, compare=False, repr=False)
    hess_fn: ScalarFn | None = field(default=None, compare=False, repr=False)

    @classmethod
    def quadratic(cls, a: float, b: float = 0.0, c: float = 0.0) -> "ScalarObjective":
        a, b, c = float(a), float(b), float(c)
        return cls("quadratic", a, b, c, 2.0 * a, 2.0 * a)

    @classmethod
    def custom(cls, value: ScalarFn, grad: ScalarFn, hess: ScalarFn,
               lo: float, hi: float) -> "ScalarObjective":
        if not hi >= lo:
            raise InvalidProblemError(f"second derivative bounds inverted: [{lo}, {hi}]")
        return cls("custom", second_deriv_lo=float(lo), second_deriv_hi=float(hi),
                   value_fn=value, grad_fn=grad, hess_fn=hess)

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "quadratic"

    def value(self, x: float) -> float:
        if self.is_quadratic:
            return self.a * x * x + self.b * x + self.c
        return self.value_fn(x)

    def grad(self, x: float) -> float:
        if self.is_quadratic:
            return 2.0 * self.a * x + self.b
        return self.grad_fn(x)

    def hess(self, x: float) -> float:
        if self.is_quadratic:
            return 2.0 * self.a
        return self.hess_fn(x)

    def scaled(self, factor: float) -> "ScalarObjective":
        """Return ``f / factor`` (same minimizer set for any factor > 0)."""
        if factor <= 0:
            raise InvalidProblemError("objective scale must be positive")
        if self.is_quadratic:
            return ScalarObjective.quadratic(self.a / factor, self.b / factor, self.c / factor)
        v, g, h = self.value_fn, self.grad_fn, self.hess_fn
        return ScalarObjective.custom(
            lambda x: v(x) / factor, lambda x: g(x) / factor, lambda x: h(x) / factor,
            self.second_deriv_lo / factor, self.second_deriv_hi / factor,
        )


def power_iteration(a: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000,
                    seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    a = np.asarray(a, dtype=float)
    v = np.random.default_rng(seed).standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = a @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return float(v @ (a @ v))
        lam = lam_new
    log.warning("power iteration hit max_iter=%d", max_iter)
    return float(v @ (a @ v))


@dataclass(frozen=True)
class ConstraintSystem:
    C: np.ndarray
    d: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        C = np.atleast_2d(np.array(self.C, dtype=float))
        d = np.atleast_1d(np.array(self.d, dtype=float))
        if d.shape != (C.shape[0],):
            raise InvalidProblemError(f"d has shape {d.shape}, expected ({C.shape[0]},)")
        if C.shape[0] > C.shape[1]:
            raise InvalidProblemError(f"more constraints ({C.shape[0]}) than variables ({C.shape[1]})")
        C.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[1]

    def participants(self, row: int) -> np.ndarray:
        return np.flatnonzero(self.C[row])


def normalize_constraints(cs: ConstraintSystem) -> ConstraintSystem:
    """Scale ``(C, d)`` by ``1/sqrt(rho(C^T C))`` so the spectral radius is one."""
    if not np.any(cs.C):
        raise InvalidProblemError("constraint matrix is zero")
    p = power_iteration(cs.C.T @ cs.C)
    s = np.sqrt(p)
    return ConstraintSystem(cs.C / s, cs.d / s, normalized=True)


@dataclass(frozen=True)
class ProblemInstance:
    objectives: tuple[ScalarObjective, ...]
    constraints: ConstraintSystem

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        if len(self.objectives) != self.constraints.n:
            raise InvalidProblemError(
                f"{len(self.objectives)} objectives but C has {self.constraints.n} columns")

    @property
    def n(self) -> int:
        return self.constraints.n

    @property
    def m(self) -> int:
        return self.constraints.m

    @property
    def bound_lo(self) -> float:
        return min(o.second_deriv_lo for o in self.objectives)

    @property
    def bound_hi(self) -> float:
        return max(o.second_deriv_hi for o in self.objectives)

    @cached_property
    def all_quadratic(self) -> bool:
        return all(o.is_quadratic for o in self.objectives)

    @cached_property
    def _quad(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = np.array([o.a for o in self.objectives])
        b = np.array([o.b for o in self.objectives])
        c = np.array([o.c for o in self.objectives])
        return a, b, c

    def gradient(self, y: np.ndarray) -> np.ndarray:
        if self.all_quadratic:
            a, b, _ = self._quad
            return 2.0 * a * y + b
        return np.array([o.grad(float(v)) for o, v in zip(self.objectives, y)])

    def hessian_diag(self, y: np.ndarray) -> np.ndarray:
        if self.all_quadratic:
            return 2.0 * self._quad[0]
        return np.array([o.hess(float(v)) for o, v in zip(self.objectives, y)])

    def value(self, y: np.ndarray) -> float:
        return float(sum(o.value(float(v)) for o, v in zip(self.objectives, y)))

    def with_constraints(self, cs: ConstraintSystem) -> "ProblemInstance":
        return ProblemInstance(self.objectives, cs)

    def normalized(self) -> "ProblemInstance":
        if self.constraints.normalized:
            return self
        return self.with_constraints(normalize_constraints(self.constraints))

    def scaled(self, factor: float) -> "ProblemInstance":
        return ProblemInstance(tuple(o.scaled(factor) for o in self.objectives), self.constraints)

    def restrict(self, keep: Sequence[int]) -> "ProblemInstance":
        """Sub-problem on the variables ``keep``; rows left empty are dropped."""
        keep = np.asarray(keep, dtype=int)
        C = self.constraints.C[:, keep]
        rows = np.flatnonzero(np.any(C != 0, axis=1))
        cs = ConstraintSystem(C[rows], self.constraints.d[rows])
        return ProblemInstance(tuple(self.objectives[i] for i in keep), cs)


def gradient(p: ProblemInstance, y: np.ndarray) -> np.ndarray:
    return p.gradient(np.asarray(y, dtype=float))


def second_derivative_bounds(p: ProblemInstance) -> tuple[float, float]:
    return p.bound_lo, p.bound_hi


def normalize_objective(p: ProblemInstance) -> tuple[ProblemInstance, float]:
    """Divide every cost by the upper curvature bound so that it becomes 1.

    Returns the scaled problem and the factor used.  The minimizer is
    unchanged and the multipliers shrink by the same factor.
    """
    factor = p.bound_hi
    if not factor > 0:
        raise InvalidProblemError("upper curvature bound must be positive")
    return p.scaled(factor), factor


@dataclass
class ValidationReport:
    n: int
    m: int
    rank: int
    strictly_convex: list[bool]
    bound_lo: float
    bound_hi: float
    normalized: bool
    spectral_radius: float
    messages: list[str] = field(default_factory=list)

    @property
    def full_row_rank(self) -> bool:
        return self.rank == self.m

    @property
    def bounds_ok(self) -> bool:
        return 0 < self.bound_lo <= self.bound_hi

    @property
    def ok(self) -> bool:
        return (self.full_row_rank and all(self.strictly_convex) and self.bounds_ok
                and self.m <= self.n)


def _probe_points(n: int = 41) -> np.ndarray:
    return np.linspace(-10.0, 10.0, n)


def validate_assumptions(p: ProblemInstance) -> ValidationReport:
    """Check rank, convexity and curvature bounds; never raises on a violation."""
    C = p.constraints.C
    rank = int(np.linalg.matrix_rank(C)) if C.size else 0
    convex = []
    msgs = []
    for i, o in enumerate(p.objectives):
        if o.is_quadratic:
            ok = o.a > 0
        else:
            h = np.array([o.hess(x) for x in _probe_points()])
            ok = bool(o.second_deriv_lo > 0 and np.all(h >= o.second_deriv_lo - 1e-12)
                      and np.all(h <= o.second_deriv_hi + 1e-12))
        convex.append(bool(ok))
        if not ok:
            msgs.append(f"objective {i + 1} is not strictly convex within its declared bounds")
    if rank < p.m:
        msgs.append(f"row-rank deficient: rank {rank} of {p.m} rows")
    lo, hi = p.bound_lo, p.bound_hi
    if not 0 < lo <= hi:
        msgs.append(f"curvature bounds invalid: ({lo}, {hi})")
    rho = power_iteration(C.T @ C) if np.any(C) else 0.0
    return ValidationReport(p.n, p.m, rank, convex, lo, hi, p.constraints.normalized, rho, msgs)


@dataclass(frozen=True)
class KktSolution:
    y_star: np.ndarray
    mu_star: np.ndarray
    residual: float
    multiplier_unique: bool


def _kkt_residuals(p: ProblemInstance, y, mu) -> tuple[float, float]:
    cs = p.constraints
    g = p.gradient(y)
    feas = np.linalg.norm(cs.C @ y - cs.d) / (1 + np.linalg.norm(cs.d))
    stat = np.linalg.norm(g + cs.C.T @ mu) / (1 + np.linalg.norm(g))
    return float(feas), float(stat)


def _check_consistent(cs: ConstraintSystem, rank: int) -> None:
    aug = np.column_stack([cs.C, cs.d])
    if np.linalg.matrix_rank(aug) > rank:
        raise InfeasibleError("constraint rows are inconsistent (C y = d has no solution)")


def kkt_solve(p: ProblemInstance, tol: float = 1e-12, max_iter: int = 100) -> KktSolution:
    """Solve stationarity plus feasibility directly.

    Quadratic costs give one linear solve; custom costs use damped Newton
    on the KKT residual.  A row-rank deficient ``C`` yields the
    minimum-norm multiplier.
    """
    cs = p.constraints
    n, m = p.n, p.m
    rank = int(np.linalg.matrix_rank(cs.C))
    _check_consistent(cs, rank)
    unique = rank == m

    if p.all_quadratic:
        a, b, _ = p._quad
        if np.any(a <= 0):
            raise OracleUnsupportedError("quadratic with non-positive curvature")
        K = np.block([[np.diag(2.0 * a), cs.C.T], [cs.C, np.zeros((m, m))]])
        rhs = np.concatenate([-b, cs.d])
        if unique:
            z = np.linalg.solve(K, rhs)
        else:
            z = np.linalg.lstsq(K, rhs, rcond=None)[0]
        y, mu = z[:n], z[n:]
    else:
        if np.any(np.array([o.second_deriv_lo for o in p.objectives]) <= 0):
            raise OracleUnsupportedError("custom objective without positive curvature bound")
        y, mu = _newton_kkt(p, tol, max_iter)
    feas, stat = _kkt_residuals(p, y, mu)
    return KktSolution(y, mu, max(feas, stat), unique)


def _newton_kkt(p: ProblemInstance, tol: float, max_iter: int):
    cs = p.constraints
    n, m = p.n, p.m
    y = np.linalg.lstsq(cs.C, cs.d, rcond=None)[0]
    mu = np.zeros(m)

    def resid(y, mu):
        return np.concatenate([p.gradient(y) + cs.C.T @ mu, cs.C @ y - cs.d])

    r = resid(y, mu)
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol:
            break
        K = np.block([[np.diag(p.hessian_diag(y)), cs.C.T], [cs.C, np.zeros((m, m))]])
        step = np.linalg.lstsq(K, -r, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            y_new, mu_new = y + t * step[:n], mu + t * step[n:]
            r_new = resid(y_new, mu_new)
            if np.linalg.norm(r_new) < (1 - 1e-4 * t) * np.linalg.norm(r):
                break
            t *= 0.5
        y, mu, r = y_new, mu_new, r_new
    return y, mu


# -- file format ------------------------------------------------------------

def problem_to_dict(p: ProblemInstance, normalize: bool | None = None) -> dict:
    if not p.all_quadratic:
        raise InvalidProblemError("custom objectives cannot be serialized")
    return {
        "objectives": [{"kind": "quadratic", "a": o.a, "b": o.b, "c": o.c} for o in p.objectives],
        "constraints": {"C": p.constraints.C.tolist(), "d": p.constraints.d.tolist()},
        "normalize": bool(p.constraints.normalized if normalize is None else normalize),
    }


def problem_from_dict(doc: dict) -> ProblemInstance:
    objs = []
    for i, o in enumerate(doc["objectives"]):
        kind = o.get("kind", "quadratic")
        if kind != "quadratic":
            raise InvalidProblemError(f"objective {i + 1}: kind {kind!r} not allowed in files")
        objs.append(ScalarObjective.quadratic(o["a"], o.get("b", 0.0), o.get("c", 0.0)))
    cons = doc["constraints"]
    p = ProblemInstance(tuple(objs), ConstraintSystem(cons["C"], cons["d"]))
    if doc.get("normalize", False):
        p = p.normalized()
    return p


def load_problem(path: str | Path) -> ProblemInstance:
    with open(path, encoding="utf-8") as fh:
        return problem_from_dict(json.load(fh))


def save_problem(p: ProblemInstance, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_dict(p), fh, indent=2)

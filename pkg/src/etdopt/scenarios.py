"""Case-study builders, perturbation schedules and random instances."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .errors import ScenarioError
from .graph import DEDP_CHORDS, Graph, check_compatibility, complete_graph, ring_with_chords
from .plant import PlantBank, linear_bank
from .problem import ConstraintSystem, ProblemInstance, ScalarObjective


@dataclass(frozen=True)
class Perturbation:
    time: float
    kind: str
    payload: dict

    def as_dict(self) -> dict:
        return {"time": self.time, "kind": self.kind, "payload": self.payload}


@dataclass
class Scenario:
    """Everything a run needs besides the run configuration."""

    name: str
    problem: ProblemInstance
    graph: Graph
    plants: PlantBank
    x0: np.ndarray
    schedule: list[Perturbation] = field(default_factory=list)
    strict_compatibility: bool = True
    data: object = None
    preset: dict = field(default_factory=dict)


# -- resource allocation (case 1) -------------------------------------------

@dataclass(frozen=True)
class ResourceAllocationSpec:
    task_sets: tuple[tuple[int, ...], ...]
    P: tuple[float, ...]
    T: tuple[float, ...]
    benefit: dict

    def __post_init__(self):
        if any(len(K) == 0 for K in self.task_sets):
            raise ScenarioError("every agent needs at least one task")
        if not np.isclose(sum(self.P), sum(self.T)):
            raise ScenarioError(f"resources {sum(self.P)} do not balance capacities {sum(self.T)}")

    @property
    def variables(self) -> list[tuple[int, int]]:
        return [(i, j) for i, K in enumerate(self.task_sets) for j in K]

    def problem(self) -> ProblemInstance:
        var = self.variables
        l, k = len(self.task_sets), len(self.T)
        C = np.zeros((l + k, len(var)))
        for col, (i, j) in enumerate(var):
            C[i, col] = 1.0
            C[l + j, col] = 1.0
        d = np.concatenate([self.P, self.T])
        objs = tuple(ScalarObjective.quadratic(self.benefit[v]) for v in var)
        return ProblemInstance(objs, ConstraintSystem(C, d))

    def graph(self) -> Graph:
        """Smallest graph compatible with the constraint sparsity."""
        var = self.variables
        edges = [(a, b) for a, b in combinations(range(len(var)), 2)
                 if var[a][0] == var[b][0] or var[a][1] == var[b][1]]
        return Graph(len(var), edges)


CASE1_A = np.array([[-2.0, -3.0], [-4.0, -5.0]])
CASE1_B = np.array([[2.0, 3.0], [4.0, 5.0]])
CASE1_BENEFIT = {(0, 0): 5.0, (0, 1): 15.0, (1, 0): 20.0, (1, 1): 10.0}


def build_case1(seed: int = 0, uncertainty: float = 0.2) -> Scenario:
    """Two agents, two tasks, four scalar variables ``x11, x12, x21, x22``.

    Variable ``x_ij`` is driven by ``(a_ij + da) x + (b_ij + db) u`` with
    ``a_ij, b_ij`` the entries of the nominal matrices; the hidden
    deviations are uniform within ``uncertainty`` of each magnitude.
    """
    spec = ResourceAllocationSpec(((0, 1), (0, 1)), (1.0, 1.0), (1.0, 1.0), CASE1_BENEFIT)
    rng = np.random.default_rng(seed)
    a = np.array([CASE1_A[v] for v in spec.variables])
    b = np.array([CASE1_B[v] for v in spec.variables])
    da = rng.uniform(-uncertainty, uncertainty, 4) * np.abs(a)
    db = rng.uniform(-uncertainty, uncertainty, 4) * np.abs(b)
    plants = linear_bank(a, b, da, db, rho_b=uncertainty * np.abs(b),
                         description={"seed": seed, "uncertainty": uncertainty})
    return Scenario("case1", spec.problem(), spec.graph(), plants, np.zeros(4),
                    data=spec, preset={"gain": 1.0, "dt": 1e-3, "t_final": 20.0})


# -- economic dispatch (case 2) ---------------------------------------------

DEDP_RANGES = {
    "a": (0.0024, 0.0679), "b": (8.3391, 37.6968), "c": (6.78, 74.33),
    "load": (0.0, 300.0), "r": (5.0, 10.0), "s": (7.0, 8.0),
}


@dataclass(frozen=True)
class DedpSpec:
    """Per-area generation cost ``f``, transfer cost ``g`` and load.

    Area ``i`` pays ``a P^2 + b P + c`` to generate and
    ``a2 (P - Pd)^2 + b2 (P - Pd) + c2`` to transfer; both collapse into
    one quadratic in ``P``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    c2: np.ndarray
    load: np.ndarray
    active: np.ndarray
    chords: tuple = DEDP_CHORDS

    @property
    def n_areas(self) -> int:
        return len(self.a)

    def combined(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        qa = self.a + self.a2
        qb = self.b + self.b2 - 2.0 * self.a2 * self.load
        qc = self.c + self.a2 * self.load ** 2 - self.b2 * self.load + self.c2
        return qa, qb, qc

    def problem(self) -> ProblemInstance:
        qa, qb, qc = self.combined()
        objs = tuple(ScalarObjective.quadratic(*v) for v in zip(qa, qb, qc))
        row = self.active.astype(float)
        cs = ConstraintSystem(row[None, :], [float(self.load[self.active].sum())])
        return ProblemInstance(objs, cs)

    def graph(self) -> Graph:
        g = ring_with_chords(self.n_areas, self.chords)
        return Graph(g.n_vertices, [(i, j) for i, j in g.edges if self.active[i] and self.active[j]])

    def check_ranges(self) -> None:
        for name in ("a", "a2"):
            _in_range(getattr(self, name), DEDP_RANGES["a"], name)
        for name in ("b", "b2"):
            _in_range(getattr(self, name), DEDP_RANGES["b"], name)
        for name in ("c", "c2"):
            _in_range(getattr(self, name), DEDP_RANGES["c"], name)
        _in_range(self.load, DEDP_RANGES["load"], "load")


def _in_range(x, rng, name):
    lo, hi = rng
    if np.any(x < lo) or np.any(x > hi):
        raise ScenarioError(f"{name} outside [{lo}, {hi}]")


def sample_dedp(rng: np.random.Generator, n: int = 59) -> DedpSpec:
    u = lambda key: rng.uniform(*DEDP_RANGES[key], n)
    a, a2 = u("a"), u("a")
    b, b2 = u("b"), u("b")
    c, c2 = u("c"), u("c")
    load = u("load")
    return DedpSpec(a, b, c, a2, b2, c2, load, np.ones(n, dtype=bool))


def dedp_schedule(rng: np.random.Generator, spec: DedpSpec) -> list[Perturbation]:
    n = spec.n_areas
    areas = rng.choice(n, 18, replace=False)
    signs = rng.choice([-1.0, 1.0], 18)
    load_change = Perturbation(2.0, "load-change", {
        "areas": areas.tolist(), "factors": (1.0 + 0.2 * signs).tolist()})
    picked = rng.choice(n, 36, replace=False)
    cost_change = Perturbation(3.0, "cost-change", {
        "a_areas": picked[:18].tolist(), "a_factors": (1.0 + rng.uniform(0.0, 0.5, 18)).tolist(),
        "b_areas": picked[18:].tolist(), "b_factors": (1.0 + rng.uniform(-0.5, 0.0, 18)).tolist()})
    base = ring_with_chords(n, spec.chords)
    while True:
        pair = np.sort(rng.choice(n, 2, replace=False))
        keep = [i for i in range(n) if i not in pair]
        if base.induced(keep).is_connected():
            break
    disconnect = Perturbation(4.0, "bus-disconnect", {"areas": pair.tolist()})
    return [load_change, cost_change, disconnect]


def build_case2(seed: int = 0, n_areas: int = 59) -> Scenario:
    """Economic dispatch over a ring with chords; plants ``P' = r P + s u``.

    Controllers know the mid-range ``r = 7.5`` and ``s = 7.5``; the true
    values are drawn from their ranges.
    """
    rng = np.random.default_rng(seed)
    spec = sample_dedp(rng, n_areas)
    spec.check_ranges()
    r = rng.uniform(*DEDP_RANGES["r"], n_areas)
    s = rng.uniform(*DEDP_RANGES["s"], n_areas)
    r0 = np.full(n_areas, np.mean(DEDP_RANGES["r"]))
    s0 = np.full(n_areas, np.mean(DEDP_RANGES["s"]))
    rho = 0.5 * (DEDP_RANGES["s"][1] - DEDP_RANGES["s"][0])
    plants = linear_bank(r0, s0, r - r0, s - s0, rho_b=rho, description={"seed": seed})
    schedule = dedp_schedule(rng, spec)
    return Scenario("case2", spec.problem(), spec.graph(), plants, spec.load.copy(), schedule,
                    strict_compatibility=False, data=spec,
                    preset={"gain": 40.0, "dt": 1e-4, "t_final": 10.0})


def apply_perturbation(spec: DedpSpec, kind: str, payload: dict) -> DedpSpec:
    """Return the dispatch data after one scheduled change."""
    if kind == "load-change":
        load = spec.load.copy()
        load[payload["areas"]] *= np.asarray(payload["factors"])
        return replace(spec, load=load)
    if kind == "cost-change":
        a, b = spec.a.copy(), spec.b.copy()
        a[payload["a_areas"]] *= np.asarray(payload["a_factors"])
        b[payload["b_areas"]] *= np.asarray(payload["b_factors"])
        return replace(spec, a=a, b=b)
    if kind == "bus-disconnect":
        active = spec.active.copy()
        active[payload["areas"]] = False
        new = replace(spec, active=active)
        g = ring_with_chords(spec.n_areas, spec.chords).induced(np.flatnonzero(active))
        if not g.is_connected():
            raise ScenarioError(f"disconnecting {payload['areas']} splits the network")
        return new
    raise ScenarioError(f"unknown perturbation kind {kind!r}")


# -- random instances ---------------------------------------------------------

def random_instance(n: int, m: int, seed: int, curvature=(0.5, 2.0),
                    extra_edge_prob: float = 0.2,
                    min_sv_ratio: float = 0.25) -> tuple[ProblemInstance, Graph]:
    """Strictly convex quadratics with a feasible, well-conditioned ``C``.

    Each row touches 2 to 4 agents; draws whose smallest singular value
    falls below ``min_sv_ratio`` times the largest are rejected, since
    nearly parallel rows make the multiplier modes arbitrarily slow.  The
    graph contains every pair that shares a row, a random spanning tree
    and a few random extras.
    """
    if m > n:
        raise ScenarioError("need m <= n")
    rng = np.random.default_rng(seed)
    while True:
        C = np.zeros((m, n))
        for l in range(m):
            k = int(rng.integers(min(2, n), min(4, n) + 1))
            support = rng.choice(n, k, replace=False)
            C[l, support] = rng.uniform(0.5, 1.5, k) * rng.choice([-1.0, 1.0], k)
        sv = np.linalg.svd(C, compute_uv=False)
        if sv[-1] >= min_sv_ratio * sv[0]:
            break
    y_feas = rng.normal(0.0, 1.0, n)
    d = C @ y_feas
    a = 0.5 * rng.uniform(*curvature, n)
    b = rng.normal(0.0, 1.0, n)
    objs = tuple(ScalarObjective.quadratic(ai, bi) for ai, bi in zip(a, b))
    edges = set()
    for l in range(m):
        edges.update(combinations(np.flatnonzero(C[l]).tolist(), 2))
    order = rng.permutation(n)
    for k in range(1, n):
        edges.add((int(order[k]), int(order[rng.integers(0, k)])))
    for i, j in combinations(range(n), 2):
        if rng.random() < extra_edge_prob:
            edges.add((i, j))
    g = Graph(n, edges)
    p = ProblemInstance(objs, ConstraintSystem(C, d))
    assert check_compatibility(g, p.constraints)
    return p, g


def default_plants(n: int, seed: int = 0, uncertainty: float = 0.2) -> PlantBank:
    """Stable first-order agents ``x' = -x + u`` with seeded deviations."""
    rng = np.random.default_rng(seed)
    a = -np.ones(n)
    b = np.ones(n)
    da = rng.uniform(-uncertainty, uncertainty, n)
    db = rng.uniform(-uncertainty, uncertainty, n)
    return linear_bank(a, b, da, db, rho_b=uncertainty, description={"seed": seed})


def random_scenario(n: int, m: int, seed: int, **kw) -> Scenario:
    p, g = random_instance(n, m, seed, **kw)
    rng = np.random.default_rng(seed + 1)
    return Scenario(f"random-{n}-{m}-{seed}", p, g, default_plants(n, seed),
                    rng.normal(0.0, 1.0, n))


def file_scenario(problem: ProblemInstance, graph: Graph, seed: int = 0) -> Scenario:
    return Scenario("file", problem, graph, default_plants(problem.n, seed), np.zeros(problem.n))


SCENARIOS = {"case1": build_case1, "case2": build_case2}

__all__ = [
    "Perturbation", "Scenario", "ResourceAllocationSpec", "DedpSpec", "build_case1",
    "build_case2", "apply_perturbation", "random_instance", "random_scenario",
    "file_scenario", "complete_graph", "SCENARIOS",
]

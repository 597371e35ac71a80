"""Communication topology and the augmented graph with multiplier agents.

Vertices are 0-based internally; edge-list files use 1-based indices.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import IncompatibleGraphError, InvalidProblemError
from .problem import ConstraintSystem


@dataclass(frozen=True, init=False)
class Graph:
    n_vertices: int
    edges: frozenset

    def __init__(self, n_vertices: int, edges: Iterable[tuple[int, int]]):
        norm = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < n_vertices and 0 <= j < n_vertices):
                raise ValueError(f"edge ({i}, {j}) outside 0..{n_vertices - 1}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "n_vertices", int(n_vertices))
        object.__setattr__(self, "edges", frozenset(norm))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nb = [[] for _ in range(self.n_vertices)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return tuple(tuple(sorted(v)) for v in nb)

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_vertices, self.n_vertices), dtype=int)
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1
        return A

    def bfs_distances(self, src: int) -> list[int]:
        dist = [-1] * self.n_vertices
        dist[src] = 0
        q = deque([src])
        while q:
            u = q.popleft()
            for v in self.neighbors[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    q.append(v)
        return dist

    def is_connected(self) -> bool:
        if self.n_vertices == 0:
            return True
        return min(self.bfs_distances(0)) >= 0

    def diameter(self) -> int:
        if not self.is_connected():
            raise ValueError("diameter of a disconnected graph")
        return max(max(self.bfs_distances(s)) for s in range(self.n_vertices))

    def induced(self, keep) -> "Graph":
        """Subgraph on ``keep``, relabelled to 0..len(keep)-1 in that order."""
        pos = {int(v): k for k, v in enumerate(keep)}
        return Graph(len(pos), [(pos[i], pos[j]) for i, j in self.edges if i in pos and j in pos])


def complete_graph(n: int) -> Graph:
    return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def path_graph(n: int) -> Graph:
    return Graph(n, [(i, i + 1) for i in range(n - 1)])


def ring_with_chords(n: int, chords: Iterable[tuple[int, int]] = ()) -> Graph:
    """Ring over ``n`` vertices plus extra 1-based chord edges."""
    edges = [(i, (i + 1) % n) for i in range(n)]
    edges += [(i - 1, j - 1) for i, j in chords]
    return Graph(n, edges)


DEDP_CHORDS = ((1, 4), (15, 25), (25, 35), (35, 45), (45, 50))


def read_edge_list(path: str | Path, n_vertices: int | None = None) -> Graph:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'i j'")
            pairs.append((int(parts[0]) - 1, int(parts[1]) - 1))
    n = n_vertices if n_vertices is not None else 1 + max(max(p) for p in pairs)
    return Graph(n, pairs)


def write_edge_list(g: Graph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in sorted(g.edges):
            fh.write(f"{i + 1} {j + 1}\n")


def _incompatibilities(g: Graph, cs: ConstraintSystem):
    for l in range(cs.m):
        part = cs.participants(l)
        for a in range(len(part)):
            for b in range(a + 1, len(part)):
                j, k = int(part[a]), int(part[b])
                if not g.has_edge(j, k):
                    yield l, j, k


def check_compatibility(g: Graph, cs: ConstraintSystem) -> bool:
    """True iff every pair of agents sharing a constraint row is adjacent."""
    return next(_incompatibilities(g, cs), None) is None


@dataclass(frozen=True)
class AugmentedNetwork:
    """Real agents ``0..n-1`` plus one virtual agent ``n+l`` per constraint row."""

    base: Graph
    n_virtual: int
    adjacency_mu: np.ndarray
    host_of_virtual: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.base.n_vertices

    @property
    def size(self) -> int:
        return self.n + self.n_virtual

    def adjacency(self) -> np.ndarray:
        n, m = self.n, self.n_virtual
        A = np.zeros((n + m, n + m), dtype=int)
        A[:n, :n] = self.base.adjacency()
        A[:n, n:] = self.adjacency_mu
        A[n:, :n] = self.adjacency_mu.T
        return A

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        n = self.n
        out = []
        for i in range(n):
            virt = tuple(n + l for l in np.flatnonzero(self.adjacency_mu[i]))
            out.append(self.base.neighbors[i] + virt)
        for l in range(self.n_virtual):
            out.append(tuple(int(i) for i in np.flatnonzero(self.adjacency_mu[:, l])))
        return tuple(out)

    def constraint_set(self, i: int) -> tuple[int, ...]:
        """Rows ``K(i)`` that real agent ``i`` participates in."""
        return tuple(int(l) for l in np.flatnonzero(self.adjacency_mu[i]))

    def is_connected(self) -> bool:
        return Graph(self.size, [(i, j) for i, nb in enumerate(self.neighbors) for j in nb]).is_connected()


def build_augmented(g: Graph, cs: ConstraintSystem, strict: bool = True) -> AugmentedNetwork:
    """Attach virtual multiplier agents following the sparsity of ``C``.

    With ``strict=False`` the compatibility check is skipped; multiplier
    values are then assumed to be relayed over the base graph.
    """
    if g.n_vertices != cs.n:
        raise InvalidProblemError(f"graph has {g.n_vertices} vertices, C has {cs.n} columns")
    if not g.is_connected():
        raise IncompatibleGraphError("communication graph is not connected")
    for l in range(cs.m):
        if not np.any(cs.C[l]):
            raise InvalidProblemError(f"constraint row {l + 1} is zero")
    if strict:
        bad = next(_incompatibilities(g, cs), None)
        if bad is not None:
            l, j, k = bad
            raise IncompatibleGraphError(
                f"constraint row {l + 1} couples agents {j + 1} and {k + 1}, which are not adjacent")
    adj_mu = (cs.C.T != 0).astype(int)
    hosts = tuple(int(cs.participants(l)[0]) for l in range(cs.m))
    return AugmentedNetwork(g, cs.m, adj_mu, hosts)


def flood_bounds(g: Graph, local_lo, local_hi) -> tuple[float, float, int]:
    """Synchronous min/max consensus of the local curvature bounds.

    Every agent repeatedly takes the min (max) over itself and its
    neighbours.  Agents cannot detect convergence locally, so the protocol
    runs exactly ``diameter(g)`` rounds, after which all estimates agree.
    """
    lo = np.asarray(local_lo, dtype=float).copy()
    hi = np.asarray(local_hi, dtype=float).copy()
    rounds = g.diameter()
    nbhd = [np.array((i,) + nb) for i, nb in enumerate(g.neighbors)]
    for _ in range(rounds):
        lo = np.array([lo[idx].min() for idx in nbhd])
        hi = np.array([hi[idx].max() for idx in nbhd])
    if not (np.all(lo == np.min(local_lo)) and np.all(hi == np.max(local_hi))):
        raise AssertionError("flooding disagrees with the direct min/max")
    return float(lo[0]), float(hi[0]), rounds

"""Communication graphs, the communication matrix B, and its spectral gap.

Only regular, non-bipartite graphs are generated: with ``B[j, i] = 1/|N_i|``
for ``j in N_i``, the matrix is doubly stochastic exactly when every node has
the same degree, and ``zeta < 1`` additionally needs a connected,
non-bipartite graph.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pame.errors import (
    BipartiteOrDisconnected,
    InvalidDimension,
    NotConnected,
    NotStochastic,
    NotSymmetric,
)
from pame.linalg import jacobi_eigenvalues, power_iteration
from pame.rng import Purpose, stream

STOCHASTIC_TOL = 1e-12
ZETA_REJECT_TOL = 1e-10
JACOBI_MAX_SIZE = 256

__all__ = [
    "CommMatrix",
    "Graph",
    "GraphKind",
    "build_graph",
    "communication_matrix",
    "is_bipartite",
    "is_connected",
    "spectral_gap",
]


class GraphKind(str, enum.Enum):
    ODD_RING = "OddRing"
    TORUS_2D = "Torus2D"
    K_REGULAR_RANDOM = "KRegularRandom"
    COMPLETE = "Complete"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph stored as sorted neighbor tuples."""

    m: int
    neighbors: tuple[tuple[int, ...], ...]
    kind: GraphKind
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GraphKind(self.kind))
        if self.m < 1 or len(self.neighbors) != self.m:
            raise InvalidDimension(f"expected {self.m} neighbor sets, got {len(self.neighbors)}")
        for i, nbrs in enumerate(self.neighbors):
            if list(nbrs) != sorted(set(nbrs)):
                raise InvalidDimension(f"neighbors of node {i} must be strictly increasing")
            if i in nbrs:
                raise InvalidDimension(f"self-loop at node {i}")
            for j in nbrs:
                if not 0 <= j < self.m:
                    raise InvalidDimension(f"neighbor {j} of node {i} out of range")
                if i not in self.neighbors[j]:
                    raise InvalidDimension(f"edge ({i}, {j}) is not symmetric")

    @property
    def degrees(self) -> list[int]:
        return [len(n) for n in self.neighbors]

    @property
    def is_regular(self) -> bool:
        return len(set(self.degrees)) == 1

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.m))
        for i, nbrs in enumerate(self.neighbors):
            a[i, list(nbrs)] = 1.0
        return a

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "kind": self.kind.value,
            "neighbors": [list(n) for n in self.neighbors],
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> Graph:
        return cls(
            m=int(doc["m"]),
            neighbors=tuple(tuple(int(j) for j in n) for n in doc["neighbors"]),
            kind=GraphKind(doc["kind"]),
            seed=int(doc.get("seed", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Graph:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CommMatrix:
    entries: np.ndarray
    degree: int
    zeta: float


def is_connected(neighbors: tuple[tuple[int, ...], ...] | list) -> bool:
    m = len(neighbors)
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in neighbors[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == m


def is_bipartite(neighbors: tuple[tuple[int, ...], ...] | list) -> bool:
    color = [-1] * len(neighbors)
    for root in range(len(neighbors)):
        if color[root] >= 0:
            continue
        color[root] = 0
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in neighbors[i]:
                if color[j] < 0:
                    color[j] = 1 - color[i]
                    queue.append(j)
                elif color[j] == color[i]:
                    return False
    return True


def _from_edges(m: int, edges) -> tuple[tuple[int, ...], ...]:
    nbrs: list[set[int]] = [set() for _ in range(m)]
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    return tuple(tuple(sorted(n)) for n in nbrs)


def _odd_ring(m: int) -> tuple[tuple[int, ...], ...]:
    if m < 3 or m % 2 == 0:
        raise InvalidDimension(f"OddRing needs an odd m >= 3, got {m}")
    return _from_edges(m, [(i, (i + 1) % m) for i in range(m)])


def _torus(m: int) -> tuple[tuple[int, ...], ...]:
    side = math.isqrt(m)
    if side * side != m or side % 2 == 0 or side < 3:
        raise InvalidDimension(f"Torus2D needs m = side**2 with odd side >= 3, got m={m}")
    edges = []
    for r in range(side):
        for c in range(side):
            i = r * side + c
            edges.append((i, r * side + (c + 1) % side))
            edges.append((i, ((r + 1) % side) * side + c))
    return _from_edges(m, edges)


def _complete(m: int) -> tuple[tuple[int, ...], ...]:
    if m < 2:
        raise InvalidDimension(f"Complete graph needs m >= 2, got {m}")
    return tuple(tuple(j for j in range(m) if j != i) for i in range(m))


def _pairing_attempt(m: int, degree: int, rng: np.random.Generator) -> set[tuple[int, int]] | None:
    # Pair stubs at random; pairs forming a self-loop or a repeated edge go
    # back into the pool and are re-shuffled. Gives up when the leftover
    # stubs admit no legal pair.
    edges: set[tuple[int, int]] = set()
    stubs = [i for i in range(m) for _ in range(degree)]
    while stubs:
        rng.shuffle(stubs)
        leftover: list[int] = []
        for a, b in zip(stubs[::2], stubs[1::2]):
            u, v = (a, b) if a < b else (b, a)
            if u != v and (u, v) not in edges:
                edges.add((u, v))
            else:
                leftover.extend((a, b))
        if not leftover:
            break
        pool = sorted(set(leftover))
        if not any(
            (u, v) not in edges for x, u in enumerate(pool) for v in pool[x + 1:]
        ):
            return None
        stubs = leftover
    return edges


def _k_regular(m: int, degree: int, seed: int, max_retries: int) -> tuple[tuple[int, ...], ...]:
    if degree < 1 or degree >= m:
        raise InvalidDimension(f"KRegularRandom needs 1 <= degree < m, got degree={degree}, m={m}")
    if (degree * m) % 2:
        raise InvalidDimension(f"KRegularRandom needs degree*m even, got {degree}*{m}")
    # Dense graphs are drawn as the complement of a sparse one; stub pairing
    # stalls when almost every pair is already taken.
    dense = degree > (m - 1) // 2
    target = m - 1 - degree if dense else degree
    for attempt in range(max_retries):
        if target == 0:
            edges: set[tuple[int, int]] | None = set()
        else:
            edges = _pairing_attempt(m, target, stream(seed, Purpose.GRAPH, attempt))
        if edges is None:
            continue
        if dense:
            edges = {(u, v) for u in range(m) for v in range(u + 1, m) if (u, v) not in edges}
        nbrs = _from_edges(m, edges)
        if is_connected(nbrs) and not is_bipartite(nbrs):
            return nbrs
    raise NotConnected(
        f"no connected non-bipartite {degree}-regular graph on {m} nodes after {max_retries} attempts"
    )


def build_graph(
    kind: GraphKind | str,
    m: int,
    degree: int | None = None,
    seed: int = 0,
    max_retries: int = 1000,
) -> Graph:
    """Build a regular communication graph.

    ``degree`` is only consulted for ``KRegularRandom``; the other kinds have a
    fixed degree and reject a conflicting value.
    """
    kind = GraphKind(kind)
    if kind is GraphKind.ODD_RING:
        nbrs = _odd_ring(m)
    elif kind is GraphKind.TORUS_2D:
        nbrs = _torus(m)
    elif kind is GraphKind.COMPLETE:
        nbrs = _complete(m)
    elif kind is GraphKind.K_REGULAR_RANDOM:
        if degree is None:
            raise InvalidDimension("KRegularRandom requires a degree")
        nbrs = _k_regular(m, degree, seed, max_retries)
    else:
        raise InvalidDimension("Custom graphs are built with Graph(...) or Graph.load, not build_graph")
    actual = len(nbrs[0])
    if degree is not None and degree != actual:
        raise InvalidDimension(f"{kind.value} on {m} nodes has degree {actual}, not {degree}")
    if not is_connected(nbrs):
        raise NotConnected(f"{kind.value} graph on {m} nodes is disconnected")
    return Graph(m=m, neighbors=nbrs, kind=kind, seed=seed)


def spectral_gap(b: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """``max(|lambda_2|, |lambda_m|)`` of a symmetric doubly stochastic matrix.

    Computed as the spectral norm of ``B - 11^T/m`` by power iteration on its
    square, with a cyclic Jacobi fallback when power iteration stalls (close
    or repeated top eigenvalues) and the matrix is small enough.
    """
    b = np.asarray(b, dtype=float)
    m = b.shape[0]
    if b.ndim != 2 or b.shape[1] != m:
        raise NotSymmetric(f"expected a square matrix, got shape {b.shape}")
    if np.any(b < 0):
        raise NotStochastic("communication matrix has negative entries")
    if np.max(np.abs(b.sum(axis=0) - 1)) > STOCHASTIC_TOL or np.max(np.abs(b.sum(axis=1) - 1)) > STOCHASTIC_TOL:
        raise NotStochastic("row or column sums differ from 1")
    if not np.allclose(b, b.T, rtol=0.0, atol=STOCHASTIC_TOL):
        raise NotSymmetric("communication matrix is not symmetric")
    deflated = b - np.full((m, m), 1.0 / m)
    square = deflated @ deflated
    theta, converged = power_iteration(lambda x: square @ x, m, tol=tol, max_iter=max_iter)
    if not converged and m <= JACOBI_MAX_SIZE:
        return float(np.max(np.abs(jacobi_eigenvalues(deflated))))
    return float(np.sqrt(max(theta, 0.0)))


def communication_matrix(g: Graph) -> CommMatrix:
    """``B[j, i] = 1/|N_i|`` for ``j in N_i``; rejects ``zeta >= 1``."""
    b = np.zeros((g.m, g.m))
    for i, nbrs in enumerate(g.neighbors):
        if nbrs:
            b[list(nbrs), i] = 1.0 / len(nbrs)
    zeta = spectral_gap(b)
    if zeta >= 1.0 - ZETA_REJECT_TOL:
        raise BipartiteOrDisconnected(
            f"zeta = {zeta:.12f} >= 1: {g.kind.value} graph on {g.m} nodes is bipartite or disconnected"
        )
    return CommMatrix(entries=b, degree=len(g.neighbors[0]), zeta=zeta)

"""Communication graphs and their gossip mixing matrices.

Agents exchange vectors by averaging over an undirected, connected graph
through a doubly stochastic mixing matrix.  The matrix's deviation from
uniform averaging (``lam``, its largest singular value after projecting
out the consensus direction) measures algebraic connectivity: every
gossip round contracts disagreement between agents by at least that
factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = ["Graph", "MixingMatrix", "build_graph", "metropolis_weights", "spectral_gap"]

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10_000
_STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Undirected, static, connected graph on agents ``0..n_agents-1``.

    Edges are stored as ``(i, j)`` pairs with ``i < j``.  Self-loops are
    implicit: an agent always has access to its own vector, so they are
    never listed explicitly.
    """

    n_agents: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError(f"graph needs at least one agent, got {self.n_agents}")
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop ({i},{i}) is implicit, do not list it")
            if not (0 <= i < j < self.n_agents):
                raise ValueError(
                    f"edge ({i},{j}) out of range for {self.n_agents} agents"
                )
        if not self._connected():
            raise ValueError("graph is not connected")

    def _connected(self) -> bool:
        if self.n_agents == 1:
            return True
        adj: dict[int, list[int]] = {i: [] for i in range(self.n_agents)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n_agents

    def neighbors(self, i: int) -> list[int]:
        """Neighbours of agent ``i``, excluding ``i`` itself."""
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Dense doubly stochastic gossip weights plus their contraction factor.

    ``weights[i, j]`` is nonzero only when ``j`` is ``i`` itself or one of
    its neighbours.  ``lam`` is the operator norm of ``weights - P`` where
    ``P`` is uniform averaging; it lies in ``[0, 1)`` for connected graphs.
    Compared by identity (the weights array makes value equality awkward).
    """

    weights: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be square, got shape {w.shape}")
        if np.min(w) < -1e-15:
            raise ValueError("mixing weights must be nonnegative")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > _STOCHASTIC_TOL:
            raise ValueError("rows of the mixing matrix must sum to 1")
        if np.max(np.abs(w.sum(axis=0) - 1.0)) > _STOCHASTIC_TOL:
            raise ValueError("columns of the mixing matrix must sum to 1")
        if not (0.0 <= self.lam < 1.0):
            raise ValueError(f"lam must lie in [0, 1), got {self.lam}")
        object.__setattr__(self, "weights", w)

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]


def build_graph(
    kind: str,
    n: int,
    edges: Iterable[Sequence[int]] | None = None,
) -> Graph:
    """Construct a named graph family or a custom edge list.

    Supported kinds:

    * ``full`` -- complete graph.
    * ``ring`` -- cycle ``0-1-...-(n-1)-0``; degenerates to a single edge
      for ``n == 2`` and an isolated (trivially connected) node for ``n == 1``.
    * ``bipartite`` -- complete bipartite graph with parts of size
      ``ceil(n/2)`` and ``floor(n/2)``; requires ``n >= 2``.
    * ``custom`` -- explicit undirected edge list; rejected when
      disconnected or referencing out-of-range agents.
    """
    if n < 1:
        raise ValueError(f"need at least one agent, got n={n}")
    pairs: set[tuple[int, int]]
    if kind == "full":
        pairs = {(i, j) for i in range(n) for j in range(i + 1, n)}
    elif kind == "ring":
        if n == 1:
            pairs = set()
        elif n == 2:
            pairs = {(0, 1)}
        else:
            pairs = {(i, (i + 1) % n) for i in range(n)}
            pairs = {(min(a, b), max(a, b)) for a, b in pairs}
    elif kind == "bipartite":
        if n < 2:
            raise ValueError("bipartite topology needs n >= 2")
        left = (n + 1) // 2
        pairs = {(i, j) for i in range(left) for j in range(left, n)}
    elif kind == "custom":
        if edges is None:
            raise ValueError("custom topology requires an explicit edge list")
        pairs = set()
        for e in edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self-loop ({i},{i}) is implicit, do not list it")
            pairs.add((min(i, j), max(i, j)))
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    return Graph(n_agents=n, edges=frozenset(pairs))


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Doubly stochastic weights from the Metropolis-Hastings rule.

    Off-diagonal weight ``1 / (1 + max(deg(i), deg(j)))`` for each edge and
    the leftover mass on the diagonal.  Symmetric, hence doubly stochastic,
    for any connected undirected graph.
    """
    n = g.n_agents
    w = np.zeros((n, n))
    deg = [g.degree(i) for i in range(n)]
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(n):
        w[i, i] = 1.0 - w[i].sum()
    return MixingMatrix(weights=w, lam=spectral_gap(w))


def spectral_gap(w: MixingMatrix | np.ndarray) -> float:
    """Operator norm of ``W - P`` with ``P`` the uniform averaging matrix.

    Computed by power iteration on ``(W-P)^T (W-P)`` with a fixed start
    vector, tolerance ``1e-10`` and a 10,000 iteration cap; no external
    eigensolver is needed for matrices of this size.
    """
    arr = w.weights if isinstance(w, MixingMatrix) else np.asarray(w, dtype=float)
    n = arr.shape[0]
    if n == 1:
        return 0.0
    dev = arr - np.full((n, n), 1.0 / n)
    a = dev.T @ dev
    v = np.random.default_rng(0x5EED).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(_POWER_MAX_ITER):
        av = a @ v
        norm_av = float(np.linalg.norm(av))
        if norm_av <= 1e-30:
            return 0.0
        v = av / norm_av
        if abs(norm_av - est) <= _POWER_TOL * max(1.0, norm_av):
            est = norm_av
            break
        est = norm_av
    return float(np.sqrt(max(est, 0.0)))

"""Episodic knowledge-graph state and the topological prior algebra.

A memory state is an append-only graph over observation vertices; edges
always point from an older vertex j to the newer vertex i (j < i) and are
fixed the moment vertex i is inserted. Which past vertices connect to a
new observation is decided by a prior: a pure boolean predicate over the
two observations, composable with Or/And.
"""

from __future__ import annotations

from typing import Any, Iterable, Mapping

import numpy as np

_f32 = np.float32


class PriorError(ValueError):
    """Raised when a prior leaf needs metadata the observation lacks."""


class Observation:
    """A feature vector plus optional metadata consulted by priors.

    Recognised metadata: ``position`` (meters, array-like) for the spatial
    prior, ``latent`` (array-like) for latent similarity, and arbitrary
    named discrete fields for identity priors. A ``None`` field value means
    "absent" and never matches.
    """

    __slots__ = ("vector", "meta")

    def __init__(self, vector, meta: Mapping[str, Any] | None = None):
        self.vector = np.asarray(vector, dtype=_f32)
        if self.vector.ndim != 1:
            raise ValueError(f"observation vector must be rank-1, got {self.vector.shape}")
        self.meta: Mapping[str, Any] = meta if meta is not None else {}

    def __repr__(self) -> str:
        return f"Observation(dim={self.vector.shape[0]}, meta={dict(self.meta)!r})"


def _meta_field(obs: Observation, key: str, leaf: str) -> Any:
    try:
        return obs.meta[key]
    except KeyError:
        raise PriorError(f"{leaf} prior requires metadata field {key!r}") from None


# ---------------------------------------------------------------------------
# prior combinator tree


class Prior:
    def evaluate(self, j: int, t: int, o_j: Observation, o_t: Observation) -> bool:
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.describe()

    def describe(self) -> str:
        raise NotImplementedError

    def __eq__(self, other) -> bool:
        return isinstance(other, Prior) and self.describe() == other.describe()

    def __hash__(self) -> int:
        return hash(self.describe())


class Empty(Prior):
    """Never connects; the graph degenerates to isolated vertices."""

    def evaluate(self, j, t, o_j, o_t):
        return False

    def describe(self):
        return "empty"


class Temporal(Prior):
    """Connects the new vertex to the one exactly k steps older."""

    def __init__(self, k: int):
        if not isinstance(k, int) or k < 1:
            raise ValueError(f"temporal offset must be a positive integer, got {k}")
        self.k = k

    def evaluate(self, j, t, o_j, o_t):
        return t - j == self.k

    def describe(self):
        return f"temporal({self.k})"


class Spatial(Prior):
    """Connects observations taken within ``radius`` meters of each other."""

    def __init__(self, radius: float):
        if not radius > 0:
            raise ValueError(f"spatial radius must be positive, got {radius}")
        self.radius = float(radius)

    def evaluate(self, j, t, o_j, o_t):
        pj = np.asarray(_meta_field(o_j, "position", "spatial"), dtype=np.float64)
        pt = np.asarray(_meta_field(o_t, "position", "spatial"), dtype=np.float64)
        return float(np.linalg.norm(pj - pt)) <= self.radius

    def describe(self):
        return f"spatial({self.radius})"


class LatentSim(Prior):
    """Connects observations whose latent codes are closer than a threshold."""

    def __init__(self, metric: str, threshold: float):
        if metric not in ("l2", "cosine"):
            raise ValueError(f"latent metric must be 'l2' or 'cosine', got {metric!r}")
        if not threshold > 0:
            raise ValueError(f"latent threshold must be positive, got {threshold}")
        self.metric = metric
        self.threshold = float(threshold)

    def evaluate(self, j, t, o_j, o_t):
        zj = np.asarray(_meta_field(o_j, "latent", "latent-similarity"), dtype=np.float64)
        zt = np.asarray(_meta_field(o_t, "latent", "latent-similarity"), dtype=np.float64)
        if self.metric == "l2":
            dist = float(np.linalg.norm(zj - zt))
        else:
            nj = float(np.linalg.norm(zj))
            nt = float(np.linalg.norm(zt))
            if nj == 0.0 or nt == 0.0:
                return False
            dist = 1.0 - float(zj @ zt) / (nj * nt)
        return dist < self.threshold

    def describe(self):
        return f"latentsim({self.metric}, {self.threshold})"


class Identity(Prior):
    """Connects when field ``a`` of the old observation equals field ``b``
    of the new one; absent (None) values never match."""

    def __init__(self, a: str, b: str):
        self.a = a
        self.b = b

    def evaluate(self, j, t, o_j, o_t):
        va = _meta_field(o_j, self.a, "identity")
        vb = _meta_field(o_t, self.b, "identity")
        if va is None or vb is None:
            return False
        return va == vb

    def describe(self):
        return f"identity({self.a}, {self.b})"


class Or(Prior):
    def __init__(self, *children: Prior):
        if not children:
            raise ValueError("or() needs at least one child prior")
        self.children = tuple(children)

    def evaluate(self, j, t, o_j, o_t):
        return any(c.evaluate(j, t, o_j, o_t) for c in self.children)

    def describe(self):
        return "or(" + ", ".join(c.describe() for c in self.children) + ")"


class And(Prior):
    def __init__(self, *children: Prior):
        if not children:
            raise ValueError("and() needs at least one child prior")
        self.children = tuple(children)

    def evaluate(self, j, t, o_j, o_t):
        return all(c.evaluate(j, t, o_j, o_t) for c in self.children)

    def describe(self):
        return "and(" + ", ".join(c.describe() for c in self.children) + ")"


def eval_prior(prior: Prior, j: int, t: int, state: "MemoryState", o_t: Observation) -> bool:
    """Adjacency indicator for (vertex j, incoming observation at time t)."""
    if not 0 <= j < t:
        raise ValueError(f"prior evaluation needs 0 <= j < t, got j={j}, t={t}")
    return bool(prior.evaluate(j, t, state.vertices[j], o_t))


# ---------------------------------------------------------------------------
# memory state


class MemoryState:
    """Immutable-after-step knowledge graph (vertices, edges, t).

    Inserting returns a new state that shares all previous storage, so
    states held by earlier steps are never mutated.
    """

    __slots__ = ("vertices", "in_neighbors", "_edge_arrays")

    def __init__(self, vertices: tuple[Observation, ...] = (),
                 in_neighbors: tuple[tuple[int, ...], ...] = ()):
        self.vertices = vertices
        self.in_neighbors = in_neighbors
        self._edge_arrays: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def t(self) -> int:
        return len(self.vertices)

    @property
    def dim(self) -> int:
        return self.vertices[0].vector.shape[0] if self.vertices else 0

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Directed edges (j, i) with j < i, ordered by insertion."""
        return [(j, i) for i, nbrs in enumerate(self.in_neighbors) for j in nbrs]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) int64 arrays in canonical (dst, src) order.

        Canonical ordering makes aggregation results independent of how a
        vertex's neighbor list happens to be permuted, down to the bit.
        Cached; safe because the state is frozen.
        """
        if self._edge_arrays is None:
            src = [j for nbrs in self.in_neighbors for j in sorted(nbrs)]
            dst = [i for i, nbrs in enumerate(self.in_neighbors) for _ in nbrs]
            self._edge_arrays = (
                np.asarray(src, dtype=np.int64),
                np.asarray(dst, dtype=np.int64),
            )
        return self._edge_arrays

    def vertex_matrix(self) -> np.ndarray:
        """Row-stacked observation vectors, shape (t, d)."""
        if not self.vertices:
            return np.zeros((0, 0), dtype=_f32)
        return np.stack([v.vector for v in self.vertices])

    def in_degrees(self) -> np.ndarray:
        return np.asarray([len(n) for n in self.in_neighbors], dtype=np.int64)

    def __repr__(self) -> str:
        return f"MemoryState(t={self.t}, edges={len(self.edge_arrays()[0])})"


def insert_observation(state: MemoryState, obs: Observation, prior: Prior) -> MemoryState:
    """Append a vertex, linking past vertices selected by the prior.

    Edges (j, t) are added exactly for the j < t where the prior holds,
    scanning j in ascending order.
    """
    if state.vertices and obs.vector.shape[0] != state.dim:
        raise ValueError(
            f"observation dim {obs.vector.shape[0]} != graph dim {state.dim}")
    t = state.t
    nbrs = tuple(
        j for j in range(t) if prior.evaluate(j, t, state.vertices[j], obs))
    return MemoryState(state.vertices + (obs,), state.in_neighbors + (nbrs,))


def neighborhood(state: MemoryState, i: int) -> set[int]:
    """In-neighbors of vertex i: the past vertices it aggregates from."""
    if not 0 <= i < state.t:
        raise ValueError(f"vertex {i} out of range for t={state.t}")
    return set(state.in_neighbors[i])


def export_edge_list(state: MemoryState) -> str:
    """Text form for offline inspection: header ``t d``, then ``j i`` lines."""
    lines = [f"{state.t} {state.dim}"]
    lines.extend(f"{j} {i}" for j, i in state.edges)
    return "\n".join(lines) + "\n"

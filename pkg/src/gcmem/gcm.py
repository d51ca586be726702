"""Graph convolutional memory: k-GNN stacks over the observation graph.

Each layer h computes, per vertex i,

    z_i^h = act(W1^h z_i^{h-1} + b^h + W2^h agg({z_j^{h-1} : j in N(i)}))

with z^0 the stored observation vectors, N(i) the in-neighbors of i, and
agg a sum or mean that yields the zero vector on an empty neighborhood.
With no edges the W2 branch vanishes and every vertex reduces to a plain
MLP of its own observation.

Because edges only ever point old -> new and are fixed at insertion time,
a vertex's embedding never changes as the graph grows. Two consequences
are exploited throughout:

* one forward pass over an episode's final graph yields the belief for
  every timestep at once (row t is the belief after step t+1);
* the belief of the newest vertex only depends on vertices within
  ``num_layers`` reversed hops, so live stepping evaluates just that cone.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .graph import Empty, MemoryState, Observation, Prior, insert_observation
from .optim import ParameterStore, uniform_init

_f32 = np.float32

_ACTIVATIONS = {"tanh": (np.tanh, T.tanh)}


def _relu_np(x):
    return np.maximum(x, _f32(0.0))


_ACTIVATIONS["relu"] = (_relu_np, T.relu)


@dataclass(frozen=True)
class GCMConfig:
    input_dim: int
    hidden_size: int
    num_layers: int = 2
    activation: str = "tanh"
    aggregation: str = "sum"
    prior: Prior = field(default_factory=Empty)

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_size < 1 or self.num_layers < 1:
            raise ValueError("input_dim, hidden_size and num_layers must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"aggregation must be 'sum' or 'mean', got {self.aggregation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer."""
        dims = []
        for h in range(self.num_layers):
            fan_in = self.input_dim if h == 0 else self.hidden_size
            dims.append((fan_in, self.hidden_size))
        return dims


def gcm_param_count(config: GCMConfig) -> int:
    """Trainable scalars: per layer a root weight, bias, and neighbor weight."""
    return sum(fi * fo + fo + fi * fo for fi, fo in config.layer_dims())


def init_gcm_params(
    store: ParameterStore, config: GCMConfig, rng: np.random.Generator, prefix: str = "gcm."
) -> None:
    for h, (fan_in, fan_out) in enumerate(config.layer_dims(), start=1):
        store.add(f"{prefix}gc{h}.w1", uniform_init(rng, (fan_in, fan_out), fan_in))
        store.add(f"{prefix}gc{h}.b", np.zeros(fan_out, dtype=_f32))
        store.add(f"{prefix}gc{h}.w2", uniform_init(rng, (fan_in, fan_out), fan_in))


def _mean_factors(degrees: np.ndarray) -> np.ndarray:
    """1/in-degree, zero where the neighborhood is empty."""
    out = np.zeros(degrees.shape[0], dtype=_f32)
    nz = degrees > 0
    out[nz] = (1.0 / degrees[nz]).astype(_f32)
    return out


def gnn_forward(
    store: ParameterStore, state: MemoryState, config: GCMConfig, prefix: str = "gcm."
) -> T.Tensor:
    """Differentiable embeddings for every vertex, shape (t, hidden_size).

    Stored observations are constants; only the layer weights receive
    gradients. Skipping the neighbor branch when the graph has no edges
    keeps the no-prior case exactly equal to the plain MLP.
    """
    if state.t < 1:
        raise ValueError("gnn_forward needs at least one vertex")
    act = _ACTIVATIONS[config.activation][1]
    src, dst = state.edge_arrays()
    factors = _mean_factors(state.in_degrees()) if config.aggregation == "mean" else None
    z = T.Tensor(state.vertex_matrix())
    for h in range(1, config.num_layers + 1):
        w1 = store[f"{prefix}gc{h}.w1"]
        b = store[f"{prefix}gc{h}.b"]
        w2 = store[f"{prefix}gc{h}.w2"]
        pre = T.add_bias(T.matmul(z, w1), b)
        if src.shape[0]:
            agg = T.segment_sum_rows(z, src, dst, state.t)
            if factors is not None:
                agg = T.scale_rows(agg, factors)
            pre = T.add(pre, T.matmul(agg, w2))
        z = act(pre)
    return z


def _belief_cone(
    store: ParameterStore, state: MemoryState, config: GCMConfig, prefix: str
) -> np.ndarray:
    """Newest-vertex belief via the reversed-edge receptive cone, numpy only.

    Matches gnn_forward row t-1: same per-row arithmetic, same in-neighbor
    accumulation order, just restricted to the vertices that can matter.
    """
    nbrs = state.in_neighbors
    layers = config.num_layers
    target = state.t - 1
    need: list[tuple[int, ...]] = [()] * (layers + 1)
    need[layers] = (target,)
    cur = {target}
    for h in range(layers, 0, -1):
        prev = set(cur)
        for v in cur:
            prev.update(nbrs[v])
        need[h - 1] = tuple(sorted(prev))
        cur = prev
    act = _ACTIVATIONS[config.activation][0]
    factors = _mean_factors(state.in_degrees()) if config.aggregation == "mean" else None
    verts = state.vertices
    z = np.stack([verts[v].vector for v in need[0]])
    pos = {v: i for i, v in enumerate(need[0])}
    for h in range(1, layers + 1):
        w1 = store[f"{prefix}gc{h}.w1"].data
        b = store[f"{prefix}gc{h}.b"].data
        w2 = store[f"{prefix}gc{h}.w2"].data
        rows = need[h]
        take = np.fromiter((pos[v] for v in rows), dtype=np.int64, count=len(rows))
        pre = z[take] @ w1 + b
        src = []
        dst = []
        for out_i, v in enumerate(rows):
            for u in sorted(nbrs[v]):
                src.append(pos[u])
                dst.append(out_i)
        if src:
            agg = np.zeros((len(rows), z.shape[1]), dtype=_f32)
            kernels.edge_gather_add(
                agg,
                np.ascontiguousarray(z),
                np.asarray(src, dtype=np.int64),
                np.asarray(dst, dtype=np.int64),
            )
            if factors is not None:
                agg *= np.fromiter(
                    (factors[v] for v in rows), dtype=_f32, count=len(rows))[:, None]
            pre = pre + agg @ w2
        z = act(pre)
        pos = {v: i for i, v in enumerate(rows)}
    return z[pos[target]]


# ---------------------------------------------------------------------------
# the shared memory-module operator


class MemoryModule(ABC):
    """Uniform memory operator: step maps (o_t, m_{t-1}) to (b_t, m_t).

    ``step`` is the live, inference-only path used while interacting with
    an environment. ``episode_beliefs`` replays a whole episode from the
    initial state differentiably and returns the (T, belief_size) stack of
    beliefs; training code always recomputes through it.
    """

    store: ParameterStore
    belief_size: int

    @abstractmethod
    def initial_state(self):
        ...

    @abstractmethod
    def step(self, obs: Observation, state):
        ...

    @abstractmethod
    def episode_beliefs(self, observations: Sequence[Observation]) -> T.Tensor:
        ...

    @abstractmethod
    def param_names(self) -> list[str]:
        ...

    def param_count(self) -> int:
        return sum(self.store[n].data.size for n in self.param_names())


class GCM(MemoryModule):
    """Graph convolutional memory over an episodic knowledge graph."""

    def __init__(
        self,
        config: GCMConfig,
        store: ParameterStore | None = None,
        rng: np.random.Generator | None = None,
        prefix: str = "gcm.",
    ):
        self.config = config
        self.prior = config.prior
        self.store = store if store is not None else ParameterStore()
        self.prefix = prefix
        self.belief_size = config.hidden_size
        rng = rng if rng is not None else np.random.default_rng(0)
        init_gcm_params(self.store, config, rng, prefix)

    def initial_state(self) -> MemoryState:
        return MemoryState()

    def step(self, obs: Observation, state: MemoryState) -> tuple[np.ndarray, MemoryState]:
        new_state = insert_observation(state, obs, self.prior)
        belief = _belief_cone(self.store, new_state, self.config, self.prefix)
        return belief, new_state

    def build_state(self, observations: Sequence[Observation]) -> MemoryState:
        state = MemoryState()
        for obs in observations:
            state = insert_observation(state, obs, self.prior)
        return state

    def beliefs_from_state(self, state: MemoryState) -> T.Tensor:
        """Beliefs for all timesteps from one pass over the final graph."""
        return gnn_forward(self.store, state, self.config, self.prefix)

    def episode_beliefs(self, observations: Sequence[Observation]) -> T.Tensor:
        return self.beliefs_from_state(self.build_state(observations))

    def param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith(self.prefix)]

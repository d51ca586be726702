"""MLP and LSTM memory modules behind the shared operator interface."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .gcm import MemoryModule
from .graph import Observation
from .optim import ParameterStore, uniform_init

_f32 = np.float32


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def baseline_param_count(kind: str, input_dim: int, hidden_size: int) -> int:
    d, z = input_dim, hidden_size
    mlp = (d * z + z) + (z * z + z)
    if kind == "mlp":
        return mlp
    if kind == "lstm":
        # the cell consumes the width-z MLP output: fused 4-gate weights
        return mlp + 4 * (z * z + z * z + z)
    raise ValueError(f"unknown baseline kind: {kind!r}")


class MLPMemory(MemoryModule):
    """Stateless two-layer tanh network: what a memoryless agent can do."""

    def __init__(
        self,
        input_dim: int,
        hidden_size: int,
        store: ParameterStore | None = None,
        rng: np.random.Generator | None = None,
        prefix: str = "mlp.",
    ):
        self.input_dim = input_dim
        self.belief_size = hidden_size
        self.store = store if store is not None else ParameterStore()
        self.prefix = prefix
        rng = rng if rng is not None else np.random.default_rng(0)
        self.store.add(f"{prefix}fc1.w", uniform_init(rng, (input_dim, hidden_size), input_dim))
        self.store.add(f"{prefix}fc1.b", np.zeros(hidden_size, dtype=_f32))
        self.store.add(f"{prefix}fc2.w", uniform_init(rng, (hidden_size, hidden_size), hidden_size))
        self.store.add(f"{prefix}fc2.b", np.zeros(hidden_size, dtype=_f32))

    def initial_state(self) -> None:
        return None

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Batched inference on an (n, d) matrix."""
        p = self.store
        h = np.tanh(x @ p[f"{self.prefix}fc1.w"].data + p[f"{self.prefix}fc1.b"].data)
        return np.tanh(h @ p[f"{self.prefix}fc2.w"].data + p[f"{self.prefix}fc2.b"].data)

    def step(self, obs: Observation, state: None) -> tuple[np.ndarray, None]:
        return self.forward_np(obs.vector[None, :])[0], None

    def forward(self, x: T.Tensor) -> T.Tensor:
        p = self.store
        h = T.tanh(T.add_bias(T.matmul(x, p[f"{self.prefix}fc1.w"]), p[f"{self.prefix}fc1.b"]))
        return T.tanh(T.add_bias(T.matmul(h, p[f"{self.prefix}fc2.w"]), p[f"{self.prefix}fc2.b"]))

    def episode_beliefs(self, observations: Sequence[Observation]) -> T.Tensor:
        x = T.Tensor(np.stack([o.vector for o in observations]))
        return self.forward(x)

    def param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith(self.prefix)]


class LSTMMemory(MemoryModule):
    """MLP preprocessor followed by a standard LSTM cell.

    Fused gate layout [input, forget, cell, output] over a (z, 4z) input
    weight, (z, 4z) recurrent weight, and 4z bias. Weights start
    uniform(-k, k) with k = 1/sqrt(z); biases start at zero.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_size: int,
        store: ParameterStore | None = None,
        rng: np.random.Generator | None = None,
        prefix: str = "lstm.",
    ):
        self.input_dim = input_dim
        self.belief_size = hidden_size
        self.store = store if store is not None else ParameterStore()
        self.prefix = prefix
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mlp = MLPMemory(input_dim, hidden_size, self.store, rng, prefix=f"{prefix}pre.")
        z = hidden_size
        self.store.add(f"{prefix}cell.wx", uniform_init(rng, (z, 4 * z), z))
        self.store.add(f"{prefix}cell.wh", uniform_init(rng, (z, 4 * z), z))
        self.store.add(f"{prefix}cell.b", np.zeros(4 * z, dtype=_f32))

    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        z = self.belief_size
        return np.zeros((1, z), dtype=_f32), np.zeros((1, z), dtype=_f32)

    def step(self, obs: Observation, state) -> tuple[np.ndarray, tuple]:
        h, c = state
        z = self.belief_size
        p = self.store
        x = self.mlp.forward_np(obs.vector[None, :])
        gates = x @ p[f"{self.prefix}cell.wx"].data + h @ p[f"{self.prefix}cell.wh"].data \
            + p[f"{self.prefix}cell.b"].data
        i = _sigmoid_np(gates[:, :z])
        f = _sigmoid_np(gates[:, z : 2 * z])
        g = np.tanh(gates[:, 2 * z : 3 * z])
        o = _sigmoid_np(gates[:, 3 * z :])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        return h_new[0], (h_new, c_new)

    def episode_beliefs(self, observations: Sequence[Observation]) -> T.Tensor:
        z = self.belief_size
        p = self.store
        wx = p[f"{self.prefix}cell.wx"]
        wh = p[f"{self.prefix}cell.wh"]
        b = p[f"{self.prefix}cell.b"]
        xs = self.mlp.forward(T.Tensor(np.stack([o.vector for o in observations])))
        h = T.Tensor(np.zeros((1, z), dtype=_f32))
        c = T.Tensor(np.zeros((1, z), dtype=_f32))
        outs = []
        for t in range(len(observations)):
            x_t = T.gather_rows(xs, [t])
            gates = T.add_bias(T.add(T.matmul(x_t, wx), T.matmul(h, wh)), b)
            i = T.sigmoid(T.slice_cols(gates, 0, z))
            f = T.sigmoid(T.slice_cols(gates, z, 2 * z))
            g = T.tanh(T.slice_cols(gates, 2 * z, 3 * z))
            o = T.sigmoid(T.slice_cols(gates, 3 * z, 4 * z))
            c = T.add(T.mul(f, c), T.mul(i, g))
            h = T.mul(o, T.tanh(c))
            outs.append(h)
        return T.concat_rows(outs)

    def param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith(self.prefix)]

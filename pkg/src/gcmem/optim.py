"""Named parameter storage, gradient-clipped optimizers, checkpoint I/O."""

from __future__ import annotations

import math
import os
import struct
import tempfile

import numpy as np

from .tensor import Tensor

_f32 = np.float32

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"GCMEMPK\x00"
CHECKPOINT_VERSION = 1


class ParameterStore:
    """Map of unique names to trainable tensors, iterated in sorted order.

    Also owns per-parameter optimizer moments so a single store can be
    stepped by ``optimizer_step`` without external state.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._moments: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=_f32), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._params[n]) for n in self.names()]

    def param_count(self) -> int:
        return sum(t.data.size for _, t in self.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        """Read-only copy of all parameter arrays (for worker sharing)."""
        return {n: t.data.copy() for n, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.items():
            if name not in arrays:
                raise KeyError(f"missing parameter in source: {name}")
            arr = np.asarray(arrays[name], dtype=_f32)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def global_grad_norm(store: ParameterStore) -> float:
    """L2 norm over all gradients jointly; absent grads contribute zero."""
    total = 0.0
    for _, t in store.items():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def optimizer_step(
    store: ParameterStore,
    method: str = "adam",
    lr: float = 1e-3,
    clip_norm: float | None = None,
) -> float:
    """Apply one update and zero all grads; returns the pre-clip global norm.

    Clipping rescales every gradient jointly so the global norm does not
    exceed ``clip_norm``. Adam uses bias-corrected moments with the module
    defaults; parameters whose grad is absent are left untouched.
    """
    norm = global_grad_norm(store)
    factor = 1.0
    if clip_norm is not None and clip_norm > 0 and norm > clip_norm:
        factor = clip_norm / norm
    for name, t in store.items():
        g = t.grad
        if g is None:
            continue
        if factor != 1.0:
            g = g * _f32(factor)
        if method == "sgd":
            t.data -= _f32(lr) * g
        elif method == "adam":
            m, v, step = store._moments.get(
                name, (np.zeros_like(t.data), np.zeros_like(t.data), 0))
            step += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
            m_hat = m / (1.0 - ADAM_BETA1**step)
            v_hat = v / (1.0 - ADAM_BETA2**step)
            t.data -= (_f32(lr) * m_hat / (np.sqrt(v_hat) + _f32(ADAM_EPS))).astype(_f32)
            store._moments[name] = (m.astype(_f32), v.astype(_f32), step)
        else:
            raise ValueError(f"unknown optimizer method: {method}")
    store.zero_grad()
    return norm


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform(-k, k) with k = 1/sqrt(fan_in), the shared layer init."""
    k = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-k, k, size=shape).astype(_f32)


# ---------------------------------------------------------------------------
# checkpoint format: 8-byte magic, version byte, then per entry
#   u32 name length, utf-8 name, u32 rank, u32 extents..., row-major f32 LE


def save_checkpoint(store: ParameterStore, path: str) -> None:
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob.append(CHECKPOINT_VERSION)
    for name, t in store.items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        arr = t.data
        blob += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<I", extent)
        blob += arr.astype("<f4").tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    version = blob[pos]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 1
    arrays: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        if name in arrays:
            raise ValueError(f"{path}: duplicate entry {name}")
        arrays[name] = arr.astype(_f32)
    return arrays

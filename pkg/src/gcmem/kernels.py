"""Hot array kernels: numba-jitted with a pure-numpy fallback.

The numba path is the default whenever numba imports cleanly; set
``GCMEM_DISABLE_NUMBA=1`` before import to force the numpy fallback
(useful on platforms where numba is unavailable and for A/B timing,
see ``benchmarks/bench_kernels.py``).

All kernels accumulate in a fixed sequential order, so results are
deterministic and independent of how many unrelated rows an array has.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("GCMEM_DISABLE_NUMBA", "") not in ("1", "true")


# ---------------------------------------------------------------------------
# numpy fallback implementations


def scatter_add_rows_numpy(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    """out[idx[e]] += src[e] for each e, accumulating duplicates."""
    np.add.at(out, idx, src)


def edge_gather_add_numpy(
    out: np.ndarray, x: np.ndarray, src: np.ndarray, dst: np.ndarray
) -> None:
    """out[dst[e]] += x[src[e]] for each edge e (neighborhood aggregation)."""
    np.add.at(out, dst, x[src])


def gae_scan_numpy(
    rewards: np.ndarray, values: np.ndarray, last_value: float, gamma: float, lam: float
) -> np.ndarray:
    """Backward scan of discounted TD residuals for one episode.

    ``last_value`` is the bootstrap value of the state after the final
    step (zero when the episode ended at a true terminal).
    """
    n = rewards.shape[0]
    adv = np.empty(n, dtype=np.float32)
    gae = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        delta = float(rewards[t]) + gamma * next_value - float(values[t])
        gae = delta + gamma * lam * gae
        adv[t] = gae
        next_value = float(values[t])
    return adv


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit("void(float32[:, ::1], int64[::1], float32[:, ::1])", cache=True)
    def scatter_add_rows_numba(out, idx, src):  # pragma: no cover - jitted
        for e in range(idx.shape[0]):
            row = idx[e]
            for c in range(out.shape[1]):
                out[row, c] += src[e, c]

    @njit(
        "void(float32[:, ::1], float32[:, ::1], int64[::1], int64[::1])", cache=True
    )
    def edge_gather_add_numba(out, x, src, dst):  # pragma: no cover - jitted
        for e in range(src.shape[0]):
            s = src[e]
            d = dst[e]
            for c in range(out.shape[1]):
                out[d, c] += x[s, c]

    @njit(
        "float32[::1](float32[::1], float32[::1], float64, float64, float64)",
        cache=True,
    )
    def gae_scan_numba(rewards, values, last_value, gamma, lam):  # pragma: no cover
        n = rewards.shape[0]
        adv = np.empty(n, dtype=np.float32)
        gae = 0.0
        next_value = last_value
        for t in range(n - 1, -1, -1):
            delta = rewards[t] + gamma * next_value - values[t]
            gae = delta + gamma * lam * gae
            adv[t] = np.float32(gae)
            next_value = values[t]
        return adv


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    scatter_add_rows = scatter_add_rows_numba
    edge_gather_add = edge_gather_add_numba
    gae_scan = gae_scan_numba
    ACTIVE = "numba"
else:
    scatter_add_rows = scatter_add_rows_numpy
    edge_gather_add = edge_gather_add_numpy
    gae_scan = gae_scan_numpy
    ACTIVE = "numpy"

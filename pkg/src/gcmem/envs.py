"""Desk-scale POMDP environments: velocity-less cartpole and the memory
card game, behind a uniform reset/step interface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Observation

_f32 = np.float32


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool


class EpisodeDone(RuntimeError):
    """step() was called on a finished episode."""


# ---------------------------------------------------------------------------
# partially observable cartpole

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_POLE_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_POLE_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_LIMIT = 12.0 * np.pi / 180.0
X_LIMIT = 2.4
CARTPOLE_MAX_STEPS = 200


def cartpole_accelerations(state: tuple[float, float, float, float], force: float) -> tuple[float, float]:
    """(x_ddot, theta_ddot) for the standard cartpole dynamics."""
    _, x_dot, theta, theta_dot = state
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot**2 * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t**2 / TOTAL_MASS))
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    return float(x_acc), float(theta_acc)


def cartpole_euler_step(
    state: tuple[float, float, float, float], force: float
) -> tuple[float, float, float, float]:
    """One explicit-Euler step: positions advance on the pre-step rates."""
    x, x_dot, theta, theta_dot = state
    x_acc, theta_acc = cartpole_accelerations(state, force)
    return (
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    )


class CartpoleEnv:
    """Classic cartpole control with the velocities hidden.

    The observation is only (cart position, pole angle); reward is 1 per
    surviving step; the episode ends past 12 degrees, past 2.4 m, or at
    200 steps.
    """

    action_count = 2

    def __init__(self, seed: int | None = None):
        self._rng = np.random.default_rng(seed)
        self._state: tuple[float, float, float, float] | None = None
        self._steps = 0
        self._done = True

    @property
    def obs_dim(self) -> int:
        return 2

    @property
    def full_state(self) -> tuple[float, float, float, float]:
        """Test hook: (x, x_dot, theta, theta_dot) including velocities."""
        return self._state

    def _observe(self) -> Observation:
        x, _, theta, _ = self._state
        return Observation(np.array([x, theta], dtype=_f32))

    def reset(self, seed: int | None = None) -> StepResult:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        vals = self._rng.uniform(-0.05, 0.05, size=4)
        self._state = (float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]))
        self._steps = 0
        self._done = False
        return StepResult(self._observe(), 0.0, False)

    def step(self, action: int) -> StepResult:
        if self._done:
            raise EpisodeDone("cartpole episode is over; call reset()")
        if action not in (0, 1):
            raise ValueError(f"cartpole action must be 0 (left) or 1 (right), got {action}")
        force = FORCE_MAG if action == 1 else -FORCE_MAG
        self._state = cartpole_euler_step(self._state, force)
        self._steps += 1
        x, _, theta, _ = self._state
        self._done = (
            abs(x) > X_LIMIT or abs(theta) > THETA_LIMIT or self._steps >= CARTPOLE_MAX_STEPS
        )
        return StepResult(self._observe(), 1.0, self._done)


# ---------------------------------------------------------------------------
# memory card game

CARD_LEFT = 0
CARD_RIGHT = 1
CARD_FLIP = 2
_ACTION_NONE = 3

DEFAULT_EPISODE_LIMITS = {16: 50, 20: 75, 24: 100}


class CardGameEnv:
    """Concentration with a movable pointer over n face-down cards.

    Flipping a second unmatched card resolves the pair: equal values lock
    both face up for a reward of 2/n, unequal values turn both back over.
    Matching everything is worth exactly 1. Observations one-hot encode the
    pointer, the pointer card's visible value, the open card (if any), and
    the previous action; metadata exposes ``pointer_value`` and
    ``faceup_value`` for identity priors.
    """

    action_count = 3

    def __init__(self, n: int = 16, episode_limit: int | None = None, seed: int | None = None):
        if n < 2 or n % 2 != 0:
            raise ValueError(f"card count must be even and >= 2, got {n}")
        if episode_limit is None:
            episode_limit = DEFAULT_EPISODE_LIMITS.get(n)
            if episode_limit is None:
                raise ValueError(f"no default episode limit for n={n}; pass one explicitly")
        self.n = n
        self.n_values = n // 2
        self.episode_limit = episode_limit
        self._rng = np.random.default_rng(seed)
        self._done = True
        self.pair_reward = 2.0 / n

    @property
    def obs_dim(self) -> int:
        n, v = self.n, self.n_values + 1
        return n + v + (n + 1) + v + 4

    def _observe(self, prev_action: int) -> Observation:
        n, nv = self.n, self.n_values
        vec = np.zeros(self.obs_dim, dtype=_f32)
        off = 0
        vec[off + self.pointer] = 1.0
        off += n
        visible = self.face_up[self.pointer] or self.matched[self.pointer]
        pointer_value = int(self.values[self.pointer]) if visible else None
        vec[off + (pointer_value if visible else nv)] = 1.0
        off += nv + 1
        if self.last_flipped is not None:
            faceup_value = int(self.values[self.last_flipped])
            vec[off + self.last_flipped] = 1.0
            vec[off + (n + 1) + faceup_value] = 1.0
        else:
            faceup_value = None
            vec[off + n] = 1.0
            vec[off + (n + 1) + nv] = 1.0
        off += (n + 1) + (nv + 1)
        vec[off + prev_action] = 1.0
        return Observation(vec, {"pointer_value": pointer_value, "faceup_value": faceup_value})

    def reset(self, seed: int | None = None) -> StepResult:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.values = np.repeat(np.arange(self.n_values), 2)
        self._rng.shuffle(self.values)
        self.face_up = np.zeros(self.n, dtype=bool)
        self.matched = np.zeros(self.n, dtype=bool)
        self.pointer = 0
        self.last_flipped: int | None = None
        self._steps = 0
        self._done = False
        return StepResult(self._observe(_ACTION_NONE), 0.0, False)

    def step(self, action: int) -> StepResult:
        if self._done:
            raise EpisodeDone("card game episode is over; call reset()")
        if action not in (CARD_LEFT, CARD_RIGHT, CARD_FLIP):
            raise ValueError(f"card game action must be 0/1/2, got {action}")
        reward = 0.0
        if action == CARD_LEFT:
            self.pointer = max(0, self.pointer - 1)
        elif action == CARD_RIGHT:
            self.pointer = min(self.n - 1, self.pointer + 1)
        else:
            c = self.pointer
            if not self.face_up[c] and not self.matched[c]:
                self.face_up[c] = True
                f = self.last_flipped
                if f is not None:
                    if self.values[f] == self.values[c]:
                        self.matched[f] = True
                        self.matched[c] = True
                        reward = self.pair_reward
                    else:
                        self.face_up[f] = False
                        self.face_up[c] = False
                    self.last_flipped = None
                else:
                    self.last_flipped = c
        self._steps += 1
        self._done = bool(self.matched.all()) or self._steps >= self.episode_limit
        return StepResult(self._observe(action), reward, self._done)

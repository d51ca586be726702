"""Environment contracts: dynamics regression, rewards, determinism."""

import numpy as np
import pytest

from gcmem.envs import (
    CARD_FLIP,
    CARD_LEFT,
    CARD_RIGHT,
    CARTPOLE_MAX_STEPS,
    CardGameEnv,
    CartpoleEnv,
    EpisodeDone,
    GRAVITY,
    HALF_POLE_LENGTH,
    POLE_MASS,
    THETA_LIMIT,
    TOTAL_MASS,
    cartpole_euler_step,
)

from _oracles import cartpole_trajectory64


def pd_action(env, gain_theta=3.0, gain_theta_dot=1.0):
    x, x_dot, theta, theta_dot = env.full_state
    return 1 if (gain_theta * theta + gain_theta_dot * theta_dot
                 + 0.1 * x + 0.2 * x_dot) > 0 else 0


# ---------------------------------------------------------------------------
# cartpole


def test_observation_hides_velocities():
    env = CartpoleEnv()
    result = env.reset(seed=0)
    assert result.observation.vector.shape == (2,)
    x, _, theta, _ = env.full_state
    np.testing.assert_allclose(result.observation.vector, [x, theta], rtol=1e-6)


def test_reset_determinism_and_bounds():
    a = CartpoleEnv().reset(seed=123).observation.vector
    b = CartpoleEnv().reset(seed=123).observation.vector
    np.testing.assert_array_equal(a, b)
    env = CartpoleEnv()
    for seed in range(30):
        env.reset(seed=seed)
        assert all(abs(v) <= 0.05 for v in env.full_state)
        assert not env.step(0).done or env._steps > 1  # never terminal at reset


def test_reward_one_per_step_and_survival_return_200():
    env = CartpoleEnv()
    env.reset(seed=4)
    total = 0.0
    steps = 0
    while True:
        result = env.step(pd_action(env))
        assert result.reward == 1.0
        total += result.reward
        steps += 1
        if result.done:
            break
    assert steps == CARTPOLE_MAX_STEPS
    assert total == 200.0


def test_episode_ends_past_angle_limit():
    env = CartpoleEnv()
    env.reset(seed=7)
    done = False
    while not done:
        done = env.step(1).done  # constant force topples the pole
    assert abs(env.full_state[2]) > THETA_LIMIT or abs(env.full_state[0]) > 2.4
    with pytest.raises(EpisodeDone):
        env.step(1)


def test_golden_trajectory_matches_independent_dynamics():
    env = CartpoleEnv()
    env.reset(seed=11)
    start = env.full_state
    actions = []
    states = []
    for _ in range(CARTPOLE_MAX_STEPS):
        a = pd_action(env)
        actions.append(a)
        result = env.step(a)
        states.append(env.full_state)
        if result.done:
            break
    assert len(states) == CARTPOLE_MAX_STEPS
    expected = cartpole_trajectory64(start, actions)
    for got, want in zip(states, expected):
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_mirrored_initial_state_gives_mirrored_trajectory():
    env_a = CartpoleEnv()
    env_a.reset(seed=2)
    env_b = CartpoleEnv()
    env_b.reset(seed=2)
    env_b._state = tuple(-v for v in env_a.full_state)
    for _ in range(50):
        a = pd_action(env_a)
        ra = env_a.step(a)
        rb = env_b.step(1 - a)
        np.testing.assert_allclose(
            env_b.full_state, tuple(-v for v in env_a.full_state), atol=1e-12)
        if ra.done or rb.done:
            assert ra.done == rb.done
            break


def test_zero_force_energy_drift_is_bounded_and_eulerlike():
    def energy(s):
        x, xd, th, thd = s
        ke = (0.5 * TOTAL_MASS * xd**2
              + POLE_MASS * HALF_POLE_LENGTH * xd * thd * np.cos(th)
              + 0.5 * POLE_MASS * HALF_POLE_LENGTH**2 * (4.0 / 3.0) * thd**2)
        return ke + POLE_MASS * GRAVITY * HALF_POLE_LENGTH * np.cos(th)

    rng = np.random.default_rng(0)
    for _ in range(5):
        s = tuple(rng.uniform(-0.05, 0.05, 4))
        e_prev = energy(s)
        total = 0.0
        for _ in range(200):
            s = cartpole_euler_step(s, 0.0)
            e = energy(s)
            drift = e - e_prev
            assert abs(drift) < 0.05  # bounded per step
            total += drift
            e_prev = e
        assert total > 0.0  # explicit Euler pumps energy in


# ---------------------------------------------------------------------------
# card game


def test_card_deck_has_each_label_twice():
    env = CardGameEnv(n=16)
    env.reset(seed=0)
    values, counts = np.unique(env.values, return_counts=True)
    assert list(values) == list(range(8))
    assert all(c == 2 for c in counts)


def test_same_seed_same_shuffle():
    a = CardGameEnv(n=8, episode_limit=30)
    b = CardGameEnv(n=8, episode_limit=30)
    a.reset(seed=5)
    b.reset(seed=5)
    np.testing.assert_array_equal(a.values, b.values)


def test_default_episode_limits():
    assert CardGameEnv(n=16).episode_limit == 50
    assert CardGameEnv(n=20).episode_limit == 75
    assert CardGameEnv(n=24).episode_limit == 100
    with pytest.raises(ValueError):
        CardGameEnv(n=8)  # desk-scale sizes need an explicit limit
    with pytest.raises(ValueError):
        CardGameEnv(n=7, episode_limit=10)


def test_initial_observation_uses_sentinels():
    env = CardGameEnv(n=8, episode_limit=30)
    result = env.reset(seed=1)
    assert result.observation.meta["pointer_value"] is None
    assert result.observation.meta["faceup_value"] is None
    vec = result.observation.vector
    assert vec.shape == (env.obs_dim,)
    n, nv = 8, 4
    assert vec[0] == 1.0                      # pointer at card 0
    assert vec[n + nv] == 1.0                 # pointer value hidden
    assert vec[n + nv + 1 + n] == 1.0         # no open card
    assert vec[-1] == 1.0                     # previous action: none


def _find_pair_seed(n=8, adjacent=True):
    """Seed where cards 0 and 1 match (or mismatch when adjacent=False)."""
    for seed in range(200):
        env = CardGameEnv(n=n, episode_limit=30)
        env.reset(seed=seed)
        if (env.values[0] == env.values[1]) == adjacent:
            return seed, env
    raise AssertionError("no such seed in range")


def test_matching_pair_rewards_and_stays_up():
    seed, env = _find_pair_seed(adjacent=True)
    env.reset(seed=seed)
    r1 = env.step(CARD_FLIP)
    assert r1.reward == 0.0
    assert r1.observation.meta["faceup_value"] == env.values[0]
    assert r1.observation.meta["pointer_value"] == env.values[0]
    env.step(CARD_RIGHT)
    r3 = env.step(CARD_FLIP)
    assert r3.reward == pytest.approx(2.0 / 8.0)
    assert env.matched[0] and env.matched[1]
    assert env.face_up[0] and env.face_up[1]
    assert r3.observation.meta["faceup_value"] is None  # pair resolved


def test_mismatched_pair_turns_back_over():
    seed, env = _find_pair_seed(adjacent=False)
    env.reset(seed=seed)
    env.step(CARD_FLIP)
    env.step(CARD_RIGHT)
    result = env.step(CARD_FLIP)
    assert result.reward == 0.0
    assert not env.face_up[0] and not env.face_up[1]
    assert result.observation.meta["faceup_value"] is None


def test_flip_on_matched_or_open_card_is_noop():
    seed, env = _find_pair_seed(adjacent=True)
    env.reset(seed=seed)
    env.step(CARD_FLIP)
    again = env.step(CARD_FLIP)  # flipping the open card changes nothing
    assert again.reward == 0.0 and env.last_flipped == 0
    env.step(CARD_RIGHT)
    env.step(CARD_FLIP)  # match
    env.step(CARD_LEFT)
    noop = env.step(CARD_FLIP)  # flipping a matched card
    assert noop.reward == 0.0
    assert env.matched[0]


def test_pointer_saturates_at_edges():
    env = CardGameEnv(n=4, episode_limit=20)
    env.reset(seed=0)
    env.step(CARD_LEFT)
    assert env.pointer == 0
    for _ in range(5):
        env.step(CARD_RIGHT)
    assert env.pointer == 3


def test_full_match_returns_exactly_one():
    # brute force: scripted sweep that flips matching positions via env.values
    env = CardGameEnv(n=4, episode_limit=40)
    env.reset(seed=3)
    order = np.argsort(env.values, kind="stable")  # pairs adjacent in order
    total = 0.0
    matched_counts = []
    for idx in order:
        while env.pointer < idx:
            env.step(CARD_RIGHT)
        while env.pointer > idx:
            env.step(CARD_LEFT)
        result = env.step(CARD_FLIP)
        total += result.reward
        matched_counts.append(int(env.matched.sum()))
        if result.done:
            break
    assert total == 1.0
    assert matched_counts == sorted(matched_counts)  # monotone matches
    assert env.matched.all()


def test_random_policy_rewards_in_allowed_set():
    rng = np.random.default_rng(0)
    env = CardGameEnv(n=4, episode_limit=20)
    for episode in range(300):
        result = env.reset(seed=episode)
        total = 0.0
        matched_so_far = 0
        while not result.done:
            result = env.step(int(rng.integers(3)))
            assert result.reward in (0.0, 0.5)
            total += result.reward
            now = int(env.matched.sum())
            assert now >= matched_so_far  # matches never come undone
            matched_so_far = now
        if env.matched.all():
            assert total == 1.0


def test_step_after_done_raises():
    env = CardGameEnv(n=4, episode_limit=2)
    env.reset(seed=0)
    env.step(CARD_LEFT)
    env.step(CARD_LEFT)
    with pytest.raises(EpisodeDone):
        env.step(CARD_LEFT)


def test_card_game_bit_determinism():
    actions = np.random.default_rng(9).integers(0, 3, size=25)

    def run():
        env = CardGameEnv(n=8, episode_limit=30)
        result = env.reset(seed=77)
        trace = [result.observation.vector]
        for a in actions:
            result = env.step(int(a))
            trace.append(result.observation.vector)
            if result.done:
                break
        return np.concatenate(trace)

    np.testing.assert_array_equal(run(), run())

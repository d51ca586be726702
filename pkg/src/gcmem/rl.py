"""Actor-critic training over any memory module: rollouts, GAE, PPO, A2C.

Memory modules are stateful, so update passes never shuffle individual
steps: minibatches are unions of whole episodes and every loss evaluation
recomputes beliefs by replaying the episode from its start. PPO also
recomputes the behavior log-probabilities with the pre-update parameters
through that same replay path, which makes the first ratio of every
update exactly one regardless of how the rollout path batched its math.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .gcm import GCM, MemoryModule
from .graph import MemoryState, Observation, insert_observation
from .optim import ParameterStore, optimizer_step, uniform_init

_f32 = np.float32

ADV_NORM_EPS = 1e-8
KL_COEF_INIT = 0.2


@dataclass
class TrainConfig:
    algorithm: str
    gamma: float = 0.99
    gae_lambda: float = 1.0
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    grad_clip: float = 40.0
    lr: float = 5e-5
    batch_size: int = 5000
    minibatch_size: int = 128
    sgd_iters: int = 35
    ppo_clip: float = 0.3
    vf_clip: float = 10.0
    kl_target: float = 0.01
    optimizer: str = "adam"
    # PPO normalizes advantages per batch; A2C never does. Overridable for
    # equivalence checks between the two updaters.
    normalize_advantages: bool | None = None

    def __post_init__(self):
        if self.algorithm not in ("ppo", "a2c"):
            raise ValueError(f"algorithm must be 'ppo' or 'a2c', got {self.algorithm!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        for name in ("gamma", "gae_lambda", "vf_coef", "ent_coef", "grad_clip", "lr",
                     "ppo_clip", "vf_clip", "kl_target"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.batch_size < self.minibatch_size:
            raise ValueError("batch_size must be >= minibatch_size")


@dataclass
class Trajectory:
    """One episode (possibly truncated at a batch boundary)."""

    observations: list[Observation]
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    episode_id: int
    bootstrap_value: float = 0.0
    next_observation: Observation | None = None
    # final graph for modules that replay from a stored state; includes the
    # bootstrap observation when the episode was truncated
    replay_state: MemoryState | None = None

    @property
    def length(self) -> int:
        return len(self.observations)

    @property
    def complete(self) -> bool:
        return bool(self.dones[-1])

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _sample_categorical(rng: np.random.Generator, log_probs: np.ndarray) -> int:
    cum = np.cumsum(np.exp(log_probs.astype(np.float64)))
    r = rng.random() * cum[-1]
    return min(int(np.searchsorted(cum, r, side="right")), log_probs.shape[0] - 1)


class PolicyModel:
    """Memory module plus linear actor and critic heads over the belief."""

    def __init__(
        self,
        module: MemoryModule,
        action_count: int,
        rng: np.random.Generator | None = None,
    ):
        self.module = module
        self.action_count = action_count
        self.store: ParameterStore = module.store
        rng = rng if rng is not None else np.random.default_rng(0)
        z = module.belief_size
        self.store.add("actor.w", uniform_init(rng, (z, action_count), z))
        self.store.add("actor.b", np.zeros(action_count, dtype=_f32))
        self.store.add("critic.w", uniform_init(rng, (z, 1), z))
        self.store.add("critic.b", np.zeros(1, dtype=_f32))

    def act(self, obs: Observation, mem_state) -> tuple[np.ndarray, float, object]:
        """Inference step: (logits, value, next memory state)."""
        belief, new_state = self.module.step(obs, mem_state)
        p = self.store
        logits = belief @ p["actor.w"].data + p["actor.b"].data
        value = float(belief @ p["critic.w"].data[:, 0] + p["critic.b"].data[0])
        return logits, value, new_state

    def episode_outputs(
        self,
        observations: Sequence[Observation],
        replay_state: MemoryState | None = None,
    ) -> tuple[T.Tensor, T.Tensor]:
        """Differentiable replay of one episode: logits (T, A), values (T, 1)."""
        if replay_state is not None and isinstance(self.module, GCM):
            beliefs = self.module.beliefs_from_state(replay_state)
        else:
            beliefs = self.module.episode_beliefs(observations)
        p = self.store
        logits = T.add_bias(T.matmul(beliefs, p["actor.w"]), p["actor.b"])
        values = T.add_bias(T.matmul(beliefs, p["critic.w"]), p["critic.b"])
        return logits, values

    def param_count(self) -> int:
        return self.store.param_count()


def collect_rollouts(
    model: PolicyModel,
    env_factory: Callable[[], object],
    total_steps: int,
    seed: int,
) -> list[Trajectory]:
    """Sample exactly total_steps env steps of whole episodes.

    The memory state is reset at every episode start; the final episode may
    be cut at the step budget, in which case its bootstrap value is the
    critic's estimate for the next observation.
    """
    env = env_factory()
    rng = np.random.default_rng(seed)
    trajectories: list[Trajectory] = []
    steps = 0
    episode_id = 0
    while steps < total_steps:
        obs = env.reset(seed=int(rng.integers(2**62))).observation
        mem_state = model.module.initial_state()
        obs_list: list[Observation] = []
        actions: list[int] = []
        log_probs: list[float] = []
        values: list[float] = []
        rewards: list[float] = []
        dones: list[bool] = []
        bootstrap = 0.0
        next_obs: Observation | None = None
        while True:
            logits, value, mem_state = model.act(obs, mem_state)
            logp = _log_softmax_np(logits)
            action = _sample_categorical(rng, logp)
            result = env.step(action)
            obs_list.append(obs)
            actions.append(action)
            log_probs.append(float(logp[action]))
            values.append(value)
            rewards.append(result.reward)
            dones.append(result.done)
            steps += 1
            if result.done:
                break
            if steps >= total_steps:
                next_obs = result.observation
                _, bootstrap, mem_state = model.act(next_obs, mem_state)
                break
            obs = result.observation
        trajectories.append(Trajectory(
            observations=obs_list,
            actions=np.asarray(actions, dtype=np.int64),
            log_probs=np.asarray(log_probs, dtype=_f32),
            values=np.asarray(values, dtype=_f32),
            rewards=np.asarray(rewards, dtype=_f32),
            dones=np.asarray(dones, dtype=bool),
            episode_id=episode_id,
            bootstrap_value=float(bootstrap),
            next_observation=next_obs,
            replay_state=mem_state if isinstance(mem_state, MemoryState) else None,
        ))
        episode_id += 1
    return trajectories


def compute_gae(
    traj: Trajectory,
    gamma: float,
    lam: float,
    values: np.ndarray | None = None,
    bootstrap: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and value targets for one episode.

    Uses the trajectory's recorded values/bootstrap unless fresher ones are
    supplied (the updaters pass values recomputed with current parameters).
    """
    v = np.ascontiguousarray(traj.values if values is None else values, dtype=_f32)
    last = traj.bootstrap_value if bootstrap is None else bootstrap
    adv = kernels.gae_scan(
        np.ascontiguousarray(traj.rewards, dtype=_f32), v, float(last),
        float(gamma), float(lam))
    return adv, adv + v


def evaluate(
    model: PolicyModel,
    env_factory: Callable[[], object],
    episodes: int,
    seed: int,
    greedy: bool = False,
) -> tuple[float, list[float]]:
    """Mean return and per-episode returns; empty when episodes == 0."""
    if episodes == 0:
        return float("nan"), []
    env = env_factory()
    rng = np.random.default_rng(seed)
    returns: list[float] = []
    for _ in range(episodes):
        obs = env.reset(seed=int(rng.integers(2**62))).observation
        mem_state = model.module.initial_state()
        total = 0.0
        while True:
            logits, _, mem_state = model.act(obs, mem_state)
            if greedy:
                action = int(np.argmax(logits))
            else:
                action = _sample_categorical(rng, _log_softmax_np(logits))
            result = env.step(action)
            total += result.reward
            if result.done:
                break
            obs = result.observation
        returns.append(total)
    return float(np.mean(returns)), returns


# ---------------------------------------------------------------------------
# update machinery


def group_episodes(lengths: Sequence[int], target: int) -> list[list[int]]:
    """Split an episode ordering into whole-episode unions nearest target steps."""
    groups: list[list[int]] = []
    cur: list[int] = []
    cur_len = 0
    for i, length in enumerate(lengths):
        if cur and cur_len + length > target:
            if abs(cur_len + length - target) < abs(cur_len - target):
                cur.append(i)
                groups.append(cur)
            else:
                groups.append(cur)
                cur = [i]
                cur_len = length
                continue
            cur = []
            cur_len = 0
        else:
            cur.append(i)
            cur_len += length
            if cur_len >= target:
                groups.append(cur)
                cur = []
                cur_len = 0
    if cur:
        groups.append(cur)
    return groups


@dataclass
class _EpisodeData:
    """Per-episode constants prepared once per update from the old policy."""

    traj: Trajectory
    old_log_prob_rows: np.ndarray  # (T, A)
    old_taken: np.ndarray          # (T,)
    old_values: np.ndarray         # (T,)
    advantages: np.ndarray         # (T,), normalized later for PPO
    returns: np.ndarray            # (T,)


def _replay_inputs(traj: Trajectory) -> tuple[list[Observation], MemoryState | None]:
    """Observations (plus bootstrap observation when truncated) to replay."""
    obs = list(traj.observations)
    if traj.next_observation is not None:
        obs.append(traj.next_observation)
    return obs, traj.replay_state


def _prepare_episodes(
    model: PolicyModel, trajectories: Sequence[Trajectory], config: TrainConfig
) -> list[_EpisodeData]:
    prepared = []
    for traj in trajectories:
        obs, state = _replay_inputs(traj)
        logits_t, values_t = model.episode_outputs(obs, state)
        logits = logits_t.data
        values = values_t.data[:, 0]
        n = traj.length
        log_rows = _log_softmax_np(logits[:n])
        taken = log_rows[np.arange(n), traj.actions]
        old_values = values[:n]
        bootstrap = float(values[n]) if traj.next_observation is not None else 0.0
        adv, ret = compute_gae(traj, config.gamma, config.gae_lambda,
                               values=old_values, bootstrap=bootstrap)
        prepared.append(_EpisodeData(traj, log_rows, taken, old_values, adv, ret))
    return prepared


def _minibatch_forward(
    model: PolicyModel, eps: Sequence[_EpisodeData]
) -> tuple[T.Tensor, T.Tensor, np.ndarray]:
    """Concatenated (B, A) logits, (B,) values and action indices."""
    logit_parts = []
    value_parts = []
    actions = []
    for ep in eps:
        obs, state = _replay_inputs(ep.traj)
        logits_t, values_t = model.episode_outputs(obs, state)
        n = ep.traj.length
        if len(obs) > n:
            keep = np.arange(n)
            logits_t = T.gather_rows(logits_t, keep)
            values_t = T.gather_rows(values_t, keep)
        logit_parts.append(logits_t)
        value_parts.append(values_t)
        actions.append(ep.traj.actions)
    logits = T.concat_rows(logit_parts) if len(logit_parts) > 1 else logit_parts[0]
    values2d = T.concat_rows(value_parts) if len(value_parts) > 1 else value_parts[0]
    values = T.reshape(values2d, (values2d.data.shape[0],))
    return logits, values, np.concatenate(actions)


def ppo_update(
    model: PolicyModel,
    trajectories: Sequence[Trajectory],
    config: TrainConfig,
    rng: np.random.Generator,
    kl_coef: float = KL_COEF_INIT,
) -> tuple[dict, float]:
    """Clipped-surrogate PPO over whole-episode minibatches.

    Runs ``sgd_iters`` passes of shuffled minibatches; the loss combines the
    clipped policy surrogate, a clip-corrected value loss, an entropy bonus,
    and an adaptive KL penalty whose coefficient doubles when the measured
    KL exceeds twice the target and halves below half of it.
    """
    if not trajectories:
        raise ValueError("ppo_update: empty batch")
    episodes = _prepare_episodes(model, trajectories, config)
    if config.normalize_advantages in (None, True):
        all_adv = np.concatenate([ep.advantages for ep in episodes]).astype(np.float64)
        mean = all_adv.mean()
        std = all_adv.std()
        for ep in episodes:
            ep.advantages = ((ep.advantages - mean) / (std + ADV_NORM_EPS)).astype(_f32)

    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "grad_norm": 0.0}
    n_batches = 0
    kl_last_iter = 0.0
    for it in range(config.sgd_iters):
        order = rng.permutation(len(episodes))
        groups = group_episodes([episodes[i].traj.length for i in order],
                                config.minibatch_size)
        kl_sum = 0.0
        for group in groups:
            eps = [episodes[order[g]] for g in group]
            with T.Tape() as tape:
                logits, values, actions = _minibatch_forward(model, eps)
                log_rows = T.log_softmax_rows(logits)
                log_taken = T.take_per_row(log_rows, actions)
                old_taken = T.Tensor(np.concatenate([ep.old_taken for ep in eps]))
                adv = T.Tensor(np.concatenate([ep.advantages for ep in eps]))
                ratio = T.exp(T.sub(log_taken, old_taken))
                surr = T.minimum(
                    T.mul(ratio, adv),
                    T.mul(T.clip(ratio, 1.0 - config.ppo_clip, 1.0 + config.ppo_clip), adv))
                policy_loss = T.neg(T.reduce_mean(surr))

                returns = T.Tensor(np.concatenate([ep.returns for ep in eps]))
                v_old = T.Tensor(np.concatenate([ep.old_values for ep in eps]))
                v_clipped = T.add(
                    v_old, T.clip(T.sub(values, v_old), -config.vf_clip, config.vf_clip))
                value_loss = T.reduce_mean(T.maximum(
                    T.square(T.sub(values, returns)),
                    T.square(T.sub(v_clipped, returns))))

                probs = T.exp(log_rows)
                entropy = T.neg(T.reduce_mean(T.reduce_sum(T.mul(probs, log_rows), axis=1)))

                old_rows = np.concatenate([ep.old_log_prob_rows for ep in eps])
                kl = T.reduce_mean(T.reduce_sum(
                    T.mul(T.Tensor(np.exp(old_rows)),
                          T.sub(T.Tensor(old_rows), log_rows)), axis=1))

                loss = T.add(
                    T.add(policy_loss, T.scale(value_loss, config.vf_coef)),
                    T.add(T.scale(entropy, -config.ent_coef), T.scale(kl, kl_coef)))
                T.backward(loss)
            norm = optimizer_step(model.store, config.optimizer, config.lr, config.grad_clip)
            totals["policy_loss"] += policy_loss.item()
            totals["value_loss"] += value_loss.item()
            totals["entropy"] += entropy.item()
            totals["grad_norm"] += norm
            kl_sum += kl.item()
            n_batches += 1
        kl_last_iter = kl_sum / len(groups)

    if kl_last_iter > 2.0 * config.kl_target:
        kl_coef *= 2.0
    elif kl_last_iter < config.kl_target / 2.0:
        kl_coef *= 0.5
    metrics = {k: v / n_batches for k, v in totals.items()}
    metrics["kl"] = kl_last_iter
    metrics["kl_coef"] = kl_coef
    return metrics, kl_coef


def a2c_update(
    model: PolicyModel,
    trajectories: Sequence[Trajectory],
    config: TrainConfig,
) -> dict:
    """One synchronous gradient step on the full batch.

    loss = -mean(log pi(a|b) * A) + vf_coef * value MSE - ent_coef * entropy,
    with advantages treated as constants (no normalization).
    """
    if not trajectories:
        raise ValueError("a2c_update: empty batch")
    with T.Tape() as tape:
        logit_parts = []
        value_parts = []
        actions = []
        adv_list = []
        ret_list = []
        for traj in trajectories:
            obs, state = _replay_inputs(traj)
            logits_t, values_t = model.episode_outputs(obs, state)
            n = traj.length
            if len(obs) > n:
                keep = np.arange(n)
                bootstrap = float(values_t.data[n, 0])
                logits_t = T.gather_rows(logits_t, keep)
                values_t = T.gather_rows(values_t, keep)
            else:
                bootstrap = 0.0
            adv, ret = compute_gae(traj, config.gamma, config.gae_lambda,
                                   values=values_t.data[:, 0], bootstrap=bootstrap)
            adv_list.append(adv)
            ret_list.append(ret)
            logit_parts.append(logits_t)
            value_parts.append(values_t)
            actions.append(traj.actions)
        logits = T.concat_rows(logit_parts) if len(logit_parts) > 1 else logit_parts[0]
        values2d = T.concat_rows(value_parts) if len(value_parts) > 1 else value_parts[0]
        values = T.reshape(values2d, (values2d.data.shape[0],))
        action_idx = np.concatenate(actions)

        log_rows = T.log_softmax_rows(logits)
        log_taken = T.take_per_row(log_rows, action_idx)
        adv_const = T.Tensor(np.concatenate(adv_list))
        policy_loss = T.neg(T.reduce_mean(T.mul(log_taken, adv_const)))
        returns = T.Tensor(np.concatenate(ret_list))
        value_loss = T.reduce_mean(T.square(T.sub(values, returns)))
        probs = T.exp(log_rows)
        entropy = T.neg(T.reduce_mean(T.reduce_sum(T.mul(probs, log_rows), axis=1)))
        loss = T.add(
            T.add(policy_loss, T.scale(value_loss, config.vf_coef)),
            T.scale(entropy, -config.ent_coef))
        T.backward(loss)
    norm = optimizer_step(model.store, config.optimizer, config.lr, config.grad_clip)
    return {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "kl": 0.0,
        "grad_norm": norm,
    }

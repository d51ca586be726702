"""Experiment runner: seeded training loops, CSV metrics, checkpoints.

Each (config, seed) pair trains in-process and streams one CSV row per
iteration (one collected batch plus one update phase). A JSON manifest is
written atomically before any training starts and flipped to complete at
the end, so an interrupted run is recognizable by its status.
"""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.stats

from . import __version__
from .baselines import LSTMMemory, MLPMemory, baseline_param_count
from .config import ConfigError, ExperimentConfig, serialize_config
from .envs import CardGameEnv, CartpoleEnv
from .gcm import GCM, GCMConfig, gcm_param_count
from .optim import save_checkpoint
from .rl import KL_COEF_INIT, PolicyModel, a2c_update, collect_rollouts, ppo_update

OUT_ROOT_ENV = "GCMEM_OUT_ROOT"

CSV_COLUMNS = ("iteration", "env_steps", "episodes", "mean_return", "min_return",
               "max_return", "policy_loss", "value_loss", "entropy", "kl",
               "grad_norm", "wall_clock_s")


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; aborting beats writing NaN curves."""


def resolve_out_dir(out_dir: str, out_root: str | None = None) -> str:
    if os.path.isabs(out_dir):
        return out_dir
    root = out_root or os.environ.get(OUT_ROOT_ENV) or os.getcwd()
    return os.path.join(root, out_dir)


def build_env_factory(config: ExperimentConfig) -> Callable[[], object]:
    env = config.env
    if env.kind == "cartpole":
        return lambda: CartpoleEnv()
    return lambda: CardGameEnv(n=env.cards, episode_limit=env.episode_limit)


def build_model(config: ExperimentConfig, seed: int) -> PolicyModel:
    env = build_env_factory(config)()
    mem = config.memory
    init_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    if mem.kind == "gcm":
        module = GCM(GCMConfig(
            input_dim=env.obs_dim,
            hidden_size=mem.hidden,
            num_layers=mem.layers,
            aggregation=mem.aggregation,
            prior=mem.prior,
        ), rng=init_rng)
    elif mem.kind == "mlp":
        module = MLPMemory(env.obs_dim, mem.hidden, rng=init_rng)
    else:
        module = LSTMMemory(env.obs_dim, mem.hidden, rng=init_rng)
    return PolicyModel(module, env.action_count, rng=init_rng)


@dataclass
class RunManifest:
    experiment: str
    code_version: str
    config: str
    seeds: list[int]
    outputs: dict[str, dict[str, str]]
    status: str = "incomplete"

    def write(self, path: str) -> None:
        blob = json.dumps(asdict(self), indent=2) + "\n"
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def _fmt(value: float) -> str:
    return f"{value:.8g}"


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    out_root: str | None = None,
    on_iteration: Callable[[dict], None] | None = None,
) -> dict[str, str]:
    """Train one seed to completion; returns the paths it wrote."""
    out_dir = resolve_out_dir(config.out_dir, out_root)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"seed{seed}.csv")
    ckpt_path = os.path.join(out_dir, f"seed{seed}.ckpt")

    model = build_model(config, seed)
    env_factory = build_env_factory(config)
    trainer = config.trainer
    collect_rng, update_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)[1:])

    kl_coef = KL_COEF_INIT
    env_steps = 0
    iteration = 0
    solve_streak = 0
    with open(csv_path, "w") as csv:
        csv.write(",".join(CSV_COLUMNS) + "\n")
        csv.flush()
        while env_steps < config.total_env_steps:
            iteration += 1
            started = time.perf_counter()
            trajectories = collect_rollouts(
                model, env_factory, trainer.batch_size,
                seed=int(collect_rng.integers(2**62)))
            if trainer.algorithm == "ppo":
                metrics, kl_coef = ppo_update(
                    model, trajectories, trainer, update_rng, kl_coef)
            else:
                metrics = a2c_update(model, trajectories, trainer)
            if not all(math.isfinite(metrics[k])
                       for k in ("policy_loss", "value_loss", "entropy")):
                raise TrainingDiverged(
                    f"non-finite loss at iteration {iteration} (seed {seed}): {metrics}")
            env_steps += trainer.batch_size
            finished = [t.episode_return for t in trajectories if t.complete]
            if finished:
                mean_ret, min_ret, max_ret = (
                    float(np.mean(finished)), min(finished), max(finished))
            else:
                mean_ret = min_ret = max_ret = float("nan")
            row = {
                "iteration": iteration,
                "env_steps": env_steps,
                "episodes": len(finished),
                "mean_return": mean_ret,
                "min_return": min_ret,
                "max_return": max_ret,
                "policy_loss": metrics["policy_loss"],
                "value_loss": metrics["value_loss"],
                "entropy": metrics["entropy"],
                "kl": metrics["kl"],
                "grad_norm": metrics["grad_norm"],
                "wall_clock_s": time.perf_counter() - started,
            }
            csv.write(",".join(
                str(row[c]) if c in ("iteration", "env_steps", "episodes")
                else _fmt(row[c]) for c in CSV_COLUMNS) + "\n")
            csv.flush()
            if on_iteration is not None:
                on_iteration(row)
            if iteration % config.checkpoint_every == 0:
                save_checkpoint(model.store, ckpt_path)
            if config.stop_return is not None:
                solve_streak = solve_streak + 1 if mean_ret >= config.stop_return else 0
                if solve_streak >= config.stop_patience:
                    break
    save_checkpoint(model.store, ckpt_path)
    return {"csv": csv_path, "checkpoint": ckpt_path}


def run(
    config: ExperimentConfig,
    seeds: list[int] | None = None,
    out_root: str | None = None,
    on_iteration: Callable[[dict], None] | None = None,
) -> RunManifest:
    """Run every seed of an experiment under a single manifest."""
    seeds = list(config.seeds) if seeds is None else list(seeds)
    out_dir = resolve_out_dir(config.out_dir, out_root)
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest = RunManifest(
        experiment=config.name,
        code_version=__version__,
        config=serialize_config(config),
        seeds=seeds,
        outputs={},
        status="incomplete",
    )
    manifest.write(manifest_path)
    for seed in seeds:
        manifest.outputs[str(seed)] = run_experiment(config, seed, out_root, on_iteration)
        manifest.write(manifest_path)
    manifest.status = "complete"
    manifest.write(manifest_path)
    return manifest


def audit_run_dir(out_dir: str) -> None:
    """Check a finished run directory holds exactly the expected files."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"{out_dir}: missing manifest.json")
    manifest = RunManifest.read(manifest_path)
    expected = {"manifest.json"}
    for seed in manifest.seeds:
        for kind in ("csv", "ckpt"):
            name = f"seed{seed}.{kind}"
            if not os.path.exists(os.path.join(out_dir, name)):
                raise FileNotFoundError(f"{out_dir}: missing {name}")
            expected.add(name)
    actual = {f for f in os.listdir(out_dir) if not f.startswith(".")}
    extra = actual - expected
    if extra:
        raise ValueError(f"{out_dir}: unexpected files {sorted(extra)}")


# ---------------------------------------------------------------------------
# summaries


def read_metrics_csv(path: str) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {header}")
    data = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def summarize(csv_paths: list[str]) -> list[dict[str, float]]:
    """Cross-seed mean and 90% t-interval of mean_return per iteration."""
    if not csv_paths:
        raise ValueError("summarize: need at least one CSV")
    tables = [read_metrics_csv(p) for p in csv_paths]
    base_iter = tables[0]["iteration"]
    for path, tab in zip(csv_paths[1:], tables[1:]):
        if tab["iteration"].shape != base_iter.shape or not np.array_equal(
                tab["iteration"], base_iter):
            raise ValueError(
                f"iteration grids do not align: {csv_paths[0]} vs {path}")
    n = len(tables)
    if n == 1:
        print("summarize: single seed, interval degenerates to the mean",
              file=sys.stderr)
    returns = np.stack([tab["mean_return"] for tab in tables])
    means = returns.mean(axis=0)
    if n > 1:
        sd = returns.std(axis=0, ddof=1)
        half = scipy.stats.t.ppf(0.95, n - 1) * sd / math.sqrt(n)
    else:
        half = np.zeros_like(means)
    rows = []
    for i in range(means.shape[0]):
        rows.append({
            "iteration": int(base_iter[i]),
            "env_steps": int(tables[0]["env_steps"][i]),
            "n_seeds": n,
            "mean_return_mean": float(means[i]),
            "mean_return_ci_lo": float(means[i] - half[i]),
            "mean_return_ci_hi": float(means[i] + half[i]),
        })
    return rows


def summary_to_csv(rows: list[dict[str, float]]) -> str:
    cols = ("iteration", "env_steps", "n_seeds", "mean_return_mean",
            "mean_return_ci_lo", "mean_return_ci_hi")
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(
            str(row[c]) if c in ("iteration", "env_steps", "n_seeds")
            else _fmt(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def count_params(config: ExperimentConfig, hidden_sizes=(8, 16, 32)) -> list[dict]:
    """Per-module totals (memory operator plus both heads) per hidden size."""
    env = build_env_factory(config)()
    d, n_actions = env.obs_dim, env.action_count
    rows = []
    for kind in ("gcm", "mlp", "lstm"):
        for z in hidden_sizes:
            if kind == "gcm":
                module = gcm_param_count(GCMConfig(
                    input_dim=d, hidden_size=z, num_layers=config.memory.layers,
                    aggregation=config.memory.aggregation))
            else:
                module = baseline_param_count(kind, d, z)
            heads = (z * n_actions + n_actions) + (z + 1)
            rows.append({"module": kind, "hidden": z, "input_dim": d,
                         "memory_params": module, "head_params": heads,
                         "total_params": module + heads})
    return rows

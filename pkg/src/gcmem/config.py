"""Declarative experiment configs: strict parser, presets, prior language.

The format is line-oriented: ``[section]`` headers, ``key = value`` lines,
``#`` comments. Unknown sections or keys are rejected outright so a typo
cannot silently fall back to a default. A ``preset`` key inside
``[experiment]`` fills in the named experiment's defaults first; explicit
keys then override them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any

from .envs import DEFAULT_EPISODE_LIMITS
from .graph import And, Empty, Identity, LatentSim, Or, Prior, Spatial, Temporal
from .rl import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


# ---------------------------------------------------------------------------
# prior mini-language


_TOKEN_RE = re.compile(r"\s*([A-Za-z_][A-Za-z_0-9]*|[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?|[(),])")


def _tokenize_prior(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ConfigError(f"bad character in prior expression at column {pos + 1}")
        tokens.append((m.group(1), m.start(1)))
        pos = m.end()
    return tokens


class _PriorParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize_prior(text)
        self.pos = 0

    def _peek(self) -> str | None:
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def _next(self, expect: str | None = None) -> str:
        if self.pos >= len(self.tokens):
            raise ConfigError(f"prior expression ended early: {self.text!r}")
        tok, col = self.tokens[self.pos]
        self.pos += 1
        if expect is not None and tok != expect:
            raise ConfigError(f"expected {expect!r} at column {col + 1} of prior expression")
        return tok

    def parse(self) -> Prior:
        prior = self._expr()
        if self.pos != len(self.tokens):
            tok, col = self.tokens[self.pos]
            raise ConfigError(f"trailing {tok!r} at column {col + 1} of prior expression")
        return prior

    def _expr(self) -> Prior:
        name = self._next().lower()
        if name == "empty":
            return Empty()
        if name == "temporal":
            self._next("(")
            k = self._number()
            self._next(")")
            if k != int(k) or int(k) < 1:
                raise ConfigError(f"temporal offset must be a positive integer, got {k}")
            return Temporal(int(k))
        if name == "spatial":
            self._next("(")
            r = self._number()
            self._next(")")
            if not r > 0:
                raise ConfigError(f"spatial radius must be positive, got {r}")
            return Spatial(r)
        if name == "latentsim":
            self._next("(")
            metric = self._next()
            self._next(",")
            thr = self._number()
            self._next(")")
            if metric not in ("l2", "cosine"):
                raise ConfigError(f"latentsim metric must be l2 or cosine, got {metric!r}")
            if not thr > 0:
                raise ConfigError(f"latentsim threshold must be positive, got {thr}")
            return LatentSim(metric, thr)
        if name == "identity":
            self._next("(")
            a = self._next()
            self._next(",")
            b = self._next()
            self._next(")")
            return Identity(a, b)
        if name in ("or", "and"):
            self._next("(")
            children = [self._expr()]
            while self._peek() == ",":
                self._next(",")
                children.append(self._expr())
            self._next(")")
            return Or(*children) if name == "or" else And(*children)
        raise ConfigError(f"unknown prior {name!r} in expression {self.text!r}")

    def _number(self) -> float:
        tok = self._next()
        try:
            return float(tok)
        except ValueError:
            raise ConfigError(f"expected a number in prior expression, got {tok!r}") from None


def parse_prior(text: str) -> Prior:
    """Parse expressions like or(temporal(1), identity(pointer_value, faceup_value))."""
    return _PriorParser(text).parse()


# ---------------------------------------------------------------------------
# experiment config


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    cards: int = 8
    episode_limit: int | None = None

    def __post_init__(self):
        if self.kind not in ("cartpole", "cardgame"):
            raise ConfigError(f"unknown env kind {self.kind!r}")
        if self.kind == "cardgame":
            if self.cards % 2 != 0 or self.cards < 2:
                raise ConfigError(f"card count must be even and >= 2, got {self.cards}")
            if self.episode_limit is None and self.cards not in DEFAULT_EPISODE_LIMITS:
                raise ConfigError(f"episode_limit required for {self.cards} cards")


@dataclass(frozen=True)
class MemorySpec:
    kind: str
    hidden: int = 32
    layers: int = 2
    aggregation: str = "sum"
    prior: Prior = field(default_factory=Empty)

    def __post_init__(self):
        if self.kind not in ("gcm", "mlp", "lstm"):
            raise ConfigError(f"unknown memory kind {self.kind!r}")
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("hidden and layers must be >= 1")
        if self.aggregation not in ("sum", "mean"):
            raise ConfigError(f"aggregation must be sum or mean, got {self.aggregation!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env: EnvSpec
    memory: MemorySpec
    trainer: TrainConfig
    seeds: tuple[int, ...] = (0, 1, 2)
    total_env_steps: int = 1_000_000
    out_dir: str = "runs/default"
    stop_return: float | None = None
    stop_patience: int = 5
    checkpoint_every: int = 25


_SECTIONS = ("experiment", "env", "memory", "trainer")

_KEYS: dict[str, set[str]] = {
    "experiment": {"name", "preset", "seeds", "total_env_steps", "out_dir",
                   "stop_return", "stop_patience", "checkpoint_every"},
    "env": {"kind", "cards", "episode_limit"},
    "memory": {"kind", "hidden", "layers", "aggregation", "prior"},
    "trainer": {"algorithm", "gamma", "gae_lambda", "vf_coef", "ent_coef",
                "grad_clip", "lr", "batch_size", "minibatch_size", "sgd_iters",
                "ppo_clip", "vf_clip", "kl_target", "optimizer"},
}

# appendix-table trainer values for the two experiments
_PPO_CARTPOLE = {
    "algorithm": "ppo", "gamma": "0.99", "gae_lambda": "1.0", "vf_coef": "1e-5",
    "ent_coef": "0.0", "grad_clip": "40", "vf_clip": "10.0", "kl_target": "0.01",
    "ppo_clip": "0.3", "lr": "5e-5", "sgd_iters": "35", "batch_size": "5000",
    "minibatch_size": "128",
}
_A2C_CARDGAME = {
    "algorithm": "a2c", "gamma": "0.99", "gae_lambda": "1.0", "vf_coef": "0.05",
    "ent_coef": "0.001", "grad_clip": "40", "lr": "0.0005", "batch_size": "2000",
}

_CARD_PRIOR = "or(temporal(1), temporal(2), identity(pointer_value, faceup_value))"

PRESETS: dict[str, dict[str, dict[str, str]]] = {}


def _add_preset(name: str, env: dict, memory: dict, trainer: dict, experiment: dict):
    PRESETS[name] = {
        "experiment": {"name": name, **experiment},
        "env": env,
        "memory": memory,
        "trainer": trainer,
    }


for _z in (8, 16, 32):
    _add_preset(
        f"cartpole-ppo-gcm{_z}",
        env={"kind": "cartpole"},
        memory={"kind": "gcm", "hidden": str(_z), "layers": "2", "aggregation": "sum",
                "prior": "or(temporal(1), temporal(2))"},
        trainer=_PPO_CARTPOLE,
        experiment={"seeds": "0 1 2", "total_env_steps": "1500000",
                    "out_dir": f"runs/cartpole-ppo-gcm{_z}",
                    "stop_return": "195", "stop_patience": "5"},
    )
    for _kind in ("mlp", "lstm"):
        _add_preset(
            f"cartpole-ppo-{_kind}{_z}",
            env={"kind": "cartpole"},
            memory={"kind": _kind, "hidden": str(_z)},
            trainer=_PPO_CARTPOLE,
            experiment={"seeds": "0 1 2", "total_env_steps": "1500000",
                        "out_dir": f"runs/cartpole-ppo-{_kind}{_z}",
                        "stop_return": "195", "stop_patience": "5"},
        )
    _add_preset(
        f"cardgame-a2c-gcm{_z}",
        env={"kind": "cardgame", "cards": "8", "episode_limit": "30"},
        memory={"kind": "gcm", "hidden": str(_z), "layers": "2", "aggregation": "sum",
                "prior": _CARD_PRIOR},
        trainer=_A2C_CARDGAME,
        experiment={"seeds": "0 1 2", "total_env_steps": "2000000",
                    "out_dir": f"runs/cardgame-a2c-gcm{_z}"},
    )
    for _kind in ("mlp", "lstm"):
        _add_preset(
            f"cardgame-a2c-{_kind}{_z}",
            env={"kind": "cardgame", "cards": "8", "episode_limit": "30"},
            memory={"kind": _kind, "hidden": str(_z)},
            trainer=_A2C_CARDGAME,
            experiment={"seeds": "0 1 2", "total_env_steps": "2000000",
                        "out_dir": f"runs/cardgame-a2c-{_kind}{_z}"},
        )


def _raw_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    """Parse the line format into {section: {key: (value, line_no)}}."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", line_no)
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]", line_no)
            current = name
            sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line_no)
        if current is None:
            raise ConfigError("key outside any [section]", line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS[current]:
            raise ConfigError(f"unknown key {key!r} in [{current}]", line_no)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", line_no)
        sections[current][key] = (value, line_no)
    return sections


def _to_int(value: str, key: str, line: int | None) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}", line) from None


def _to_float(value: str, key: str, line: int | None) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}", line) from None


def parse_config(text: str) -> ExperimentConfig:
    sections = _raw_sections(text)
    exp = sections.get("experiment", {})
    if "preset" in exp:
        preset_name, line = exp["preset"]
        preset = PRESETS.get(preset_name)
        if preset is None:
            known = ", ".join(sorted(PRESETS))
            raise ConfigError(f"unknown preset {preset_name!r} (known: {known})", line)
        merged: dict[str, dict[str, tuple[str, int | None]]] = {
            s: {k: (v, None) for k, v in preset.get(s, {}).items()} for s in _SECTIONS}
        for s, keys in sections.items():
            for k, v in keys.items():
                if k != "preset":
                    merged.setdefault(s, {})[k] = v
        sections = merged

    def get(section: str, key: str, default: str | None = None) -> tuple[str | None, int | None]:
        if key in sections.get(section, {}):
            return sections[section][key]
        return default, None

    kind, line = get("env", "kind")
    if kind is None:
        raise ConfigError("missing env kind ([env] kind = cartpole|cardgame)")
    cards_s, cline = get("env", "cards", "8")
    limit_s, lline = get("env", "episode_limit")
    env = EnvSpec(
        kind=kind,
        cards=_to_int(cards_s, "cards", cline),
        episode_limit=None if limit_s is None else _to_int(limit_s, "episode_limit", lline),
    )

    mkind, _ = get("memory", "kind")
    if mkind is None:
        raise ConfigError("missing memory kind ([memory] kind = gcm|mlp|lstm)")
    hidden_s, hline = get("memory", "hidden", "32")
    layers_s, lyline = get("memory", "layers", "2")
    agg_s, _ = get("memory", "aggregation", "sum")
    prior_s, pline = get("memory", "prior", "empty")
    try:
        prior = parse_prior(prior_s)
    except ConfigError as err:
        raise ConfigError(str(err), pline) from None
    memory = MemorySpec(
        kind=mkind,
        hidden=_to_int(hidden_s, "hidden", hline),
        layers=_to_int(layers_s, "layers", lyline),
        aggregation=agg_s,
        prior=prior,
    )

    algo, _ = get("trainer", "algorithm")
    if algo is None:
        raise ConfigError("missing trainer algorithm ([trainer] algorithm = ppo|a2c)")
    tkw: dict[str, Any] = {"algorithm": algo}
    opt, _ = get("trainer", "optimizer")
    if opt is not None:
        tkw["optimizer"] = opt
    for key in ("gamma", "gae_lambda", "vf_coef", "ent_coef", "grad_clip", "lr",
                "ppo_clip", "vf_clip", "kl_target"):
        value, vline = get("trainer", key)
        if value is not None:
            tkw[key] = _to_float(value, key, vline)
    for key in ("batch_size", "minibatch_size", "sgd_iters"):
        value, vline = get("trainer", key)
        if value is not None:
            tkw[key] = _to_int(value, key, vline)
    try:
        trainer = TrainConfig(**tkw)
    except ValueError as err:
        raise ConfigError(str(err)) from None

    name, _ = get("experiment", "name")
    if name is None:
        raise ConfigError("missing experiment name")
    seeds_s, sline = get("experiment", "seeds", "0 1 2")
    try:
        seeds = tuple(int(s) for s in seeds_s.split())
    except ValueError:
        raise ConfigError(f"seeds must be space-separated integers, got {seeds_s!r}", sline) from None
    if not seeds:
        raise ConfigError("seeds must list at least one seed", sline)
    total_s, tline = get("experiment", "total_env_steps", "1000000")
    out_dir, _ = get("experiment", "out_dir", f"runs/{name}")
    stop_s, _ = get("experiment", "stop_return")
    patience_s, paline = get("experiment", "stop_patience", "5")
    ckpt_s, ckline = get("experiment", "checkpoint_every", "25")
    return ExperimentConfig(
        name=name,
        env=env,
        memory=memory,
        trainer=trainer,
        seeds=seeds,
        total_env_steps=_to_int(total_s, "total_env_steps", tline),
        out_dir=out_dir,
        stop_return=None if stop_s is None else float(stop_s),
        stop_patience=_to_int(patience_s, "stop_patience", paline),
        checkpoint_every=_to_int(ckpt_s, "checkpoint_every", ckline),
    )


def serialize_config(cfg: ExperimentConfig) -> str:
    """Emit the line format; parse_config(serialize_config(c)) == c."""
    lines = ["[experiment]", f"name = {cfg.name}",
             f"seeds = {' '.join(str(s) for s in cfg.seeds)}",
             f"total_env_steps = {cfg.total_env_steps}",
             f"out_dir = {cfg.out_dir}"]
    if cfg.stop_return is not None:
        lines.append(f"stop_return = {cfg.stop_return}")
    lines.append(f"stop_patience = {cfg.stop_patience}")
    lines.append(f"checkpoint_every = {cfg.checkpoint_every}")
    lines += ["", "[env]", f"kind = {cfg.env.kind}"]
    if cfg.env.kind == "cardgame":
        lines.append(f"cards = {cfg.env.cards}")
        if cfg.env.episode_limit is not None:
            lines.append(f"episode_limit = {cfg.env.episode_limit}")
    lines += ["", "[memory]", f"kind = {cfg.memory.kind}",
              f"hidden = {cfg.memory.hidden}"]
    if cfg.memory.kind == "gcm":
        lines.append(f"layers = {cfg.memory.layers}")
        lines.append(f"aggregation = {cfg.memory.aggregation}")
        lines.append(f"prior = {cfg.memory.prior.describe()}")
    t = cfg.trainer
    lines += ["", "[trainer]", f"algorithm = {t.algorithm}", f"gamma = {t.gamma}",
              f"gae_lambda = {t.gae_lambda}", f"vf_coef = {t.vf_coef}",
              f"ent_coef = {t.ent_coef}", f"grad_clip = {t.grad_clip}", f"lr = {t.lr}",
              f"batch_size = {t.batch_size}", f"minibatch_size = {t.minibatch_size}",
              f"sgd_iters = {t.sgd_iters}", f"ppo_clip = {t.ppo_clip}",
              f"vf_clip = {t.vf_clip}", f"kl_target = {t.kl_target}",
              f"optimizer = {t.optimizer}"]
    return "\n".join(lines) + "\n"

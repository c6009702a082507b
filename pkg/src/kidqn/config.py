"""Run configuration and its flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

from .core import WorkspaceConfig
from .learner import LearnerConfig, TRAINABLE_METHODS
from .qfunc import ConvSpec, HeadSpec, NetConfig

RANDOM_ON_OBJECT = "random-on-object"
RANDOM_UNIFORM = "random-uniform"
METHODS = TRAINABLE_METHODS + (RANDOM_ON_OBJECT, RANDOM_UNIFORM)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    method: str = "ki-dqn"
    iterations: int = 5000
    seed: int = 0
    eval_seed: int = 12345
    eval_every: int = 200
    eval_scene_count: int = 50
    eval_trial_cap: int = 15
    output_dir: str = "runs/default"
    zoom: int = 8
    workspace: WorkspaceConfig = field(default_factory=WorkspaceConfig.desk)
    net: NetConfig = field(default_factory=NetConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.iterations < 0 or self.eval_every < 1 or self.eval_scene_count < 1 or self.eval_trial_cap < 1:
            raise ConfigError("iterations must be >= 0 and eval settings positive")
        if self.zoom < 1:
            raise ConfigError("zoom must be >= 1")
        try:
            self.net.check(self.workspace)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def trainable(self) -> bool:
        return self.method in TRAINABLE_METHODS

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        return format_config(self)

    def digest(self) -> str:
        """Digest of everything except the output directory."""
        return hashlib.sha256(format_config(self.replace(output_dir="")).encode()).hexdigest()


_TOP_KEYS = ("method", "iterations", "seed", "eval_seed", "eval_every", "eval_scene_count",
             "eval_trial_cap", "output_dir", "zoom")
_WS_KEYS = ("side_cm", "action_grid", "obs_grid", "rotations")
_LEARNER_KEYS = tuple(f.name for f in dataclasses.fields(LearnerConfig))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    lines = ["# run"]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in _TOP_KEYS]
    lines.append("# workspace")
    lines += [f"{k} = {_fmt(getattr(cfg.workspace, k))}" for k in _WS_KEYS]
    lines.append("# network")
    lines.append("trunk = " + ", ".join(f"{s.kernel}:{s.stride}:{s.out_channels}" for s in cfg.net.trunk))
    lines.append("head = " + ", ".join(str(h.out_channels) for h in cfg.net.head))
    lines.append("# learner")
    lines += [f"{k} = {_fmt(getattr(cfg.learner, k))}" for k in _LEARNER_KEYS]
    return "\n".join(lines) + "\n"


def _coerce(key: str, raw: str, proto):
    try:
        if isinstance(proto, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(proto, int):
            return int(raw)
        if isinstance(proto, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _parse_trunk(raw: str) -> Tuple[ConvSpec, ...]:
    specs = []
    for part in raw.split(","):
        try:
            k, s, c = (int(x) for x in part.strip().split(":"))
        except ValueError:
            raise ConfigError(f"trunk layers are kernel:stride:channels, got {part.strip()!r}") from None
        specs.append(ConvSpec(k, s, c))
    return tuple(specs)


def parse_config(text: str) -> RunConfig:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = val

    known = set(_TOP_KEYS) | set(_WS_KEYS) | set(_LEARNER_KEYS) | {"trunk", "head"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys: {unknown}")

    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
                for f in dataclasses.fields(RunConfig)}
    top = {k: _coerce(k, values[k], defaults[k]) for k in _TOP_KEYS if k in values}

    ws_kw = {}
    for k in ("side_cm", "action_grid", "obs_grid"):
        if k in values:
            ws_kw[k] = _coerce(k, values[k], getattr(defaults["workspace"], k))
    if "rotations" in values:
        try:
            ws_kw["rotations"] = tuple(float(x) for x in values["rotations"].split(","))
        except ValueError:
            raise ConfigError(f"bad rotations: {values['rotations']!r}") from None
    net_kw = {}
    if "trunk" in values:
        net_kw["trunk"] = _parse_trunk(values["trunk"])
    if "head" in values:
        try:
            net_kw["head"] = tuple(HeadSpec(int(x)) for x in values["head"].split(","))
        except ValueError:
            raise ConfigError(f"bad head: {values['head']!r}") from None
    lk = {k: _coerce(k, values[k], getattr(defaults["learner"], k)) for k in _LEARNER_KEYS if k in values}
    try:
        ws = dataclasses.replace(defaults["workspace"], **ws_kw)
        net = NetConfig(**net_kw) if net_kw else defaults["net"]
        learner = dataclasses.replace(defaults["learner"], **lk)
        return RunConfig(workspace=ws, net=net, learner=learner, **top)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)

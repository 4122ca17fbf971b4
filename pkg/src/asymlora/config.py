"""Declarative experiment configuration.

Plain INI-style text (sections of ``key = value`` lines) parsed with the
stdlib configparser: diff-friendly, dependency-free, and round-trippable.
``serialize`` emits a canonical form whose reparse yields an equal config;
the config hash in run manifests is the SHA-256 of that canonical form.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .adapters import ROUTING_MODES, SCHEMES
from .errors import ConfigError
from .training import OptimizerConfig


@dataclass
class ExperimentConfig:
    # [experiment]
    scheme: str = "asym_lora"
    schemes: list[str] = field(default_factory=lambda: list(SCHEMES))
    steps: int = 2000
    seeds: list[int] = field(default_factory=lambda: [1])
    out_dir: str = "runs/out"
    eval_batches: int = 16
    resume: str = ""
    checkpoint: str = ""
    # [model]
    d_in: int = 16
    hidden: int = 0
    d_out: int = 16
    rank: int = 4
    num_tasks: int = 3
    num_experts: int = 2
    scale: float = 1.0
    routing: str = "oracle"
    adapt_layers: Optional[list[int]] = None  # None = all layers
    # [data]
    commonality: float = 0.5
    conflict: float = 0.5
    noise_std: float = 0.1
    batch_size: int = 32
    teacher_rank: int = 0  # 0 = same as rank
    teacher_scale: float = 1.0
    export_samples: int = 1024
    # [optimizer]
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


def _parse_int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.split(",") if tok.strip()]


def _parse_layers(raw: str) -> Optional[list[int]]:
    if raw.strip().lower() == "all":
        return None
    return _parse_int_list(raw)


def _parse_schemes(raw: str) -> list[str]:
    if raw.strip().lower() == "all":
        return list(SCHEMES)
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


def _render_layers(v: Optional[list[int]]) -> str:
    return "all" if v is None else ",".join(str(i) for i in v)


def _render_list(v: list) -> str:
    return ",".join(str(i) for i in v)


# (section, key) -> (attribute path, parse, render). Key names are unique
# across sections so --set accepts bare keys.
_SCHEMA: dict[str, dict[str, tuple[str, object, object]]] = {
    "experiment": {
        "scheme": ("scheme", str, str),
        "schemes": ("schemes", _parse_schemes, _render_list),
        "steps": ("steps", int, str),
        "seeds": ("seeds", _parse_int_list, _render_list),
        "out_dir": ("out_dir", str, str),
        "eval_batches": ("eval_batches", int, str),
        "resume": ("resume", str, str),
        "checkpoint": ("checkpoint", str, str),
    },
    "model": {
        "d_in": ("d_in", int, str),
        "hidden": ("hidden", int, str),
        "d_out": ("d_out", int, str),
        "rank": ("rank", int, str),
        "num_tasks": ("num_tasks", int, str),
        "num_experts": ("num_experts", int, str),
        "scale": ("scale", float, repr),
        "routing": ("routing", str, str),
        "adapt_layers": ("adapt_layers", _parse_layers, _render_layers),
    },
    "data": {
        "commonality": ("commonality", float, repr),
        "conflict": ("conflict", float, repr),
        "noise_std": ("noise_std", float, repr),
        "batch_size": ("batch_size", int, str),
        "teacher_rank": ("teacher_rank", int, str),
        "teacher_scale": ("teacher_scale", float, repr),
        "export_samples": ("export_samples", int, str),
    },
    "optimizer": {
        "kind": ("optimizer.kind", str, str),
        "learning_rate": ("optimizer.learning_rate", float, repr),
        "beta1": ("optimizer.beta1", float, repr),
        "beta2": ("optimizer.beta2", float, repr),
        "epsilon": ("optimizer.epsilon", float, repr),
    },
}

_KEY_TO_SECTION = {
    key: section for section, keys in _SCHEMA.items() for key in keys
}


def _set_attr(cfg: ExperimentConfig, path: str, value) -> None:
    if path.startswith("optimizer."):
        setattr(cfg.optimizer, path.split(".", 1)[1], value)
    else:
        setattr(cfg, path, value)


def _get_attr(cfg: ExperimentConfig, path: str):
    if path.startswith("optimizer."):
        return getattr(cfg.optimizer, path.split(".", 1)[1])
    return getattr(cfg, path)


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; unknown sections/keys and bad values raise ConfigError."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"[{section}] {key}: unknown key")
            path, parse, _ = _SCHEMA[section][key]
            try:
                _set_attr(cfg, path, parse(raw))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: bad value {raw!r} ({exc})") from exc
    return cfg


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


def apply_override(cfg: ExperimentConfig, assignment: str) -> None:
    """Apply one ``key=value`` or ``section.key=value`` override in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    raw = raw.strip()
    if "." in key:
        section, key = key.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"override names unknown field {section}.{key}")
    else:
        section = _KEY_TO_SECTION.get(key)
        if section is None:
            raise ConfigError(f"override names unknown key {key!r}")
    path, parse, _ = _SCHEMA[section][key]
    try:
        _set_attr(cfg, path, parse(raw))
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: bad value {raw!r} ({exc})") from exc


def serialize(cfg: ExperimentConfig) -> str:
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (path, _, render) in keys.items():
            lines.append(f"{key} = {render(_get_attr(cfg, path))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize(cfg).encode("utf-8")).hexdigest()


def _layer_dims(cfg: ExperimentConfig) -> list[tuple[int, int]]:
    if cfg.hidden == 0:
        return [(cfg.d_in, cfg.d_out)]
    return [(cfg.d_in, cfg.hidden), (cfg.hidden, cfg.d_out)]


def validate(cfg: ExperimentConfig) -> None:
    """Range-check every field; raises ConfigError naming the offending field."""

    def bad(section: str, key: str, msg: str):
        raise ConfigError(f"[{section}] {key}: {msg}")

    if cfg.scheme not in SCHEMES:
        bad("experiment", "scheme", f"must be one of {SCHEMES}, got {cfg.scheme!r}")
    for s in cfg.schemes:
        if s not in SCHEMES:
            bad("experiment", "schemes", f"unknown scheme {s!r}")
    if not cfg.schemes:
        bad("experiment", "schemes", "must list at least one scheme")
    if cfg.steps < 1:
        bad("experiment", "steps", f"must be >= 1, got {cfg.steps}")
    if not cfg.seeds:
        bad("experiment", "seeds", "must list at least one seed")
    if cfg.eval_batches < 1:
        bad("experiment", "eval_batches", f"must be >= 1, got {cfg.eval_batches}")
    if cfg.d_in < 1:
        bad("model", "d_in", f"must be >= 1, got {cfg.d_in}")
    if cfg.d_out < 1:
        bad("model", "d_out", f"must be >= 1, got {cfg.d_out}")
    if cfg.hidden < 0:
        bad("model", "hidden", f"must be >= 0, got {cfg.hidden}")
    if cfg.num_tasks < 1:
        bad("model", "num_tasks", f"must be >= 1, got {cfg.num_tasks}")
    if cfg.num_experts < 1:
        bad("model", "num_experts", f"must be >= 1, got {cfg.num_experts}")
    if cfg.routing not in ROUTING_MODES:
        bad("model", "routing", f"must be one of {ROUTING_MODES}, got {cfg.routing!r}")
    dims = _layer_dims(cfg)
    if cfg.adapt_layers is not None:
        for idx in cfg.adapt_layers:
            if not 0 <= idx < len(dims):
                bad("model", "adapt_layers",
                    f"layer index {idx} out of range for {len(dims)} layers")
        adapted = [dims[i] for i in cfg.adapt_layers]
    else:
        adapted = dims
    if cfg.rank < 1:
        bad("model", "rank", f"must be >= 1, got {cfg.rank}")
    for d_in, d_out in adapted:
        if cfg.rank > min(d_in, d_out):
            bad("model", "rank",
                f"rank {cfg.rank} exceeds min(d_in, d_out) = {min(d_in, d_out)} "
                f"at an adapted layer")
    if not 0.0 <= cfg.commonality <= 1.0:
        bad("data", "commonality", f"must be in [0, 1], got {cfg.commonality}")
    if not 0.0 <= cfg.conflict <= 1.0:
        bad("data", "conflict", f"must be in [0, 1], got {cfg.conflict}")
    if cfg.noise_std < 0.0:
        bad("data", "noise_std", f"must be >= 0, got {cfg.noise_std}")
    if cfg.batch_size < 1:
        bad("data", "batch_size", f"must be >= 1, got {cfg.batch_size}")
    if cfg.teacher_rank < 0:
        bad("data", "teacher_rank", f"must be >= 0 (0 = adapter rank), got {cfg.teacher_rank}")
    if cfg.teacher_scale <= 0.0:
        bad("data", "teacher_scale", f"must be > 0, got {cfg.teacher_scale}")
    if cfg.export_samples < 1:
        bad("data", "export_samples", f"must be >= 1, got {cfg.export_samples}")
    opt = cfg.optimizer
    if opt.kind not in ("adam", "sgd"):
        bad("optimizer", "kind", f"must be adam or sgd, got {opt.kind!r}")
    if opt.learning_rate <= 0.0:
        bad("optimizer", "learning_rate", f"must be > 0, got {opt.learning_rate}")
    if not 0.0 <= opt.beta1 < 1.0:
        bad("optimizer", "beta1", f"must be in [0, 1), got {opt.beta1}")
    if not 0.0 <= opt.beta2 < 1.0:
        bad("optimizer", "beta2", f"must be in [0, 1), got {opt.beta2}")
    if opt.epsilon <= 0.0:
        bad("optimizer", "epsilon", f"must be > 0, got {opt.epsilon}")

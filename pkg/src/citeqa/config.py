"""Run configuration: flat key-value file with environment interpolation.

Format: one `key = value` per line, `#` starts a comment, ${VAR} expands
from the environment (intended for secrets so they stay off disk). Unknown
keys and invalid values are all collected and reported together.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import ACTIVATIONS, POS_MAPS, VARIANTS
from .errors import ConfigError

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class RunConfig:
    corpus: str = ""
    cache_dir: str = "cache"
    seed: int = 0
    chunk_len: int = 512
    context_top_n: int = 4  # inter-document edges kept per (chunk, cited doc)
    retrieve_top_n: int = 5  # subgraphs returned per query
    k1: float = 1.2
    b: float = 0.75
    pos_map: str = "floor"
    dense_provider: str = "hash"  # hash | remote
    dense_dim: int = 64
    dense_normalize: bool = False
    dense_endpoint: str = ""
    dense_model: str = ""
    encoder_variant: str = "mean-linear"
    encoder_layers: int = 2
    encoder_hidden: int = 128
    encoder_heads: int = 4
    encoder_activation: str = "tanh"
    train_epochs: int = 30
    train_lr: float = 1e-3
    train_negatives: int = 15
    train_val_fraction: float = 0.2
    train_weight_decay: float = 0.01
    lm_kind: str = "none"  # none | mock | remote
    lm_endpoint: str = ""
    lm_model: str = ""
    lm_script: str = ""
    eval_depth: int = 10
    answer_word_cap: int = 200

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_KEY_MAP = {
    "corpus": "corpus",
    "cache_dir": "cache_dir",
    "seed": "seed",
    "chunk.len": "chunk_len",
    "graph.top_n": "context_top_n",
    "retrieve.top_n": "retrieve_top_n",
    "sparse.k1": "k1",
    "sparse.b": "b",
    "sparse.pos_map": "pos_map",
    "dense.provider": "dense_provider",
    "dense.dim": "dense_dim",
    "dense.normalize": "dense_normalize",
    "dense.endpoint": "dense_endpoint",
    "dense.model": "dense_model",
    "encoder.variant": "encoder_variant",
    "encoder.layers": "encoder_layers",
    "encoder.hidden": "encoder_hidden",
    "encoder.heads": "encoder_heads",
    "encoder.activation": "encoder_activation",
    "train.epochs": "train_epochs",
    "train.lr": "train_lr",
    "train.negatives": "train_negatives",
    "train.val_fraction": "train_val_fraction",
    "train.weight_decay": "train_weight_decay",
    "lm.kind": "lm_kind",
    "lm.endpoint": "lm_endpoint",
    "lm.model": "lm_model",
    "lm.script": "lm_script",
    "eval.depth": "eval_depth",
    "answer.word_cap": "answer_word_cap",
}

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _interpolate(value: str, errors: list[str], key: str) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in os.environ:
            errors.append(f"{key}: environment variable {name} is not set")
            return ""
        return os.environ[name]

    return _ENV_RE.sub(sub, value)


def parse_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse, validate, and return the effective configuration.

    overrides (CLI flags) are applied after the file. All problems are
    reported in one ConfigError.
    """
    path = Path(path)
    errors: list[str] = []
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    config = RunConfig()
    field_types = {f.name: f.type for f in fields(RunConfig)}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected `key = value`")
            continue
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        attr = _KEY_MAP.get(key)
        if attr is None:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        value = _interpolate(value, errors, key)
        kind = field_types[attr]
        try:
            if kind in ("int", int):
                setattr(config, attr, int(value))
            elif kind in ("float", float):
                setattr(config, attr, float(value))
            elif kind in ("bool", bool):
                if value.lower() not in _BOOL_VALUES:
                    raise ValueError(value)
                setattr(config, attr, _BOOL_VALUES[value.lower()])
            else:
                setattr(config, attr, value)
        except ValueError:
            errors.append(f"{key}: cannot parse {value!r} as {kind}")

    for attr, value in (overrides or {}).items():
        setattr(config, attr, value)

    errors.extend(validate_config(config))
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return config


def validate_config(config: RunConfig) -> list[str]:
    errors = []
    if not config.corpus:
        errors.append("corpus: path is required")
    elif not Path(config.corpus).exists():
        errors.append(f"corpus: path {config.corpus!r} does not exist")
    for name, value in (
        ("chunk.len", config.chunk_len),
        ("graph.top_n", config.context_top_n),
        ("retrieve.top_n", config.retrieve_top_n),
        ("encoder.layers", config.encoder_layers),
        ("encoder.heads", config.encoder_heads),
        ("eval.depth", config.eval_depth),
        ("train.epochs", config.train_epochs),
        ("train.negatives", config.train_negatives),
        ("dense.dim", config.dense_dim),
    ):
        if value < 1:
            errors.append(f"{name}: must be >= 1, got {value}")
    if config.pos_map not in POS_MAPS:
        errors.append(f"sparse.pos_map: must be one of {POS_MAPS}, got {config.pos_map!r}")
    if config.dense_provider not in ("hash", "remote"):
        errors.append(f"dense.provider: must be hash or remote, got {config.dense_provider!r}")
    if config.dense_provider == "remote" and not config.dense_endpoint:
        errors.append("dense.endpoint: required for the remote provider")
    if config.encoder_variant not in VARIANTS:
        errors.append(f"encoder.variant: must be one of {VARIANTS}, got {config.encoder_variant!r}")
    if config.encoder_activation not in ACTIVATIONS:
        errors.append(f"encoder.activation: must be one of {ACTIVATIONS}, got {config.encoder_activation!r}")
    if config.encoder_variant == "attention":
        for width in (config.encoder_hidden, config.dense_dim):
            if width % config.encoder_heads != 0:
                errors.append(f"encoder.heads: {config.encoder_heads} must divide layer width {width}")
    if config.lm_kind not in ("none", "mock", "remote"):
        errors.append(f"lm.kind: must be none, mock, or remote, got {config.lm_kind!r}")
    if config.lm_kind == "mock" and config.lm_script and not Path(config.lm_script).exists():
        errors.append(f"lm.script: path {config.lm_script!r} does not exist")
    if config.lm_kind == "remote" and not config.lm_endpoint:
        errors.append("lm.endpoint: required for the remote client")
    if not (0.0 <= config.train_val_fraction < 1.0):
        errors.append(f"train.val_fraction: must be in [0, 1), got {config.train_val_fraction}")
    return errors

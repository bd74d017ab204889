"""Flat ``key=value`` config files shared by the CLI commands.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
Keys mirror the fields of the encoder, sparsing and training configs; the
sparsing mode and seed are spelled ``sparsing`` and ``sparsing_seed``.
"""
from __future__ import annotations

from dataclasses import replace

from depsan.encoder import EncoderConfig, parse_layer_set
from depsan.errors import ConfigError
from depsan.scaling import SparsingConfig
from depsan.toytask import TrainConfig, default_model_config

ENCODER_KEYS = {
    "n_layers": int,
    "deps_layers": parse_layer_set,
    "n_heads": int,
    "d_model": int,
    "d_ff": int,
    "sigma": float,
    "dropout": float,
    "max_len": int,
}
SPARSING_KEYS = {"sparsing": str, "k": int, "q": float, "sparsing_seed": int}
TRAIN_KEYS = {
    "steps": int,
    "batch_size": int,
    "lr": float,
    "min_length": int,
    "max_length": int,
    "vocab_size": int,
    "seed": int,
    "eval_every": int,
    "eval_size": int,
}
ALL_KEYS = {**ENCODER_KEYS, **SPARSING_KEYS, **TRAIN_KEYS}


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, value, f"{source}:{lineno}")
    return values


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), str(path))


def _convert(key, value, where):
    if key not in ALL_KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        return ALL_KEYS[key](value)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value {value!r} for {key}: {exc}") from None


def merge(file_values: dict | None, overrides: dict | None) -> dict:
    """Flags win over file values; ``None`` overrides are ignored."""
    out = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = value
    return out


def sparsing_config(values: dict, base: SparsingConfig | None = None) -> SparsingConfig:
    base = base or SparsingConfig()
    return SparsingConfig(
        mode=values.get("sparsing", base.mode),
        k=values.get("k", base.k),
        q=values.get("q", base.q),
        seed=values.get("sparsing_seed", base.seed),
    )


def encoder_config(values: dict, base: EncoderConfig | None = None) -> EncoderConfig:
    base = base or EncoderConfig()
    fields = {k: values[k] for k in ENCODER_KEYS if k in values}
    fields["sparsing"] = sparsing_config(values, base.sparsing)
    try:
        return replace(base, **fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def train_config(values: dict, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    model = encoder_config(values, base.model if base else default_model_config())
    fields = {k: values[k] for k in TRAIN_KEYS if k in values}
    return replace(base, model=model, **fields)


def dump_config(cfg: TrainConfig | EncoderConfig) -> str:
    """Render a config back to key=value text (round-trips through parse_config)."""
    from depsan.encoder import format_layer_set

    model = cfg.model if isinstance(cfg, TrainConfig) else cfg
    lines = [
        f"n_layers={model.n_layers}",
        f"deps_layers={format_layer_set(model.deps_layers)}",
        f"n_heads={model.n_heads}",
        f"d_model={model.d_model}",
        f"d_ff={model.d_ff}",
        f"sigma={model.sigma!r}",
        f"dropout={model.dropout!r}",
        f"max_len={model.max_len}",
        f"sparsing={model.sparsing.mode}",
        f"k={model.sparsing.k}",
        f"q={model.sparsing.q!r}",
        f"sparsing_seed={model.sparsing.seed}",
    ]
    if isinstance(cfg, TrainConfig):
        lines += [f"{k}={getattr(cfg, k)!r}" for k in TRAIN_KEYS]
    return "\n".join(lines) + "\n"

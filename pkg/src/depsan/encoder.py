"""Transformer encoder whose chosen layers use dependency-scaled attention.

Layout per layer is post-norm: ``x = LN(x + drop(attn(x)))`` then
``x = LN(x + drop(FFN(x)))`` with a ReLU feed-forward block. Layers listed
in ``deps_layers`` (1-based) scale their scores with the Gaussian of the
tree distances; the others are plain self-attention. Sparsing is only
active when ``training`` is true.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from depsan import tensor as T
from depsan.attention import AttentionParams, AttentionTrace, deps_attention
from depsan.deptree import DepTree
from depsan import kernels
from depsan.errors import ConfigError, DimensionMismatch, OutOfVocab, TooLong
from depsan.scaling import SparsingConfig, make_rng, rs_sparsify, scale_values
from depsan.tensor import Tensor

CHECKPOINT_FORMAT = "depsan-checkpoint"
CHECKPOINT_VERSION = 1


def parse_layer_set(spec) -> frozenset[int]:
    """Accept ``"1-3"``, ``"1,2,5"``, ``""``/``"none"``, or an iterable of ints."""
    if isinstance(spec, str):
        spec = spec.strip()
        if spec in ("", "none", "-"):
            return frozenset()
        out = set()
        for part in spec.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.update(range(int(lo), int(hi) + 1))
            else:
                out.add(int(part))
        return frozenset(out)
    return frozenset(int(x) for x in spec)


def format_layer_set(layers) -> str:
    layers = sorted(layers)
    if not layers:
        return "none"
    if layers == list(range(layers[0], layers[-1] + 1)) and len(layers) > 1:
        return f"{layers[0]}-{layers[-1]}"
    return ",".join(str(x) for x in layers)


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 6
    deps_layers: frozenset = frozenset({1, 2, 3})
    n_heads: int = 8
    d_model: int = 512
    d_ff: int = 2048
    sigma: float = 1.0
    sparsing: SparsingConfig = field(default_factory=SparsingConfig)
    dropout: float = 0.1
    max_len: int = 80

    def __post_init__(self):
        object.__setattr__(self, "deps_layers", parse_layer_set(self.deps_layers))
        if self.n_layers < 1:
            raise ConfigError("n_layers must be at least 1")
        bad = [l for l in self.deps_layers if not 1 <= l <= self.n_layers]
        if bad:
            raise ConfigError(f"deps_layers {sorted(bad)} outside 1..{self.n_layers}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_ff < 1 or self.max_len < 1:
            raise ConfigError("d_ff and max_len must be positive")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["deps_layers"] = sorted(self.deps_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        if "sparsing" in d and isinstance(d["sparsing"], dict):
            d["sparsing"] = SparsingConfig(**d["sparsing"])
        return cls(**d)


@dataclass
class EmbeddingTable:
    vocab_size: int
    d_model: int
    weight: Tensor

    def __post_init__(self):
        if self.weight.shape != (self.vocab_size, self.d_model):
            raise DimensionMismatch(f"embedding shape {self.weight.shape}")

    @classmethod
    def init(cls, vocab_size, d_model, rng):
        w = rng.normal(0.0, d_model ** -0.5, size=(vocab_size, d_model))
        return cls(vocab_size, d_model, Tensor(w, requires_grad=True))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding: sin on even dims, cos on odd dims."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def embed(tokens, table: EmbeddingTable, max_len: int = 80) -> Tensor:
    """Scaled token embeddings plus positions; ``tokens`` is (I,) or (B, I)."""
    ids = np.asarray(tokens, dtype=np.int64)
    n = ids.shape[-1]
    if n > max_len:
        raise TooLong(f"sequence length {n} exceeds max_len={max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        raise OutOfVocab(f"token ids must lie in [0, {table.vocab_size})")
    e = T.scale(T.embedding(table.weight, ids), math.sqrt(table.d_model))
    pe = np.broadcast_to(positional_encoding(n, table.d_model), e.shape)
    return T.add(e, Tensor(pe))


@dataclass
class LayerParams:
    attn: AttentionParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @classmethod
    def init(cls, cfg: EncoderConfig, rng):
        d, f = cfg.d_model, cfg.d_ff
        attn = AttentionParams.init(d, cfg.n_heads, rng)
        lim = math.sqrt(6.0 / (d + f))

        def p(arr):
            return Tensor(arr, requires_grad=True)

        return cls(
            attn,
            p(np.ones(d)), p(np.zeros(d)),
            p(rng.uniform(-lim, lim, (d, f))), p(np.zeros(f)),
            p(rng.uniform(-lim, lim, (f, d))), p(np.zeros(d)),
            p(np.ones(d)), p(np.zeros(d)),
        )

    def parameters(self) -> dict[str, Tensor]:
        out = {f"attn.{k}": v for k, v in self.attn.parameters().items()}
        for name in ("ln1_gain", "ln1_bias", "ff_w1", "ff_b1", "ff_w2", "ff_b2", "ln2_gain", "ln2_bias"):
            out[name] = getattr(self, name)
        return out


@dataclass
class EncoderParams:
    embedding: EmbeddingTable
    layers: list[LayerParams]

    def parameters(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding.weight}
        for i, layer in enumerate(self.layers, start=1):
            out.update({f"layer{i}.{k}": v for k, v in layer.parameters().items()})
        return out


def init_encoder(cfg: EncoderConfig, vocab_size: int, seed=0) -> EncoderParams:
    rng = make_rng(seed)
    table = EmbeddingTable.init(vocab_size, cfg.d_model, rng)
    return EncoderParams(table, [LayerParams.init(cfg, rng) for _ in range(cfg.n_layers)])


@dataclass
class Batch:
    """Right-padded sentences. ``allowed`` masks padded keys; ``valid`` marks real rows."""

    ids: np.ndarray
    lengths: np.ndarray
    dist: np.ndarray
    allowed: np.ndarray
    valid: np.ndarray

    @property
    def size(self):
        return self.ids.shape[0]


def make_batch(token_lists: Sequence[Sequence[int]], trees: Sequence[DepTree]) -> Batch:
    if len(token_lists) != len(trees):
        raise DimensionMismatch("one tree per token sequence is required")
    if not token_lists:
        raise DimensionMismatch("empty batch")
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    for toks, tree in zip(token_lists, trees):
        if len(toks) != tree.length:
            raise DimensionMismatch(f"{len(toks)} tokens but tree has length {tree.length}")
    if lengths.min() < 1:
        raise DimensionMismatch("sentences must be non-empty")
    B, L = len(token_lists), int(lengths.max())
    ids = np.zeros((B, L), dtype=np.int64)
    dist = np.zeros((B, L, L), dtype=np.int64)
    for b, (toks, tree) in enumerate(zip(token_lists, trees)):
        n = lengths[b]
        ids[b, :n] = toks
        dist[b, :n, :n] = kernels.tree_distances(tree.parent_positions())
    valid = np.arange(L)[None, :] < lengths[:, None]
    allowed = np.broadcast_to(valid[:, None, :], (B, L, L)).copy()
    return Batch(ids, lengths, dist, allowed, valid)


def _layer_inputs(batch: Batch, cfg: EncoderConfig, deps: bool, training: bool, sparsing_rng):
    """Scaled matrix and wink mask for one layer, sparsing included."""
    if not deps:
        return None, None
    sp = cfg.sparsing
    dist = batch.dist
    wink = None
    if training and sp.mode == "rs":
        dist = rs_sparsify(dist, sp.k, sp.q, sparsing_rng)
    elif training and sp.mode == "wink":
        wink = batch.dist <= sp.k
    return scale_values(dist, cfg.sigma), wink


def encode_batch(batch: Batch, cfg: EncoderConfig, params: EncoderParams, training=False,
                 dropout_rng=None, sparsing_rng=None, ones_scale=False):
    """Run the stack on a padded batch; returns ``(hidden (B, L, d), traces)``.

    When the RNGs are omitted they are derived from ``cfg.sparsing.seed``.
    Sparsing and dropout draw from separate streams, so a sparsing setting
    that changes nothing leaves the dropout masks untouched as well.
    ``ones_scale`` replaces every scaled matrix by ones (diagnostics only).
    """
    if len(params.layers) != cfg.n_layers:
        raise ConfigError(f"params have {len(params.layers)} layers, config says {cfg.n_layers}")
    if dropout_rng is None or sparsing_rng is None:
        s_seq, d_seq = np.random.SeedSequence(cfg.sparsing.seed).spawn(2)
        if sparsing_rng is None:
            sparsing_rng = np.random.Generator(np.random.PCG64(s_seq))
        if dropout_rng is None:
            dropout_rng = np.random.Generator(np.random.PCG64(d_seq))
    p_drop = cfg.dropout if training else 0.0

    x = embed(batch.ids, params.embedding, cfg.max_len)
    traces = []
    for l, layer in enumerate(params.layers, start=1):
        ds, wink = _layer_inputs(batch, cfg, l in cfg.deps_layers, training, sparsing_rng)
        if ones_scale and ds is not None:
            ds = np.ones_like(ds)
        a, trace = deps_attention(x, ds, layer.attn, pad_mask=batch.allowed, wink=wink,
                                  query_valid=batch.valid)
        traces.append(trace)
        x = T.layer_norm(T.add(x, T.dropout(a, p_drop, dropout_rng)), layer.ln1_gain, layer.ln1_bias)
        h = T.relu(T.add_bias(T.matmul(x, layer.ff_w1), layer.ff_b1))
        f = T.add_bias(T.matmul(h, layer.ff_w2), layer.ff_b2)
        x = T.layer_norm(T.add(x, T.dropout(f, p_drop, dropout_rng)), layer.ln2_gain, layer.ln2_bias)
    return x, traces


def encoder_forward(tokens, tree: DepTree, cfg: EncoderConfig, params: EncoderParams,
                    training=False, dropout_rng=None, sparsing_rng=None, ones_scale=False):
    """Single-sentence forward pass; returns ``(hidden (I, d), traces)``."""
    batch = make_batch([list(tokens)], [tree])
    hidden, traces = encode_batch(batch, cfg, params, training, dropout_rng, sparsing_rng, ones_scale)
    single = [
        AttentionTrace(t.scores[0], t.scaled_scores[0], t.weights[0], t.head_outputs[0], t.output[0],
                       None if t.allowed is None else t.allowed[0],
                       None if t.query_valid is None else t.query_valid[0], t.dependency_scaled)
        for t in traces
    ]
    return T.reshape(hidden, hidden.shape[1:]), single


def save_checkpoint(path, cfg: EncoderConfig, params: EncoderParams, extra: dict | None = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "vocab_size": params.embedding.vocab_size,
        "params": {k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
                   for k, v in params.parameters().items()},
    }
    if extra:
        payload["extra"] = extra
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_checkpoint(path) -> tuple[EncoderConfig, EncoderParams, dict]:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a depsan checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = EncoderConfig.from_dict(payload["config"])
    params = init_encoder(cfg, payload["vocab_size"], seed=0)
    stored = payload["params"]
    for name, tensor in params.parameters().items():
        entry = stored[name]
        tensor.data = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return cfg, params, payload.get("extra", {})


def with_deps_layers(cfg: EncoderConfig, layers) -> EncoderConfig:
    return replace(cfg, deps_layers=parse_layer_set(layers))

"""Synthetic head-prediction task for exercising the encoder end to end.

Each sample is a random token sequence with a random dependency tree:
token 1 is the root and every later token attaches to a uniformly chosen
earlier token. The target for each position is the 0-based position of its
head (the root points at itself). A pointer head scores position ``j`` for
query ``i`` by a dot product of projected final hidden states.

The tokens carry no information about the tree, so a model that never sees
the tree can only guess; the dependency-scaled layers receive it through
the scaled matrix.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from depsan import tensor as T
from depsan.attention import mean_entropy
from depsan.deptree import DepTree
from depsan.encoder import (Batch, EncoderConfig, EncoderParams, encode_batch, init_encoder,
                            make_batch)
from depsan.errors import ConfigError, Divergence, EmptyEvalSet
from depsan.scaling import SparsingConfig
from depsan.tensor import Tensor

VARIANTS = ("deps", "baseline")


def default_model_config() -> EncoderConfig:
    return EncoderConfig(n_layers=2, deps_layers=frozenset({1, 2}), n_heads=4, d_model=32,
                         d_ff=64, dropout=0.0, max_len=80)


@dataclass(frozen=True)
class ToySample:
    tokens: tuple[int, ...]
    tree: DepTree
    labels: tuple[int, ...]

    def __post_init__(self):
        expected = tuple(max(h - 1, 0) for h in self.tree.heads)
        if len(self.tokens) != self.tree.length or tuple(self.labels) != expected:
            raise ValueError("labels must be the 0-based head positions of the tree")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 3e-4
    min_length: int = 5
    max_length: int = 12
    vocab_size: int = 32
    seed: int = 0
    eval_every: int = 100
    eval_size: int = 256
    model: EncoderConfig = field(default_factory=default_model_config)

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        for name in ("batch_size", "min_length", "vocab_size", "eval_every", "eval_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_length < self.min_length:
            raise ConfigError("max_length must be >= min_length")
        if self.max_length > self.model.max_len:
            raise ConfigError("max_length exceeds the model's max_len")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


def random_sample(rng: np.random.Generator, length: int, vocab_size: int) -> ToySample:
    heads = [0] + [int(rng.integers(1, i)) for i in range(2, length + 1)]
    tokens = tuple(int(x) for x in rng.integers(0, vocab_size, size=length))
    tree = DepTree.from_heads(heads)
    return ToySample(tokens, tree, tuple(max(h - 1, 0) for h in heads))


def _streams(seed: int):
    init, data, evals, dropout, sparsing = np.random.SeedSequence(seed).spawn(5)
    mk = lambda s: np.random.Generator(np.random.PCG64(s))
    return {"init": mk(init), "data": mk(data), "eval": mk(evals), "dropout": mk(dropout),
            "sparsing": mk(sparsing)}


def generate(n: int, cfg: TrainConfig, rng: np.random.Generator | None = None) -> list[ToySample]:
    """``n`` samples; without ``rng`` they come from the config's evaluation stream."""
    if rng is None:
        rng = _streams(cfg.seed)["eval"]
    out = []
    for _ in range(n):
        length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        out.append(random_sample(rng, length, cfg.vocab_size))
    return out


@dataclass
class ToyModel:
    cfg: EncoderConfig
    encoder: EncoderParams
    ptr_q: Tensor
    ptr_k: Tensor

    @classmethod
    def init(cls, cfg: EncoderConfig, vocab_size: int, rng) -> "ToyModel":
        enc = init_encoder(cfg, vocab_size, rng)
        lim = math.sqrt(3.0 / cfg.d_model)
        pq = Tensor(rng.uniform(-lim, lim, (cfg.d_model, cfg.d_model)), requires_grad=True)
        pk = Tensor(rng.uniform(-lim, lim, (cfg.d_model, cfg.d_model)), requires_grad=True)
        return cls(cfg, enc, pq, pk)

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.encoder.parameters())
        out["pointer.q"] = self.ptr_q
        out["pointer.k"] = self.ptr_k
        return out

    def logits(self, batch: Batch, training=False, dropout_rng=None, sparsing_rng=None):
        h, traces = encode_batch(batch, self.cfg, self.encoder, training, dropout_rng, sparsing_rng)
        q = T.matmul(h, self.ptr_q)
        k = T.matmul(h, self.ptr_k)
        s = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(self.cfg.d_model))
        return T.masked_fill(s, ~batch.allowed, -np.inf), traces


def _labels(samples: Sequence[ToySample], batch: Batch) -> np.ndarray:
    out = np.zeros(batch.ids.shape, dtype=np.int64)
    for b, s in enumerate(samples):
        out[b, : len(s.labels)] = s.labels
    return out


def batch_of(samples: Sequence[ToySample]) -> tuple[Batch, np.ndarray]:
    batch = make_batch([s.tokens for s in samples], [s.tree for s in samples])
    return batch, _labels(samples, batch)


class Adam:
    """Adam with bias correction over a dict of leaf tensors."""

    def __init__(self, params: dict[str, Tensor], lr=3e-4, betas=(0.9, 0.98), eps=1e-9):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def describe(self) -> str:
        return f"adam(lr={self.lr}, betas=({self.b1}, {self.b2}), eps={self.eps})"

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self):
        T.zero_grads(self.params.values())


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    entropy: list[float]


def evaluate(model: ToyModel, samples: Sequence[ToySample], batch_size: int = 256) -> EvalResult:
    """Head accuracy, mean loss and per-layer mean attention entropy (inference mode)."""
    if not samples:
        raise EmptyEvalSet("evaluation needs at least one sample")
    correct = total = 0
    loss_sum = 0.0
    ent = np.zeros(model.cfg.n_layers)
    rows = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch, labels = batch_of(chunk)
        logits, traces = model.logits(batch, training=False)
        n_valid = int(batch.valid.sum())
        loss_sum += float(T.cross_entropy(logits, labels, batch.valid).data) * n_valid
        pred = logits.data.argmax(axis=-1)
        correct += int(((pred == labels) & batch.valid).sum())
        total += n_valid
        for l, tr in enumerate(traces):
            ent[l] += mean_entropy(tr) * n_valid
        rows += n_valid
    return EvalResult(correct / total, loss_sum / total, (ent / rows).tolist())


@dataclass
class TrainReport:
    config: dict
    variant: str
    optimizer: str
    losses: list[float]
    eval_steps: list[int]
    accuracy: list[float]
    entropy: list[float]
    final_accuracy: float
    final_loss: float
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def loss_csv(self) -> str:
        return "step,loss\n" + "".join(f"{i + 1},{x:.6f}\n" for i, x in enumerate(self.losses))


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if variant == "baseline":
        return replace(cfg, model=replace(cfg.model, deps_layers=frozenset()))
    return cfg


def train(cfg: TrainConfig, variant: str = "deps", return_model: bool = False):
    """Train on freshly sampled batches and report curves.

    Runs with the same seed share initialization, training data and the
    evaluation set, so deps/baseline pairs differ only in the attention.
    """
    cfg = variant_config(cfg, variant)
    rngs = _streams(cfg.seed)
    model = ToyModel.init(cfg.model, cfg.vocab_size, rngs["init"])
    eval_set = generate(cfg.eval_size, cfg, rngs["eval"])
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    losses, eval_steps, accs = [], [], []
    started = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        samples = generate(cfg.batch_size, cfg, rngs["data"])
        batch, labels = batch_of(samples)
        logits, _ = model.logits(batch, training=True, dropout_rng=rngs["dropout"],
                                 sparsing_rng=rngs["sparsing"])
        loss = T.cross_entropy(logits, labels, batch.valid)
        value = float(loss.data)
        if not math.isfinite(value):
            raise Divergence(f"loss became {value} at step {step} (lr={cfg.lr})")
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        losses.append(value)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            eval_steps.append(step)
            accs.append(evaluate(model, eval_set).accuracy)
    final = evaluate(model, eval_set)
    if not eval_steps or eval_steps[-1] != cfg.steps:
        eval_steps.append(cfg.steps)
        accs.append(final.accuracy)
    report = TrainReport(
        config=cfg.to_dict(),
        variant=variant,
        optimizer=opt.describe(),
        losses=losses,
        eval_steps=eval_steps,
        accuracy=accs,
        entropy=final.entropy,
        final_accuracy=final.accuracy,
        final_loss=final.loss,
        wall_time=time.perf_counter() - started,
    )
    return (report, model) if return_model else report


def with_sparsing(cfg: TrainConfig, mode: str, k: int = 6, q: float = 0.1) -> TrainConfig:
    sp = SparsingConfig(mode=mode, k=k, q=q, seed=cfg.model.sparsing.seed)
    return replace(cfg, model=replace(cfg.model, sparsing=sp))

"""Finite-difference checks for every differentiable piece of the encoder."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from depsan import tensor as T
from depsan.attention import AttentionParams, deps_attention
from depsan.deptree import DepTree, tree_distance_matrix
from depsan.encoder import EncoderConfig, encode_batch, init_encoder, make_batch
from depsan.scaling import SparsingConfig, make_rng, scale_matrix, wink_mask
from depsan.tensor import Tensor, finite_difference_check

DEFAULT_EPSILON = 1e-4
TOLERANCE = 1e-5


def gradcheck_config() -> EncoderConfig:
    return EncoderConfig(n_layers=2, deps_layers=frozenset({1, 2}), n_heads=4, d_model=16,
                         d_ff=32, dropout=0.0)


def random_tree(rng: np.random.Generator, length: int) -> DepTree:
    heads = [0] + [int(rng.integers(1, i)) for i in range(2, length + 1)]
    return DepTree.from_heads(heads)


def _projection_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.total(T.mul_const(out, weights))


def run_suite(cfg: EncoderConfig | None = None, seed: int = 0, length: int = 5,
              epsilon: float = DEFAULT_EPSILON) -> dict[str, float]:
    """Max relative gradient error per component; dropout is forced off."""
    cfg = replace(cfg or gradcheck_config(), dropout=0.0)
    rng = make_rng(seed)
    d = cfg.d_model
    tree = random_tree(rng, length)
    dist = tree_distance_matrix(tree)
    ds = scale_matrix(dist, cfg.sigma)
    results = {}

    x4 = Tensor(rng.normal(size=4), requires_grad=True)
    g4 = Tensor(rng.normal(size=4), requires_grad=True)
    b4 = Tensor(rng.normal(size=4), requires_grad=True)
    w4 = rng.normal(size=4)
    results["layer_norm"] = finite_difference_check(
        lambda: _projection_loss(T.layer_norm(x4, g4, b4), w4), [x4, g4, b4], epsilon)

    logits = Tensor(rng.normal(size=(length, length)), requires_grad=True)
    mask = ~wink_mask(dist, 1).allowed
    wl = rng.normal(size=(length, length))
    results["masked_softmax"] = finite_difference_check(
        lambda: _projection_loss(T.softmax(T.masked_fill(logits, mask, -np.inf)), wl), [logits], epsilon)

    H = Tensor(rng.normal(size=(length, d)), requires_grad=True)
    attn = AttentionParams.init(d, cfg.n_heads, rng)
    wo = rng.normal(size=(length, d))
    attn_params = [H] + list(attn.parameters().values())
    results["baseline_attention"] = finite_difference_check(
        lambda: _projection_loss(deps_attention(H, None, attn)[0], wo), attn_params, epsilon)
    results["deps_attention"] = finite_difference_check(
        lambda: _projection_loss(deps_attention(H, ds, attn)[0], wo), attn_params, epsilon)
    wink = wink_mask(dist, 1)
    results["deps_attention_wink"] = finite_difference_check(
        lambda: _projection_loss(deps_attention(H, ds, attn, wink=wink)[0], wo), attn_params, epsilon)

    w1 = Tensor(rng.normal(size=(d, cfg.d_ff)) * 0.3, requires_grad=True)
    b1 = Tensor(rng.normal(size=cfg.d_ff) * 0.1, requires_grad=True)
    w2 = Tensor(rng.normal(size=(cfg.d_ff, d)) * 0.3, requires_grad=True)
    b2 = Tensor(rng.normal(size=d) * 0.1, requires_grad=True)

    def ffn():
        h = T.relu(T.add_bias(T.matmul(H, w1), b1))
        return _projection_loss(T.add_bias(T.matmul(h, w2), b2), wo)

    results["feed_forward"] = finite_difference_check(ffn, [H, w1, b1, w2, b2], epsilon)

    vocab = 11
    params = init_encoder(cfg, vocab, rng)
    tokens = [int(t) for t in rng.integers(0, vocab, size=length)]
    batch = make_batch([tokens], [tree])
    wh = rng.normal(size=(1, length, d))
    plist = list(params.parameters().values())
    results["encoder"] = finite_difference_check(
        lambda: _projection_loss(encode_batch(batch, cfg, params)[0], wh), plist, epsilon)

    if cfg.deps_layers:
        sparse_cfg = replace(cfg, sparsing=SparsingConfig("rs", k=6, q=0.3, seed=seed))

        def sparse():
            # same draws on every call: a fresh generator per evaluation
            h, _ = encode_batch(batch, sparse_cfg, params, training=True,
                                sparsing_rng=make_rng(seed + 1), dropout_rng=make_rng(seed + 2))
            return _projection_loss(h, wh)

        results["encoder_rs_training"] = finite_difference_check(sparse, plist, epsilon)

    wq = Tensor(rng.normal(size=(d, d)) * 0.3, requires_grad=True)
    wk = Tensor(rng.normal(size=(d, d)) * 0.3, requires_grad=True)
    labels = np.array([[max(h - 1, 0) for h in tree.heads]])

    def pointer():
        h, _ = encode_batch(batch, cfg, params)
        s = T.scale(T.matmul(T.matmul(h, wq), T.transpose(T.matmul(h, wk))), 1.0 / math.sqrt(d))
        return T.cross_entropy(T.masked_fill(s, ~batch.allowed, -np.inf), labels, batch.valid)

    results["pointer_loss"] = finite_difference_check(pointer, [wq, wk] + plist, epsilon)
    return results

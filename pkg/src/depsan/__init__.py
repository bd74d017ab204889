"""Dependency-scaled self-attention: tree distances, Gaussian scaling,
knowledge sparsing, and a small autodiff encoder to run them in."""

__version__ = "0.1.0"

from depsan.attention import (AttentionParams, AttentionTrace, attention_entropy,
                              baseline_attention, deps_attention)
from depsan.deptree import DepTree, DistanceMatrix, Token, parse_conllu, tree_distance_matrix
from depsan.encoder import EncoderConfig, embed, encoder_forward, init_encoder
from depsan.kernels import BACKEND
from depsan.scaling import (AttentionMask, ScaledMatrix, SparsingConfig, gauss_dist,
                            rs_sparsify, scale_matrix, wink_mask)

__all__ = [
    "AttentionMask", "AttentionParams", "AttentionTrace", "BACKEND", "DepTree", "DistanceMatrix",
    "EncoderConfig", "ScaledMatrix", "SparsingConfig", "Token", "attention_entropy",
    "baseline_attention", "deps_attention", "embed", "encoder_forward", "gauss_dist",
    "init_encoder", "parse_conllu", "rs_sparsify", "scale_matrix", "tree_distance_matrix",
    "wink_mask",
]

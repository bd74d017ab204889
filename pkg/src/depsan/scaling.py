"""Gaussian dependency scaling and the two knowledge-sparsing regularizers.

Sparsing works on distances, before the Gaussian is applied: RS-Sparsing
replaces a distance by ``k`` (so the scale collapses to ``gauss_dist(k)``,
about 6e-9 at k=6, sigma=1), and Wink-Sparsing keeps only positions within
distance ``k`` and excludes the rest from the softmax.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from depsan import kernels
from depsan.deptree import DistanceMatrix
from depsan.errors import ConfigError, InvalidProbability, NonPositiveSigma

SparsingMode = Literal["none", "rs", "wink"]
MODES = ("none", "rs", "wink")

DEFAULT_SIGMA = 1.0
DEFAULT_K = 6
DEFAULT_Q = 0.1


def _check_sigma(sigma):
    if not sigma > 0 or not math.isfinite(sigma):
        raise NonPositiveSigma(f"sigma must be a positive finite number, got {sigma!r}")


def gauss_dist(d, sigma=DEFAULT_SIGMA):
    """Normal density with standard deviation ``sigma`` evaluated at ``d``."""
    _check_sigma(sigma)
    return math.exp(-(d * d) / (2.0 * sigma * sigma)) / math.sqrt(2.0 * math.pi * sigma * sigma)


@dataclass(frozen=True)
class ScaledMatrix:
    n: int
    values: np.ndarray = field(repr=False)
    sigma: float

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.n, self.n):
            raise ValueError(f"scaled matrix shape {v.shape} does not match n={self.n}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def peak(self) -> float:
        return gauss_dist(0, self.sigma)

    def to_csv(self) -> str:
        rows = [f"n={self.n}"] + [",".join(f"{x:.6f}" for x in row) for row in self.values]
        return "\n".join(rows) + "\n"

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "sigma": self.sigma,
            "values": [[round(float(x), 6) for x in row] for row in self.values],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class SparsingConfig:
    mode: SparsingMode = "none"
    k: int = DEFAULT_K
    q: float = DEFAULT_Q
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"sparsing mode must be one of {MODES}, got {self.mode!r}")
        if int(self.k) != self.k or self.k < 0:
            raise ConfigError(f"k must be a non-negative integer, got {self.k!r}")
        _check_q(self.q)


@dataclass(frozen=True)
class AttentionMask:
    n: int
    allowed: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.allowed, dtype=bool)
        if a.shape != (self.n, self.n):
            raise ValueError(f"mask shape {a.shape} does not match n={self.n}")
        if self.n and not a.any(axis=1).all():
            raise ValueError("every mask row needs at least one allowed position")
        a.flags.writeable = False
        object.__setattr__(self, "allowed", a)

    def to_csv(self) -> str:
        rows = [",".join("1" if x else "0" for x in row) for row in self.allowed]
        return "\n".join(rows) + "\n"

    def to_list(self) -> list[list[int]]:
        return self.allowed.astype(int).tolist()


def _check_q(q):
    if not 0.0 <= q <= 1.0:
        raise InvalidProbability(f"q must lie in [0, 1], got {q!r}")


def _as_distances(dist) -> np.ndarray:
    return dist.d if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=np.int64)


def scale_matrix(dist: DistanceMatrix, sigma: float = DEFAULT_SIGMA) -> ScaledMatrix:
    _check_sigma(sigma)
    d = _as_distances(dist)
    return ScaledMatrix(d.shape[0], kernels.gauss_matrix(d, float(sigma)), float(sigma))


def scale_values(dist, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Like :func:`scale_matrix` for raw (possibly batched) integer arrays."""
    _check_sigma(sigma)
    d = np.asarray(dist, dtype=np.int64)
    flat = d.reshape(-1, d.shape[-1]) if d.ndim != 2 else d
    return kernels.gauss_matrix(np.ascontiguousarray(flat), float(sigma)).reshape(d.shape)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; an existing Generator is passed through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def rs_sparsify(dist, k: int = DEFAULT_K, q: float = DEFAULT_Q, seed=0):
    """Replace each distance by ``k`` independently with probability ``q``.

    One uniform draw per cell, consumed in row-major order, so a given seed
    reproduces the same cells on any platform. The result is generally not
    symmetric. ``seed`` may also be a live Generator, which is advanced.
    Raw arrays (including batched ones) come back as arrays.
    """
    _check_q(q)
    d = _as_distances(dist)
    hit = make_rng(seed).random(d.shape) < q
    out = np.where(hit, np.int64(k), d)
    if isinstance(dist, DistanceMatrix):
        return DistanceMatrix(dist.n, out)
    return out


def wink_mask(dist, k: int = DEFAULT_K) -> AttentionMask:
    """Allow only positions whose tree distance is at most ``k``."""
    if k < 0:
        raise ConfigError(f"k must be non-negative, got {k!r}")
    d = _as_distances(dist)
    return AttentionMask(d.shape[0], d <= k)

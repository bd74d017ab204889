"""Dependency trees from CoNLL-U and their all-pairs tree distances."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from depsan import kernels
from depsan.errors import EmptyNode, InvalidTree, MalformedLine, MultiwordToken

N_COLUMNS = 10


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    head: int

    def __post_init__(self):
        if self.index < 1:
            raise InvalidTree(f"token index {self.index} must be >= 1")
        if self.head < 0:
            raise InvalidTree(f"token {self.index} has negative head {self.head}")
        if self.head == self.index:
            raise InvalidTree(f"token {self.index} is its own head")


@dataclass(frozen=True)
class DepTree:
    """One parsed sentence. Construction validates the tree shape."""

    tokens: tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        _validate(self.tokens)

    @classmethod
    def from_heads(cls, heads: Sequence[int], forms: Sequence[str] | None = None) -> "DepTree":
        """Build from CoNLL-U style heads (0 = root, else 1-based head index)."""
        if forms is None:
            forms = [f"w{i}" for i in range(1, len(heads) + 1)]
        return cls(tuple(Token(i + 1, f, int(h)) for i, (f, h) in enumerate(zip(forms, heads))))

    @property
    def length(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    def parent_positions(self) -> np.ndarray:
        """0-based parent position of each token, -1 for the root."""
        return np.array([t.head - 1 for t in self.tokens], dtype=np.int64)

    def to_conllu(self) -> str:
        lines = []
        for t in self.tokens:
            cols = [str(t.index), t.form, "_", "_", "_", "_", str(t.head), "_", "_", "_"]
            lines.append("\t".join(cols))
        return "\n".join(lines) + "\n"


def _validate(tokens: Sequence[Token]) -> None:
    n = len(tokens)
    for pos, t in enumerate(tokens, start=1):
        if t.index != pos:
            raise InvalidTree(f"token ids must run 1..{n} in order, got {t.index} at position {pos}")
        if t.head > n:
            raise InvalidTree(f"token {t.index} has head {t.head} outside 0..{n}")
    if n == 0:
        return
    # every token must reach the root by following heads
    state = [0] * (n + 1)  # 0 unvisited, 1 on current path, 2 reaches root
    state[0] = 2
    heads = [0] + [t.head for t in tokens]
    for start in range(1, n + 1):
        path = []
        v = start
        while state[v] == 0:
            state[v] = 1
            path.append(v)
            v = heads[v]
        if state[v] == 1:
            raise InvalidTree(f"cycle in head links through token {v}")
        for u in path:
            state[u] = 2
    roots = [t.index for t in tokens if t.head == 0]
    if len(roots) != 1:
        raise InvalidTree(f"expected exactly one root, found {len(roots)}")


@dataclass(frozen=True)
class DistanceMatrix:
    n: int
    d: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.array(self.d, dtype=np.int64)
        if d.shape != (self.n, self.n):
            raise ValueError(f"distance matrix shape {d.shape} does not match n={self.n}")
        d.flags.writeable = False
        object.__setattr__(self, "d", d)

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.d, other.d)

    __hash__ = None

    def to_csv(self) -> str:
        rows = [f"n={self.n}"] + [",".join(str(int(x)) for x in row) for row in self.d]
        return "\n".join(rows) + "\n"

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def tree_distance_matrix(tree: DepTree) -> DistanceMatrix:
    """Edge count along the undirected tree path for every token pair."""
    return DistanceMatrix(tree.length, kernels.tree_distances(tree.parent_positions()))


def _parse_id(raw: str, lineno: int, sentence: int) -> int:
    if "-" in raw:
        raise MultiwordToken(f"multiword token range {raw!r} is not supported", lineno, sentence)
    if "." in raw:
        raise EmptyNode(f"empty node {raw!r} is not supported", lineno, sentence)
    try:
        return int(raw)
    except ValueError:
        raise MalformedLine(f"non-integer ID {raw!r}", lineno, sentence) from None


def _blocks(text: str) -> Iterable[list[tuple[int, str]]]:
    block: list[tuple[int, str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            if block:
                yield block
                block = []
            continue
        block.append((lineno, line))
    if block:
        yield block


def parse_conllu(text: str) -> list[DepTree]:
    """Parse the ID, FORM and HEAD columns of every sentence block.

    Comment lines are skipped. Multiword ranges and empty nodes raise instead
    of being dropped, since dropping them would shift token indices.
    """
    trees = []
    sentence = 0
    for block in _blocks(text):
        rows = [(lineno, line) for lineno, line in block if not line.startswith("#")]
        if not rows:
            continue
        sentence += 1
        tokens = []
        for lineno, line in rows:
            cols = line.split("\t")
            if len(cols) != N_COLUMNS:
                raise MalformedLine(f"expected {N_COLUMNS} tab-separated columns, got {len(cols)}",
                                    lineno, sentence)
            idx = _parse_id(cols[0], lineno, sentence)
            try:
                head = int(cols[6])
            except ValueError:
                raise MalformedLine(f"non-integer HEAD {cols[6]!r}", lineno, sentence) from None
            try:
                tokens.append(Token(idx, cols[1], head))
            except InvalidTree as exc:
                raise InvalidTree(exc.reason, lineno, sentence) from None
        try:
            trees.append(DepTree(tuple(tokens)))
        except InvalidTree as exc:
            raise InvalidTree(exc.reason, rows[0][0], sentence) from None
    return trees


def read_conllu(path) -> list[DepTree]:
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f.read())

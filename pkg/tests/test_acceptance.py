"""Acceptance checks, one verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to watch the lines as they
are produced; they are also repeated in the terminal summary.
"""
from dataclasses import replace

import mpmath
import numpy as np
import pytest

from depsan import _kernels_py, kernels
from depsan import tensor as T
from depsan.attention import AttentionParams, baseline_attention, deps_attention, row_entropy
from depsan.cli import main
from depsan.deptree import DepTree, tree_distance_matrix
from depsan.encoder import EncoderConfig, encoder_forward, init_encoder, make_batch
from depsan.gradcheck import TOLERANCE, gradcheck_config, run_suite
from depsan.scaling import SparsingConfig, gauss_dist, scale_values
from depsan.tensor import Tensor
from depsan.toytask import TrainConfig, train, with_sparsing

from conftest import ACCEPTANCE_LINES, bfs_distances, random_heads

try:
    from depsan import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

PAIRED_SEEDS = (0, 1, 2)


def verdict(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_example_reproduction(capsys, example_file):
    code = main(["distances", "--conllu", str(example_file)])
    out = capsys.readouterr().out
    row = [int(x) for x in out.splitlines()[2].split(",")]
    with capsys.disabled():
        verdict("tree distance example", code == 0 and row == [1, 0, 2, 2, 1], f"experiments row {row}")


def test_gaussian_closed_form():
    mpmath.mp.dps = 40
    worst = 0.0
    for d, sigma in ((0, 1), (1, 1), (0, 2)):
        exact = mpmath.exp(-mpmath.mpf(d) ** 2 / (2 * sigma ** 2)) / mpmath.sqrt(2 * mpmath.pi * sigma ** 2)
        worst = max(worst, abs(float(gauss_dist(d, sigma) - exact)))
    verdict("gaussian closed form", worst < 1e-12, f"max abs error {worst:.2e} (tol 1e-12)")


def test_identity_reduction():
    rng = np.random.default_rng(100)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        heads = int(rng.choice([1, 2, 4]))
        d = heads * int(rng.integers(1, 5))
        params = AttentionParams.init(d, heads, rng)
        H = Tensor(rng.normal(size=(n, d)))
        a, ta = deps_attention(H, np.ones((n, n)), params)
        b, tb = baseline_attention(H, params)
        same = a.data.tobytes() == b.data.tobytes() and ta.weights.tobytes() == tb.weights.tobytes()
        mismatches += not same
    verdict("identity reduction", mismatches == 0, f"{100 - mismatches}/100 draws bitwise equal")


@pytest.mark.parametrize("backend", ["active", "python", "cython"])
def test_oracle_equivalence(backend):
    impl = {"active": kernels, "python": _kernels_py, "cython": _kernels_c}[backend]
    if impl is None:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(1000)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 41))
        heads = random_heads(rng, n)
        parents = np.array([h - 1 for h in heads], dtype=np.int64)
        if not np.array_equal(impl.tree_distances(parents), bfs_distances(heads)):
            bad += 1
    label = f"selected={kernels.BACKEND}" if backend == "active" else backend
    verdict(f"oracle equivalence [{label}]", bad == 0, f"{1000 - bad}/1000 random trees exact")


def test_gradient_suite():
    results = run_suite(gradcheck_config(), seed=0, length=5, epsilon=1e-4)
    name, worst = max(results.items(), key=lambda kv: kv[1])
    verdict("gradient suite", worst < TOLERANCE, f"max relative error {worst:.2e} in {name} (tol 1e-5)")


def test_sparsing_noops():
    rng = np.random.default_rng(50)
    base = EncoderConfig(n_layers=2, deps_layers={1, 2}, n_heads=2, d_model=8, d_ff=16, dropout=0.1)
    equal = 0
    for case in range(50):
        n = int(rng.integers(1, 15))
        toks = [int(t) for t in rng.integers(0, 9, size=n)]
        tree = DepTree.from_heads(random_heads(rng, n))
        params = init_encoder(base, 9, seed=case)
        seed = int(rng.integers(0, 2**31))
        ref, _ = encoder_forward(toks, tree, replace(base, sparsing=SparsingConfig("none", seed=seed)),
                                 params, training=True)
        rs = replace(base, sparsing=SparsingConfig("rs", k=int(rng.integers(0, 8)), q=0.0, seed=seed))
        wink = replace(base, sparsing=SparsingConfig("wink", k=n - 1 + int(rng.integers(0, 3)), seed=seed))
        outs = [encoder_forward(toks, tree, c, params, training=True)[0] for c in (rs, wink)]
        equal += all(o.data.tobytes() == ref.data.tobytes() for o in outs)
    verdict("sparsing no-ops", equal == 50, f"{equal}/50 cases bitwise equal (rs q=0, wink k>=I-1)")


def test_softmax_mask_contract():
    rng = np.random.default_rng(500)
    worst_sum = 0.0
    leaked = 0
    for _ in range(500):
        B = int(rng.integers(1, 4))
        lengths = [int(x) for x in rng.integers(1, 13, size=B)]
        trees = [DepTree.from_heads(random_heads(rng, n)) for n in lengths]
        batch = make_batch([[0] * n for n in lengths], trees)
        heads = int(rng.choice([1, 2, 4]))
        params = AttentionParams.init(heads * 2, heads, rng)
        H = Tensor(rng.normal(scale=3.0, size=batch.ids.shape + (heads * 2,)))
        sigma = float(rng.uniform(0.3, 4.0))
        wink = batch.dist <= int(rng.integers(0, 5)) if rng.random() < 0.7 else None
        _, tr = deps_attention(H, scale_values(batch.dist, sigma), params, pad_mask=batch.allowed,
                               wink=wink, query_valid=batch.valid)
        allowed = batch.allowed if wink is None else batch.allowed & wink
        w = tr.weights
        leaked += any((w[b][:, ~allowed[b]] != 0).any() for b in range(B))
        worst_sum = max(worst_sum, float(np.abs(w.sum(-1) - 1).max()))
    ok = leaked == 0 and worst_sum < 1e-9
    verdict("softmax/mask contract", ok,
            f"500 configs, max |row sum - 1| {worst_sum:.1e}, configs with masked weight {leaked}")


def test_dispersion():
    rng = np.random.default_rng(10)
    tight, wide = [], []
    for _ in range(200):
        dist = tree_distance_matrix(DepTree.from_heads(random_heads(rng, 10))).d
        S = rng.normal(size=(10, 10))
        for sigma, acc in ((1.0, tight), (32.0, wide)):
            w = T.softmax(Tensor(S * scale_values(dist, sigma))).data
            acc.append(row_entropy(w).mean())
    a, b = float(np.mean(tight)), float(np.mean(wide))
    verdict("dispersion", a < b, f"mean entropy sigma=1 {a:.4f} < sigma=32 {b:.4f} over 200 draws")


@pytest.fixture(scope="module")
def toy_runs():
    cache = {}

    def get(variant, seed, sparsing="none"):
        key = (variant, seed, sparsing)
        if key not in cache:
            cfg = replace(TrainConfig(), seed=seed)
            if sparsing != "none":
                cfg = with_sparsing(cfg, sparsing)
            cache[key] = train(cfg, variant)
        return cache[key]

    return get


@pytest.mark.slow
def test_mechanism_demonstration(toy_runs):
    pairs = [(toy_runs("deps", s).final_accuracy, toy_runs("baseline", s).final_accuracy) for s in PAIRED_SEEDS]
    ok = all(d >= 0.95 and d > b for d, b in pairs)
    detail = ", ".join(f"seed {s}: deps {d:.3f} vs baseline {b:.3f}" for s, (d, b) in zip(PAIRED_SEEDS, pairs))
    verdict("mechanism demonstration", ok, detail)


@pytest.mark.slow
def test_entropy_direction_on_toy_task(toy_runs):
    # supporting check: trained deps attention is more concentrated on average
    pairs = [(np.mean(toy_runs("deps", s).entropy), np.mean(toy_runs("baseline", s).entropy))
             for s in PAIRED_SEEDS]
    ok = all(d < b for d, b in pairs)
    detail = ", ".join(f"seed {s}: {d:.3f} vs {b:.3f}" for s, (d, b) in zip(PAIRED_SEEDS, pairs))
    verdict("toy entropy direction (supporting)", ok, f"mean layer entropy deps vs baseline, {detail}")


@pytest.mark.slow
def test_sparsing_robustness(toy_runs):
    ref = toy_runs("deps", 0).final_accuracy
    accs = {mode: toy_runs("deps", 0, mode).final_accuracy for mode in ("rs", "wink")}
    ok = all(abs(a - ref) <= 0.05 for a in accs.values())
    detail = f"unsparsed {ref:.3f}, " + ", ".join(f"{m} {a:.3f}" for m, a in accs.items())
    verdict("sparsing robustness", ok, detail)

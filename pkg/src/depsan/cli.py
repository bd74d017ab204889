"""Command-line entry point: ``depsan <command> ...``.

Exit codes: 0 success, 1 internal failure (or a failed gradient check),
2 bad user input. Error lines start with ``error:``.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from depsan import __version__
from depsan.attention import attention_entropy, row_entropy
from depsan.config import encoder_config, load_config, merge, train_config
from depsan.deptree import read_conllu, tree_distance_matrix
from depsan.encoder import encoder_forward, init_encoder, save_checkpoint
from depsan.errors import ConfigError, DepsanError
from depsan.gradcheck import TOLERANCE, gradcheck_config, run_suite
from depsan.scaling import make_rng, rs_sparsify, scale_matrix, wink_mask
from depsan.toytask import train

TRACE_FORMAT = "depsan-trace"


class UsageError(Exception):
    pass


def round_rows(weights: np.ndarray, decimals: int = 6) -> list:
    """Round probability rows to ``decimals`` places keeping each row's sum at 1.

    Largest-remainder apportionment in units of 10**-decimals; zeros stay 0.
    """
    unit = 10 ** decimals
    w = np.asarray(weights, dtype=np.float64)
    flat = w.reshape(-1, w.shape[-1])
    out = np.empty_like(flat)
    for r, row in enumerate(flat):
        scaled = row * unit
        base = np.floor(scaled)
        short = int(round(scaled.sum())) - int(base.sum())
        if short > 0:
            order = np.argsort(-(scaled - base), kind="stable")[:short]
            base[order] += 1
        out[r] = base / unit
    return np.round(out.reshape(w.shape), decimals).tolist()


def _round(arr, decimals=6):
    return np.round(np.asarray(arr, dtype=np.float64), decimals).tolist()


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _file_values(path):
    return load_config(path) if path else {}


def cmd_distances(args):
    trees = read_conllu(args.conllu)
    mats = _map(tree_distance_matrix, trees, args.jobs)
    if args.format == "json":
        _write(args.out, json.dumps([m.to_dict() for m in mats]) + "\n")
    else:
        _write(args.out, "\n".join(m.to_csv() for m in mats))
    return 0


def cmd_scale(args):
    trees = read_conllu(args.conllu)
    dists = _map(tree_distance_matrix, trees, args.jobs)
    masks = [None] * len(dists)
    scaled_from = dists
    if args.sparsing == "rs":
        rng = make_rng(args.seed)
        scaled_from = [rs_sparsify(d, args.k, args.q, rng) for d in dists]
    elif args.sparsing == "wink":
        if args.k < 0:
            raise ConfigError("k must be non-negative")
        masks = [wink_mask(d, args.k) for d in dists]
    elif args.sparsing != "none":
        raise ConfigError(f"unknown sparsing mode {args.sparsing!r}")
    if not 0.0 <= args.q <= 1.0:
        raise ConfigError(f"q must lie in [0, 1], got {args.q}")
    mats = _map(lambda d: scale_matrix(d, args.sigma), scaled_from, args.jobs)
    if args.format == "json":
        items = []
        for m, mask in zip(mats, masks):
            item = m.to_dict()
            if mask is not None:
                item["mask"] = mask.to_list()
            items.append(item)
        _write(args.out, json.dumps(items) + "\n")
    else:
        blocks = []
        for m, mask in zip(mats, masks):
            text = m.to_csv()
            if mask is not None:
                text += "mask\n" + mask.to_csv()
            blocks.append(text)
        _write(args.out, "\n".join(blocks))
    return 0


def _vocabulary(trees):
    vocab = {}
    for t in trees:
        for form in t.forms:
            vocab.setdefault(form, len(vocab))
    return vocab


def cmd_attend(args):
    values = merge(_file_values(args.config), {})
    cfg = encoder_config(values)
    if args.variant == "baseline":
        cfg = replace(cfg, deps_layers=frozenset())
    trees = read_conllu(args.conllu)
    vocab = _vocabulary(trees)
    params = init_encoder(cfg, max(len(vocab), 1), seed=args.seed)
    sentences = []
    for idx, tree in enumerate(trees, start=1):
        ids = [vocab[f] for f in tree.forms]
        _, traces = encoder_forward(ids, tree, cfg, params, training=False, ones_scale=args.ones)
        layers = []
        for l, tr in enumerate(traces, start=1):
            layers.append({
                "layer": l,
                "dependency_scaled": bool(tr.dependency_scaled),
                "scores": _round(tr.scores),
                "scaled_scores": _round(tr.scaled_scores),
                "weights": round_rows(tr.weights),
                "entropy": _round(attention_entropy(tr)),
            })
        sentences.append({"index": idx, "n": tree.length, "forms": tree.forms, "layers": layers})
    trace = {
        "format": TRACE_FORMAT,
        "version": 1,
        "variant": args.variant,
        "seed": args.seed,
        "config": cfg.to_dict(),
        "sentences": sentences,
    }
    _write(args.trace, json.dumps(trace, indent=1) + "\n")
    return 0


def cmd_gradcheck(args):
    values = _file_values(args.config)
    cfg = encoder_config(values, gradcheck_config())
    results = run_suite(cfg, seed=args.seed, length=args.length, epsilon=args.epsilon)
    for name, err in results.items():
        print(f"{name}: {err:.3e}")
    worst = max(results.values())
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < TOLERANCE else 1


def cmd_train_toy(args):
    values = merge(_file_values(args.config), {"seed": args.seed, "steps": args.steps})
    cfg = train_config(values)
    result = train(cfg, args.variant, return_model=bool(args.checkpoint))
    report, model = result if args.checkpoint else (result, None)
    _write(args.report, report.to_json() + "\n")
    if args.loss_csv:
        _write(args.loss_csv, report.loss_csv())
    if model is not None:
        extra = {"pointer_q": model.ptr_q.data.tolist(), "pointer_k": model.ptr_k.data.tolist()}
        save_checkpoint(args.checkpoint, model.cfg, model.encoder, extra)
    print(f"variant={report.variant} final_accuracy={report.final_accuracy:.6f} "
          f"final_loss={report.final_loss:.6f}", file=sys.stderr)
    return 0


def layer_entropies(trace: dict) -> dict[int, float]:
    """Mean row entropy per layer over all sentences, heads and rows."""
    sums, counts = {}, {}
    for sent in trace.get("sentences", []):
        for layer in sent["layers"]:
            h = row_entropy(np.asarray(layer["weights"], dtype=np.float64))
            l = int(layer["layer"])
            sums[l] = sums.get(l, 0.0) + float(h.sum())
            counts[l] = counts.get(l, 0) + h.size
    return {l: sums[l] / counts[l] for l in sorted(sums)}


def cmd_analyze_entropy(args):
    with open(args.trace, encoding="utf-8") as f:
        try:
            trace = json.load(f)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.trace}: not valid JSON ({exc})") from None
    try:
        result = layer_entropies(trace)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.trace}: malformed trace ({exc})") from None
    for l, value in result.items():
        print(f"layer {l}: {value:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depsan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"depsan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("distances", help="tree distance matrices from CoNLL-U")
    d.add_argument("--conllu", required=True)
    d.add_argument("--out", default="-")
    d.add_argument("--format", choices=("csv", "json"), default="csv")
    d.add_argument("--jobs", type=int, default=1)
    d.set_defaults(func=cmd_distances)

    s = sub.add_parser("scale", help="Gaussian dependency-scaled matrices")
    s.add_argument("--conllu", required=True)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--sparsing", choices=("none", "rs", "wink"), default="none")
    s.add_argument("--k", type=int, default=6)
    s.add_argument("--q", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="-")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_scale)

    a = sub.add_parser("attend", help="random-init forward pass, write attention trace")
    a.add_argument("--conllu", required=True)
    a.add_argument("--config")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--trace", default="-")
    a.add_argument("--variant", choices=("deps", "baseline"), default="deps")
    a.add_argument("--ones", action="store_true", help="replace every scaled matrix by ones")
    a.set_defaults(func=cmd_attend)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--config")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--length", type=int, default=5)
    g.add_argument("--epsilon", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train-toy", help="train on the synthetic head-prediction task")
    t.add_argument("--config")
    t.add_argument("--variant", choices=("deps", "baseline"), default="deps")
    t.add_argument("--report", default="-")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--loss-csv")
    t.add_argument("--checkpoint")
    t.set_defaults(func=cmd_train_toy)

    e = sub.add_parser("analyze-entropy", help="per-layer mean attention entropy of a trace")
    e.add_argument("--trace", required=True)
    e.set_defaults(func=cmd_analyze_entropy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DepsanError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"error: internal failure: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

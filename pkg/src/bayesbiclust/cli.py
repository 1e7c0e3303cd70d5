"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``select-k``, ``evaluate``, ``tree`` and
``integrate-prep``. Every option can also come from a JSON file passed with
``--config``; flags given on the command line override it. Exit codes are
0 on success, 2 for bad data, 3 for bad usage and 4 when an estimate cannot
be formed. Failures print a one-line JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import io as bio
from ._base import MCMCConfig, bracket_search
from .bbc1 import Bbc1Hyper, fit_bbc1
from .bbc2 import Bbc2Hyper, fit_bbc2
from .exceptions import BiclustError, DataError, UsageError
from .hbbc import HbbcConfig, grow_tree
from .integrate import CorrelationStack, correlation_z, fit_integration
from .metrics import (align_selection, ari, clustering_error, confusion_rates,
                      feature_recovery)
from .simulate import gen_bbc1, gen_bbc2, gen_hierarchy, gen_integration

DEFAULTS = {
    "seed": 0,
    "n_chains": 1,
    "pi_s": 0.1,
    "alpha": 0.05,
    "gamma": None,
    "gamma0": None,
    "q": 0.05,
    "min_node_size": None,
    "threshold": None,
    "max_leaves": None,
    "n_categories": None,
    "selection": "sample",
    "search": "bracket",
    "grid": 4,
    "binarize": None,
    "tau": None,
    "min_samples": 10,
}

MCMC_DEFAULTS = {"bbc1": (900, 200), "bbc2": (500, 200), "hbbc": (500, 200),
                 "integrate": (200, 50)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_k(text):
    """``"3"``, ``"1-5"`` or ``"2,4,6"`` to a sorted list of ints."""
    if text is None:
        return None
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return sorted({int(k) for k in text})
    try:
        if "-" in text:
            lo, hi = (int(x) for x in text.split("-", 1))
            ks = list(range(lo, hi + 1))
        else:
            ks = sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise UsageError(f"cannot parse K specification {text!r}") from None
    if not ks or ks[0] < 1:
        raise UsageError(f"K specification {text!r} is empty or below 1")
    return ks


def _file_sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _resolve(args, keys):
    """Merge built-in defaults, the ``--config`` file and explicit flags."""
    cfg = {k: DEFAULTS.get(k) for k in keys}
    if getattr(args, "config", None):
        extra = bio.read_json(args.config)
        if not isinstance(extra, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(extra) - set(keys)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(extra)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _mcmc(cfg, model):
    it, burn = MCMC_DEFAULTS[model]
    cfg["n_iter"] = int(cfg.get("n_iter") or it)
    cfg["burn_in"] = int(cfg["burn_in"] if cfg.get("burn_in") is not None else burn)
    return MCMCConfig(cfg["n_iter"], cfg["burn_in"], int(cfg["n_chains"]), int(cfg["seed"]))


def _gamma(cfg):
    g = cfg.get("gamma")
    if g is None:
        return None
    if isinstance(g, str):
        g = [float(x) for x in g.split(",")]
    return tuple(float(x) for x in g)


# ---------------------------------------------------------------------------
# Input loading
# ---------------------------------------------------------------------------

def load_categorical(path, cfg):
    """Matrix from a TSV or a bundle; returns ``(Y, coding, L)``."""
    path = Path(path)
    if path.suffix == ".npz":
        arrays, meta = bio.load_bundle(path)
        if "Y" not in arrays:
            raise DataError(f"{path}: bundle holds no matrix 'Y'")
        Y = arrays["Y"].astype(np.uint8)
        return Y, meta.get("coding", "1-based"), int(meta.get("n_categories", Y.max() + 1))
    if cfg.get("binarize"):
        df = bio.read_real_matrix(path)
        Y = bio.binarize(df.to_numpy(), cfg["binarize"], cfg.get("tau"))
        return Y, "binary01", 2
    m = bio.read_matrix(path)
    return m.values, m.coding, m.n_categories


def load_stack(path):
    arrays, meta = bio.load_bundle(path)
    for key in ("Z", "theta0", "var0"):
        if key not in arrays:
            raise DataError(f"{path}: stack bundle lacks {key!r}")
    return CorrelationStack(arrays["Z"], arrays["theta0"], arrays["var0"],
                            arrays.get("n_samples"), meta.get("layer_names", []))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

SIM_KEYS = ["model", "n", "p", "K", "L", "ns", "pi_s", "seed", "n_per_leaf", "n_extra",
            "shift", "n_modules", "module_size", "n_supporting"]


def cmd_simulate(args):
    cfg = _resolve(args, SIM_KEYS)
    model, seed = cfg["model"], int(cfg["seed"])
    if model is None:
        raise UsageError("simulate needs --model")
    need = {"bbc1": ("n", "p", "K", "ns"), "bbc2": ("n", "p", "K"),
            "hierarchy": ("n_per_leaf", "p"), "integration": ("n", "p")}
    missing = [k for k in need[model] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"simulate --model {model} needs: {', '.join(missing)}")
    meta = {"generator": model, "config": {k: v for k, v in cfg.items() if v is not None},
            "version": __version__}
    if model == "integration":
        size = int(cfg.get("module_size") or 10)
        sup = int(cfg.get("n_supporting") or 12)
        modules = tuple((size, sup) for _ in range(int(cfg.get("n_modules") or 2)))
        Z, query, C, S = gen_integration(int(cfg["n"]), int(cfg["p"]), seed, modules=modules,
                                         shift=float(cfg.get("shift") or 0.8),
                                         n_extra=int(cfg.get("n_extra") or 200))
        stack = CorrelationStack.from_genome(Z, query)
        meta["layer_names"] = stack.layer_names
        bio.save_bundle(args.out, meta, Z=stack.Z, theta0=stack.theta0, var0=stack.var0,
                        labels=C, S=S)
        return 0
    if model == "bbc1":
        d = gen_bbc1(int(cfg["n"]), int(cfg["p"]), int(cfg["K"]), int(cfg["ns"]), seed)
        meta.update(coding="binary01", n_categories=2)
    elif model == "bbc2":
        L = int(cfg.get("L") or 3)
        pi = float(cfg["pi_s"])
        d = gen_bbc2(int(cfg["n"]), int(cfg["p"]), int(cfg["K"]), L, pi, seed)
        meta.update(coding="binary01" if L == 2 else "1-based", n_categories=L)
    else:
        L = int(cfg.get("L") or 3)
        d = gen_hierarchy(int(cfg["n_per_leaf"]), int(cfg["p"]), seed, L=L)
        meta.update(coding="1-based", n_categories=L)
        meta["super"] = d.params["super"]
    bio.save_bundle(args.out, meta, Y=d.Y, labels=d.labels, S=d.S)
    if args.tsv:
        bio.write_matrix(args.tsv, d.Y, coding=meta["coding"])
    return 0


FIT_KEYS = ["model", "k", "seed", "n_iter", "burn_in", "n_chains", "pi_s", "alpha", "gamma",
            "gamma0", "n_categories", "selection", "binarize", "tau", "search", "grid",
            "k_min", "k_max", "q", "min_node_size", "threshold", "max_leaves"]


def _run_fit(args, cfg, search=None):
    model = cfg["model"]
    if model is None:
        raise UsageError("fit needs --model")
    mcmc = _mcmc(cfg, model)
    ks = parse_k(cfg.get("k"))
    if search is not None:
        ks = None
    provenance_cfg = dict(cfg, input=str(args.input), input_sha256=_file_sha(args.input))
    if model == "integrate":
        stack = load_stack(args.input)
        g0 = 0.5 if cfg.get("gamma0") is None else float(cfg["gamma0"])
        res = fit_integration(stack, ks, pi_s=float(cfg["pi_s"]), gamma0=g0, mcmc=mcmc)
        prob = res.selection_prob
        doc = {"model": "integrate", "k_hat": res.k_hat, "k_values": sorted(res.per_k),
               "log_marginal": {str(k): v for k, v in res.per_k.items()},
               "log_prior_k": {str(k): 0.0 for k in res.per_k},
               "labels": res.labels.tolist(), "selection": (prob >= 0.5).astype(int).tolist(),
               "selection_prob": np.round(prob, 10).tolist(),
               "layer_names": stack.layer_names,
               "provenance": bio.provenance(provenance_cfg)}
        return bio._plain(doc)
    Y, coding, L = load_categorical(args.input, cfg)
    if cfg.get("n_categories") is not None:
        L = int(cfg["n_categories"])
    if model == "bbc1":
        g0 = 0.0 if cfg.get("gamma0") is None else float(cfg["gamma0"])
        hyper = Bbc1Hyper(gamma0=g0, pi_s=float(cfg["pi_s"]))
        res = fit_bbc1(Y, ks, hyper, mcmc, search=search)
    elif model == "bbc2":
        hyper = Bbc2Hyper(alpha=float(cfg["alpha"]), pi_s=float(cfg["pi_s"]), gamma=_gamma(cfg))
        res = fit_bbc2(Y, ks, hyper, mcmc, L, search=search, selection=cfg["selection"])
    else:
        raise UsageError(f"model {model!r} is not fitted by this command; use 'tree' for hbbc")
    provenance_cfg["category_coding"] = coding
    return bio.fit_document(res, provenance_cfg, coding=coding)


def cmd_fit(args):
    cfg = _resolve(args, FIT_KEYS)
    if cfg["model"] == "hbbc":
        return cmd_tree(args)
    doc = _run_fit(args, cfg)
    return _emit(args, doc)


def cmd_select_k(args):
    cfg = _resolve(args, FIT_KEYS)
    if cfg["model"] not in ("bbc1", "bbc2"):
        raise UsageError("select-k supports bbc1 and bbc2")
    if cfg.get("k_min") is None or cfg.get("k_max") is None:
        raise UsageError("select-k needs --k-min and --k-max")
    lo, hi = int(cfg["k_min"]), int(cfg["k_max"])
    if cfg["search"] == "dense":
        cfg["k"] = f"{lo}-{hi}"
        doc = _run_fit(args, cfg)
    elif cfg["search"] == "bracket":
        grid = int(cfg["grid"])
        doc = _run_fit(args, cfg, search=lambda score: bracket_search(score, lo, hi, grid))
    else:
        raise UsageError(f"unknown search {cfg['search']!r}")
    return _emit(args, doc)


TREE_KEYS = ["model", "seed", "n_iter", "burn_in", "n_chains", "pi_s", "alpha", "gamma", "q",
             "min_node_size", "threshold", "max_leaves", "n_categories", "binarize", "tau"]


def cmd_tree(args):
    cfg = _resolve(args, TREE_KEYS)
    mcmc = _mcmc(cfg, "hbbc")
    Y, coding, L = load_categorical(args.input, cfg)
    if cfg.get("n_categories") is not None:
        L = int(cfg["n_categories"])
    hcfg = HbbcConfig(q=float(cfg["q"]), min_node_size=cfg.get("min_node_size"),
                      hyper=Bbc2Hyper(alpha=float(cfg["alpha"]), pi_s=float(cfg["pi_s"]),
                                      gamma=_gamma(cfg)),
                      threshold=cfg.get("threshold"), max_leaves=cfg.get("max_leaves"))
    tree = grow_tree(Y, hcfg, mcmc, L)
    labels = tree.labels()
    prov = dict(cfg, model="hbbc", input=str(args.input), input_sha256=_file_sha(args.input),
                category_coding=coding)
    doc = {"model": "hbbc", "k_hat": int(labels.max()), "labels": labels.tolist(),
           "tree": tree.to_dict(), "category_coding": coding,
           "provenance": bio.provenance(prov)}
    return _emit(args, bio._plain(doc))


def evaluate_document(doc, truth_arrays, truth_meta=None):
    """Metric block comparing a result document with a truth bundle."""
    if "labels" not in truth_arrays:
        raise DataError("truth bundle has no labels")
    true = np.asarray(truth_arrays["labels"]).astype(np.int64)
    est = np.asarray(doc["labels"], dtype=np.int64)
    if true.shape != est.shape:
        raise DataError(f"truth has {true.size} objects but the result has {est.size}")
    out = {"ari": ari(true, est), "clustering_error": clustering_error(true, est),
           "k_true": int(len(set(true.tolist()) - {0})), "k_hat": doc.get("k_hat")}
    if truth_meta and "super" in truth_meta:
        out["ari_super"] = ari(np.asarray(truth_meta["super"]), est)
    S_true = truth_arrays.get("S")
    if S_true is not None and doc.get("selection") is not None and doc["model"] != "hbbc":
        S_est = np.asarray(doc["selection"], dtype=bool)
        S_true = np.asarray(S_true, dtype=bool)
        if S_true.ndim == 2 and doc["model"] in ("bbc2", "integrate"):
            S_est = align_selection(S_est, true, est, S_true.shape[1])
        out["feature_recovery"] = feature_recovery(S_true, S_est)
        fpr, fnr, tnr = confusion_rates(S_true, S_est)
        out.update(fpr=fpr, fnr=fnr, tnr=tnr)
    return bio._plain(out)


def cmd_evaluate(args):
    doc = bio.read_json(args.result)
    bio.validate_result(doc)
    truth, meta = bio.load_bundle(args.truth)
    doc["metrics"] = evaluate_document(doc, truth, meta)
    return _emit(args, doc)


def cmd_integrate_prep(args):
    cfg = _resolve(args, ["min_samples"])
    query = [ln.strip() for ln in Path(args.query).read_text().splitlines() if ln.strip()]
    if not query:
        raise DataError(f"{args.query}: empty query gene list")
    frames = [bio.read_real_matrix(p) for p in args.expr]
    genes = list(frames[0].index)
    common = set(genes)
    for f in frames[1:]:
        common &= set(f.index)
    genes = [g for g in genes if g in common]
    missing = [g for g in query if g not in common]
    if missing:
        raise DataError(f"query genes absent from some layer: {missing[:5]}")
    pos = {g: i for i, g in enumerate(genes)}
    Zfull = np.stack([correlation_z(f.loc[genes].to_numpy()) for f in frames])
    n_samples = np.array([f.shape[1] for f in frames])
    names = [Path(p).stem for p in args.expr]
    stack = CorrelationStack.from_genome(Zfull, [pos[g] for g in query], n_samples,
                                         int(cfg["min_samples"]), names)
    meta = {"layer_names": stack.layer_names, "query": query, "version": __version__,
            "min_samples": int(cfg["min_samples"])}
    bio.save_bundle(args.out, meta, Z=stack.Z, theta0=stack.theta0, var0=stack.var0,
                    n_samples=stack.n_samples)
    return 0


def _emit(args, doc):
    bio.validate_result(doc)
    if args.out:
        bio.write_json(args.out, doc)
    else:
        sys.stdout.write(bio.dumps(doc))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common_fit(p, models):
    p.add_argument("--input", required=True, help="TSV matrix or .npz bundle")
    p.add_argument("--model", choices=models)
    p.add_argument("--out", help="result JSON (stdout when omitted)")
    p.add_argument("--config", help="JSON file of option values")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-iter", dest="n_iter", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--n-chains", dest="n_chains", type=int)
    p.add_argument("--pi-s", dest="pi_s", type=float)
    p.add_argument("--alpha", type=float, help="truncated Poisson rate on K-1")
    p.add_argument("--gamma", help="Dirichlet prior, comma separated")
    p.add_argument("--n-categories", dest="n_categories", type=int)
    p.add_argument("--binarize", choices=["nonzero", "median", "threshold"],
                   help="read a real-valued TSV and binarize it with this rule")
    p.add_argument("--tau", type=float, help="threshold for --binarize threshold")


def build_parser():
    ap = _Parser(prog="bayesbiclust", description="Bayesian bi-clustering of categorical data")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic bundle with ground truth")
    p.add_argument("--model", choices=["bbc1", "bbc2", "hierarchy", "integration"])
    p.add_argument("--out", required=True)
    p.add_argument("--tsv", help="also write the matrix as TSV")
    p.add_argument("--config")
    for name, typ in [("n", int), ("p", int), ("K", int), ("L", int), ("ns", int),
                      ("pi-s", float), ("seed", int), ("n-per-leaf", int), ("n-extra", int),
                      ("shift", float), ("n-modules", int), ("module-size", int),
                      ("n-supporting", int)]:
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one model over a K range")
    _common_fit(p, ["bbc1", "bbc2", "hbbc", "integrate"])
    p.add_argument("--k", help="K, range 'a-b' or list 'a,b,c'")
    p.add_argument("--gamma0", type=float, help="null-cluster prior mass")
    p.add_argument("--selection", choices=["sample", "conditional"])
    for opt in ("q", "threshold"):
        p.add_argument(f"--{opt}", type=float)
    p.add_argument("--min-node-size", dest="min_node_size", type=int)
    p.add_argument("--max-leaves", dest="max_leaves", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-k", help="coarse-to-fine search for K")
    _common_fit(p, ["bbc1", "bbc2"])
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--search", choices=["bracket", "dense"])
    p.add_argument("--grid", type=int, help="grid points per bracket round")
    p.add_argument("--gamma0", type=float)
    p.add_argument("--selection", choices=["sample", "conditional"])
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("evaluate", help="add a metric block using a truth bundle")
    p.add_argument("--result", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tree", help="grow a hierarchical (HBBC) tree")
    _common_fit(p, ["hbbc"])
    for opt in ("q", "threshold"):
        p.add_argument(f"--{opt}", type=float)
    p.add_argument("--min-node-size", dest="min_node_size", type=int)
    p.add_argument("--max-leaves", dest="max_leaves", type=int)
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("integrate-prep", help="build a correlation stack bundle")
    p.add_argument("--expr", nargs="+", required=True,
                   help="expression TSVs, genes in rows, one file per layer")
    p.add_argument("--query", required=True, help="file of query gene ids, one per line")
    p.add_argument("--out", required=True)
    p.add_argument("--min-samples", dest="min_samples", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_integrate_prep)
    return ap


def _fail(exc, code):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except BiclustError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(exc, DataError.exit_code)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())

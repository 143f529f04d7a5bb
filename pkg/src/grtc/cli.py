"""Command-line interface: ``grtc <subcommand>``.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .config import ConfigError, RunConfig, config_to_dict, load_config
from .datagen import observe, synth_graph_tensor
from .evaluation import as_variant, cross_validate, relative_error, rmse, run_experiment
from .formats import (
    DataFormatError,
    atomic_write,
    read_factors,
    read_graph,
    read_tns,
    write_factors,
    write_graph,
    write_tns,
)
from .graph import (
    chain_graph,
    edge_density,
    epsilon_graph,
    inverse_distance_graph,
    laplacian_from_adjacency,
    low_rank_features,
)
from .solvers import SolverError, solve
from .tensor_core import CPFactors, SparseObservations, unfold_observations

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


class UsageError(ConfigError):
    pass


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _check_overwrite(paths, force):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _parse_graphs(items, k):
    """``MODE=PATH`` pairs (1-based mode) into a per-mode list of adjacency files."""
    graphs = [None] * k
    for item in items or []:
        mode, sep, path = item.partition("=")
        if not sep or not mode.isdigit():
            raise UsageError(f"--graph expects MODE=PATH, got {item!r}")
        i = int(mode) - 1
        if not 0 <= i < k:
            raise UsageError(f"--graph mode {mode} out of range 1..{k}")
        graphs[i] = path
    return graphs


def _load_laplacians(graph_paths, shape):
    laps = []
    for i, path in enumerate(graph_paths):
        if path is None:
            laps.append(None)
            continue
        if not Path(path).exists():
            raise DataFormatError(f"graph file for mode {i + 1} not found: {path}")
        W = read_graph(path, n=shape[i])
        laps.append(laplacian_from_adjacency(W))
    return laps


def _model_settings(cfg: RunConfig, args):
    m = cfg.model
    variant = as_variant(args.variant or m.variant)
    solver = args.solver or m.solver
    rank = args.rank or m.rank
    # config values that the variant does not use are dropped; explicit flags are checked
    lam = args.lam if args.lam is not None else (0.0 if variant.tag == "unreg" else m.lam)
    if args.lambda_L is not None:
        lamL = args.lambda_L
    else:
        lamL = m.lambda_L if variant.tag == "greg" else 0.0
    try:
        variant.check(lam, lamL)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return variant, solver, rank, lam, lamL


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen(args, cfg: RunConfig):
    out = Path(args.out or cfg.paths.outdir or ".")
    files = {n: out / n for n in ("truth.tns", "train.tns", "test.tns", "graph_mode1.txt")}
    _check_overwrite(files.values(), args.force)
    synth = synth_graph_tensor(cfg.synthetic.to_spec())
    train, test = observe(synth.tensor, cfg.sampling.to_spec())
    write_tns(files["truth.tns"], SparseObservations.from_dense(synth.tensor))
    write_tns(files["train.tns"], train)
    write_tns(files["test.tns"], test)
    write_graph(files["graph_mode1.txt"], synth.adjacency)
    print(json.dumps({"shape": list(synth.tensor.shape), "train": train.nnz, "test": test.nnz,
                      "noise_sigma": synth.noise_sigma, "snr_db": synth.empirical_snr_db()}))
    return EXIT_OK


def _graph_features(path, mode):
    p = Path(path)
    if p.suffix == ".tns":
        obs = read_tns(p)
        return unfold_observations(obs, mode)
    try:
        return np.loadtxt(p, ndmin=2, delimiter="," if p.suffix == ".csv" else None)
    except ValueError as exc:
        raise DataFormatError(f"cannot read matrix {path}: {exc}") from exc


def cmd_build_graph(args, cfg: RunConfig):
    _check_overwrite([args.out], args.force)
    mode = args.mode - 1
    if args.method == "chain":
        if args.nodes is not None:
            n = args.nodes
        elif args.input:
            X = _graph_features(args.input, mode)
            n = X.shape[0]
        else:
            raise UsageError("chain graph needs --nodes or an input file")
        W = chain_graph(n)
    else:
        if not args.input:
            raise UsageError(f"method {args.method} needs an input matrix or tensor")
        X = _graph_features(args.input, mode)
        if args.method == "eps":
            feats = low_rank_features(X, args.rank) if args.rank else (X.toarray() if sp.issparse(X) else X)
            W = epsilon_graph(feats, eps=args.eps, sigma=args.sigma, density=args.density)
        else:
            feats = X.toarray() if sp.issparse(X) else X
            W = inverse_distance_graph(feats)
    if W.nnz == 0:
        _warn("graph has no edges")
    write_graph(args.out, W)
    print(json.dumps({"nodes": W.shape[0], "edges": W.nnz // 2, "density": edge_density(W)}))
    return EXIT_OK


def cmd_complete(args, cfg: RunConfig):
    train_path = args.train or cfg.paths.train
    if not train_path:
        raise UsageError("no training tensor given (--train or paths.train)")
    obs = read_tns(train_path)
    test_path = args.test or cfg.paths.test
    test = read_tns(test_path, shape=obs.shape) if test_path else None
    variant, solver, rank, lam, lamL = _model_settings(cfg, args)
    graph_items = args.graph or [f"{k}={v}" for k, v in cfg.paths.graphs.items()]
    graph_paths = _parse_graphs(graph_items, obs.order)
    if variant.uses_graph and all(g is None for g in graph_paths):
        raise UsageError("variant greg needs at least one --graph MODE=PATH")
    laps = variant.laplacians(_load_laplacians(graph_paths, obs.shape), lamL, obs.shape)
    out = Path(args.out or cfg.paths.outdir or ".")
    files = [out / "factors.npz", out / "report.json", out / "trace.csv"]
    _check_overwrite(files, args.force)
    init = CPFactors.random(obs.shape, rank, np.random.default_rng(cfg.model.seed if args.seed is None else args.seed))
    F, rep = solve(solver, obs, init, laps, lam, stop=cfg.stop, cg=cfg.cg, admm_cfg=cfg.admm, test=test)
    write_factors(files[0], F)
    payload = rep.to_dict()
    payload["model"] = {"variant": variant.tag, "lambda": lam, "lambda_L": lamL, "rank": rank}
    atomic_write(files[1], json.dumps(payload, indent=2))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    from .solvers import TRACE_COLUMNS

    w.writerow(TRACE_COLUMNS)
    w.writerows(rep.trace_rows())
    atomic_write(files[2], buf.getvalue())
    print(json.dumps(payload["summary"]))
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig):
    F = read_factors(args.factors or cfg.paths.factors)
    truth = read_tns(args.truth or cfg.paths.truth)
    F.check_shape(truth.shape)
    metrics = {"re": relative_error(F, truth), "rmse": rmse(F, truth), "entries": truth.nnz}
    if args.split:
        metrics["split"] = args.split
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_cv(args, cfg: RunConfig):
    train_path = args.train or cfg.paths.train
    if not train_path:
        raise UsageError("no training tensor given (--train or paths.train)")
    obs = read_tns(train_path)
    variant = as_variant(args.variant or cfg.model.variant)
    solver = args.solver or cfg.model.solver
    graph_items = args.graph or [f"{k}={v}" for k, v in cfg.paths.graphs.items()]
    graphs = _load_laplacians(_parse_graphs(graph_items, obs.order), obs.shape)
    candidates = None
    if args.candidate:
        candidates = []
        for c in args.candidate:
            try:
                lam, lamL = (float(v) for v in c.split(","))
            except ValueError as exc:
                raise UsageError(f"--candidate expects LAMBDA,LAMBDA_L, got {c!r}") from exc
            candidates.append((lam, lamL))
    cv_cfg = cfg.cv if args.folds is None else dataclasses.replace(cfg.cv, folds=args.folds)
    try:
        res = cross_validate(obs, graphs, cv_cfg, solver=solver, variant=variant, rank=args.rank or cfg.model.rank,
                             candidates=candidates, stop=cfg.stop, cg=cfg.cg, admm_cfg=cfg.admm)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc
    best = {"variant": variant.tag, "lambda": res.best[0], "lambda_L": res.best[1]}
    if args.out:
        _check_overwrite([args.out], args.force)
        atomic_write(args.out, json.dumps({**best, "table": res.table}, indent=2))
    print(json.dumps(best))
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig):
    from .bench import BENCH_COLUMNS, scaling_benchmark, scaling_ratios

    b = cfg.bench
    rows = scaling_benchmark(tuple(b.shape), b.rank, b.nnz, b.lap_edges, b.repeats, b.seed, tuple(b.backends))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        _check_overwrite([args.out], args.force)
        atomic_write(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    for backend in sorted({r["backend"] for r in rows}):
        print(json.dumps({"backend": backend, **scaling_ratios(rows, backend)}), file=sys.stderr)
    return EXIT_OK


def cmd_experiment(args, cfg: RunConfig):
    out = Path(args.out or cfg.paths.outdir or "experiment")
    _check_overwrite([out / "summary.json"], args.force)
    spec = cfg.experiment_spec()
    report = run_experiment(spec, log=(lambda s: print(s, file=sys.stderr)) if args.verbose else None)
    report.write_bundle(out)
    print(report.format_table())
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grtc", description="Graph-regularized CP tensor completion")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_, out_help="output path"):
        sp_.add_argument("--config", help="YAML/JSON run configuration")
        sp_.add_argument("--out", help=out_help)
        sp_.add_argument("--force", action="store_true", help="overwrite existing outputs")

    def model_flags(sp_):
        sp_.add_argument("--train", help="training tensor (.tns)")
        sp_.add_argument("--graph", action="append", metavar="MODE=PATH", help="graph edge list for a mode (1-based)")
        sp_.add_argument("--solver", choices=["altmin-cg", "admm", "altmin-exact"])
        sp_.add_argument("--variant", choices=["greg", "nuclreg", "unreg"])
        sp_.add_argument("--rank", type=int)

    g = sub.add_parser("gen", help="generate a synthetic graph-structured tensor")
    common(g, "output directory")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build-graph", help="build a graph edge list")
    common(b, "edge list file")
    b.add_argument("input", nargs="?", help="matrix (.txt/.csv) or tensor (.tns)")
    b.add_argument("--mode", type=int, default=1, help="mode whose rows are nodes (1-based)")
    b.add_argument("--method", choices=["eps", "chain", "inv-dist"], required=True)
    b.add_argument("--nodes", type=int, help="node count for a chain graph")
    b.add_argument("--eps", type=float)
    b.add_argument("--sigma", type=float)
    b.add_argument("--density", type=float, default=0.05, help="target edge density when --sigma is omitted")
    b.add_argument("--rank", type=int, default=10, help="rank of the feature approximation (0 = raw rows)")
    b.set_defaults(func=cmd_build_graph)

    c = sub.add_parser("complete", help="fit a CP model to observed entries")
    common(c, "output directory")
    model_flags(c)
    c.add_argument("--test", help="held-out tensor (.tns) for test metrics")
    c.add_argument("--lambda", dest="lam", type=float)
    c.add_argument("--lambda-L", dest="lambda_L", type=float)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_complete)

    e = sub.add_parser("evaluate", help="RE and RMSE of factors against a tensor")
    e.add_argument("--config")
    e.add_argument("--factors")
    e.add_argument("--truth")
    e.add_argument("--split", help="label printed with the metrics")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("cv", help="cross-validate (lambda, lambda_L)")
    common(v, "best-parameter JSON file")
    model_flags(v)
    v.add_argument("--candidate", action="append", metavar="LAMBDA,LAMBDA_L")
    v.add_argument("--folds", type=int)
    v.set_defaults(func=cmd_cv)

    n = sub.add_parser("bench", help="Hessian-vector product timings")
    common(n, "timing CSV")
    n.set_defaults(func=cmd_bench)

    x = sub.add_parser("experiment", help="full variant x solver experiment grid")
    common(x, "output directory")
    x.add_argument("--verbose", action="store_true")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None))
        return args.func(args, cfg)
    except (ConfigError, ValueError) as exc:
        code = EXIT_DATA if isinstance(exc, DataFormatError) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())


__all__ = ["main", "build_parser", "RunConfig", "config_to_dict"]

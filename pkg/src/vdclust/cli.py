"""Command-line surface for the clustering pipeline.

Subcommands: `index` (build and persist the approximate-neighborhood
index), `cluster` (end-to-end clustering with stage timings), `eval`
(score predicted labels against ground truth), and `bench` (parameter
sweeps with optional exact-kNN recall).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .ceos import (CeosParams, build_index, knn_lists, load_index, query_all,
                   save_index)
from .data_io import (Dataset, KernelFeatureConfig, estimate_sigma, kernel_map,
                      load_csv, load_fvecs, load_labels, normalize_unit,
                      save_labels)
from .errors import ConfigError
from .graph import build_graph, exact_knn, write_graph_text
from .metrics import evaluate
from .propagation import DnpParams, dnp, louvain, lpa
from .report import dataset_fingerprint, make_report, print_report


class UsageError(Exception):
    """Invalid flag value or flag combination (exit code 2)."""


def _thread_limit(args):
    """Limit BLAS worker threads; results never depend on the count."""
    n = getattr(args, "threads", None)
    if n is None:
        env = os.environ.get("VDC_THREADS")
        n = int(env) if env else None
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        print("threadpoolctl unavailable; --threads ignored", file=sys.stderr)
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def _load_dataset(args) -> Dataset:
    if args.format == "fvecs":
        ds = load_fvecs(args.input)
    else:
        ds = load_csv(args.input, has_header=getattr(args, "header", False))
    ds.metric = args.metric
    return ds


def _preprocess(ds: Dataset, args) -> tuple[Dataset, dict]:
    """Normalize or kernel-map the dataset onto the unit sphere."""
    info = {}
    if args.metric == "cosine":
        if args.sigma is not None or args.dprime is not None:
            raise UsageError("--sigma/--dprime only apply to l2 or l1 metrics")
        out = normalize_unit(ds)
    else:
        sigma = args.sigma
        if sigma is None:
            sigma = estimate_sigma(ds, metric=args.metric, seed=args.seed)
        cfg = KernelFeatureConfig(target_metric=args.metric,
                                  d_prime=args.dprime or 1024,
                                  sigma=sigma, seed=args.kernel_seed)
        out = kernel_map(ds, cfg)
        info = {"sigma": sigma, "dprime": cfg.d_prime, "kernel_seed": cfg.seed}
    return out, info


def cmd_index(args) -> int:
    t0 = time.perf_counter()
    ds = _load_dataset(args)
    t_load = time.perf_counter()
    mapped, kinfo = _preprocess(ds, args)
    t_prep = time.perf_counter()
    params = CeosParams(n_projections=args.D, n_top=args.s, bucket_cap=args.m,
                        seed_r=args.seed, seed_s=args.seed + 1)
    with _thread_limit(args):
        idx = build_index(mapped, params)
    t_build = time.perf_counter()
    save_index(idx, args.out)
    t_save = time.perf_counter()
    occ = idx.occupancy()
    report = make_report(
        command="index",
        parameters={"D": args.D, "s": args.s, "m": args.m, "metric": args.metric,
                    **kinfo,
                    "buckets": int(idx.n_buckets),
                    "entries": int(idx.n_entries),
                    "bucket_occupancy": {
                        "min": int(occ.min()), "max": int(occ.max()),
                        "mean": float(occ.mean())}},
        dataset=dataset_fingerprint(mapped),
        timings_ms={"load": 1e3 * (t_load - t0),
                    "preprocess": 1e3 * (t_prep - t_load),
                    "build_index": 1e3 * (t_build - t_prep),
                    "save": 1e3 * (t_save - t_build)},
        seeds={"seed": args.seed, "seed_r": params.seed_r, "seed_s": params.seed_s},
    )
    print_report(report)
    return 0


def _cluster_once(ds, mapped, args, index=None):
    """Run one clustering configuration; returns (labeling, timings_ms)."""
    timings = {}
    t0 = time.perf_counter()
    if args.backend == "exact":
        lists = exact_knn(ds, k=args.k, metric=args.metric)
        neigh = None
    else:
        idx = index
        if idx is None:
            params = CeosParams(n_projections=args.D, n_top=args.s,
                                bucket_cap=args.m, seed_r=args.seed,
                                seed_s=args.seed + 1)
            idx = build_index(mapped, params)
        if idx.n != mapped.n or idx.d != mapped.d:
            raise ValueError(
                f"index was built over n={idx.n}, d={idx.d} but the dataset "
                f"maps to n={mapped.n}, d={mapped.d}")
        neigh = query_all(mapped, idx)
        lists = None
    t1 = time.perf_counter()
    timings["find_knn"] = 1e3 * (t1 - t0)

    g = None
    if not (args.backend == "ceos" and args.algo == "dnp"):
        if lists is None:
            lists = knn_lists(neigh, k=args.k)
        g = build_graph(lists, kind=args.graph,
                        metric="cosine" if args.backend == "ceos" else args.metric)
        if getattr(args, "dump_graph", None):
            write_graph_text(g, args.dump_graph)
    t2 = time.perf_counter()
    timings["build_graph"] = 1e3 * (t2 - t1)

    if args.algo == "dnp":
        source = neigh if args.backend == "ceos" else g
        check = "knn" if args.backend == "ceos" else "stored"
        labeling = dnp(source, DnpParams(k=args.k, c=args.c), label_check=check)
    elif args.algo == "lpa":
        labeling = lpa(g, max_iters=args.lpa_iters, seed=args.seed)
    else:
        labeling = louvain(g, seed=args.seed)
    t3 = time.perf_counter()
    timings["propagation"] = 1e3 * (t3 - t2)
    return labeling, timings


def cmd_cluster(args) -> int:
    if args.k < 1:
        raise UsageError(f"--k must be >= 1, got {args.k}")
    if args.c < 1:
        raise UsageError(f"--c must be >= 1, got {args.c}")
    if args.backend == "exact" and args.index:
        raise UsageError("--index only applies to the ceos backend")
    if args.algo == "dnp" and args.graph == "mutual":
        print("warning: dnp over a mutual graph; propagation normally runs on "
              "symmetric graphs or approximate neighborhood lists", file=sys.stderr)
    ds = _load_dataset(args)
    if args.backend == "ceos":
        mapped, kinfo = _preprocess(ds, args)
    else:
        if args.sigma is not None or args.dprime is not None:
            raise UsageError("--sigma/--dprime only apply to the ceos backend")
        mapped, kinfo = ds, {}
    index = load_index(args.index) if args.index else None
    with _thread_limit(args):
        labeling, timings = _cluster_once(ds, mapped, args, index=index)
    save_labels(labeling.labels, args.out)
    params = {"backend": args.backend, "graph": args.graph, "algo": args.algo,
              "k": args.k, "c": args.c, "k_prime": DnpParams(k=args.k, c=args.c).k_prime,
              **kinfo}
    if args.backend == "ceos" and not args.index:
        params.update({"D": args.D, "s": args.s, "m": args.m})
    report = make_report(
        command="cluster",
        parameters=params,
        dataset=dataset_fingerprint(mapped),
        timings_ms=timings,
        clusters=labeling.n_clusters,
        seeds={"seed": args.seed},
    )
    print_report(report)
    return 0


def cmd_eval(args) -> int:
    pred = load_labels(args.pred)
    truth = load_labels(args.truth)
    if len(pred) != len(truth):
        print(f"label count mismatch: {len(pred)} predictions vs "
              f"{len(truth)} ground-truth labels", file=sys.stderr)
        return 1
    scores = evaluate(pred, truth, noise_policy=args.noise)
    print(json.dumps(scores, indent=2, sort_keys=True))
    return 0


def _parse_sweep(spec: str) -> list[dict]:
    """Expand 's=10,20;m=25,50' into a cartesian list of override dicts."""
    allowed = {"D", "s", "m", "k", "c", "kprime"}
    axes = []
    if not spec.strip():
        raise UsageError("empty sweep spec")
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            raise UsageError(f"empty sweep clause in {spec!r}")
        if "=" not in part:
            raise UsageError(f"sweep clause {part!r} is not of the form key=v1,v2")
        key, _, vals = part.partition("=")
        key = key.strip()
        if key not in allowed:
            raise UsageError(f"unknown sweep key {key!r}; allowed: {sorted(allowed)}")
        try:
            values = [int(v) for v in vals.split(",") if v.strip() != ""]
        except ValueError:
            raise UsageError(f"non-integer value in sweep clause {part!r}") from None
        if not values:
            raise UsageError(f"sweep clause {part!r} has no values")
        axes.append((key, values))
    combos = [{}]
    for key, values in axes:
        combos = [dict(c, **{key: v}) for c in combos for v in values]
    return combos


def cmd_bench(args) -> int:
    combos = _parse_sweep(args.sweep)
    ds = _load_dataset(args)
    mapped, _ = _preprocess(ds, args)
    truth = load_labels(args.truth) if args.truth else None
    exact_cache: dict[int, object] = {}
    rows = []
    with _thread_limit(args):
        for combo in combos:
            k = combo.get("k", args.k)
            c = combo.get("c", args.c)
            if "kprime" in combo:
                k = combo["kprime"] * int(c)
            params = CeosParams(n_projections=combo.get("D", args.D),
                                n_top=combo.get("s", args.s),
                                bucket_cap=combo.get("m", args.m),
                                seed_r=args.seed, seed_s=args.seed + 1)
            t0 = time.perf_counter()
            idx = build_index(mapped, params)
            neigh = query_all(mapped, idx)
            t1 = time.perf_counter()
            row = {"params": {"D": params.n_projections, "s": params.n_top,
                              "m": params.bucket_cap, "k": k, "c": c},
                   "timings_ms": {"find_knn": 1e3 * (t1 - t0)}}
            if args.oracle:
                if k not in exact_cache:
                    exact_cache[k] = exact_knn(mapped, k=k, metric="cosine")
                row["recall"] = _recall_at_k(neigh, exact_cache[k], k)
            if args.algo:
                t2 = time.perf_counter()
                if args.algo == "dnp":
                    labeling = dnp(neigh, DnpParams(k=k, c=c))
                else:
                    lists = knn_lists(neigh, k=k)
                    g = build_graph(lists, kind="symmetric", metric="cosine")
                    labeling = (lpa(g, seed=args.seed) if args.algo == "lpa"
                                else louvain(g, seed=args.seed))
                row["timings_ms"]["propagation"] = 1e3 * (time.perf_counter() - t2)
                row["clusters"] = labeling.n_clusters
                if truth is not None:
                    row["ami"] = evaluate(labeling.labels, truth)["ami"]
            rows.append(row)
    if args.csv:
        _print_csv(rows)
    else:
        print(json.dumps(rows, indent=2, sort_keys=True))
    return 0


def _recall_at_k(neigh, exact_lists, k: int) -> float:
    hits = 0
    total = 0
    for q in range(neigh.n):
        approx = set(neigh[q].ids[:k].tolist())
        exact = exact_lists.ids_of(q)[:k].tolist()
        hits += len(approx.intersection(exact))
        total += len(exact)
    return hits / total if total else 0.0


def _print_csv(rows) -> None:
    import csv as _csv

    flat = []
    for row in rows:
        r = dict(row["params"])
        for stage, ms in row["timings_ms"].items():
            r[f"{stage}_ms"] = ms
        for key in ("recall", "ami", "clusters"):
            if key in row:
                r[key] = row[key]
        flat.append(r)
    fields = sorted({k for r in flat for k in r})
    writer = _csv.DictWriter(sys.stdout, fieldnames=fields)
    writer.writeheader()
    writer.writerows(flat)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vdclust",
                                description="Varied-density clustering toolkit")
    p.add_argument("--version", action="version", version=f"vdclust {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_io(sp, metric=True):
        sp.add_argument("--input", required=True, help="dataset file")
        sp.add_argument("--format", choices=("fvecs", "csv"), default="fvecs")
        sp.add_argument("--header", action="store_true",
                        help="csv input has a header row")
        if metric:
            sp.add_argument("--metric", choices=("cosine", "l2", "l1"),
                            default="cosine")
            sp.add_argument("--sigma", type=float, default=None,
                            help="kernel bandwidth (l2/l1 only)")
            sp.add_argument("--dprime", type=int, default=None,
                            help="random feature pairs (l2/l1 only)")
            sp.add_argument("--kernel-seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (default: VDC_THREADS or all cores)")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("index", help="build and persist a CEOs index")
    add_io(sp)
    sp.add_argument("--D", type=int, required=True, help="projections per bank")
    sp.add_argument("--s", type=int, required=True, help="top directions per bank")
    sp.add_argument("--m", type=int, required=True, help="bucket capacity")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_index)

    sp = sub.add_parser("cluster", help="cluster a dataset end to end")
    add_io(sp)
    sp.add_argument("--backend", choices=("exact", "ceos"), default="exact")
    sp.add_argument("--index", default=None, help="previously saved index (ceos)")
    sp.add_argument("--graph", choices=("symmetric", "mutual"), default="symmetric")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--algo", choices=("dnp", "lpa", "louvain"), default="dnp")
    sp.add_argument("--c", type=float, default=1.0, help="density divisor (dnp)")
    sp.add_argument("--lpa-iters", type=int, default=100)
    sp.add_argument("--D", type=int, default=128)
    sp.add_argument("--s", type=int, default=10)
    sp.add_argument("--m", type=int, default=50)
    sp.add_argument("--dump-graph", default=None, help="write graph edges to file")
    sp.add_argument("--out", required=True, help="labels output file")
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("eval", help="score predicted labels vs ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--noise", choices=("own-cluster", "exclude"),
                    default="own-cluster")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="parameter sweep over one dataset")
    add_io(sp)
    sp.add_argument("--sweep", required=True,
                    help="spec like 's=10,20;m=25,50;k=8'")
    sp.add_argument("--D", type=int, default=128)
    sp.add_argument("--s", type=int, default=10)
    sp.add_argument("--m", type=int, default=50)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--c", type=int, default=1)
    sp.add_argument("--oracle", action="store_true",
                    help="report recall against brute-force kNN")
    sp.add_argument("--algo", choices=("dnp", "lpa", "louvain"), default=None)
    sp.add_argument("--truth", default=None, help="labels file for AMI")
    sp.add_argument("--csv", action="store_true", help="emit CSV instead of JSON")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: build complexes, analyze rank paths, train models,
run ablations, and verify the property suite.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checks import run_all_checks
from .complexes import CombinatorialComplex, RankPath, min_bottleneck_width, support_profile
from .dataio import (
    DataError,
    load_path,
    read_csv_labels,
    read_csv_matrix,
    read_edge_tsv,
    read_grid_bin,
    read_grid_csv,
    read_hyperedges,
    read_xyz_csv,
)
from .lifting import (
    ALL_TRIANGLES,
    GraphInput,
    GridInput,
    HypergraphInput,
    PointCloudInput,
    lift_graph,
    lift_grid,
    lift_hypergraph,
    lift_point_cloud,
)
from .model import TopoUNetConfig
from .synthetic import (
    ABLATION_EPOCHS,
    ABLATION_LR,
    ABLATION_PATHS,
    ABLATION_PATIENCE,
    ABLATION_SEEDS,
    ABLATION_WEIGHT_DECAY,
    ablation_config,
    heterophilic_node_dataset,
    homophilic_node_dataset,
)
from .training import (
    Dataset,
    RunResult,
    run_ablation,
    train,
    write_aggregate_json,
    write_results_csv,
)

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(Exception):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _prepare_out_dir(out, cfg: dict, force: bool) -> tuple[Path, str]:
    """Create the output directory, refusing to reuse one written under a
    different config hash unless forced."""
    h = config_hash(cfg)
    out = Path(out)
    marker = out / "config.json"
    if marker.exists():
        previous = json.loads(marker.read_text())
        if previous.get("_hash") != h and not force:
            raise UsageError(
                f"output dir {out} holds results for config {previous.get('_hash')}, "
                f"not {h}; pass --force to overwrite"
            )
    out.mkdir(parents=True, exist_ok=True)
    marker.write_text(json.dumps({**cfg, "_hash": h}, indent=2, sort_keys=True))
    return out, h


# -- build ---------------------------------------------------------------


def _load_input(args):
    path = load_path(args.input)
    if args.kind == "graph":
        num_nodes, edges = read_edge_tsv(path)
        if args.num_nodes is not None:
            num_nodes = max(num_nodes, args.num_nodes)
        features = read_csv_matrix(load_path(args.features)) if args.features else None
        labels = read_csv_labels(load_path(args.labels)) if args.labels else None
        return GraphInput(num_nodes, edges, features, labels)
    if args.kind == "hypergraph":
        hyperedges = read_hyperedges(path)
        num_nodes = max(max(he) for he in hyperedges) + 1
        if args.num_nodes is not None:
            num_nodes = max(num_nodes, args.num_nodes)
        return HypergraphInput(num_nodes, hyperedges)
    if args.kind == "grid":
        if path.suffix == ".csv":
            img = read_grid_csv(path)
        else:
            img = read_grid_bin(path)
            if img.ndim == 3:
                img = img[0]
        return GridInput(img.shape[0], img.shape[1], img)
    points = read_xyz_csv(path)
    return PointCloudInput(points, k=args.knn)


def cmd_build(args) -> int:
    raw = _load_input(args)
    if args.kind == "graph":
        cc = lift_graph(raw, with_triangles=args.with_triangles,
                        with_global=args.with_global, triangle_mode=args.triangle_mode)
    elif args.kind == "hypergraph":
        cc = lift_hypergraph(raw, with_rank2=args.with_rank2,
                             min_pairwise_overlap=args.min_overlap)
    elif args.kind == "grid":
        cc = lift_grid(raw)
    else:
        cc = lift_point_cloud(raw)
    summary = " ".join(f"n{r}={cc.num_cells(r)}" for r in cc.ranks)
    print(summary)
    if args.out:
        Path(args.out).write_text(cc.to_json(indent=2))
        print(f"wrote {args.out}")
    return EXIT_OK


# -- analyze ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    cc = CombinatorialComplex.from_json(load_path(args.complex).read_text())
    ranks = [int(r) for r in args.path.split(",")]
    path = RankPath(cc, ranks)
    profile = support_profile(cc, path)
    rows = []
    for rank, n, ratio in profile.rows():
        rows.append({
            "rank": rank,
            "n_cells": n,
            "rho": "" if ratio is None else float(ratio),
        })
    rho_bot = float(profile.rho_bot)
    width = min_bottleneck_width(args.d0, path) if args.d0 else None

    if args.format == "json":
        payload = {"rows": rows, "rho_bot": rho_bot}
        if width is not None:
            payload["min_bottleneck_width"] = {"d0": args.d0, "width": width}
        text = json.dumps(payload, indent=2)
    elif args.format == "csv":
        lines = ["rank,n_cells,rho"]
        lines += [f"{r['rank']},{r['n_cells']},{r['rho']}" for r in rows]
        lines.append(f"rho_bot,,{rho_bot}")
        if width is not None:
            lines.append(f"min_width_d0_{args.d0},,{width}")
        text = "\n".join(lines)
    else:
        lines = [f"{'rank':>6} {'n_cells':>8} {'rho_i':>12}"]
        for r in rows:
            rho = f"{r['rho']:.6g}" if r["rho"] != "" else ""
            lines.append(f"{r['rank']:>6} {r['n_cells']:>8} {rho:>12}")
        lines.append(f"rho_bot = {rho_bot:.6g}")
        if width is not None:
            lines.append(f"min bottleneck width for d0={args.d0}: {width}")
        text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


# -- train -----------------------------------------------------------------

TRAIN_CONFIG_KEYS = {"task", "data", "lift", "model", "training", "seeds"}
TRAINING_KEYS = {"epochs", "lr", "weight_decay", "patience", "batch_size"}


def _build_dataset(task: str, data: dict, lift: dict) -> Dataset:
    if task == "synthetic_heterophilic":
        return heterophilic_node_dataset(seed=int(data.get("seed", 0)))
    if task == "synthetic_homophilic":
        return homophilic_node_dataset(seed=int(data.get("seed", 0)))
    if task == "node":
        num_nodes, edges = read_edge_tsv(load_path(data["edges"]))
        g = GraphInput(
            num_nodes, edges,
            node_features=read_csv_matrix(load_path(data["features"])),
            node_labels=read_csv_labels(load_path(data["labels"])),
        )
        cc = lift_graph(
            g,
            with_triangles=lift.get("with_triangles", True),
            with_global=lift.get("with_global", False),
            triangle_mode=lift.get("triangle_mode", ALL_TRIANGLES),
        )
        return Dataset(kind="node_task", complexes=[cc], features=[g.node_features],
                       labels=g.node_labels)
    if task == "hypergraph":
        hyperedges = read_hyperedges(load_path(data["hyperedges"]))
        num_nodes = max(max(he) for he in hyperedges) + 1
        h = HypergraphInput(num_nodes, hyperedges)
        cc = lift_hypergraph(h, with_rank2=lift.get("with_rank2", True),
                             min_pairwise_overlap=lift.get("min_pairwise_overlap", 1))
        return Dataset(
            kind="hypergraph_task", complexes=[cc],
            features=[read_csv_matrix(load_path(data["features"]))],
            labels=read_csv_labels(load_path(data["labels"])),
        )
    if task == "reconstruction":
        stack = read_grid_bin(load_path(data["images"]))
        if stack.ndim == 2:
            stack = stack[None]
        h, w = stack.shape[1], stack.shape[2]
        cc = lift_grid(GridInput(h, w))
        images = [img.reshape(-1, 1) for img in stack]
        limit = data.get("limit")
        if limit:
            images = images[: int(limit)]
        return Dataset(kind="reconstruction_task", complexes=[cc], features=images)
    raise UsageError(f"unknown task {task!r}")


def _parse_experiment_config(path) -> dict:
    cfg = json.loads(load_path(path).read_text())
    unknown = set(cfg) - TRAIN_CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown experiment config keys {sorted(unknown)}")
    if "task" not in cfg or "model" not in cfg:
        raise UsageError("experiment config needs 'task' and 'model'")
    training = cfg.get("training", {})
    unknown = set(training) - TRAINING_KEYS
    if unknown:
        raise UsageError(f"unknown training keys {sorted(unknown)}")
    return cfg


def _train_one(payload):
    config_dict, dataset, seed, training = payload
    config = TopoUNetConfig.from_dict(config_dict)
    return train(config, dataset, seed=seed, **training)


def _run_seeds(config: TopoUNetConfig, dataset, seeds, training, threads) -> list[RunResult]:
    payloads = [(config.to_dict(), dataset, seed, training) for seed in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_train_one, payloads))
    return [_train_one(p) for p in payloads]


def cmd_train(args) -> int:
    cfg = _parse_experiment_config(args.config)
    dataset = _build_dataset(cfg["task"], cfg.get("data", {}), cfg.get("lift", {}))
    model_config = TopoUNetConfig.from_dict(cfg["model"])
    seeds = cfg.get("seeds", [args.seed])
    training = cfg.get("training", {})
    out, h = _prepare_out_dir(args.out, cfg, args.force)
    results = _run_seeds(model_config, dataset, seeds, training, args.threads)
    write_results_csv(out / f"runs-{h}.csv", results)
    agg = write_aggregate_json(out / f"aggregate-{h}.json", results, h)
    print(f"test metric over {len(seeds)} seed(s): "
          f"{agg['mean']:.4f} +/- {agg['std']:.4f}")
    print(f"wrote {out / f'runs-{h}.csv'}")
    return EXIT_OK


# -- ablate ------------------------------------------------------------------

ABLATE_CONFIG_KEYS = {"task", "data", "matrix", "seeds", "training", "hidden"}


def cmd_ablate(args) -> int:
    if args.config:
        cfg = json.loads(load_path(args.config).read_text())
        unknown = set(cfg) - ABLATE_CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown ablation config keys {sorted(unknown)}")
    else:
        cfg = {"task": "synthetic_heterophilic"}
    task = cfg.get("task", "synthetic_heterophilic")
    data = cfg.get("data", {})
    dataset = _build_dataset(task, data, {})
    matrix = [
        (tuple(entry["path"]), bool(entry["use_skips"]))
        for entry in cfg.get(
            "matrix",
            [{"path": list(p), "use_skips": s}
             for p in ABLATION_PATHS for s in (True, False)],
        )
    ]
    seeds = cfg.get("seeds", list(ABLATION_SEEDS))
    training = {
        "epochs": ABLATION_EPOCHS,
        "lr": ABLATION_LR,
        "weight_decay": ABLATION_WEIGHT_DECAY,
        "patience": ABLATION_PATIENCE,
        **cfg.get("training", {}),
    }
    base = ablation_config(dataset, matrix[0][0], hidden=cfg.get("hidden", 16))
    out, h = _prepare_out_dir(args.out, {**cfg, "seeds": list(seeds)}, args.force)
    table = run_ablation(base, matrix, dataset, seeds, **training)
    print(table.to_text())
    (out / f"ablation-{h}.json").write_text(json.dumps(table.to_json_dict(), indent=2))
    with (out / f"ablation-{h}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "use_skips", "rho_total", "param_count", "mean", "std", "delta"])
        for r in table.rows:
            delta = table.delta(r.path) if not r.use_skips else ""
            writer.writerow(["-".join(map(str, r.path)), r.use_skips, r.rho_total,
                             r.param_count, r.mean, r.std, delta])
    print(f"wrote {out / f'ablation-{h}.csv'}")
    return EXIT_OK


# -- verify -------------------------------------------------------------------


def cmd_verify(args) -> int:
    results = run_all_checks()
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
    failures = [r for r in results if not r.passed]
    if failures:
        print(f"first failing check: {failures[0].name}", file=sys.stderr)
        return EXIT_CHECK_FAILURE
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topounet",
        description="Rank-path encoder-decoder networks on combinatorial complexes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="lift a raw domain into a complex")
    p.add_argument("input", help="input file (TSV edges, hyperedge lines, grid, or XYZ CSV)")
    p.add_argument("--kind", choices=["graph", "hypergraph", "grid", "pointcloud"],
                   required=True)
    p.add_argument("--out", help="write the complex as JSON")
    p.add_argument("--num-nodes", type=int, help="override inferred node count")
    p.add_argument("--features", help="node feature CSV (graph)")
    p.add_argument("--labels", help="node label CSV (graph)")
    p.add_argument("--with-triangles", action="store_true")
    p.add_argument("--with-global", action="store_true")
    p.add_argument("--triangle-mode", choices=["all_triangles", "maximal_only"],
                   default=ALL_TRIANGLES)
    p.add_argument("--with-rank2", action="store_true", help="hypergraph overlap triples")
    p.add_argument("--min-overlap", type=int, default=1)
    p.add_argument("--knn", type=int, default=8, help="point-cloud neighborhood size")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("analyze", help="support profile along a rank path")
    p.add_argument("--complex", required=True, help="complex JSON file")
    p.add_argument("--path", required=True, help="comma-separated ranks, e.g. 0,1,2")
    p.add_argument("--d0", type=int, help="input width for the bottleneck bound")
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.add_argument("--out", help="also write the table to this file")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train per the experiment config")
    p.add_argument("--config", required=True, help="experiment JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed when config lists none")
    p.add_argument("--threads", type=int, default=1, help="parallel seed workers")
    p.add_argument("--force", action="store_true", help="overwrite mismatched outputs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="rank-path / skip ablation matrix")
    p.add_argument("--config", help="ablation JSON (default: bundled heterophilic)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="run the release-gate property suite")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: generate, train, infer, eval, cost, bench, experiment. Every
run writes a reproducibility stanza (version, seed, full flag set) next to
its outputs. Config and manifest files use flat ``key = value`` lines with
``#`` comments.

The CAUSAX_THREADS environment variable caps per-graph fan-out in the
experiment runner.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics, model, perf, simulator, training
from .model import __version__


def parse_kv_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and # comments ignored."""
    fields: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: malformed config line {raw!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def write_run_stanza(out, args: argparse.Namespace) -> None:
    """Record version, seed, and the full flag set beside the output."""
    out = Path(out)
    target = out / "run.txt" if out.is_dir() else out.with_name(out.name + ".run.txt")
    lines = [f"version = {__version__}", f"command = {args.command}"]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "func"):
            continue
        lines.append(f"{key} = {value}")
    target.write_text("".join(line + "\n" for line in lines))


def _model_config_from_file(path) -> model.ModelConfig:
    if path is None:
        return model.ModelConfig()
    fields = parse_kv_file(path)
    kwargs = {}
    for key in ("B", "k", "r", "d", "H", "ffn_mult"):
        if key in fields:
            kwargs[key] = int(fields[key])
    if "dropout" in fields:
        kwargs["dropout"] = float(fields["dropout"])
    return model.ModelConfig(**kwargs)


# -- subcommand handlers --------------------------------------------------------


def cmd_generate(args) -> int:
    graph = simulator.sample_graph(args.family, args.nodes, args.edges, args.seed)
    mech = simulator.sample_mechanism(graph, args.mechanism, args.seed + 1)
    fraction = args.intervention_fraction
    if fraction is None:
        fraction = simulator.default_intervention_fraction(args.nodes, args.obs_dominant)
    dataset = simulator.sample_dataset(graph, mech, args.samples, fraction, seed=args.seed + 2)
    simulator.write_dataset(dataset, graph, args.out, mechanism_kind=args.mechanism, seed=args.seed)
    write_run_stanza(args.out, args)
    print(f"wrote bundle to {args.out}: n={graph.n} e={graph.edge_count} m={dataset.m}")
    return 0


def _load_bundles(data_dir: Path) -> list[tuple[simulator.Dataset, simulator.CausalGraph]]:
    bundles = []
    if (data_dir / "manifest").exists():
        ds, graph, _ = simulator.read_dataset(data_dir)
        bundles.append((ds, graph))
    for sub in sorted(data_dir.iterdir()):
        if sub.is_dir() and (sub / "manifest").exists():
            ds, graph, _ = simulator.read_dataset(sub)
            bundles.append((ds, graph))
    if not bundles:
        raise FileNotFoundError(f"no dataset bundles under {data_dir}")
    return bundles


def cmd_train(args) -> int:
    bundles = _load_bundles(Path(args.data))
    items = training.prepare_items(bundles)
    n_val = max(1, len(items) // 10) if len(items) > 1 else 0
    val_items, train_items = items[:n_val], items[n_val:]
    cfg = _model_config_from_file(args.config)
    tcfg = training.TrainConfig(lr=args.lr, batch_size=args.batch_size, steps=args.steps,
                                seed=args.seed, eval_every=args.eval_every,
                                checkpoint_dir=args.out)
    result = training.train(train_items, val_items, cfg, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    training.write_metric_log(out / "metrics.csv", result.log)
    write_run_stanza(out, args)
    print(f"trained {args.steps} steps; final loss {result.log[-1]['loss']:.4f}; "
          f"best val mAP {result.best_val_map}")
    return 0


def cmd_infer(args) -> int:
    cfg, params = model.load_checkpoint(args.model)
    ds, _, _ = simulator.read_dataset(args.data)
    if not ds.standardized:
        ds = simulator.standardize(ds)
    prior = simulator.compute_prior(ds)
    t0 = time.perf_counter()
    from .tensor import no_grad
    with no_grad():
        pred = model.forward(ds, prior, cfg, params)
    elapsed = time.perf_counter() - t0
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "j", "prob"])
        for i in range(pred.n):
            for j in range(pred.n):
                writer.writerow([i, j, f"{pred.g_hat[i, j]:.8f}"])
    write_run_stanza(args.out, args)
    print(f"inferred {pred.n}x{pred.n} edge probabilities in {elapsed:.3f}s -> {args.out}")
    return 0


def read_edge_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    n = int(max(int(r["i"]) for r in rows)) + 1
    scores = np.zeros((n, n))
    for r in rows:
        scores[int(r["i"]), int(r["j"])] = float(r["prob"])
    return scores


def cmd_eval(args) -> int:
    scores = read_edge_csv(args.pred)
    _, graph, _ = simulator.read_dataset(args.truth)
    t0 = time.perf_counter()
    decoded = (scores > 0.5).astype(np.int8)
    report = metrics.evaluate_scores(scores, graph.adjacency, decoded,
                                     wallclock_s=time.perf_counter() - t0)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mAP", "SHD", "AUC", "OA", "time_s"])
        writer.writerow([_fmt(report.map), report.shd, _fmt(report.auc), _fmt(report.oa),
                         f"{report.wallclock_s:.6f}"])
    write_run_stanza(args.out, args)
    print(f"mAP={_fmt(report.map)} SHD={report.shd} AUC={_fmt(report.auc)} OA={_fmt(report.oa)}")
    return 0


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6f}"


def cmd_cost(args) -> int:
    sample, node = perf.analytic_cost_ratio(args.B, args.k, args.r)
    print(f"sample={sample * 100:.4f}% node={node * 100:.4f}%")
    return 0


def cmd_bench(args) -> int:
    rows = []
    for raw in Path(args.matrix).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        row = {}
        for token in line.split():
            key, value = token.split("=", 1)
            row[key] = value
        rows.append(row)
    results = perf.bench(rows, seed=args.seed)
    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["m", "n", "B", "k", "r", "d", "H", "attention",
                                               "median_s", "peak_attention_floats"])
        writer.writeheader()
        writer.writerows(results)
    write_run_stanza(args.out, args)
    print(f"benchmarked {len(results)} configurations -> {args.out}")
    return 0


def _experiment_one(seed: int, fields: dict, method: str, ckpt) -> dict:
    family = fields.get("family", "er")
    n = int(fields["nodes"])
    e = int(fields["edges"])
    m = int(fields["samples"])
    mechanism = fields.get("mechanism", "linear")
    graph = simulator.sample_graph(family, n, e, seed)
    mech = simulator.sample_mechanism(graph, mechanism, seed + 1)
    ds = simulator.sample_dataset(graph, mech, m, seed=seed + 2)
    ds = simulator.standardize(ds)
    t0 = time.perf_counter()
    if method == "corr":
        scores, decoded = metrics.corr_baseline(ds, e=graph.edge_count)
        directed = False
    elif method == "invcov":
        scores, decoded = metrics.invcov_baseline(ds, e=graph.edge_count)
        directed = False
    elif method == "model":
        cfg, params = ckpt
        prior = simulator.compute_prior(ds)
        from .tensor import no_grad
        with no_grad():
            pred = model.forward(ds, prior, cfg, params)
        scores, decoded = pred.g_hat, pred.decode()
        directed = True
    else:
        raise ValueError(f"unknown method {method!r}")
    report = metrics.evaluate_scores(scores, graph.adjacency, decoded, directed=directed,
                                     wallclock_s=time.perf_counter() - t0)
    return {"method": method, "seed": seed, "mAP": report.map, "SHD": report.shd,
            "AUC": report.auc, "OA": report.oa, "cyclicity": report.cyclicity,
            "time_s": report.wallclock_s, "error": ""}


def run_experiment(manifest_path, out_dir) -> list[dict]:
    """Per-graph metrics over `seeds` independent instances plus a mean row
    per method; partial failures are recorded and the run continues."""
    fields = parse_kv_file(manifest_path)
    if "seeds" not in fields:
        raise ValueError(f"{manifest_path}: manifest must name a 'seeds' count")
    n_seeds = int(fields["seeds"])
    if n_seeds < 1:
        raise ValueError("experiment manifest needs at least one seed")
    base = int(fields.get("seed_base", 0))
    methods = [mth.strip() for mth in fields.get("methods", "invcov").split(",") if mth.strip()]
    ckpt = model.load_checkpoint(fields["model"]) if "model" in fields else None

    max_workers = int(os.environ.get("CAUSAX_THREADS", "1"))
    rows: list[dict] = []
    for method in methods:
        jobs = [(base + s) for s in range(n_seeds)]
        results: list[dict] = []
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                futures = [pool.submit(_experiment_one, seed, fields, method, ckpt) for seed in jobs]
                for seed, fut in zip(jobs, futures):
                    try:
                        results.append(fut.result())
                    except Exception as exc:  # record and continue
                        results.append({"method": method, "seed": seed, "mAP": None, "SHD": None,
                                        "AUC": None, "OA": None, "cyclicity": None,
                                        "time_s": None, "error": str(exc)})
        else:
            for seed in jobs:
                try:
                    results.append(_experiment_one(seed, fields, method, ckpt))
                except Exception as exc:
                    results.append({"method": method, "seed": seed, "mAP": None, "SHD": None,
                                    "AUC": None, "OA": None, "cyclicity": None,
                                    "time_s": None, "error": str(exc)})
        rows.extend(results)
        ok = [r for r in results if not r["error"]]
        mean_row = {"method": method, "seed": "mean", "error": ""}
        for key in ("mAP", "SHD", "AUC", "OA", "cyclicity", "time_s"):
            vals = [r[key] for r in ok if r[key] is not None]
            mean_row[key] = float(np.mean(vals)) if vals else None
        rows.append(mean_row)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["method", "seed", "mAP", "SHD", "AUC", "OA",
                                               "cyclicity", "time_s", "error"])
        writer.writeheader()
        for row in rows:
            writer.writerow({key: ("" if value is None else value) for key, value in row.items()})
    return rows


def cmd_experiment(args) -> int:
    rows = run_experiment(args.manifest, args.out)
    write_run_stanza(args.out, args)
    print(f"wrote {len(rows)} result rows -> {Path(args.out) / 'results.csv'}")
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causax",
                                     description="amortized causal discovery toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a graph + dataset bundle")
    p.add_argument("--family", default="er", choices=simulator.GRAPH_FAMILIES)
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--edges", type=int, required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--mechanism", default="linear", choices=simulator.MECHANISM_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intervention-fraction", type=float, default=None)
    p.add_argument("--obs-dominant", action="store_true",
                   help="flip the interventional:observational ratio reading")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a directory of bundles")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="model config file (key = value)")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="zero-shot edge probabilities for a bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score an edges.csv against a truth bundle")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", help="closed-form reduction-schedule cost ratios")
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("bench", help="wallclock benchmark over a config matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("experiment", help="multi-seed evaluation per a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

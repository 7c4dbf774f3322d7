"""Command-line pipeline: enumerate, run, analyze, cluster, plot.

Stages communicate only through files under the output directory, so each is
independently re-runnable:

    configs.txt                      enumerate
    datasets/<fn>_d<D>.csv           run (plus journal.txt for resume)
    analysis/<fn>_d<D>.effects.csv   analyze (plus .curve.csv, .marginals.csv)
    analysis/summary.{csv,json}      analyze
    cluster/...                      cluster
    plots/*.svg                      plot
    manifest.json                    index of emitted files with content hashes

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation. PSOLAB_WORKERS bounds the worker pool (default: available
parallelism).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from glob import glob

import numpy as np

from . import cluster, fanova, forest, plots, runner

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _update_manifest(out_dir, produced):
    path = os.path.join(out_dir, "manifest.json")
    manifest = {"files": {}}
    if os.path.exists(path):
        with open(path) as fh:
            manifest = json.load(fh)
    for p in produced:
        rel = os.path.relpath(p, out_dir)
        with open(p, "rb") as fh:
            manifest["files"][rel] = hashlib.sha256(fh.read()).hexdigest()
    manifest["updated"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_plan(args):
    if not args.plan:
        raise UsageError("--plan is required")
    overrides = {}
    if args.functions:
        overrides["functions"] = args.functions.split(",")
    if args.dims:
        overrides["dims"] = [int(d) for d in args.dims.split(",")]
    if args.runs is not None:
        overrides["runs_per_cell"] = args.runs
    if args.budget_mult is not None:
        overrides["budget_multiplier"] = args.budget_mult
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    return runner.load_plan(args.plan, overrides)


def _dataset_name(spec):
    return f"{spec.function_id}_d{spec.dimension}"


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_enumerate(args) -> int:
    plan = _load_plan(args)
    configs = runner.enumerate_configs(plan.space)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "configs.txt")
    with open(path, "w") as fh:
        fh.write(f"# count {len(configs)}\n")
        for config in configs:
            fh.write(config.token() + "\n")
    _update_manifest(args.out, [path])
    print(f"{len(configs)} configurations -> {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    plan = _load_plan(args)
    dataset_dir = os.path.join(args.out, "datasets")
    os.makedirs(dataset_dir, exist_ok=True)
    journal = os.path.join(args.out, "journal.txt")

    def progress(done, total):
        print(f"cells {done}/{total}", file=sys.stderr, flush=True)

    datasets = runner.execute(plan, journal_path=journal, progress=progress)
    produced = []
    for spec, dataset in zip(plan.problems, datasets):
        path = os.path.join(dataset_dir, _dataset_name(spec) + ".csv")
        runner.write_dataset(dataset, path)
        produced.append(path)
    _update_manifest(args.out, produced)
    print(f"{len(produced)} dataset files -> {dataset_dir}")
    return EXIT_OK


def _summary_stats(dataset):
    targets = dataset.targets
    qs = np.percentile(targets, [0, 25, 50, 75, 100])
    return {
        "min": float(qs[0]),
        "q1": float(qs[1]),
        "median": float(qs[2]),
        "q3": float(qs[3]),
        "max": float(qs[4]),
        "n_variants": int(targets.size),
        "n_at_cap": int(np.sum(targets == runner.TARGET_FLOOR)),
    }


def cmd_analyze(args) -> int:
    dataset_paths = sorted(glob(os.path.join(args.out, "datasets", "*.csv")))
    if not dataset_paths:
        raise FileNotFoundError(f"no dataset files under {args.out}/datasets")
    analysis_dir = os.path.join(args.out, "analysis")
    os.makedirs(analysis_dir, exist_ok=True)
    produced = []
    summaries = {}
    for path in dataset_paths:
        dataset = runner.read_dataset(path)
        name = os.path.splitext(os.path.basename(path))[0]
        meta = dict(dataset.meta)
        summary = _summary_stats(dataset)
        seed = int(dataset.meta.get("master_seed", 0))
        if args.exact:
            # factorial-table oracle; the interpolating forest backs the marginals
            params = forest.interpolating_params(seed)
        else:
            params = forest.ForestParams(seed=seed)
        effects_path = os.path.join(analysis_dir, f"{name}.effects.csv")
        try:
            surrogate = forest.fit_forest(dataset, params)
            if args.exact:
                vector = fanova.exact_decompose(dataset, args.max_order)
            else:
                vector = fanova.decompose_forest(surrogate, args.max_order)
        except fanova.DegenerateDatasetError:
            summary["degenerate"] = True
            with open(effects_path, "w") as fh:
                fh.write("# degenerate true\n")
                for key in sorted(meta):
                    fh.write(f"# {key} {meta[key]}\n")
                fh.write("subset,order,importance\n")
            produced.append(effects_path)
            summaries[name] = summary
            continue
        summary["degenerate"] = False
        if surrogate.oob_r2 is not None:
            meta["oob_r2"] = repr(surrogate.oob_r2)
        fanova.write_effect_vector(vector, effects_path, meta=meta)
        produced.append(effects_path)

        curve_path = os.path.join(analysis_dir, f"{name}.curve.csv")
        with open(curve_path, "w") as fh:
            fh.write("k,cumulative\n")
            for k, value in fanova.cumulative_curve(vector):
                fh.write(f"{k},{value!r}\n")
        produced.append(curve_path)

        ranked_pairs = sorted(
            (
                term
                for term in vector.terms
                if len(term[0]) == 2 and all(len(dataset.levels[m]) > 1 for m in term[0])
            ),
            key=lambda term: -term[1],
        )
        pairs = [subset for subset, _ in ranked_pairs[:3]]
        marginals_path = os.path.join(analysis_dir, f"{name}.marginals.csv")
        fanova.write_marginal_tables(surrogate, marginals_path, pairs=pairs, meta=meta)
        produced.append(marginals_path)
        summaries[name] = summary

    summary_path = os.path.join(analysis_dir, f"summary.{args.format}")
    if args.format == "json":
        with open(summary_path, "w") as fh:
            json.dump(summaries, fh, indent=2, sort_keys=True)
    else:
        keys = ["min", "q1", "median", "q3", "max", "n_variants", "n_at_cap", "degenerate"]
        with open(summary_path, "w") as fh:
            fh.write("dataset," + ",".join(keys) + "\n")
            for name in sorted(summaries):
                row = summaries[name]
                fh.write(name + "," + ",".join(repr(row[k]) for k in keys) + "\n")
    produced.append(summary_path)
    _update_manifest(args.out, produced)
    print(f"analyzed {len(dataset_paths)} datasets -> {analysis_dir}")
    return EXIT_OK


def _read_effect_matrix(paths):
    names, vectors = [], []
    labels = None
    for path in paths:
        with open(path) as fh:
            first = fh.readline()
        if first.startswith("# degenerate"):
            continue
        vector = fanova.read_effect_vector(path)
        name = os.path.basename(path).replace(".effects.csv", "")
        names.append(name)
        vectors.append(vector.importances())
        if labels is None:
            labels = vector.term_labels()
    return names, np.array(vectors), labels


def cmd_cluster(args) -> int:
    effect_paths = sorted(glob(os.path.join(args.out, "analysis", "*.effects.csv")))
    names, matrix, term_labels = _read_effect_matrix(effect_paths)
    if len(names) < 2:
        raise ValueError("clustering needs at least 2 non-degenerate effect vectors")
    cluster_dir = os.path.join(args.out, "cluster")
    os.makedirs(cluster_dir, exist_ok=True)

    n = len(names)
    if n == 2:
        # forced k=2: a single merge, no grid to search
        metric = args.metric or "euclidean"
        linkage = args.linkage or "average"
        k = 2
        distances = cluster.distance_matrix(matrix, metric)
        dendro = cluster.agglomerate(distances, linkage, metric)
        labels = np.array([0, 1])
        score = 0.0
        report = cluster.ClusterReport(
            best_k=2, best_metric=metric, best_linkage=linkage, best_score=score,
            labels={name: i for i, name in enumerate(names)}, grid=(),
        )
    else:
        ks = range(2, min(25, n - 1) + 1)
        report = cluster.grid_search(matrix, ks, names=names)
        metric = args.metric or report.best_metric
        linkage = args.linkage or report.best_linkage
        k = args.k or report.best_k
        distances = cluster.distance_matrix(matrix, metric)
        dendro = cluster.agglomerate(distances, linkage, metric)
        labels = cluster.cut_k(dendro, k)
        score = cluster.silhouette(labels, distances) if 2 <= k <= n - 1 else 0.0

    produced = []
    dendro_path = os.path.join(cluster_dir, "dendrogram.csv")
    cluster.write_dendrogram(dendro, names, dendro_path)
    produced.append(dendro_path)

    # clustermap rows follow dendrogram leaf order
    children = {new: (a, b) for a, b, _, new in dendro.merges}

    def leaves_of(node):
        if node < n:
            return [node]
        a, b = children[node]
        return leaves_of(a) + leaves_of(b)

    order = leaves_of(dendro.merges[-1][3]) if dendro.merges else list(range(n))
    clustermap_path = os.path.join(cluster_dir, "clustermap.csv")
    with open(clustermap_path, "w") as fh:
        fh.write("problem,cluster," + ",".join(term_labels) + "\n")
        for i in order:
            row = ",".join(repr(float(v)) for v in matrix[i])
            fh.write(f"{names[i]},{labels[i]},{row}\n")
    produced.append(clustermap_path)

    report_path = os.path.join(cluster_dir, "grid_report.json")
    doc = {
        "best": {
            "k": report.best_k,
            "metric": report.best_metric,
            "linkage": report.best_linkage,
            "silhouette": report.best_score,
        },
        "selected": {"k": k, "metric": metric, "linkage": linkage, "silhouette": score},
        "labels": {names[i]: int(labels[i]) for i in range(n)},
        "grid": list(report.grid),
    }
    with open(report_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    produced.append(report_path)
    _update_manifest(args.out, produced)
    print(
        f"clustered {n} problem classes: k={k} metric={metric} linkage={linkage} "
        f"silhouette={score:.3f}"
    )
    return EXIT_OK


def cmd_plot(args) -> int:
    plots_dir = os.path.join(args.out, "plots")
    os.makedirs(plots_dir, exist_ok=True)
    produced = []

    for path in sorted(glob(os.path.join(args.out, "analysis", "*.curve.csv"))):
        name = os.path.basename(path).replace(".curve.csv", "")
        points = []
        with open(path) as fh:
            fh.readline()
            for line in fh:
                k, value = line.strip().split(",")
                points.append((int(k), float(value)))
        svg_path = os.path.join(plots_dir, f"{name}.curve.svg")
        with open(svg_path, "w") as fh:
            fh.write(plots.curve_svg(points, title=f"cumulative effects {name}"))
        produced.append(svg_path)

    for path in sorted(glob(os.path.join(args.out, "analysis", "*.marginals.csv"))):
        name = os.path.basename(path).replace(".marginals.csv", "")
        tables: dict[str, dict[tuple[str, ...], float]] = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("subset,"):
                    continue
                subset, levels, value = line.split(",")
                tables.setdefault(subset, {})[tuple(levels.split("|"))] = float(value)
        for subset, table in tables.items():
            if "+" not in subset:
                continue
            rows = sorted({key[0] for key in table})
            cols = sorted({key[1] for key in table})
            values = np.array([[table[(r, c)] for c in cols] for r in rows])
            svg_path = os.path.join(plots_dir, f"{name}.{subset.replace('+', '_')}.svg")
            with open(svg_path, "w") as fh:
                fh.write(
                    plots.heatmap_svg(rows, cols, values, title=f"{name} {subset} marginal")
                )
            produced.append(svg_path)

    summary_json = os.path.join(args.out, "analysis", "summary.json")
    summary_csv = os.path.join(args.out, "analysis", "summary.csv")
    summaries = {}
    if os.path.exists(summary_json):
        with open(summary_json) as fh:
            summaries = json.load(fh)
    elif os.path.exists(summary_csv):
        with open(summary_csv) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                parts = line.strip().split(",")
                summaries[parts[0]] = dict(zip(header[1:], map(eval_number, parts[1:])))
    if summaries:
        names = sorted(summaries)
        stats = [
            [summaries[n][k] for k in ("min", "q1", "median", "q3", "max")] for n in names
        ]
        svg_path = os.path.join(plots_dir, "performance_summary.svg")
        with open(svg_path, "w") as fh:
            fh.write(plots.box_summary_svg(names, stats, title="target distribution"))
        produced.append(svg_path)

    dendro_path = os.path.join(args.out, "cluster", "dendrogram.csv")
    if os.path.exists(dendro_path):
        dendro, leaf_names = cluster.read_dendrogram(dendro_path)
        svg_path = os.path.join(plots_dir, "dendrogram.svg")
        with open(svg_path, "w") as fh:
            fh.write(
                plots.dendrogram_svg(
                    dendro.merges, leaf_names,
                    title=f"{dendro.metric}/{dendro.linkage} dendrogram",
                )
            )
        produced.append(svg_path)

    clustermap_path = os.path.join(args.out, "cluster", "clustermap.csv")
    if os.path.exists(clustermap_path):
        with open(clustermap_path) as fh:
            header = fh.readline().strip().split(",")
            rows, labels, values = [], [], []
            for line in fh:
                parts = line.strip().split(",")
                rows.append(f"{parts[0]} [{parts[1]}]")
                labels.append(parts[1])
                values.append([float(v) for v in parts[2:]])
        svg_path = os.path.join(plots_dir, "clustermap.svg")
        with open(svg_path, "w") as fh:
            fh.write(
                plots.heatmap_svg(
                    rows, header[2:], np.array(values),
                    title="module effects by problem class", label_cells=False,
                )
            )
        produced.append(svg_path)

    if not produced:
        raise FileNotFoundError("nothing to plot: run analyze/cluster first")
    _update_manifest(args.out, produced)
    print(f"{len(produced)} renderings -> {plots_dir}")
    return EXIT_OK


def eval_number(text):
    try:
        return float(text)
    except ValueError:
        return text == "True"


def cmd_pipeline(args) -> int:
    for stage in (cmd_enumerate, cmd_run, cmd_analyze, cmd_cluster, cmd_plot):
        code = stage(args)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "enumerate": cmd_enumerate,
        "run": cmd_run,
        "analyze": cmd_analyze,
        "cluster": cmd_cluster,
        "plot": cmd_plot,
        "pipeline": cmd_pipeline,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--plan", help="experiment plan JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the plan's master seed")
        p.add_argument("--dims", help="comma-separated dimensions, e.g. 10,30")
        p.add_argument("--functions", help="comma-separated function ids, e.g. f1,f9")
        p.add_argument("--runs", type=int, help="runs per cell")
        p.add_argument("--budget-mult", type=int, help="evaluations per dimension")
        p.add_argument("--max-order", type=int, default=3, help="highest interaction order")
        p.add_argument(
            "--exact", action="store_true",
            help="decompose complete factorial datasets directly, without the surrogate",
        )
        p.add_argument("--k", type=int, help="override the cluster count")
        p.add_argument("--metric", choices=cluster.METRICS, help="override the metric")
        p.add_argument("--linkage", choices=cluster.LINKAGES, help="override the linkage")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        FileNotFoundError,
        ValueError,
        KeyError,
        json.JSONDecodeError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

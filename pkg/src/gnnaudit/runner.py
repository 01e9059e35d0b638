"""Config-driven experiment execution with deterministic CSV/JSON/SVG output.

A JSON plan names a dataset, model kinds, methods with parameter grids and
seeds; ``execute`` trains one model per (model, method, parameter point,
seed) cell plus a baseline per (model, seed), attacks and evaluates each,
and returns a canonically sorted result table. Identical plans produce
byte-identical CSV files regardless of worker count.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import attacks, graphdata, interventions
from .evaluation import MetricRecord, evaluate_all

SCHEMA_VERSION = 1

CSV_COLUMNS = ["dataset", "model", "method", "alpha", "beta", "lambda", "mode",
               "seed", "split_seed", "accuracy", "delta_sp", "delta_eo",
               "fair_leak", "priv_leak", "mia_tree", "mia_mlp", "error"]

METRIC_COLUMNS = ["accuracy", "delta_sp", "delta_eo", "fair_leak", "priv_leak",
                  "mia_tree", "mia_mlp"]


class ConfigError(Exception):
    pass


@dataclass
class ExperimentPlan:
    dataset: dict
    models: list
    methods: list            # [{"method": str, "params": {name: [values]}, ...}]
    seeds: list
    training: dict
    output_dir: str
    fixed_split_seed: int | None = None
    workers: int = 1
    dataset_name: str = "synthetic"

    def cells(self):
        """All (model, method, params, seed) runs, baselines included."""
        out = []
        for kind in self.models:
            for seed in self.seeds:
                out.append((kind, "none", {}, seed))
        for spec in self.methods:
            method = spec["method"]
            if method == "none":
                continue
            grid = spec.get("params", {})
            names = sorted(grid)
            points = [dict(zip(names, vals)) for vals in product(*(grid[n] for n in names))] \
                if names else [{}]
            extra = {k: v for k, v in spec.items() if k not in ("method", "params")}
            for kind in self.models:
                for point in points:
                    for seed in self.seeds:
                        out.append((kind, method, {**extra, **point}, seed))
        return out


_TOP_KEYS = {"schema_version", "dataset", "models", "methods", "seeds",
             "training", "output_dir", "fixed_split_seed", "workers"}
_METHOD_KEYS = {"method", "params", "mode", "attrs"}
_PARAM_KEYS = {"alpha", "beta", "lambda"}
_TRAIN_KEYS = {"lr", "epochs", "weight_decay", "hidden_dims", "dropout_p",
               "gat_heads", "gin_eps", "adj_mode"}
_DATASET_KEYS = {"name", "synthetic", "synthetic_seed", "nodes_file",
                 "edges_file", "schema", "derive", "standardize_on_train"}


def parse_config(text):
    """Validate a JSON plan; unknown keys are rejected with their path."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    for k in doc:
        if k not in _TOP_KEYS:
            raise ConfigError(f"unknown key: {k}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version: must be 1")
    for req in ("dataset", "models", "methods", "seeds"):
        if req not in doc:
            raise ConfigError(f"missing key: {req}")
    ds = doc["dataset"]
    for k in ds:
        if k not in _DATASET_KEYS:
            raise ConfigError(f"unknown key: dataset.{k}")
    models = doc["models"]
    if not models or not all(m in ("gcn", "sage", "gat", "gin") for m in models):
        raise ConfigError("models: must be a non-empty list of gcn|sage|gat|gin")
    seeds = doc["seeds"]
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: must be non-empty and distinct")
    methods = doc["methods"]
    for i, spec in enumerate(methods):
        for k in spec:
            if k not in _METHOD_KEYS:
                raise ConfigError(f"unknown key: methods[{i}].{k}")
        if spec.get("method") not in interventions.METHODS:
            raise ConfigError(f"methods[{i}].method: unknown method")
        params = spec.get("params", {})
        for name, vals in params.items():
            if name not in _PARAM_KEYS:
                raise ConfigError(f"unknown key: methods[{i}].params.{name}")
            if not vals:
                raise ConfigError(f"methods[{i}].params.{name}: empty grid")
            if any(float(v) < 0 for v in vals):
                raise ConfigError(f"methods[{i}].params.{name}: must be non-negative")
    training = doc.get("training", {})
    for k in training:
        if k not in _TRAIN_KEYS:
            raise ConfigError(f"unknown key: training.{k}")
    return ExperimentPlan(
        dataset=ds,
        models=list(models),
        methods=list(methods),
        seeds=[int(s) for s in seeds],
        training=dict(training),
        output_dir=doc.get("output_dir", "results"),
        fixed_split_seed=doc.get("fixed_split_seed"),
        workers=int(doc.get("workers", 1)),
        dataset_name=ds.get("name", "synthetic"),
    )


def load_dataset(plan):
    ds = plan.dataset
    if "synthetic" in ds:
        spec = graphdata.SyntheticSpec(**ds["synthetic"])
        return graphdata.generate_synthetic(spec, seed=int(ds.get("synthetic_seed", 0)))
    graph = graphdata.load_tabular_graph(ds["nodes_file"], ds["edges_file"], ds["schema"])
    for rule in ds.get("derive", []):
        graph = graphdata.derive_attribute(graph, tuple(rule))
    return graph


def _model_kw(plan, kind, seed):
    t = plan.training
    kw = dict(kind=kind, seed=seed,
              lr=t.get("lr", 0.01), epochs=t.get("epochs", 200),
              weight_decay=t.get("weight_decay", 5e-4),
              hidden_dims=tuple(t.get("hidden_dims", (16,))),
              dropout_p=t.get("dropout_p", 0.0),
              adj_mode=t.get("adj_mode", "sym"))
    if "gat_heads" in t:
        kw["gat_heads"] = t["gat_heads"]
    if "gin_eps" in t:
        kw["gin_eps"] = t["gin_eps"]
    return kw


def _run_cell(args):
    graph, plan, kind, method, params, seed = args
    split_seed = plan.fixed_split_seed if plan.fixed_split_seed is not None else seed
    alpha = float(params.get("alpha", 0.0))
    beta = float(params.get("beta", 0.0))
    lam = float(params.get("lambda", 0.0))
    mode = params.get("mode", "par" if method in ("fair_learn", "ew_flpar") else "")
    try:
        split = graphdata.make_splits(graph, seed=split_seed)
        model = interventions.train_intervention(
            method, graph, split, _model_kw(plan, kind, seed),
            alpha=alpha, beta=beta, lam=lam, fair_mode=mode or "par",
            filter_attrs=tuple(params.get("attrs", ("fairness",))))
        attack_results = {
            "tree": attacks.mia_accuracy(model, graph, split, "tree", seed=seed),
            "mlp": attacks.mia_accuracy(model, graph, split, "mlp", seed=seed),
        }
        return evaluate_all(model, graph, split, attack_results,
                            dataset=plan.dataset_name, method=method,
                            alpha=alpha, beta=beta, lam=lam, mode=mode, seed=seed)
    except Exception as exc:   # error marker row; remaining runs proceed
        return MetricRecord(plan.dataset_name, kind, method, alpha, beta, lam,
                            mode, seed, split_seed, 0.0, 0.0, 0.0, 0.0, 0.0,
                            0.0, 0.0, error=f"{type(exc).__name__}: {exc}")


def _sort_key(rec):
    return (rec.dataset, rec.model_kind, rec.method, rec.alpha, rec.beta,
            rec.lam, rec.mode, rec.seed)


@dataclass
class ResultTable:
    records: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def sorted(self):
        return ResultTable(sorted(self.records, key=_sort_key), self.schema_version)


def execute(plan):
    graph = load_dataset(plan)   # load failure aborts before any run
    if plan.dataset.get("standardize_on_train"):
        split = graphdata.make_splits(graph, seed=plan.seeds[0])
        graph = graph.with_standardized_features(split.train)
    cells = plan.cells()
    workers = int(os.environ.get("AUDIT_WORKERS", plan.workers))
    tasks = [(graph, plan, *cell) for cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, tasks))
    else:
        records = [_run_cell(t) for t in tasks]
    return ResultTable(records).sorted()


def aggregate(table, group_by):
    """Mean / sample std / n per metric for each group-key combination."""
    groups = {}
    for rec in table.records:
        d = rec.as_dict()
        d["model"] = d.pop("model_kind")
        d["lambda"] = d.pop("lam")
        key = tuple(d[k] for k in group_by)
        groups.setdefault(key, []).append(d)
    rows = []
    for key in sorted(groups):
        rows_in = groups[key]
        row = dict(zip(group_by, key))
        row["n"] = len(rows_in)
        for m in METRIC_COLUMNS:
            vals = np.array([r[m] for r in rows_in])
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)   # shortest round-trip representation
    return str(v)


def emit_csv(table, path):
    lines = [",".join(CSV_COLUMNS)]
    for rec in table.records:
        d = rec.as_dict()
        d["model"] = d.pop("model_kind")
        d["lambda"] = d.pop("lam")
        lines.append(",".join(_fmt(d[c]) for c in CSV_COLUMNS))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def parse_csv(path):
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    header = lines[0].split(",")
    if header != CSV_COLUMNS:
        raise ValueError("unexpected result CSV columns")
    records = []
    for ln in lines[1:]:
        vals = dict(zip(header, ln.split(",")))
        records.append(MetricRecord(
            dataset=vals["dataset"], model_kind=vals["model"],
            method=vals["method"], alpha=float(vals["alpha"]),
            beta=float(vals["beta"]), lam=float(vals["lambda"]),
            mode=vals["mode"], seed=int(vals["seed"]),
            split_seed=int(vals["split_seed"]),
            accuracy=float(vals["accuracy"]), delta_sp=float(vals["delta_sp"]),
            delta_eo=float(vals["delta_eo"]), fair_leak=float(vals["fair_leak"]),
            priv_leak=float(vals["priv_leak"]), mia_tree=float(vals["mia_tree"]),
            mia_mlp=float(vals["mia_mlp"]), error=vals["error"]))
    return ResultTable(records)


def emit_json(table, path):
    payload = {"schema_version": table.schema_version,
               "records": [r.as_dict() for r in table.records]}
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def parse_json(path):
    with open(path) as f:
        payload = json.load(f)
    return ResultTable([MetricRecord(**r) for r in payload["records"]],
                       payload.get("schema_version", SCHEMA_VERSION))


_SHAPES = ["circle", "square", "triangle", "diamond", "plus", "star", "hex"]


def emit_svg_scatter(table, x_metric, y_metric, path, width=640, height=480):
    """Metric-vs-metric scatter: one X glyph per (model, dataset) baseline
    mean, one shaped point per non-baseline record, shape legend by method."""
    for m in (x_metric, y_metric):
        if m not in METRIC_COLUMNS:
            raise ValueError(f"unknown metric {m!r}")
    recs = [r for r in table.records if not r.error]
    margin, legend_w = 50, 130
    px = lambda v: margin + v * (width - margin * 2 - legend_w)
    py = lambda v: height - margin - v * (height - margin * 2)

    def get(r, m):
        return min(max(getattr(r, m), 0.0), 1.0)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(1)}" y2="{py(0)}" stroke="black"/>',
             f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(0)}" y2="{py(1)}" stroke="black"/>',
             f'<text x="{px(0.5)}" y="{height - 12}" text-anchor="middle">{x_metric}</text>',
             f'<text x="14" y="{py(0.5)}" text-anchor="middle" '
             f'transform="rotate(-90 14 {py(0.5)})">{y_metric}</text>']

    methods = sorted({r.method for r in recs if r.method != "none"})
    shape_of = {m: _SHAPES[i % len(_SHAPES)] for i, m in enumerate(methods)}
    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"]
    color_of = {m: colors[i % len(colors)] for i, m in enumerate(methods)}

    def shape_svg(shape, x, y, color, s=5):
        if shape == "circle":
            return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{s}" fill="{color}"/>'
        if shape == "square":
            return (f'<rect x="{x - s:.2f}" y="{y - s:.2f}" width="{2 * s}" '
                    f'height="{2 * s}" fill="{color}"/>')
        if shape == "triangle":
            return (f'<polygon points="{x:.2f},{y - s:.2f} {x - s:.2f},{y + s:.2f} '
                    f'{x + s:.2f},{y + s:.2f}" fill="{color}"/>')
        if shape == "diamond":
            return (f'<polygon points="{x:.2f},{y - s:.2f} {x + s:.2f},{y:.2f} '
                    f'{x:.2f},{y + s:.2f} {x - s:.2f},{y:.2f}" fill="{color}"/>')
        return (f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{s}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>')

    for r in recs:
        if r.method == "none":
            continue
        x, y = px(get(r, x_metric)), py(get(r, y_metric))
        parts.append(shape_svg(shape_of[r.method], x, y, color_of[r.method]))

    baselines = {}
    for r in recs:
        if r.method == "none":
            baselines.setdefault((r.model_kind, r.dataset), []).append(r)
    for key in sorted(baselines):
        grp = baselines[key]
        bx = px(float(np.mean([get(r, x_metric) for r in grp])))
        by = py(float(np.mean([get(r, y_metric) for r in grp])))
        s = 7
        parts.append(f'<g class="baseline-x" data-key="{key[0]}:{key[1]}">'
                     f'<line x1="{bx - s:.2f}" y1="{by - s:.2f}" x2="{bx + s:.2f}" '
                     f'y2="{by + s:.2f}" stroke="black" stroke-width="2"/>'
                     f'<line x1="{bx - s:.2f}" y1="{by + s:.2f}" x2="{bx + s:.2f}" '
                     f'y2="{by - s:.2f}" stroke="black" stroke-width="2"/></g>')

    ly = margin
    lx = width - legend_w + 10
    parts.append(f'<text x="{lx}" y="{ly}" font-weight="bold">methods</text>')
    for m in methods:
        ly += 18
        parts.append(shape_svg(shape_of[m], lx + 5, ly - 4, color_of[m]))
        parts.append(f'<text x="{lx + 16}" y="{ly}">{m}</text>')
    ly += 18
    parts.append(f'<text x="{lx + 16}" y="{ly}">X = baseline</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def run_plan(plan):
    """Execute a plan and write results.csv / results.json to its output dir."""
    table = execute(plan)
    os.makedirs(plan.output_dir, exist_ok=True)
    emit_csv(table, os.path.join(plan.output_dir, "results.csv"))
    emit_json(table, os.path.join(plan.output_dir, "results.json"))
    return table

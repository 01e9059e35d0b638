"""Graph container, tabular loaders, derived attributes, splits, synthetic data.

A :class:`Graph` couples a symmetrized CSR adjacency with dense node features
and three per-node attribute vectors: the task label, a fairness group and a
privacy group. Unlabeled nodes carry ``UNLABELED`` (-1) and take part in
message passing but never in losses or metrics.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.sparse as sp

from . import rng

UNLABELED = -1


class LoadError(Exception):
    pass


@dataclass(frozen=True)
class Graph:
    n_nodes: int
    adjacency: sp.csr_matrix          # symmetric, no self-loops, data all 1.0
    features: np.ndarray              # n_nodes x d, float64
    labels: np.ndarray                # int, UNLABELED sentinel
    fairness_attr: np.ndarray         # int group ids
    privacy_attr: np.ndarray          # int group ids
    edge_weights: np.ndarray | None = None   # aligned with adjacency.data
    raw_columns: dict = field(default_factory=dict, repr=False)

    def labeled_nodes(self):
        return np.flatnonzero(self.labels != UNLABELED)

    def n_classes(self):
        lab = self.labels[self.labels != UNLABELED]
        return int(lab.max()) + 1 if lab.size else 0

    def with_attribute(self, role, values):
        values = np.asarray(values, dtype=np.int64)
        key = {"label": "labels", "fairness": "fairness_attr", "privacy": "privacy_attr"}[role]
        return replace(self, **{key: values})

    def with_standardized_features(self, fit_nodes=None):
        """Z-score each non-constant column using statistics from fit_nodes."""
        idx = np.arange(self.n_nodes) if fit_nodes is None else np.asarray(fit_nodes)
        mu = self.features[idx].mean(axis=0)
        sd = self.features[idx].std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return replace(self, features=(self.features - mu) / sd)


@dataclass(frozen=True)
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


@dataclass(frozen=True)
class SyntheticSpec:
    n_nodes: int
    n_groups: int = 2
    intra_group_edge_prob: float = 0.02
    inter_group_edge_prob: float = 0.002
    label_group_correlation: float = 0.9
    feature_dim: int = 8
    feature_noise_sd: float = 1.0

    def __post_init__(self):
        if self.n_groups < 2:
            raise ValueError("n_groups must be >= 2")
        for p in (self.intra_group_edge_prob, self.inter_group_edge_prob,
                  self.label_group_correlation):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class DatasetStats:
    n_nodes: int
    n_edges: int          # undirected pair count
    n_attributes: int
    pct_labeled: float


def _symmetrize(n, src, dst):
    """Build a binary symmetric CSR adjacency without self-loops."""
    keep = src != dst
    src, dst = src[keep], dst[keep]
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a.data[:] = 1.0   # collapse duplicate entries
    a.sum_duplicates()
    a.data[:] = 1.0
    return a


def load_tabular_graph(nodes_file, edges_file, schema):
    """Load a graph from a node table plus an edge list.

    ``schema`` maps column roles:
      id        -- node id column (required)
      label     -- task label column (optional; missing cells -> unlabeled)
      fairness  -- fairness group column (optional)
      privacy   -- privacy group column (optional)
      features  -- list of feature columns, or "rest" for all remaining
      categorical -- subset of feature columns to one-hot encode
    """
    sep = "\t" if str(nodes_file).endswith((".tsv", ".txt")) else ","
    df = pd.read_csv(nodes_file, sep=sep)
    id_col = schema["id"]
    if df[id_col].duplicated().any():
        raise LoadError("duplicate node ids in nodes file")
    ids = df[id_col].to_numpy()
    index = {v: i for i, v in enumerate(ids)}
    n = len(df)

    role_cols = {r: schema.get(r) for r in ("label", "fairness", "privacy")}
    feat_cols = schema.get("features", "rest")
    if feat_cols == "rest":
        used = {id_col} | {c for c in role_cols.values() if c}
        feat_cols = [c for c in df.columns if c not in used]
    categorical = set(schema.get("categorical", []))

    blocks = []
    raw = {}
    for c in df.columns:
        if c != id_col:
            raw[c] = df[c].to_numpy()
    for c in feat_cols:
        col = df[c]
        if c in categorical:
            onehot = pd.get_dummies(col.astype("object").where(col.notna(), "missing"))
            blocks.append(onehot.to_numpy(dtype=np.float64))
        else:
            vals = pd.to_numeric(col, errors="coerce")
            bad = vals.isna() & col.notna()
            if bad.any():
                r = int(np.flatnonzero(bad)[0])
                raise LoadError(f"non-numeric feature cell at row {r}, column {c!r}")
            v = vals.to_numpy(dtype=np.float64)
            v = np.where(np.isnan(v), np.nanmean(v) if np.isfinite(np.nanmean(v)) else 0.0, v)
            mu, sd = v.mean(), v.std()
            blocks.append(((v - mu) / sd if sd > 0 else v - mu).reshape(-1, 1))
    features = np.hstack(blocks) if blocks else np.zeros((n, 0))

    def encode_groups(colname):
        if colname is None:
            return np.zeros(n, dtype=np.int64)
        col = df[colname]
        codes, _ = pd.factorize(col.where(col.notna(), None), use_na_sentinel=True)
        return codes.astype(np.int64)

    labels = encode_groups(role_cols["label"]) if role_cols["label"] else np.full(n, UNLABELED)
    fairness = encode_groups(role_cols["fairness"])
    privacy = encode_groups(role_cols["privacy"])
    fairness[fairness < 0] = 0
    privacy[privacy < 0] = 0

    try:
        edf = pd.read_csv(edges_file, sep=None, engine="python", header=None,
                          comment="#", skip_blank_lines=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError):
        edf = pd.DataFrame()
    except Exception as exc:    # csv sniffing fails on blank-only files
        if "delimiter" not in str(exc):
            raise
        edf = pd.DataFrame()
    if edf.empty or edf.shape[1] == 0:
        src = dst = np.array([], dtype=np.int64)
    else:
        try:
            src = np.array([index[v] for v in edf[0]], dtype=np.int64)
            dst = np.array([index[v] for v in edf[1]], dtype=np.int64)
        except KeyError as exc:
            raise LoadError(f"unknown node id in edge list: {exc.args[0]!r}") from None
    adjacency = _symmetrize(n, src, dst)
    return Graph(n, adjacency, features, labels, fairness, privacy, raw_columns=raw)


def derive_attribute(graph, rule):
    """Attach a derived per-node attribute.

    rule = ("median-threshold", column, role)
         | ("quantile-bins", column, k, role)
         | ("category-select", column, top_k, role)
    """
    kind = rule[0]
    column = rule[1]
    col = np.asarray(graph.raw_columns[column])
    if kind == "median-threshold":
        role = rule[2]
        vals = col.astype(np.float64)
        med = np.nanmedian(vals)
        if np.nanmin(vals) == np.nanmax(vals):
            raise ValueError(f"degenerate threshold: column {column!r} is constant")
        out = np.where(np.isnan(vals), UNLABELED, (vals > med).astype(np.int64))
    elif kind == "quantile-bins":
        _, _, k, role = rule[0], rule[1], rule[2], rule[3]
        vals = col.astype(np.float64)
        qs = np.nanquantile(vals, np.linspace(0, 1, k + 1)[1:-1])
        out = np.searchsorted(qs, vals, side="left")
        out = np.where(np.isnan(vals), UNLABELED, out).astype(np.int64)
    elif kind == "category-select":
        _, _, top_k, role = rule[0], rule[1], rule[2], rule[3]
        s = pd.Series(col)
        top = s.value_counts().index[:top_k]
        mapping = {v: i for i, v in enumerate(top)}
        out = np.array([mapping.get(v, UNLABELED) for v in col], dtype=np.int64)
    else:
        raise ValueError(f"unknown derivation rule {kind!r}")
    return graph.with_attribute(role, out)


def make_splits(graph, fractions=(0.5, 0.25, 0.25), seed=0):
    """Deterministic stratified 50/25/25 split over labeled nodes."""
    labeled = graph.labeled_nodes()
    if len(labeled) < 4:
        raise ValueError("need at least 4 labeled nodes to split")
    gen = rng.stream(seed, "split")
    classes, counts = np.unique(graph.labels[labeled], return_counts=True)
    stratify = counts.min() >= 4
    if not stratify:
        import warnings
        warnings.warn("a class has <4 members; falling back to a global shuffle")
    f_train, f_val, _ = fractions

    def cut(idx):
        idx = idx[gen.permutation(len(idx))]
        n_tr = int(round(f_train * len(idx)))
        n_va = int(round(f_val * len(idx)))
        return idx[:n_tr], idx[n_tr:n_tr + n_va], idx[n_tr + n_va:]

    if stratify:
        trs, vas, tes = [], [], []
        for c in classes:
            t, v, e = cut(labeled[graph.labels[labeled] == c])
            trs.append(t); vas.append(v); tes.append(e)
        train, val, test = (np.sort(np.concatenate(x)) for x in (trs, vas, tes))
    else:
        t, v, e = cut(labeled.copy())
        train, val, test = np.sort(t), np.sort(v), np.sort(e)
    return NodeSplit(train, val, test, seed)


def generate_synthetic(spec, seed=0):
    """Stochastic block model with group-correlated labels and noisy features.

    Groups are uniform; the label copies the group with probability rho and
    is uniform over the other groups otherwise; features are a scaled one-hot
    of the label plus Gaussian noise; the fairness attribute is the group.
    """
    gen = rng.stream(seed, "synthetic")
    n, k = spec.n_nodes, spec.n_groups
    groups = gen.integers(0, k, size=n)

    copy = gen.random(n) < spec.label_group_correlation
    shift = gen.integers(1, k, size=n)
    labels = np.where(copy, groups, (groups + shift) % k).astype(np.int64)

    # upper-triangle Bernoulli draw, probability by group agreement
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(groups[iu] == groups[ju],
                 spec.intra_group_edge_prob, spec.inter_group_edge_prob)
    present = gen.random(len(iu)) < p
    adjacency = _symmetrize(n, iu[present], ju[present])

    d = max(spec.feature_dim, k)
    features = gen.normal(0.0, spec.feature_noise_sd, size=(n, d))
    features[np.arange(n), labels] += 2.0

    privacy = gen.integers(0, k, size=n)
    return Graph(n, adjacency, features, labels, groups.astype(np.int64),
                 privacy.astype(np.int64))


def summarize(graph):
    return DatasetStats(
        n_nodes=graph.n_nodes,
        n_edges=int(graph.adjacency.nnz // 2),
        n_attributes=int(graph.features.shape[1]),
        pct_labeled=100.0 * len(graph.labeled_nodes()) / graph.n_nodes if graph.n_nodes else 0.0,
    )

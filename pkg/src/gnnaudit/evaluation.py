"""Accuracy, group-fairness gaps and attribute-leakage probes.

Fairness gaps are scalarized as the maximum pairwise difference across
groups; multiclass tasks report the maximum over one-vs-rest positive
classes. Leakage probes are trained on train-split embedding rows and
scored on test-split rows so the number measures generalizing leakage.
"""

import warnings
from dataclasses import dataclass, asdict

import numpy as np

from . import rng


@dataclass
class MetricRecord:
    dataset: str
    model_kind: str
    method: str
    alpha: float
    beta: float
    lam: float
    mode: str
    seed: int
    split_seed: int
    accuracy: float
    delta_sp: float
    delta_eo: float
    fair_leak: float
    priv_leak: float
    mia_tree: float
    mia_mlp: float
    error: str = ""

    def as_dict(self):
        return asdict(self)


def accuracy(preds, labels, nodes):
    nodes = np.asarray(nodes)
    if nodes.size == 0:
        raise ValueError("empty node set")
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    return float(np.mean(preds[nodes] == labels[nodes]))


def _positive_rate_gap(pos, groups):
    """Max pairwise difference of mean(pos) across groups with members."""
    rates = []
    for g in np.unique(groups):
        m = groups == g
        if not m.any():
            continue
        rates.append(pos[m].mean())
    if len(rates) < 2:
        return 0.0
    return float(max(rates) - min(rates))


def statistical_parity_diff(preds, groups, nodes):
    """Max pairwise difference of positive-prediction rates across groups."""
    nodes = np.asarray(nodes)
    preds = np.asarray(preds)[nodes]
    all_groups = np.unique(np.asarray(groups))
    groups = np.asarray(groups)[nodes]
    if len(np.unique(groups)) < len(all_groups):
        warnings.warn("a group has no members on the given nodes; excluded")
    classes = np.unique(preds)
    n_classes = max(int(preds.max()) + 1 if preds.size else 2, 2)
    if n_classes == 2:
        return _positive_rate_gap((preds == 1).astype(float), groups)
    return max(_positive_rate_gap((preds == c).astype(float), groups)
               for c in range(n_classes))


def equal_opportunity_diff(preds, labels, groups, nodes):
    """Max pairwise true-positive-rate difference across groups with positives."""
    nodes = np.asarray(nodes)
    preds = np.asarray(preds)[nodes]
    labels = np.asarray(labels)[nodes]
    groups = np.asarray(groups)[nodes]
    n_classes = max(int(labels.max()) + 1, 2)
    pos_classes = range(1, 2) if n_classes == 2 else range(n_classes)
    best = None
    for c in pos_classes:
        tprs = []
        for g in np.unique(groups):
            m = (groups == g) & (labels == c)
            if m.any():
                tprs.append((preds[m] == c).mean())
        if len(tprs) >= 2:
            gap = float(max(tprs) - min(tprs))
            best = gap if best is None else max(best, gap)
    if best is None:
        raise ValueError("no group has positive-labeled nodes")
    return best


def attribute_leakage(Z, attr, split, seed=0, epochs=500, lr=0.1, l2=1e-4):
    """Test accuracy of a softmax-regression probe predicting attr from Z.

    Full-batch gradient descent, deterministic per seed; the probe sees only
    train-split rows and is scored on test-split rows.
    """
    Z = np.asarray(Z, dtype=np.float64)
    attr = np.asarray(attr)
    classes = np.unique(attr[np.concatenate([split.train, split.test])])
    if len(classes) < 2:
        raise ValueError("attribute has a single class")
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap.get(a, 0) for a in attr])
    k = len(classes)
    tr, te = split.train, split.test
    Xtr = Z[tr]
    mu, sd = Xtr.mean(axis=0), Xtr.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xtr = (Xtr - mu) / sd
    Xte = (Z[te] - mu) / sd
    gen = rng.stream(seed, "probe")
    W = gen.normal(0, 0.01, size=(Z.shape[1], k))
    b = np.zeros(k)
    ytr = y[tr]
    onehot = np.eye(k)[ytr]
    n = len(tr)
    for _ in range(epochs):
        logits = Xtr @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        gW = Xtr.T @ (p - onehot) / n + l2 * W
        gb = (p - onehot).mean(axis=0)
        W -= lr * gW
        b -= lr * gb
    pred = np.argmax(Xte @ W + b, axis=1)
    return float(np.mean(pred == y[te]))


def evaluate_all(model, graph, split, attack_results=None, *, dataset="synthetic",
                 method="none", alpha=0.0, beta=0.0, lam=0.0, mode="", seed=0):
    """Assemble one MetricRecord from a trained model and its attack results."""
    preds = model.predict()
    test = split.test
    rec = MetricRecord(
        dataset=dataset,
        model_kind=model.kind,
        method=method,
        alpha=float(alpha), beta=float(beta), lam=float(lam), mode=mode,
        seed=int(seed), split_seed=int(split.seed),
        accuracy=accuracy(preds, graph.labels, test),
        delta_sp=statistical_parity_diff(preds, graph.fairness_attr, test),
        delta_eo=equal_opportunity_diff(preds, graph.labels, graph.fairness_attr, test),
        fair_leak=attribute_leakage(model.embeddings_, graph.fairness_attr, split, seed=seed),
        priv_leak=attribute_leakage(model.embeddings_, graph.privacy_attr, split, seed=seed),
        mia_tree=attack_results.get("tree", 0.0) if attack_results else 0.0,
        mia_mlp=attack_results.get("mlp", 0.0) if attack_results else 0.0,
    )
    return rec

"""Membership inference attacks on trained node classifiers.

The attacker sees, per labeled node, the model's sorted task posteriors,
its cross-entropy loss at the true label and the top-2 posterior margin.
Members are train-split nodes, non-members test-split nodes, balanced by
subsampling; attackers train on a stratified half and are scored on the
other half. Two attacker classes: a gradient-boosted tree ensemble and a
small MLP.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import HistGradientBoostingClassifier

from . import autodiff as ad
from . import rng


@dataclass
class AttackFeatures:
    X: np.ndarray          # rows: [sorted posteriors desc, loss, margin]
    membership: np.ndarray  # 1 = train member


def build_attack_features(model, graph, split, seed=0):
    """Balanced member/non-member feature rows from the target's posteriors."""
    p = model.predict_proba()
    labels = graph.labels
    members = np.asarray(split.train)
    non_members = np.asarray(split.test)
    gen = rng.stream(seed, "mia-balance")
    m = min(len(members), len(non_members))
    members = members[gen.permutation(len(members))[:m]]
    non_members = non_members[gen.permutation(len(non_members))[:m]]
    nodes = np.concatenate([members, non_members])
    post = p[nodes]
    srt = -np.sort(-post, axis=1)
    true_p = np.clip(post[np.arange(len(nodes)), labels[nodes]], 1e-300, None)
    loss = -np.log(true_p)
    margin = srt[:, 0] - (srt[:, 1] if srt.shape[1] > 1 else 0.0)
    X = np.column_stack([srt, loss, margin])
    y = np.concatenate([np.ones(m, dtype=np.int64), np.zeros(m, dtype=np.int64)])
    return AttackFeatures(X, y)


class _ConstantAttacker:
    def __init__(self, label):
        self.label = label

    def predict(self, X):
        return np.full(len(X), self.label, dtype=np.int64)


@dataclass
class Attacker:
    kind: str
    model: object

    def predict(self, X):
        return np.asarray(self.model.predict(X))

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))


def fit_tree_attacker(X, y, rounds=50, depth=3, lr=0.1, max_bins=32, seed=0):
    """Gradient-boosted trees with histogram splits and logistic loss."""
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("attacker training labels contain a single class")
    if rounds == 0:
        majority = int(np.bincount(y).argmax())
        return Attacker("tree", _ConstantAttacker(majority))
    clf = HistGradientBoostingClassifier(
        max_iter=rounds, max_depth=depth, learning_rate=lr, max_bins=max_bins,
        early_stopping=False, random_state=seed)
    clf.fit(X, y)
    return Attacker("tree", clf)


class _MLPAttacker:
    def __init__(self, params, norm):
        self.params = params
        self.norm = norm

    def predict(self, X):
        mu, sd = self.norm
        H = ad.Tensor((np.asarray(X) - mu) / sd)
        (W1, b1), (W2, b2), (W3, b3) = self.params
        H = ad.relu(H @ W1 + b1)
        H = ad.relu(H @ W2 + b2)
        return np.argmax((H @ W3 + b3).value, axis=1)


def fit_mlp_attacker(X, y, hidden=(32, 16), epochs=300, lr=0.01, seed=0):
    """Small MLP attacker trained full batch with Adam."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("attacker training labels contain a single class")
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xn = (X - mu) / sd
    gen = rng.stream(seed, "mia-mlp")
    dims = [X.shape[1], *hidden, 2]
    params = []
    for i in range(3):
        limit = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        W = ad.Tensor(gen.uniform(-limit, limit, size=(dims[i], dims[i + 1])),
                      requires_grad=True, name=f"W{i}")
        b = ad.Tensor(np.zeros((1, dims[i + 1])), requires_grad=True, name=f"b{i}")
        params.append((W, b))
    flat = [t for pair in params for t in pair]
    opt = ad.Adam(flat, lr=lr)
    Xt = ad.Tensor(Xn)
    for _ in range(epochs):
        ad.zero_grads(flat)
        H = ad.relu(Xt @ params[0][0] + params[0][1])
        H = ad.relu(H @ params[1][0] + params[1][1])
        logits = H @ params[2][0] + params[2][1]
        loss = ad.cross_entropy_with_logits(logits, y)
        ad.backward(loss)
        opt.step()
    return Attacker("mlp", _MLPAttacker(params, (mu, sd)))


def mia_accuracy(model, graph, split, kind="tree", seed=0):
    """Train/evaluate an attacker on a stratified 50/50 split of the features."""
    feats = build_attack_features(model, graph, split, seed=seed)
    gen = rng.stream(seed, "mia-split")
    fit_idx, eval_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(feats.membership == cls)
        idx = idx[gen.permutation(len(idx))]
        half = len(idx) // 2
        fit_idx.append(idx[:half])
        eval_idx.append(idx[half:])
    fit_idx = np.concatenate(fit_idx)
    eval_idx = np.concatenate(eval_idx)
    if kind == "tree":
        atk = fit_tree_attacker(feats.X[fit_idx], feats.membership[fit_idx], seed=seed)
    elif kind == "mlp":
        atk = fit_mlp_attacker(feats.X[fit_idx], feats.membership[fit_idx], seed=seed)
    else:
        raise ValueError(f"unknown attacker kind {kind!r}")
    return atk.score(feats.X[eval_idx], feats.membership[eval_idx])

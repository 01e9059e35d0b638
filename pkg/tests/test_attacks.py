"""Membership inference: features, tree and MLP attackers, end-to-end MIA."""

import numpy as np
import pytest

from gnnaudit.attacks import (build_attack_features, fit_tree_attacker,
                              fit_mlp_attacker, mia_accuracy)
from gnnaudit.graphdata import NodeSplit

from conftest import graph_from_edges


class StubModel:
    """Target model exposing fixed posteriors."""

    def __init__(self, posteriors):
        self._p = np.asarray(posteriors, dtype=np.float64)

    def predict_proba(self):
        return self._p


def blob_data(n, sep, seed=0):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(n, 4))
    y = (np.arange(n) % 2).astype(np.int64)
    X[:, 0] += sep * y
    return X, y


# ---------------------------------------------------------------------------
# feature construction
# ---------------------------------------------------------------------------

def test_features_sorted_balanced_and_hand_checked():
    p = np.array([[0.7, 0.2, 0.1],
                  [0.1, 0.3, 0.6],
                  [0.5, 0.25, 0.25],
                  [0.2, 0.5, 0.3]])
    labels = np.array([0, 2, 1, 1])
    g = graph_from_edges(4, [], labels=labels)
    split = NodeSplit(np.array([0, 1]), np.array([], dtype=np.int64),
                      np.array([2, 3]), 0)
    feats = build_attack_features(StubModel(p), g, split, seed=0)
    assert feats.X.shape == (4, 5)   # 3 posteriors + loss + margin
    assert feats.membership.sum() == 2 and len(feats.membership) == 4
    # every row's posterior block is sorted descending
    post = feats.X[:, :3]
    assert np.all(np.diff(post, axis=1) <= 0)
    # locate the row for node 0 (member with top posterior 0.7)
    row = feats.X[np.isclose(post[:, 0], 0.7)][0]
    np.testing.assert_allclose(row, [0.7, 0.2, 0.1, -np.log(0.7), 0.5],
                               atol=1e-12)


def test_features_balanced_when_sets_unequal():
    gen = np.random.default_rng(0)
    p = gen.dirichlet(np.ones(2), size=30)
    g = graph_from_edges(30, [], labels=gen.integers(0, 2, 30))
    split = NodeSplit(np.arange(20), np.array([], dtype=np.int64),
                      np.arange(20, 30), 0)
    feats = build_attack_features(StubModel(p), g, split, seed=1)
    # balanced by subsampling the larger side to min(20, 10) = 10
    assert len(feats.membership) == 20
    assert feats.membership.sum() == 10


# ---------------------------------------------------------------------------
# tree attacker
# ---------------------------------------------------------------------------

def test_tree_separable_data():
    X, y = blob_data(200, sep=6.0)
    atk = fit_tree_attacker(X[:100], y[:100], seed=0)
    assert atk.score(X[100:], y[100:]) >= 0.95


def test_tree_uninformative_data_near_chance():
    gen = np.random.default_rng(7)
    X = gen.normal(size=(400, 5))
    y = gen.integers(0, 2, 400)
    atk = fit_tree_attacker(X[:200], y[:200], seed=0)
    acc = atk.score(X[200:], y[200:])
    assert abs(acc - 0.5) <= 3 * np.sqrt(0.25 / 200)


def test_tree_zero_rounds_predicts_majority():
    X = np.zeros((10, 2))
    y = np.array([0, 0, 0, 0, 0, 0, 1, 1, 1, 1])
    atk = fit_tree_attacker(X, y, rounds=0)
    np.testing.assert_array_equal(atk.predict(np.zeros((3, 2))), [0, 0, 0])


def test_tree_single_class_rejected():
    with pytest.raises(ValueError, match="single class"):
        fit_tree_attacker(np.zeros((5, 2)), np.zeros(5, dtype=np.int64))


# ---------------------------------------------------------------------------
# MLP attacker
# ---------------------------------------------------------------------------

def test_mlp_separable_data():
    X, y = blob_data(200, sep=6.0, seed=1)
    atk = fit_mlp_attacker(X[:100], y[:100], seed=0)
    assert atk.score(X[100:], y[100:]) >= 0.95


def test_mlp_deterministic():
    X, y = blob_data(120, sep=1.0, seed=2)
    a = fit_mlp_attacker(X, y, seed=3).predict(X)
    b = fit_mlp_attacker(X, y, seed=3).predict(X)
    np.testing.assert_array_equal(a, b)


def test_mlp_single_class_rejected():
    with pytest.raises(ValueError, match="single class"):
        fit_mlp_attacker(np.zeros((5, 2)), np.ones(5, dtype=np.int64))


# ---------------------------------------------------------------------------
# end-to-end MIA
# ---------------------------------------------------------------------------

def constant_target(n=240, seed=0):
    # identical posteriors and labels everywhere: every feature row is equal,
    # so no attacker can separate members from non-members
    gen = np.random.default_rng(seed)
    p = np.tile([0.6, 0.4], (n, 1))
    g = graph_from_edges(n, [], labels=np.zeros(n, dtype=np.int64))
    idx = gen.permutation(n)
    split = NodeSplit(idx[: n // 2], np.array([], dtype=np.int64),
                      idx[n // 2:], 0)
    return StubModel(p), g, split


def test_mia_constant_posteriors_near_chance():
    # a target that reveals nothing keeps both attackers within 3 sigma of 0.5
    model, g, split = constant_target()
    for kind in ("tree", "mlp"):
        accs = [mia_accuracy(model, g, split, kind=kind, seed=s)
                for s in range(3)]
        n_eval = 120   # half of the 240 balanced rows
        assert abs(np.mean(accs) - 0.5) <= 3 * np.sqrt(0.25 / (3 * n_eval)), kind


def test_mia_unknown_kind_rejected():
    model, g, split = constant_target()
    with pytest.raises(ValueError, match="unknown attacker"):
        mia_accuracy(model, g, split, kind="svm")


def test_mia_deterministic(small_graph, small_split):
    from gnnaudit import GNNClassifier
    m = GNNClassifier(epochs=30, seed=0).fit(small_graph, small_split)
    a = mia_accuracy(m, small_graph, small_split, kind="tree", seed=0)
    b = mia_accuracy(m, small_graph, small_split, kind="tree", seed=0)
    assert a == b

"""Shared fixtures: small synthetic graphs and splits."""

import numpy as np
import pytest
import scipy.sparse as sp

from gnnaudit import Graph, SyntheticSpec, generate_synthetic, make_splits
from gnnaudit.graphdata import UNLABELED


def graph_from_edges(n, edges, features=None, labels=None, fairness=None,
                     privacy=None):
    """Build a Graph from an undirected edge list of (u, v) pairs."""
    rows, cols = [], []
    for u, v in edges:
        rows += [u, v]
        cols += [v, u]
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a.sum_duplicates()
    a.data[:] = 1.0
    if features is None:
        features = np.eye(n)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    fairness = np.zeros(n, dtype=np.int64) if fairness is None else np.asarray(fairness)
    privacy = np.zeros(n, dtype=np.int64) if privacy is None else np.asarray(privacy)
    return Graph(n, a, np.asarray(features, dtype=np.float64), labels,
                 fairness, privacy)


@pytest.fixture(scope="session")
def small_graph():
    spec = SyntheticSpec(n_nodes=120, intra_group_edge_prob=0.15,
                         inter_group_edge_prob=0.02,
                         label_group_correlation=0.85,
                         feature_dim=6, feature_noise_sd=1.0)
    return generate_synthetic(spec, seed=1)


@pytest.fixture(scope="session")
def small_split(small_graph):
    return make_splits(small_graph, seed=0)


@pytest.fixture(scope="session")
def biased_graph():
    """The homophilous benchmark used by the intervention tests."""
    spec = SyntheticSpec(n_nodes=300, intra_group_edge_prob=0.04,
                         inter_group_edge_prob=0.004,
                         label_group_correlation=0.9,
                         feature_dim=8, feature_noise_sd=2.0)
    return generate_synthetic(spec, seed=5)


@pytest.fixture(scope="session")
def biased_split(biased_graph):
    return make_splits(biased_graph, seed=0)

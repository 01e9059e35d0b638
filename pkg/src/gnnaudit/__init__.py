"""gnnaudit: train graph neural networks and audit their fairness and privacy."""

from .graphdata import (Graph, NodeSplit, SyntheticSpec, DatasetStats,
                        load_tabular_graph, derive_attribute, make_splits,
                        generate_synthetic, summarize)
from .models import GNNClassifier, normalize_adjacency
from .interventions import (fairwalk_weights, fairwalk_conv_weights,
                            project_embeddings, train_intervention,
                            AdvDebiasClassifier, FairLearnClassifier,
                            FilterClassifier, EmbedProjClassifier)
from .evaluation import (MetricRecord, accuracy, statistical_parity_diff,
                         equal_opportunity_diff, attribute_leakage, evaluate_all)
from .attacks import (build_attack_features, fit_tree_attacker,
                      fit_mlp_attacker, mia_accuracy)
from .runner import parse_config, execute, aggregate, run_plan

__version__ = "0.1.0"

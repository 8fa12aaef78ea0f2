"""Region infection-risk classification on geographical graphs.

Motif-based structural features and discretized attribute features are each
embedded by a GCN, fused by an aggregator and classified into four risk
levels.
"""

__version__ = "0.1.0"

from .data import Dataset, load_dataset, save_dataset, split_dataset, synth_dataset
from .features import AttributeEncoder, BoxCoxTransformer, Chi2Discretizer, build_aft, build_sft
from .graph import Graph, adjacency_matrix, build_graph, normalized_laplacian, renormalized_propagation
from .model import (AggregatorMode, GCNModel, RiskGCNClassifier, RiskLevel, aggregate, assign_risk_label,
                    evaluate, forward_dynamic, forward_static, train)
from .motifs import MotifKind, count_nmd, count_nmd_bruteforce, motif_significance, rewire_null_model

__all__ = [
    "AggregatorMode", "AttributeEncoder", "BoxCoxTransformer", "Chi2Discretizer", "Dataset", "GCNModel", "Graph",
    "MotifKind", "RiskGCNClassifier", "RiskLevel", "adjacency_matrix", "aggregate", "assign_risk_label", "build_aft",
    "build_graph", "build_sft", "count_nmd", "count_nmd_bruteforce", "evaluate", "forward_dynamic", "forward_static",
    "load_dataset", "motif_significance", "normalized_laplacian", "renormalized_propagation", "rewire_null_model",
    "save_dataset", "split_dataset", "synth_dataset", "train",
]

"""Neighbourhood-interaction CTR prediction on heterogeneous graphs."""
from .estimator import NeighbourhoodCTRClassifier
from .hin import FeatureSchema, HinGraph, load_graph, load_schema, neighbors, shared_group_indices
from .interaction import FeaturePartition, MaskSet, partition_feature_groups
from .metrics import EvalReport, auc, logloss
from .model import ModelConfig, ModelParams
from .sampler import Neighbourhood, SamplerBudget, ghn_sample, merge_neighbourhoods
from .train import Instance, TrainConfig, fit

__all__ = [
    "EvalReport", "FeaturePartition", "FeatureSchema", "HinGraph", "Instance", "MaskSet",
    "ModelConfig", "ModelParams", "Neighbourhood", "NeighbourhoodCTRClassifier", "SamplerBudget",
    "TrainConfig", "auc", "fit", "ghn_sample", "load_graph", "load_schema", "logloss",
    "merge_neighbourhoods", "neighbors", "partition_feature_groups", "shared_group_indices",
]
__version__ = "0.1.0"

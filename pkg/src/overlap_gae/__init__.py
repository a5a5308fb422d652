"""Semi-supervised graph-attention autoencoder for overlapping community detection."""

from .graph import (
    AttributedGraph,
    CommunityCover,
    DatasetError,
    PriorLabels,
    SingularThresholdError,
    load_dataset,
    planted_partition,
    validate_graph,
    zeta_threshold,
)
from .membership import assign_communities
from .metrics import onmi, overlapping_f1
from .model import ModelDims, ModelParams, decode_adjacency, encode, init_params
from .noise import perturb_attributes
from .trainer import TrainConfig, sample_prior_labels, train, train_averaged

__all__ = [
    "AttributedGraph",
    "CommunityCover",
    "DatasetError",
    "ModelDims",
    "ModelParams",
    "PriorLabels",
    "SingularThresholdError",
    "TrainConfig",
    "assign_communities",
    "decode_adjacency",
    "encode",
    "init_params",
    "load_dataset",
    "onmi",
    "overlapping_f1",
    "perturb_attributes",
    "planted_partition",
    "sample_prior_labels",
    "train",
    "train_averaged",
    "validate_graph",
    "zeta_threshold",
]

"""Minimal dense tensor kernel with reverse-mode differentiation."""

from locvalid.tensor.core import Graph, Node, Tensor, as_tensor, backward, build_graph
from locvalid.tensor.ops import (
    concat,
    conv1x1,
    conv3x3,
    global_avg_pool,
    hadamard,
    linear,
    max_normalize_per_map,
    max_over_slices,
    relu,
    sigmoid,
    softmax_per_map,
    weighted_bce,
)

__all__ = [
    "Graph",
    "Node",
    "Tensor",
    "as_tensor",
    "backward",
    "build_graph",
    "concat",
    "conv1x1",
    "conv3x3",
    "global_avg_pool",
    "hadamard",
    "linear",
    "max_normalize_per_map",
    "max_over_slices",
    "relu",
    "sigmoid",
    "softmax_per_map",
    "weighted_bce",
]

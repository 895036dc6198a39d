"""Minimal reverse-mode automatic differentiation over float64 numpy arrays."""

from .gradcheck import finite_diff_jacobian, rel_error
from .graph import Gradients, Graph, GraphError, NonFiniteError, check_finite
from .serialize import WeightFormatError, load_weights, save_weights

__all__ = [
    "Graph",
    "Gradients",
    "GraphError",
    "NonFiniteError",
    "WeightFormatError",
    "check_finite",
    "finite_diff_jacobian",
    "load_weights",
    "rel_error",
    "save_weights",
]

"""Reverse-mode automatic differentiation over dense float64 numpy arrays."""

from autodiff.errors import GraphError, NonFiniteError, ShapeError
from autodiff.node import Node, backward, topological_order
from autodiff.gradcheck import grad_check

__all__ = [
    "GraphError",
    "Node",
    "NonFiniteError",
    "ShapeError",
    "backward",
    "grad_check",
    "topological_order",
]

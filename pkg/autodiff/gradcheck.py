import numpy as np

from typing import Callable

from autodiff.node import Node, backward


def grad_check(f: Callable[[Node], Node], point, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    if h <= 0:
        raise ValueError(f"grad_check: step must be positive (got {h})")

    point = np.asarray(point, dtype=np.float64)
    leaf = Node.parameter(point)
    analytic = backward(f(leaf)).get(leaf, np.zeros_like(point))

    numeric = np.zeros_like(point)
    flat = point.reshape(-1)
    with Node.no_grad():
        for i in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += h
            minus[i] -= h
            f_plus = f(Node(plus.reshape(point.shape))).value
            f_minus = f(Node(minus.reshape(point.shape))).value
            numeric.flat[i] = (f_plus - f_minus) / (2 * h)

    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))

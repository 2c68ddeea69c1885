import threading

import numpy as np

from typing import Callable

from autodiff.errors import GraphError, NonFiniteError, ShapeError


def _checked(op: str, value: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    return value


def topological_order(root: "Node") -> list["Node"]:
    """Parents-before-children ordering of every node reachable from root."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]

    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in visited:
                stack.append((parent, False))

    return order


class Node:
    """A value in the computation graph.

    Leaves are created directly; every operation returns a new node whose
    value is computed eagerly and cached. Parameter leaves (``param=True``)
    are the ones `backward` reports gradients for.
    """

    # per thread, so graphs on other threads keep recording
    _state = threading.local()

    class no_grad:
        def __enter__(self):
            self.prev = getattr(Node._state, "no_grad", False)
            Node._state.no_grad = True

        def __exit__(self, *args):
            Node._state.no_grad = self.prev

    def __init__(self,
                 value,
                 parents: tuple["Node", ...] = (),
                 op: str = "leaf",
                 param: bool = False,
                 name: str = "") -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.param = param
        self.name = name
        self.adjoint: np.ndarray | None = None
        self._backward: Callable[[], None] | None = None

        if getattr(Node._state, "no_grad", False):
            self.parents: tuple[Node, ...] = ()
            self.requires_grad = False
        else:
            self.parents = parents
            self.requires_grad = param or any(p.requires_grad for p in parents)

    @classmethod
    def parameter(cls, value, name: str = "") -> "Node":
        return cls(np.array(value, dtype=np.float64), param=True, name=name)

    @classmethod
    def constant(cls, value, name: str = "") -> "Node":
        return cls(value, name=name)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _child(self, value: np.ndarray, parents: tuple["Node", ...], op: str,
               backward_fn: Callable[["Node"], None]) -> "Node":
        out = Node(_checked(op, value), parents, op)
        if out.requires_grad:
            out._backward = lambda: backward_fn(out)
        return out

    def matmul(self, other: "Node") -> "Node":
        a, b = self, other
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)

        def _backward(out: Node) -> None:
            if a.requires_grad:
                a.adjoint += out.adjoint @ b.value.T
            if b.requires_grad:
                b.adjoint += a.value.T @ out.adjoint

        return self._child(a.value @ b.value, (a, b), "matmul", _backward)

    __matmul__ = matmul

    def __add__(self, other) -> "Node":
        if not isinstance(other, Node):
            a = self

            def _backward_scalar(out: Node) -> None:
                a.adjoint += out.adjoint

            return self._child(a.value + float(other), (a,), "add", _backward_scalar)

        a, b = self, other
        if a.shape == b.shape:
            def _backward(out: Node) -> None:
                if a.requires_grad:
                    a.adjoint += out.adjoint
                if b.requires_grad:
                    b.adjoint += out.adjoint

            return self._child(a.value + b.value, (a, b), "add", _backward)

        # bias vector over batch rows, in either operand position
        if a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
            matrix, bias = a, b
        elif b.value.ndim == 2 and a.value.ndim == 1 and b.shape[1] == a.shape[0]:
            matrix, bias = b, a
        else:
            raise ShapeError("add", a.shape, b.shape)

        def _backward_bias(out: Node) -> None:
            if matrix.requires_grad:
                matrix.adjoint += out.adjoint
            if bias.requires_grad:
                bias.adjoint += out.adjoint.sum(axis=0)

        return self._child(a.value + b.value, (a, b), "add", _backward_bias)

    __radd__ = __add__

    def __neg__(self) -> "Node":
        return self * -1.0

    def __sub__(self, other) -> "Node":
        if not isinstance(other, Node):
            return self + (-float(other))
        if self.shape != other.shape:
            raise ShapeError("sub", self.shape, other.shape)
        a, b = self, other

        def _backward(out: Node) -> None:
            if a.requires_grad:
                a.adjoint += out.adjoint
            if b.requires_grad:
                b.adjoint -= out.adjoint

        return self._child(a.value - b.value, (a, b), "sub", _backward)

    def __rsub__(self, other) -> "Node":
        return -self + float(other)

    def __mul__(self, other) -> "Node":
        a = self
        if not isinstance(other, Node):
            k = float(other)

            def _backward_scalar(out: Node) -> None:
                a.adjoint += k * out.adjoint

            return self._child(k * a.value, (a,), "scale", _backward_scalar)

        b = other
        if a.shape != b.shape:
            raise ShapeError("mul", a.shape, b.shape)

        def _backward(out: Node) -> None:
            if a.requires_grad:
                a.adjoint += b.value * out.adjoint
            if b.requires_grad:
                b.adjoint += a.value * out.adjoint

        return self._child(a.value * b.value, (a, b), "mul", _backward)

    __rmul__ = __mul__

    def relu(self) -> "Node":
        a = self
        # derivative at exactly 0 is 0
        mask = a.value > 0

        def _backward(out: Node) -> None:
            a.adjoint += mask * out.adjoint

        return self._child(np.where(mask, a.value, 0.0), (a,), "relu", _backward)

    def sum(self, axis: int | None = None) -> "Node":
        a = self

        def _backward(out: Node) -> None:
            grad = out.adjoint if axis is None else np.expand_dims(out.adjoint, axis)
            a.adjoint += np.broadcast_to(grad, a.shape)

        return self._child(a.value.sum(axis=axis), (a,), "sum", _backward)

    def mean(self, axis: int | None = None) -> "Node":
        count = self.value.size if axis is None else self.shape[axis]
        a = self

        def _backward(out: Node) -> None:
            grad = out.adjoint if axis is None else np.expand_dims(out.adjoint, axis)
            a.adjoint += np.broadcast_to(grad, a.shape) / count

        return self._child(a.value.mean(axis=axis), (a,), "mean", _backward)

    def log(self) -> "Node":
        a = self
        with np.errstate(all="ignore"):
            value = np.log(a.value)

        def _backward(out: Node) -> None:
            a.adjoint += out.adjoint / a.value

        return self._child(value, (a,), "log", _backward)

    def exp(self) -> "Node":
        a = self
        with np.errstate(all="ignore"):
            value = np.exp(a.value)

        def _backward(out: Node) -> None:
            a.adjoint += value * out.adjoint

        return self._child(value, (a,), "exp", _backward)

    def softmax_cross_entropy(self, targets) -> "Node":
        """Per-row cross entropy of logits (rows x classes) against integer targets."""
        a = self
        targets = np.asarray(targets)
        if a.value.ndim != 2 or targets.shape != (a.shape[0],):
            raise ShapeError("softmax_cross_entropy", a.shape, targets.shape)
        if targets.size and (targets.min() < 0 or targets.max() >= a.shape[1]):
            raise ValueError(f"softmax_cross_entropy: targets outside [0, {a.shape[1]})")

        rows = np.arange(a.shape[0])
        shifted = a.value - a.value.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        value = log_norm - shifted[rows, targets]

        def _backward(out: Node) -> None:
            probs = np.exp(shifted - log_norm[:, None])
            probs[rows, targets] -= 1.0
            a.adjoint += probs * out.adjoint[:, None]

        return self._child(value, (a,), "softmax_cross_entropy", _backward)

    def gaussian_nll(self, targets, scale: float = 1.0) -> "Node":
        """Elementwise Gaussian negative log density, dropping the 0.5*ln(2*pi) constant."""
        a = self
        targets = np.asarray(targets, dtype=np.float64)
        if targets.size != a.value.size:
            raise ShapeError("gaussian_nll", a.shape, targets.shape)
        targets = targets.reshape(a.shape)
        residual = (a.value - targets) / scale
        value = 0.5 * residual ** 2 + np.log(scale)

        def _backward(out: Node) -> None:
            a.adjoint += residual / scale * out.adjoint

        return self._child(value, (a,), "gaussian_nll", _backward)

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"


def backward(root: Node) -> dict[Node, np.ndarray]:
    """Populate adjoints below a scalar root; return gradients of parameter leaves."""
    if root.value.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")

    order = topological_order(root)
    for node in order:
        node.adjoint = np.zeros_like(node.value)
    root.adjoint = np.ones_like(root.value)

    for node in reversed(order):
        if node._backward is not None:
            node._backward()

    return {node: node.adjoint for node in order if node.param}

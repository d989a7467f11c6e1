"""Reverse-mode tensor engine.

A Tensor wraps a numpy float buffer. Every differentiable operation
(see ops.py) produces a new Tensor that remembers its parents and a
closure computing the vector-Jacobian product, forming an implicit
tape. ``backward(loss)`` replays that tape once in reverse topological
order, accumulating gradients; tensors reached through several paths
have their contributions summed.

Compute is float32 by default; float64 tensors are used only for
finite-difference gradient checking.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, dtype=np.float32, name: str | None = None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result as a tape node.

    ``backward_fn(grad)`` must accumulate vector-Jacobian products into
    each parent via ``accumulate_grad``. When recording is disabled the
    result is a detached leaf.
    """
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled:
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Propagate gradients from a scalar loss through the recorded tape.

    Visits each node exactly once in reverse topological order. The
    seed gradient is 1.0; parameter tensors end up with their ``grad``
    buffers populated (summed over all uses).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar seed, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

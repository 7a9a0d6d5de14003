"""Tensor value type and the reverse-mode tape that drives backpropagation.

Every operator in :mod:`ducknet.tensorcore` returns a :class:`Tensor4` that
remembers its parents and a closure mapping the output gradient to parent
gradients.  ``Tensor4.backward`` walks that graph in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Raised when operand shapes violate an operator's contract."""


class NumericalError(ArithmeticError):
    """Raised when a non-finite value shows up where a finite one is required."""


def as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype not in SUPPORTED_DTYPES:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor4:
    """Dense array with optional gradient storage.

    Activations are always 4-D ``(batch, channel, height, width)``.  Parameter
    tensors reuse the same class: kernels are 4-D, biases and normalisation
    scales are 1-D.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        self.data = as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor4, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable["Tensor4"],
                backward: Callable[[np.ndarray], None]) -> "Tensor4":
        parents = tuple(parents)
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor; the seed gradient defaults to ones."""
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor4] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor4, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate gradients are not needed once propagated
                if node._parents:
                    node.grad = None
            node._parents = ()
            node._backward = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor4(shape={self.shape}, dtype={self.dtype}{label})"


def check_4d(t: Tensor4, what: str = "input") -> None:
    if t.data.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (batch, channel, height, width), got shape {t.shape}")

"""Dense float64 tensors, the handful of differentiable primitives the rest
of the package composes, and a finite-difference gradient oracle.

There is no general autodiff tape here: the model graphs in this package are
fixed and shallow, so every layer implements its own backward pass out of the
`*_backward` companions below. All math is 64-bit.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions do not line up."""


class OracleError(RuntimeError):
    """Raised when the finite-difference oracle hits a non-finite evaluation."""


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    `data` is always a C-contiguous float64 ndarray. `grad`, when allocated,
    has the same shape and is where backward passes accumulate; it stays
    ``None`` for frozen parameters and plain activations.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = (
            np.zeros_like(self.data) if requires_grad else None
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def requires_grad(self) -> bool:
        return self.grad is not None

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64), requires_grad)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            raise ValueError("tensor has no gradient buffer")
        self.grad += delta

    def copy(self) -> "Tensor":
        out = Tensor(self.data.copy())
        if self.grad is not None:
            out.grad = self.grad.copy()
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_array(x) -> np.ndarray:
    """Accept a Tensor or anything numpy can view as float64."""
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Forward primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product a @ b for 2-D operands."""
    av, bv = _as_array(a), _as_array(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {av.shape} and {bv.shape}"
        )
    return Tensor(av @ bv)


def matmul_backward(grad_out: np.ndarray, a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a @ b: (grad_out @ b.T, a.T @ grad_out)."""
    av, bv = _as_array(a), _as_array(b)
    g = np.asarray(grad_out, dtype=np.float64)
    return g @ bv.T, av.T @ g


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along `axis`, computed with max-subtraction for stability."""
    xv = _as_array(x)
    if xv.shape[axis] < 1:
        raise ShapeError(f"softmax: empty axis {axis} in shape {xv.shape}")
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return Tensor(e / e.sum(axis=axis, keepdims=True))


def softmax_backward(grad_out: np.ndarray, out, axis: int = -1) -> np.ndarray:
    """Jacobian-vector product of softmax given its output."""
    y = _as_array(out)
    g = np.asarray(grad_out, dtype=np.float64)
    dot = (g * y).sum(axis=axis, keepdims=True)
    return y * (g - dot)


def relu(x) -> Tensor:
    return Tensor(np.maximum(_as_array(x), 0.0))


def relu_backward(grad_out: np.ndarray, x) -> np.ndarray:
    return np.asarray(grad_out, dtype=np.float64) * (_as_array(x) > 0.0)


def sigmoid(x) -> Tensor:
    """Elementwise logistic function with the overflow-free two-branch form."""
    xv = _as_array(x)
    out = np.empty_like(xv)
    pos = xv >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    e = np.exp(xv[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor(out)


def sigmoid_backward(grad_out: np.ndarray, out) -> np.ndarray:
    y = _as_array(out)
    return np.asarray(grad_out, dtype=np.float64) * y * (1.0 - y)


# ---------------------------------------------------------------------------
# Gradient oracle
# ---------------------------------------------------------------------------

def finite_diff_grad(
    f: Callable[[Tensor], float], x, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Used by the test suite as the independent oracle for every analytic
    backward pass. `f` must be deterministic and finite near `x`.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xv = _as_array(x).copy()
    grad = np.zeros_like(xv)
    flat = xv.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(xv)))
        flat[i] = orig - eps
        lo = float(f(Tensor(xv)))
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise OracleError(
                f"non-finite evaluation at coordinate {i}: f(+)={hi}, f(-)={lo}"
            )
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad

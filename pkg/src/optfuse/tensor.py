"""Dense row-major tensors and the small kernel set the engine needs.

A tensor is a shape plus one flat, contiguous buffer. One tensor == one
memory region: that identity is what the memory-transaction trace and the
cache model count, so there are no strides, views, or broadcasting.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}


def _np_dtype(precision: str):
    try:
        return DTYPES[precision]
    except KeyError:
        raise ShapeError(f"unknown precision {precision!r}, expected one of {sorted(DTYPES)}")


class Tensor:
    """An n-dimensional array of real scalars in row-major order."""

    __slots__ = ("shape", "data")

    def __init__(self, shape, data: np.ndarray):
        shape = tuple(int(s) for s in shape)
        _check_extents(shape)
        n = int(np.prod(shape)) if shape else 1
        if data.ndim != 1 or data.shape[0] != n:
            raise ShapeError(f"buffer of {data.shape[0]} scalars cannot back shape {shape}")
        self.shape = shape
        self.data = data

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def precision(self) -> str:
        return "f32" if self.data.dtype == np.float32 else "f64"

    def view(self) -> np.ndarray:
        """Shaped view of the flat buffer (no copy)."""
        return self.data.reshape(self.shape)

    def copy(self) -> "Tensor":
        return Tensor(self.shape, self.data.copy())

    def tolist(self):
        return self.view().tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, {self.precision})"


def _check_extents(shape) -> None:
    if len(shape) == 0:
        raise ShapeError("tensor needs at least one extent")
    for s in shape:
        if s < 1:
            raise ShapeError(f"extent {s} in shape {tuple(shape)} must be >= 1")


def zeros(shape, precision: str = "f32") -> Tensor:
    _check_extents(tuple(shape))
    return Tensor(shape, np.zeros(int(np.prod(shape)), dtype=_np_dtype(precision)))


def full(shape, value: float, precision: str = "f32") -> Tensor:
    _check_extents(tuple(shape))
    return Tensor(shape, np.full(int(np.prod(shape)), value, dtype=_np_dtype(precision)))


def uniform(shape, lo: float, hi: float, seed: int, precision: str = "f32") -> Tensor:
    """Seeded uniform fill; identical seeds give bitwise-identical tensors."""
    _check_extents(tuple(shape))
    rng = np.random.Generator(np.random.PCG64(seed))
    vals = rng.uniform(lo, hi, size=int(np.prod(shape)))
    return Tensor(shape, vals.astype(_np_dtype(precision)))


def from_list(values, precision: str = "f32") -> Tensor:
    arr = np.asarray(values, dtype=_np_dtype(precision))
    return Tensor(arr.shape, arr.reshape(-1).copy())


def matmul_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of 2-D arrays with a fixed accumulation order.

    Accumulates one rank-1 update per contraction index, ascending, which is
    the same rounding sequence as the naive triple loop. BLAS would be
    faster but reorders the sums, and the 64-bit oracle comparisons require
    bit-identical results.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    out = matmul_arrays(a.view(), b.view())
    return Tensor(out.shape, out.reshape(-1))


def _binary(a: Tensor, b: Tensor, op) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise kernel needs equal shapes, got {a.shape} and {b.shape}")
    return Tensor(a.shape, op(a.data, b.data))


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.multiply)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.shape, a.data * c)


def relu(a: Tensor) -> Tensor:
    return Tensor(a.shape, np.maximum(a.data, 0))


def axpy_inplace(target: Tensor, alpha: float, x: Tensor) -> None:
    """target <- target + alpha * x, mutating target's buffer in place."""
    if target.shape != x.shape:
        raise ShapeError(f"axpy needs equal shapes, got {target.shape} and {x.shape}")
    target.data += alpha * x.data

"""Dense float32 linear algebra shared by every engine module."""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

DTYPE = np.float32

Matrix = npt.NDArray[np.float32]
Vector = npt.NDArray[np.float32]


def as_matrix(data: npt.ArrayLike, name: str = "matrix") -> Matrix:
    """Return a 2-D float32 copy of ``data`` after checking shape and finiteness."""
    array = np.array(data, dtype=DTYPE, copy=True)
    if array.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {array.shape}")
    require_finite(array, name)
    return array


def as_vector(data: npt.ArrayLike, name: str = "vector") -> Vector:
    array = np.array(data, dtype=DTYPE, copy=True)
    if array.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {array.shape}")
    require_finite(array, name)
    return array


def require_finite(array: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")


def matmul(a: np.ndarray, b: np.ndarray) -> Matrix:
    """
    Matrix product with float64 accumulation rounded once to float32.

    Rounding once makes the result independent of the BLAS kernel that ran,
    so a single row and the same row inside a batch produce the same bits
    in all but pathological cases.
    """
    if a.ndim not in (1, 2) or b.ndim != 2:
        raise ValueError(f"matmul expects (n, k) x (k, m), got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    require_finite(a, "left operand")
    require_finite(b, "right operand")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)


def affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> Matrix:
    """``x @ weight + bias`` accumulated in float64, rounded once."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape} x {weight.shape}")
    require_finite(x, "input")
    out = x.astype(np.float64) @ weight.astype(np.float64)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"bias shape {bias.shape} does not match output width {weight.shape[1]}")
        out = out + bias.astype(np.float64)
    return out.astype(DTYPE)


def relu(x: np.ndarray) -> Matrix:
    return np.maximum(x, 0).astype(DTYPE)


def additive_mask(allowed: np.ndarray) -> npt.NDArray[np.float64]:
    """Render an allowed/blocked row as the additive 0 / -inf form."""
    return np.where(np.asarray(allowed, dtype=bool), 0.0, -np.inf)


def masked_softmax(scores: np.ndarray, allowed: np.ndarray | None = None) -> Vector:
    """
    Softmax over the last axis with blocked entries forced to exactly 0.

    ``allowed`` has the shape of ``scores``; ``None`` allows everything.
    Raises if any row has no allowed entry.
    """
    scores = np.asarray(scores)
    require_finite(scores, "scores")
    if allowed is None:
        allowed = np.ones(scores.shape, dtype=bool)
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != scores.shape:
        raise ValueError(f"mask shape {allowed.shape} does not match scores {scores.shape}")
    if scores.shape[-1] == 0 or not np.all(allowed.any(axis=-1)):
        raise ValueError("mask blocks every position of a row")

    shifted = scores.astype(np.float64) + additive_mask(allowed)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    weights = weights / weights.sum(axis=-1, keepdims=True)
    weights[~allowed] = 0.0
    return weights.astype(DTYPE)

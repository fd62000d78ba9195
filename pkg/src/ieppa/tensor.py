"""Dense third-order tensor helpers.

Tensors are plain ``float64`` numpy arrays of shape ``(n1, n2, n3)`` stored in
C (row-major) order, so entry ``(r, s, t)`` has flat index ``(r*n2 + s)*n3 + t``.
Two-marginal problems use ``n3 == 1``.

All reductions go through numpy's pairwise summation over the flat array,
which visits entries in ascending flat order and is bit-reproducible for
identical inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

INF = np.inf


def as_tensor(x, dims=None) -> np.ndarray:
    """Return ``x`` as a contiguous float64 array of shape ``dims``.

    A 2-D input is promoted to ``(n1, n2, 1)``; a flat input needs ``dims``.
    """
    arr = np.asarray(x, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if arr.size != int(np.prod(dims)):
            raise DimensionError(f"data length {arr.size} does not match dims {dims}")
        arr = arr.reshape(dims)
    elif arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"expected a third-order tensor, got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise DimensionError(f"dims must be positive, got {arr.shape}")
    return np.ascontiguousarray(arr)


def _check_same(X, Y):
    if X.shape != Y.shape:
        raise DimensionError(f"dimension mismatch: {X.shape} vs {Y.shape}")


def inner_product(X, Y) -> float:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_same(X, Y)
    return float(np.sum((X * Y).ravel()))


def frobenius(X) -> float:
    X = np.asarray(X, dtype=np.float64).ravel()
    return float(np.sqrt(np.sum(X * X)))


def elementwise_combine(kind: str, X, Y) -> np.ndarray:
    """Entrywise ``product``, ``quotient`` or ``min`` of two tensors."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_same(X, Y)
    if kind == "product":
        return X * Y
    if kind == "quotient":
        if np.any(Y == 0):
            raise DomainError("division by a zero entry")
        return X / Y
    if kind == "min":
        return np.minimum(X, Y)
    raise ValueError(f"unknown combine kind {kind!r}")


def elementwise_map(kind: str, X, param: float | None = None) -> np.ndarray:
    """Entrywise maps used by the dual updates.

    ``exp_scaled``: exp(X/eps); ``log_scaled``: eps*log(X) with +inf kept as
    +inf; ``min_scalar``: min(X, c); ``clamp_nonneg``: max(X, 0).
    """
    X = np.asarray(X, dtype=np.float64)
    if kind == "exp_scaled":
        return np.exp(X / param)
    if kind == "log_scaled":
        finite = np.isfinite(X)
        if np.any(X[finite] <= 0) or np.any(np.isnan(X)):
            raise DomainError("log of a nonpositive entry")
        with np.errstate(divide="ignore"):
            return param * np.log(X)
    if kind == "min_scalar":
        return np.minimum(X, param)
    if kind == "clamp_nonneg":
        return np.maximum(X, 0.0)
    raise ValueError(f"unknown map kind {kind!r}")


def outer(*vectors) -> np.ndarray:
    """Tensor product of two or three vectors, returned as a third-order tensor."""
    if len(vectors) == 2:
        a, b = vectors
        return np.multiply.outer(np.asarray(a, float), np.asarray(b, float))[:, :, None]
    a, b, c = vectors
    return np.multiply.outer(np.multiply.outer(np.asarray(a, float), np.asarray(b, float)),
                             np.asarray(c, float))

"""Partition-structured constraint blocks and the LP instance container.

A constraint block ``A^(i)`` whose 0/1 row tensors have pairwise disjoint
supports is stored as a label map: every tensor entry carries the index of the
single row that covers it, or ``UNCOVERED``.  Disjointness therefore holds by
construction and ``apply``/``adjoint`` cost one pass over the tensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    EmptyRowError,
    InstanceFormatError,
    InvalidDirectionError,
    NonBinaryError,
    OverlapError,
    ZeroRhsError,
)
from .tensor import as_tensor

UNCOVERED = -1


@dataclass(frozen=True, eq=False)
class PartitionBlock:
    m: int
    labels: np.ndarray  # flat int64, row index or UNCOVERED
    dims: tuple

    def __post_init__(self):
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64).ravel())
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)
        if labels.size != int(np.prod(dims)):
            raise DimensionError("label map length does not match dims")
        if np.any(labels < UNCOVERED) or np.any(labels >= self.m):
            raise InstanceFormatError("label outside [-1, m)")
        counts = np.bincount(labels[labels >= 0], minlength=self.m)
        if self.m < 1 or np.any(counts == 0):
            raise EmptyRowError("every row of a block must cover at least one entry")
        object.__setattr__(self, "_covered", labels >= 0)

    @property
    def covered(self) -> np.ndarray:
        return self._covered

    @property
    def full_cover(self) -> bool:
        return bool(self._covered.all())

    def row_counts(self) -> np.ndarray:
        return np.bincount(self.labels[self._covered], minlength=self.m)

    def indicators(self) -> list[np.ndarray]:
        """The 0/1 row tensors ``A_j`` (dense; for tests and the LP oracle)."""
        out = []
        for j in range(self.m):
            out.append((self.labels == j).astype(float).reshape(self.dims))
        return out

    def same_as(self, other: "PartitionBlock") -> bool:
        return self.m == other.m and self.dims == other.dims and np.array_equal(self.labels, other.labels)


def block_from_indicators(tensors) -> PartitionBlock:
    if not tensors:
        raise EmptyRowError("a block needs at least one row")
    arrs = [np.asarray(t, dtype=float) for t in tensors]
    dims = arrs[0].shape
    if len(dims) == 2:
        arrs = [a[:, :, None] for a in arrs]
        dims = arrs[0].shape
    labels = np.full(int(np.prod(dims)), UNCOVERED, dtype=np.int64)
    for j, a in enumerate(arrs):
        if a.shape != dims:
            raise DimensionError("indicator tensors must share dims")
        flat = a.ravel()
        if np.any((flat != 0) & (flat != 1)):
            raise NonBinaryError(f"row {j} has a non-binary entry")
        hit = flat == 1
        if not hit.any():
            raise EmptyRowError(f"row {j} is empty")
        if np.any(labels[hit] != UNCOVERED):
            raise OverlapError(f"row {j} overlaps an earlier row")
        labels[hit] = j
    return PartitionBlock(len(arrs), labels, dims)


def _check_dims(block, X):
    if tuple(X.shape) != block.dims:
        raise DimensionError(f"tensor dims {X.shape} do not match block dims {block.dims}")


def apply_block(block: PartitionBlock, X) -> np.ndarray:
    """Row sums ``(<A_1, X>, ..., <A_m, X>)``; uncovered entries are ignored."""
    X = np.asarray(X, dtype=np.float64)
    _check_dims(block, X)
    cov = block.covered
    return np.bincount(block.labels[cov], weights=X.ravel()[cov], minlength=block.m)


def _gather(block, z, fill):
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size != block.m:
        raise DimensionError(f"vector length {z.size} != block rows {block.m}")
    out = np.full(block.labels.size, fill, dtype=np.float64)
    cov = block.covered
    out[cov] = z[block.labels[cov]]
    return out.reshape(block.dims)


def adjoint_block(block: PartitionBlock, y) -> np.ndarray:
    return _gather(block, y, 0.0)


def bullet_block(block: PartitionBlock, z) -> np.ndarray:
    """Like the adjoint, but uncovered entries are 1 (the exp of a zero exponent)."""
    return _gather(block, z, 1.0)


def cmot_marginal_blocks(dims) -> list[PartitionBlock]:
    dims = tuple(int(d) for d in dims)
    n1, n2, n3 = dims
    r, s, t = np.indices(dims)
    blocks = [PartitionBlock(n1, r.ravel(), dims), PartitionBlock(n2, s.ravel(), dims)]
    if n3 > 1:
        blocks.append(PartitionBlock(n3, t.ravel(), dims))
    return blocks


def check_direction(direction) -> tuple[int, int]:
    try:
        v1, v2 = (int(v) for v in direction)
    except (TypeError, ValueError):
        raise InvalidDirectionError(f"direction must be an integer pair, got {direction!r}")
    # admissible: (1, p), (1, -p), (p, 1), (p, -1) with p >= 0
    if v1 == 1 or (v1 >= 0 and v2 in (1, -1)):
        return v1, v2
    raise InvalidDirectionError(f"direction {direction!r} is not of the form (1,±p) or (p,±1)")


def line_invariants(n: int, direction) -> np.ndarray:
    """Integer invariant ``v2*x - v1*y`` of each pixel, (x, y) = (column, row), 1-based."""
    v1, v2 = check_direction(direction)
    rows, cols = np.indices((n, n))
    return (v2 * (cols + 1) - v1 * (rows + 1)).ravel()


def tomo_block(n: int, direction) -> PartitionBlock:
    """One projection block: pixels on a common lattice line share a row.

    Rows are ordered by ascending line invariant.
    """
    inv = line_invariants(n, direction)
    _, labels = np.unique(inv, return_inverse=True)
    return PartitionBlock(int(labels.max()) + 1, labels.ravel(), (n, n, 1))


@dataclass(eq=False)
class Instance:
    """``min <C,X>  s.t.  A^(i)(X) = b^(i), 0 <= X <= U``.

    ``zero_mask`` marks entries fixed at zero (removed from the variable set);
    tomography uses it for pixels on empty projection lines.
    """

    cost: np.ndarray
    blocks: list
    rhs: list
    upper: np.ndarray | None = None
    zero_mask: np.ndarray | None = None
    require_positive_rhs: bool = field(default=True, repr=False)

    def __post_init__(self):
        self._marginal = None
        self._rhs_norm = None
        self.cost = as_tensor(self.cost)
        dims = self.dims
        if not self.blocks:
            raise InstanceFormatError("an instance needs at least one block")
        if len(self.rhs) != len(self.blocks):
            raise InstanceFormatError("one rhs vector per block is required")
        self.rhs = [np.asarray(b, dtype=np.float64).ravel() for b in self.rhs]
        for i, (blk, b) in enumerate(zip(self.blocks, self.rhs)):
            if blk.dims != dims:
                raise DimensionError(f"block {i} dims {blk.dims} != cost dims {dims}")
            if b.size != blk.m:
                raise DimensionError(f"rhs {i} has length {b.size}, block has {blk.m} rows")
            if self.require_positive_rhs and np.any(~(b > 0)):
                raise ZeroRhsError(
                    f"rhs {i} has a nonpositive entry; drop empty lines before solving"
                )
        if self.upper is not None:
            self.upper = as_tensor(self.upper, dims)
            if np.any(~(self.upper > 0)):
                raise InstanceFormatError("upper bound entries must be > 0")
        if self.zero_mask is not None:
            self.zero_mask = np.asarray(self.zero_mask, dtype=bool).reshape(dims)
            if not self.zero_mask.any():
                self.zero_mask = None

    @property
    def dims(self) -> tuple:
        return tuple(self.cost.shape)

    @property
    def N(self) -> int:
        return len(self.blocks)

    @property
    def rhs_norm(self) -> float:
        """``sqrt(sum_i ||b^(i)||^2)``."""
        if self._rhs_norm is None:
            self._rhs_norm = float(np.sqrt(sum(float(np.dot(b, b)) for b in self.rhs)))
        return self._rhs_norm

    @property
    def has_finite_upper(self) -> bool:
        return self.upper is not None and bool(np.isfinite(self.upper).any())

    def is_marginal(self) -> bool:
        """True when the blocks are exactly the CMOT marginal blocks (cached)."""
        if self._marginal is None:
            ref = cmot_marginal_blocks(self.dims)
            self._marginal = len(ref) == self.N and all(
                a.same_as(b) for a, b in zip(self.blocks, ref))
        return self._marginal

    def block_sums(self, X) -> list[np.ndarray]:
        """``[A^(i)(X)]``; marginal blocks reduce along tensor axes."""
        if self.is_marginal():
            X = np.asarray(X, dtype=np.float64)
            if X.shape != self.dims:
                raise DimensionError(f"tensor dims {X.shape} do not match {self.dims}")
            if self.N == 2:
                X2 = X[:, :, 0]
                return [X2.sum(axis=1), X2.sum(axis=0)]
            return [X.sum(axis=(1, 2)), X.sum(axis=(0, 2)), X.sum(axis=(0, 1))]
        return [apply_block(blk, X) for blk in self.blocks]

    def residuals(self, X) -> list[np.ndarray]:
        return [b - s for b, s in zip(self.rhs, self.block_sums(X))]

    def to_dict(self) -> dict:
        def enc(u):
            return "inf" if np.isinf(u) else float(u)

        return {
            "dims": list(self.dims),
            "cost": [float(c) for c in self.cost.ravel()],
            "blocks": [{"m": int(b.m), "labels": [int(v) for v in b.labels]} for b in self.blocks],
            "rhs": [[float(v) for v in b] for b in self.rhs],
            "upper": None if self.upper is None else [enc(u) for u in self.upper.ravel()],
            "zero_mask": None if self.zero_mask is None else [int(v) for v in self.zero_mask.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        try:
            dims = tuple(int(v) for v in d["dims"])
            if len(dims) != 3:
                raise InstanceFormatError("dims must have three entries")
            cost = as_tensor(d["cost"], dims)
            blocks = [PartitionBlock(int(b["m"]), np.asarray(b["labels"], dtype=np.int64), dims)
                      for b in d["blocks"]]
            rhs = [np.asarray(b, dtype=float) for b in d["rhs"]]
            upper = d.get("upper")
            if upper is not None:
                upper = as_tensor([np.inf if u == "inf" else float(u) for u in upper], dims)
            mask = d.get("zero_mask")
            if mask is not None:
                mask = np.asarray(mask, dtype=bool).reshape(dims)
        except (KeyError, TypeError) as exc:
            raise InstanceFormatError(f"malformed instance: {exc}") from exc
        return cls(cost, blocks, rhs, upper, mask)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Instance":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise InstanceFormatError(f"{path}: top level must be an object")
        return cls.from_dict(data)

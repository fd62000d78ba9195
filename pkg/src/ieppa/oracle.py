"""Exact LP oracle: dense bounded-variable primal simplex with Bland's rule.

Independent of the entropic machinery and meant for desk-scale instances
only (see ``flatten`` for the size guard).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .constraints import Instance
from .errors import SizeGuardError

DEFAULT_MAX_VARS = 10000
MAX_VARS_ENV = "IEPPA_ORACLE_MAX_VARS"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class StandardLp:
    """``min c.x  s.t.  A x = b, 0 <= x <= u`` (``u`` may hold ``inf``)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    u: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.A.shape


@dataclass
class LpResult:
    x: np.ndarray | None
    objective: float | None
    status: str
    basis: np.ndarray | None = None
    iterations: int = 0


def max_vars() -> int:
    raw = os.environ.get(MAX_VARS_ENV)
    if raw is None:
        return DEFAULT_MAX_VARS
    try:
        cap = int(raw)
    except ValueError:
        raise SizeGuardError(f"{MAX_VARS_ENV} must be an integer, got {raw!r}") from None
    return min(cap, DEFAULT_MAX_VARS)


def flatten(inst: Instance) -> StandardLp:
    """One column per tensor entry (flat order), one row per block row (block order)."""
    n = int(np.prod(inst.dims))
    cap = max_vars()
    if n > cap:
        raise SizeGuardError(f"{n} variables exceed the oracle size guard of {cap}")
    rows = sum(blk.m for blk in inst.blocks)
    A = np.zeros((rows, n))
    off = 0
    cols = np.arange(n)
    for blk in inst.blocks:
        cov = blk.covered
        A[off + blk.labels[cov], cols[cov]] = 1.0
        off += blk.m
    u = np.full(n, np.inf) if inst.upper is None else inst.upper.ravel().copy()
    if inst.zero_mask is not None:
        u[inst.zero_mask.ravel()] = 0.0
    return StandardLp(A, np.concatenate(inst.rhs), inst.cost.ravel().copy(), u)


class _Simplex:
    """Revised bounded-variable simplex on ``[A | I] (x, art) = b`` with ``b >= 0``."""

    def __init__(self, A, b, u, tol):
        m, n = A.shape
        sign = np.where(b < 0, -1.0, 1.0)
        self.A = np.hstack([A * sign[:, None], np.eye(m)])
        self.b = b * sign
        self.n, self.m = n, m
        self.u = np.concatenate([u, np.full(m, np.inf)])
        self.x = np.zeros(n + m)
        self.x[n:] = self.b
        self.basis = np.arange(n, n + m)
        self.tol = tol
        self.iterations = 0

    def basic_values(self):
        nb = np.ones(self.n + self.m, bool)
        nb[self.basis] = False
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = np.linalg.solve(self.A[:, self.basis], rhs)

    def run(self, c, max_iter):
        tol = self.tol
        for _ in range(max_iter):
            B = self.A[:, self.basis]
            pi = np.linalg.solve(B.T, c[self.basis])
            d = c - self.A.T @ pi
            at_upper = np.isfinite(self.u) & (self.x >= self.u)
            eligible = np.where(at_upper, d > tol, d < -tol) & (self.u > 0)
            eligible[self.basis] = False
            if not eligible.any():
                self.basic_values()
                return OPTIMAL
            entering = int(np.argmax(eligible))  # Bland: lowest eligible index
            s = -1.0 if at_upper[entering] else 1.0
            w = np.linalg.solve(B, self.A[:, entering])
            xb = self.x[self.basis]
            ub = self.u[self.basis]
            sw = s * w
            t = np.full(self.m, np.inf)
            dec = sw > tol
            inc = (sw < -tol) & np.isfinite(ub)
            t[dec] = np.maximum(xb[dec], 0.0) / sw[dec]
            t[inc] = np.maximum(ub[inc] - xb[inc], 0.0) / -sw[inc]
            step = self.u[entering]  # bound flip
            leave = None
            tmin = float(t.min()) if self.m else np.inf
            if tmin < step:
                ties = np.flatnonzero(t <= tmin + tol * 1e-3)
                leave = int(ties[np.argmin(self.basis[ties])])  # Bland: lowest index
                step = tmin
                leave_to_upper = bool(inc[leave])
            if not np.isfinite(step):
                return UNBOUNDED
            self.iterations += 1
            self.x[entering] += s * step
            self.x[self.basis] = xb - s * step * w
            if leave is not None:
                out = self.basis[leave]
                self.x[out] = self.u[out] if leave_to_upper else 0.0
                self.basis[leave] = entering
            if self.iterations % 50 == 0:  # curb drift of the incremental update
                self.basic_values()
        return ITERATION_LIMIT


def solve_lp_exact(lp: StandardLp, tol: float = 1e-10, max_iter: int = 100000) -> LpResult:
    A = np.asarray(lp.A, dtype=np.float64)
    b = np.asarray(lp.b, dtype=np.float64)
    c = np.asarray(lp.c, dtype=np.float64)
    u = np.asarray(lp.u, dtype=np.float64)
    m, n = A.shape
    scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    sx = _Simplex(A, b, u, tol)
    phase1 = np.concatenate([np.zeros(n), np.ones(m)])
    status = sx.run(phase1, max_iter)
    if status != OPTIMAL:
        return LpResult(None, None, status, iterations=sx.iterations)
    if float(np.sum(sx.x[n:])) > 1e-9 * scale:
        return LpResult(None, None, INFEASIBLE, iterations=sx.iterations)
    # artificials stay at zero: boxed to [0, 0], so they never re-enter
    sx.u[n:] = 0.0
    sx.x[n:] = np.where(np.isin(np.arange(n, n + m), sx.basis), sx.x[n:], 0.0)
    status = sx.run(np.concatenate([c, np.zeros(m)]), max_iter)
    if status != OPTIMAL:
        return LpResult(None, None, status, iterations=sx.iterations)
    x = np.clip(sx.x[:n], 0.0, u)
    return LpResult(x, float(c @ x), OPTIMAL, sx.basis.copy(), sx.iterations)


def solve_instance(inst: Instance, tol: float = 1e-10) -> LpResult:
    """Flatten and solve; ``x`` comes back reshaped to the instance dims."""
    res = solve_lp_exact(flatten(inst), tol)
    if res.x is not None:
        res.x = res.x.reshape(inst.dims)
    return res

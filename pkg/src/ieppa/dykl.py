"""Dykstra's algorithm with KL projections for entropic capacity-constrained OT.

Baseline for the 2-marginal case: each sweep projects (in KL) onto the row
marginal set, the column marginal set and the box ``X <= U`` in turn, with
Dykstra's multiplicative corrections ``Q_1, Q_2, Q_3``.  The stabilized form
runs the same recursion on ``eps*log`` of every quantity.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .constraints import Instance
from .eppa import STATUS_CONVERGED, STATUS_MAX_OUTER, SolveReport, delta1, kkt_residuals
from .errors import DimensionError, NotMarginalError, UnderflowError

PLAIN_MIN_EPS = 1e-2  # below this the plain form loses range


@dataclass
class DyklState:
    """``X`` and corrections ``Q`` in plain form, or their ``eps*log`` twins."""

    X: np.ndarray
    Q: list
    epsilon: float
    log_domain: bool = False
    last_pis: tuple | None = None  # (Pi_1, Pi_2, Pi_3) of the latest sweep

    def primal(self) -> np.ndarray:
        return np.exp(self.X / self.epsilon) if self.log_domain else self.X


def initial_state(C, epsilon: float, log_domain: bool = False) -> DyklState:
    C = np.asarray(C, dtype=np.float64)
    if log_domain:
        return DyklState(-C.copy(), [np.zeros_like(C) for _ in range(3)], epsilon, True)
    return DyklState(np.exp(-C / epsilon), [np.ones_like(C) for _ in range(3)], epsilon, False)


def dykl_sweep(state: DyklState, a, b, U=None) -> DyklState:
    X, (Q1, Q2, Q3) = state.X, state.Q
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):  # checked below
        T = X * Q1
        P1 = (a / T.sum(axis=1))[:, None] * T
        T = P1 * Q2
        P2 = T * (b / T.sum(axis=0))[None, :]
        T = P2 * Q3
        P3 = T if U is None else np.minimum(T, U)
        Qn = [Q1 * (X / P1), Q2 * (P1 / P2), Q3 * (P2 / P3)]
    for arr in (P1, P2, P3, *Qn):
        if not np.isfinite(arr).all() or not (arr > 0).all():
            raise UnderflowError("plain DyKL lost range; use the stabilized form")
    return DyklState(P3, Qn, state.epsilon, False, (P1, P2, P3))


def _lse(V, axis):
    mx = V.max(axis=axis, keepdims=True)
    return np.squeeze(mx, axis) + np.log(np.exp(V - mx).sum(axis=axis))


def dykl_sweep_stabilized(state: DyklState, a_log, b_log, U_log=None) -> DyklState:
    """Sweep on ``eps*log`` quantities; ``a_log = eps*log(a)`` etc."""
    eps = state.epsilon
    X, (Q1, Q2, Q3) = state.X, state.Q
    T = X + Q1
    P1 = (a_log - eps * _lse(T / eps, 1))[:, None] + T
    T = P1 + Q2
    P2 = (b_log - eps * _lse(T / eps, 0))[None, :] + T
    T = P2 + Q3
    P3 = T if U_log is None else np.minimum(T, U_log)
    Qn = [Q1 + X - P1, Q2 + P1 - P2, Q3 + P2 - P3]
    for arr in (P1, P2, P3, *Qn):
        if not np.isfinite(arr).all():
            raise UnderflowError("stabilized DyKL produced a nonfinite entry")
    return DyklState(P3, Qn, eps, True, (P1, P2, P3))


def _check_two_marginal(inst: Instance):
    if inst.dims[2] != 1 or inst.N != 2 or not inst.is_marginal():
        raise NotMarginalError("DyKL is implemented for 2-marginal instances only")
    if inst.zero_mask is not None:
        raise DimensionError("DyKL does not support pinned entries")


def solve_dykl(inst: Instance, epsilon: float, tol: float = 1e-5, max_iter: int = 20000,
               stabilized: bool | None = None):
    """Iterate until ``delta1 < tol``; returns ``(X, report)``.

    ``stabilized=None`` picks the log-domain form for ``epsilon < 1e-2`` and
    also switches to it if the plain form loses range.
    """
    _check_two_marginal(inst)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    t0 = time.perf_counter()
    C = inst.cost[:, :, 0]
    a, b = inst.rhs
    U = None if not inst.has_finite_upper else inst.upper[:, :, 0]
    flags = []
    use_log = epsilon < PLAIN_MIN_EPS if stabilized is None else stabilized
    with np.errstate(divide="ignore"):
        logs = (epsilon * np.log(a), epsilon * np.log(b),
                None if U is None else epsilon * np.log(U))
    state = initial_state(C, epsilon, use_log)
    status, it = STATUS_MAX_OUTER, 0
    X = state.primal()[:, :, None]
    for it in range(1, max_iter + 1):
        if state.log_domain:
            state = dykl_sweep_stabilized(state, *logs)
        else:
            try:
                state = dykl_sweep(state, a, b, U)
            except UnderflowError:
                if stabilized is not None:
                    raise
                flags.append("switched-to-logdomain")
                state = initial_state(C, epsilon, True)
                state = dykl_sweep_stabilized(state, *logs)
        X = state.primal()[:, :, None]
        if delta1(inst, X) < tol:
            status = STATUS_CONVERGED
            break
    full = kkt_residuals(inst, X, [np.zeros(a.size), np.zeros(b.size)])
    deltas = {k: None for k in ("d2", "d5", "d6", "d7", "kkt")}
    deltas.update(d1=full["d1"], d3=full["d3"], d4=full["d4"])
    report = SolveReport(
        objective=float(np.sum((inst.cost * X).ravel())),
        deltas=deltas,
        outer_iters=it,
        inner_sweeps=it,
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
        status=status,
        flags=flags,
    )
    return X, report

"""Inexact entropic proximal point outer loop.

Each outer step solves ``min <C,X> + eps*D(X, X^k)`` over the equality and
upper-bound constraints with the dual BCD of :mod:`ieppa.bcd`, and accepts an
iterate once its feasibility residual is small and a nearby feasible point
(built by :func:`round_to_feasible`) is within the Bregman budget ``mu_k``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import bcd
from .constraints import Instance, adjoint_block
from .entropy import bregman, bregman_log
from .errors import DomainError, InfeasibleDataError, InnerCapExceeded, NotMarginalError
from .tensor import frobenius, outer

WAIVED_FLAG = "theoretical-guarantee-waived"
LOGDOMAIN_FLAG = "switched-to-logdomain"

STATUS_CONVERGED = "converged"
STATUS_MAX_OUTER = "max_outer_reached"
STATUS_INNER_CAP = "inner_cap_exceeded"


def default_mu(k: int) -> float:
    return max((k + 1) ** -1.1, 1e-6)


def default_mutilde(k: int) -> float:
    return max(1e-4 * (2.0 / 3.0) ** k, 1e-6)


@dataclass
class EppaParams:
    epsilon: float = 0.05
    tol_kkt: float = 1e-5
    max_outer: int = 500
    mu_schedule: Callable[[int], float] = default_mu
    mutilde_schedule: Callable[[int], float] = default_mutilde
    scheme: str = "auto"
    inner_cap: int = bcd.DEFAULT_INNER_CAP
    track_dual: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tol_kkt > 0 or self.max_outer < 1 or self.inner_cap < 1:
            raise ValueError("tol_kkt, max_outer and inner_cap must be positive")
        if self.scheme not in bcd.SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


# ---------------------------------------------------------------- residuals

def delta1(inst: Instance, X) -> float:
    num = math.sqrt(sum(float(np.dot(r, r)) for r in inst.residuals(X)))
    return num / (1.0 + inst.rhs_norm)


def _finite_upper(inst):
    if inst.upper is None:
        return None, None
    fin = np.isfinite(inst.upper)
    return (fin, inst.upper) if fin.any() else (None, None)


def kkt_residuals(inst: Instance, X, y, W=None) -> dict:
    """Seven relative KKT residuals of the LP and their maximum ``kkt``.

    Upper-bound terms only see entries with a finite bound; entries fixed at
    zero by ``zero_mask`` are not variables and are skipped in the dual terms.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape != inst.dims:
        raise DomainError(f"X dims {X.shape} != {inst.dims}")
    if len(y) != inst.N:
        raise DomainError("one multiplier vector per block is required")
    W = np.zeros(inst.dims) if W is None else np.asarray(W, dtype=np.float64)
    C = inst.cost
    free = np.ones(inst.dims, bool) if inst.zero_mask is None else ~inst.zero_mask
    Z = W.copy()
    for blk, yq in zip(inst.blocks, y):
        Z += adjoint_block(blk, yq)
    Z -= C  # sum A* y + W - C
    normC = 1.0 + frobenius(C)
    d = {}
    d["d1"] = delta1(inst, X)
    d["d2"] = frobenius(np.maximum(Z[free], 0.0)) / normC
    d["d3"] = frobenius(np.minimum(X, 0.0)) / (1.0 + frobenius(X))
    fin, U = _finite_upper(inst)
    if fin is None:
        d["d4"] = d["d5"] = d["d6"] = 0.0
    else:
        normU = 1.0 + frobenius(U[fin])
        d["d4"] = frobenius(np.minimum(U[fin] - X[fin], 0.0)) / normU
        d["d5"] = frobenius(np.maximum(W, 0.0)) / (1.0 + frobenius(W))
        d["d6"] = abs(float(np.sum((W[fin] * (U[fin] - X[fin])).ravel()))) / normU
    d["d7"] = abs(float(np.sum((X[free] * Z[free]).ravel()))) / normC
    d["kkt"] = max(d[f"d{i}"] for i in range(1, 8))
    return d


# ------------------------------------------------------------ feasibility map

def interior_point(inst: Instance) -> np.ndarray:
    """``(b1 x b2 [x b3]) / T^(N-1)``: satisfies every marginal, strictly positive."""
    if not inst.is_marginal():
        raise NotMarginalError("the product interior point needs marginal blocks")
    T = float(np.sum(inst.rhs[0]))
    return outer(*inst.rhs) / T ** (inst.N - 1)


def _check_totals(inst):
    totals = np.array([float(np.sum(b)) for b in inst.rhs])
    if np.max(np.abs(totals - totals[0])) > 1e-10 * max(1.0, abs(totals[0])):
        raise InfeasibleDataError(f"marginal totals differ: {totals.tolist()}")


class FeasibilityMap:
    """The rounding map ``G`` bound to one instance, validated once.

    Stage 1 scales every marginal down to its target and adds a rank-one
    correction for the remaining deficit; stage 2 pulls the result toward an
    interior point ``x_ri`` just far enough to restore ``Z <= U``.
    """

    def __init__(self, inst: Instance, x_ri=None):
        if not inst.is_marginal():
            raise NotMarginalError("rounding is defined for the CMOT marginal blocks only")
        _check_totals(inst)
        self.rhs = inst.rhs
        self.N = inst.N
        self.U = inst.upper if inst.has_finite_upper else None
        self.x_ri = None if x_ri is None else np.asarray(x_ri, dtype=np.float64)
        self._x_ri_ok = None
        self._axes = [tuple(q for q in range(3) if q != i) for i in range(self.N)]
        self._shapes = [tuple(b.size if q == i else 1 for q in range(3)) for i, b in enumerate(self.rhs)]

    def _interior(self):
        if self.x_ri is None:
            raise InfeasibleDataError("an interior point x_ri is required for a nontrivial upper bound")
        if self._x_ri_ok is None:
            self._x_ri_ok = bool(np.all(self.x_ri > 0) and np.all(self.x_ri < self.U))
        if not self._x_ri_ok:
            raise InfeasibleDataError("x_ri is not strictly interior")
        return self.x_ri

    def __call__(self, X) -> np.ndarray:
        Z = np.array(X, dtype=np.float64)
        axes, shapes = self._axes, self._shapes
        for i, b in enumerate(self.rhs):
            r = Z.sum(axis=axes[i])
            if r.all():
                scale = b / r
            else:  # empty slices keep their (zero) mass
                scale = np.divide(b, r, out=np.ones_like(b), where=r > 0)
            np.minimum(scale, 1.0, out=scale)
            Z *= scale.reshape(shapes[i])
        errs = [np.maximum(b - Z.sum(axis=axes[i]), 0.0) for i, b in enumerate(self.rhs)]
        e1 = float(errs[0].sum())
        if e1 > 0:
            Z += outer(*errs) / e1 ** (self.N - 1)
        U = self.U
        if U is None:
            return Z
        over = Z > U  # never true where U is +inf
        if not over.any():
            return Z
        x_ri = self._interior()
        # on violating entries Z > U > x_ri, so the ratio is well defined
        ratio = np.divide(Z - U, Z - x_ri, out=np.full(Z.shape, -np.inf), where=over)
        lam = min(max(float(ratio.max()), 0.0), 1.0)
        Z += lam * (x_ri - Z)
        return np.minimum(Z, U)


def round_to_feasible(inst: Instance, X, x_ri=None) -> np.ndarray:
    """Map ``0 <= X <= U`` to a point of the feasible polytope; see :class:`FeasibilityMap`."""
    return FeasibilityMap(inst, x_ri)(X)


# ------------------------------------------------------------------- gate

@dataclass
class InexactGate:
    """Inner stopping test for outer step ``k``.

    The Bregman test is only attempted once ``delta1 <= mutilde``; without a
    feasibility map the gate falls back to the residual test alone.
    """

    k: int
    mu: float
    mutilde: float
    feasibility_map: Callable | None = None
    last_bregman: float | None = field(default=None, repr=False)

    def check(self, sub, X, state=None):
        return inexact_gate_check(self, sub, X, state)


def inexact_gate_check(gate: InexactGate, sub, X, state=None):
    """``(accepted, Xtilde)``; with ``state`` the Bregman term uses the exact
    ``log X`` from the duals, so entries below the float range are handled."""
    if delta1(sub.instance, X) > gate.mutilde:
        return False, None
    if gate.feasibility_map is None:
        return True, None
    Xt = gate.feasibility_map(X)
    if state is None:
        gate.last_bregman = bregman(Xt, X)
    else:
        # Xt is finite and nonnegative by construction of the map
        gate.last_bregman = bregman_log(Xt, bcd.log_primal(sub, state), validate=False)
    return gate.last_bregman <= gate.mu, Xt


# ------------------------------------------------------------------ report

DELTA_KEYS = ("d1", "d2", "d3", "d4", "d5", "d6", "d7", "kkt")


@dataclass
class SolveReport:
    objective: float
    deltas: dict
    outer_iters: int
    inner_sweeps: int
    wall_time_ms: float
    status: str
    flags: list = field(default_factory=list)
    history: list = field(default_factory=list, repr=False)

    def to_dict(self, include_time: bool = True) -> dict:
        out = {
            "objective": self.objective,
            "delta": {k: self.deltas.get(k) for k in DELTA_KEYS},
            "outer_iters": self.outer_iters,
            "inner_sweeps": self.inner_sweeps,
            "wall_time_ms": self.wall_time_ms if include_time else None,
            "status": self.status,
            "flags": list(self.flags),
        }
        return out

    def to_json(self, include_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_time), indent=2, sort_keys=False)


class IeppaResult(NamedTuple):
    X: np.ndarray
    Xtilde: np.ndarray | None
    dual: bcd.DualState
    report: SolveReport


def initial_point(inst: Instance) -> np.ndarray:
    """Strictly positive start: the product point when it is interior, else min(1, U/2)."""
    X0 = None
    if inst.is_marginal():
        cand = interior_point(inst)
        fin, U = _finite_upper(inst)
        if fin is None or np.all(cand[fin] < U[fin]):
            X0 = cand
    if X0 is None:
        X0 = np.ones(inst.dims)
        if inst.upper is not None:
            X0 = np.minimum(X0, inst.upper / 2.0)
    if inst.zero_mask is not None:
        X0 = np.where(inst.zero_mask, 0.0, X0)
    return X0


def solve_ieppa(inst: Instance, params: EppaParams | None = None, x_ri=None) -> IeppaResult:
    params = params or EppaParams()
    t0 = time.perf_counter()
    flags = []
    if inst.is_marginal():
        if x_ri is None and inst.has_finite_upper:
            x_ri = interior_point(inst)
        G = FeasibilityMap(inst, x_ri)
    else:
        G = None
        flags.append(WAIVED_FLAG)
    X0 = initial_point(inst)
    with np.errstate(divide="ignore"):
        log_X = np.log(X0)
    X, Xt, state = X0, None, None
    warm = None
    history = []
    total_sweeps = 0
    status = STATUS_MAX_OUTER
    deltas = kkt_residuals(inst, X0, [np.zeros(b.m) for b in inst.blocks])
    outer = 0
    for k in range(params.max_outer):
        sub = bcd.ProxSubproblem(inst, epsilon=params.epsilon, log_S=log_X)
        gate = InexactGate(k, params.mu_schedule(k), params.mutilde_schedule(k), G)
        try:
            X, Xt, state, stats = bcd.solve_subproblem(
                sub, gate, warm=warm, scheme=params.scheme,
                cap=params.inner_cap, track_dual=params.track_dual)
        except InnerCapExceeded as exc:
            total_sweeps += exc.stats.sweeps
            state = exc.state
            X = bcd.recover_primal(sub, state)
            deltas = kkt_residuals(inst, X, state.y, state.W)
            status = STATUS_INNER_CAP
            outer = k + 1
            break
        outer = k + 1
        total_sweeps += stats.sweeps
        if stats.switched_to_logdomain and LOGDOMAIN_FLAG not in flags:
            flags.append(LOGDOMAIN_FLAG)
        log_X = bcd.log_primal(sub, state)
        deltas = kkt_residuals(inst, X, state.y, state.W)
        history.append({
            "k": k,
            "sweeps": stats.sweeps,
            "scheme": stats.scheme,
            "mu": gate.mu,
            "mutilde": gate.mutilde,
            "bregman": gate.last_bregman,
            "objective": float(np.sum((inst.cost * X).ravel())),
            "objective_tilde": None if Xt is None else float(np.sum((inst.cost * Xt).ravel())),
            "deltas": deltas,
            "max_dual_increase": stats.max_dual_increase,
            "Xtilde": Xt,
        })
        if deltas["kkt"] < params.tol_kkt:
            status = STATUS_CONVERGED
            break
        warm = state.detached()
    report = SolveReport(
        objective=float(np.sum((inst.cost * X).ravel())),
        deltas=deltas,
        outer_iters=outer,
        inner_sweeps=total_sweeps,
        wall_time_ms=(time.perf_counter() - t0) * 1e3,
        status=status,
        flags=flags,
        history=history,
    )
    return IeppaResult(X, Xt, state, report)

"""Dual block coordinate descent for the entropic proximal subproblem

    min  <C, X> + eps * D(X, S)   s.t.  A^(i)(X) = b^(i),  X <= U,

whose dual is minimized one block at a time over (y^(1), ..., y^(N), W) with
every block update available in closed form.  Three equivalent sweeps are
provided: the multiplicative one with a single cached working tensor, a
log-domain one with grouped log-sum-exp, and an axis-reduction fast path for
the CMOT marginal blocks.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import Instance, adjoint_block, apply_block, bullet_block
from .errors import DomainError, InfeasibleDataError, InnerCapExceeded, NotMarginalError, UnderflowError, ZeroRhsError

log = logging.getLogger(__name__)

DEFAULT_INNER_CAP = 50000
SCHEMES = ("auto", "multiplicative", "logdomain", "cmot")


class ProxSubproblem:
    """Data of one proximal subproblem with prox center ``S`` and weight ``eps``.

    The center is kept as ``log S`` so that iterates which have decayed below
    the float range stay representable; ``-inf`` marks entries fixed at zero.
    """

    def __init__(self, instance: Instance, S=None, epsilon: float = 0.05, *, log_S=None):
        if epsilon <= 0:
            raise DomainError("epsilon must be positive")
        self.instance = instance
        self.epsilon = float(epsilon)
        if log_S is None:
            S = np.asarray(S, dtype=np.float64)
            if S.shape != instance.dims:
                raise DomainError(f"prox center dims {S.shape} != {instance.dims}")
            mask = instance.zero_mask
            bad = ~(S > 0) if mask is None else (~(S > 0) & ~mask)
            if np.any(bad) or np.any(~np.isfinite(S)):
                raise DomainError("prox center must be strictly positive")
            with np.errstate(divide="ignore"):
                log_S = np.log(S)
        log_S = np.array(log_S, dtype=np.float64)
        if instance.zero_mask is not None:
            log_S[instance.zero_mask] = -np.inf
        self.log_S = log_S
        C = instance.cost
        self.log_Mtilde = log_S - C / self.epsilon  # = -M/eps
        self.M = -self.epsilon * self.log_Mtilde
        self.Mtilde = np.exp(self.log_Mtilde)
        for i, b in enumerate(instance.rhs):
            if np.any(~(b > 0)):
                raise ZeroRhsError(f"rhs {i} must be strictly positive")
        U = instance.upper
        self.has_upper = instance.has_finite_upper
        self.U = U if self.has_upper else None
        self.finite_U = None if U is None else np.isfinite(U)
        self.marginal = instance.is_marginal()
        self.ones = np.ones(instance.dims)

    @property
    def S(self) -> np.ndarray:
        return np.exp(self.log_S)


class DualState:
    """Dual variables ``(y, W)`` plus their exponential twins ``xi = exp(y/eps)``,
    ``Gamma = exp(W/eps)`` and the cached working tensor used by the
    multiplicative sweep (``Mtilde * prod_i bullet(xi_i)``, without Gamma).

    States produced by the multiplicative sweeps carry only the exponential
    form; ``y`` and ``W`` are then derived on first access.
    """

    def __init__(self, y=None, W=None, xi=None, Gamma=None, hatM=None, epsilon=None):
        if y is None and (xi is None or Gamma is None or epsilon is None):
            raise ValueError("either (y, W) or (xi, Gamma, epsilon) is required")
        self._y, self._W = y, W
        self.xi, self.Gamma, self.hatM = xi, Gamma, hatM
        self._eps = epsilon

    def _derive(self):
        with np.errstate(divide="ignore"):
            self._y = [self._eps * np.log(z) for z in self.xi]
            self._W = self._eps * np.log(self.Gamma)

    @property
    def y(self) -> list:
        if self._y is None:
            self._derive()
        return self._y

    @property
    def W(self) -> np.ndarray:
        if self._W is None:
            self._derive()
        return self._W

    def detached(self) -> "DualState":
        return DualState([v.copy() for v in self.y], self.W.copy())


def cold_state(sub: ProxSubproblem) -> DualState:
    inst = sub.instance
    return DualState([np.zeros(b.m) for b in inst.blocks], np.zeros(inst.dims))


def _adjoint_sum(sub, y, skip=None):
    if sub.marginal and skip is None:  # broadcast sum of the marginal multipliers
        A = y[0][:, None, None] + y[1][None, :, None]
        return A + y[2][None, None, :] if len(y) == 3 else A
    A = np.zeros(sub.instance.dims)
    for q, (blk, yq) in enumerate(zip(sub.instance.blocks, y)):
        if q != skip:
            A += adjoint_block(blk, yq)
    return A


def _inner_WU(sub, W) -> float:
    if not sub.has_upper:
        return 0.0
    fin = sub.finite_U
    return float(np.sum((W[fin] * sub.U[fin]).ravel()))


def dual_objective(sub: ProxSubproblem, st: DualState) -> float:
    """``eps <Mtilde, exp((W + sum A* y)/eps)> - sum <y, b> - <W, U>``."""
    if np.any(st.W > 0):
        raise DomainError("W has a positive entry (outside dom R)")
    expo = sub.log_Mtilde + (_adjoint_sum(sub, st.y) + st.W) / sub.epsilon
    val = sub.epsilon * float(np.sum(np.exp(expo).ravel()))
    for yq, b in zip(st.y, sub.instance.rhs):
        val -= float(np.dot(yq, b))
    return val - _inner_WU(sub, st.W)


def log_primal(sub: ProxSubproblem, st: DualState) -> np.ndarray:
    """``(sum A* y + W - M)/eps``, the log of the recovered primal."""
    return sub.log_Mtilde + (_adjoint_sum(sub, st.y) + st.W) / sub.epsilon


def recover_primal(sub: ProxSubproblem, st: DualState) -> np.ndarray:
    if st.hatM is not None:
        # the sweeps only emit finite hatM, and Gamma <= 1
        return st.hatM * st.Gamma if sub.has_upper else st.hatM.copy()
    X = np.exp(log_primal(sub, st))
    if not np.isfinite(X).all():
        raise UnderflowError("recovered primal has a nonfinite entry")
    return X


def _with_cache(sub: ProxSubproblem, st: DualState) -> DualState:
    if st.hatM is not None:
        return st
    eps = sub.epsilon
    xi = [np.exp(v / eps) for v in st.y]
    Gamma = np.exp(st.W / eps)
    H = sub.Mtilde.copy()
    for blk, z in zip(sub.instance.blocks, xi):
        H *= bullet_block(blk, z)
    if not np.all(np.isfinite(H)):
        raise UnderflowError("working tensor is not finite")
    return DualState(st.y, st.W, xi, Gamma, H, eps)


def _capacity_factor(sub, H):
    """``Gamma = min(U / H, 1)``, the closed-form W update in exponential form."""
    if not sub.has_upper:
        return sub.ones
    with np.errstate(divide="ignore", over="ignore"):
        return np.minimum(sub.instance.upper / H, 1.0)


def sweep_multiplicative(sub: ProxSubproblem, st: DualState) -> DualState:
    """One cyclic pass in exponential variables with one working tensor.

    The tensor is divided by the outgoing factor of a block and multiplied by
    the incoming one, so each update touches every entry once.
    """
    st = _with_cache(sub, st)
    blocks, rhs = sub.instance.blocks, sub.instance.rhs
    N = len(blocks)
    H = st.hatM.copy()
    xi_new = [None] * N
    for i in range(N):
        H /= bullet_block(blocks[i], st.xi[i])
        if i == 0:
            if sub.has_upper:
                H *= st.Gamma
        else:
            H *= bullet_block(blocks[i - 1], xi_new[i - 1])
        sums = apply_block(blocks[i], H)
        if np.any(sums == 0):
            raise UnderflowError(f"block {i}: a row sum underflowed to zero")
        xi_new[i] = rhs[i] / sums
        if not np.isfinite(xi_new[i]).all():
            raise UnderflowError(f"block {i}: scaling lost range")
    if sub.has_upper:
        H /= st.Gamma
    H *= bullet_block(blocks[N - 1], xi_new[N - 1])
    if not np.isfinite(H).all():
        raise UnderflowError("working tensor became nonfinite")
    Gamma = _capacity_factor(sub, H)
    return DualState(None, None, xi_new, Gamma, H, sub.epsilon)


def _row_logsumexp(block, V):
    cov = block.covered
    lab = block.labels[cov]
    v = V.ravel()[cov]
    mx = np.full(block.m, -np.inf)
    np.maximum.at(mx, lab, v)
    if np.any(~np.isfinite(mx)):
        raise InfeasibleDataError("a constraint row has no free entry")
    s = np.bincount(lab, weights=np.exp(v - mx[lab]), minlength=block.m)
    return mx + np.log(s)


def sweep_logdomain(sub: ProxSubproblem, st: DualState) -> DualState:
    """One cyclic pass on ``(y, W)`` directly, stable for small eps."""
    eps = sub.epsilon
    inst = sub.instance
    for i, b in enumerate(inst.rhs):
        if np.any(~(b > 0)):
            raise ZeroRhsError(f"rhs {i} must be strictly positive")
    y = [v.copy() for v in st.y]
    W = st.W
    log_b = [np.log(b) for b in inst.rhs]
    for i, blk in enumerate(inst.blocks):
        V = sub.log_Mtilde + (_adjoint_sum(sub, y, skip=i) + W) / eps
        y[i] = eps * log_b[i] - eps * _row_logsumexp(blk, V)
    if sub.has_upper:
        A = _adjoint_sum(sub, y)
        W = np.zeros(inst.dims)
        fin = sub.finite_U
        with np.errstate(invalid="ignore"):
            cand = eps * np.log(inst.upper[fin]) + sub.M[fin] - A[fin]
        W[fin] = np.minimum(np.nan_to_num(cand, nan=0.0, posinf=0.0), 0.0)
    else:
        W = np.zeros(inst.dims)
    return DualState(y, W)


def cmot3_sweep(sub: ProxSubproblem, st: DualState) -> DualState:
    """Multiplicative sweep for the CMOT marginal blocks via axis reductions."""
    if not sub.marginal:
        raise NotMarginalError("cmot3_sweep requires the CMOT marginal blocks")
    st = _with_cache(sub, st)
    rhs = sub.instance.rhs
    K = sub.Mtilde * st.Gamma if sub.has_upper else sub.Mtilde
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):  # checked below
        three = len(rhs) == 3
        if three:
            f, g, h = st.xi
            f = rhs[0] / np.einsum("rst,s,t->r", K, g, h)
            g = rhs[1] / np.einsum("rst,r,t->s", K, f, h)
            h = rhs[2] / np.einsum("rst,r,s->t", K, f, g)
            xi = [f, g, h]
            scale = np.multiply.outer(np.multiply.outer(f, g), h)
        else:
            f, g = st.xi
            K2 = K[:, :, 0]
            f = rhs[0] / (K2 @ g)
            g = rhs[1] / (f @ K2)
            xi = [f, g]
            scale = np.multiply.outer(f, g)[:, :, None]
    for z in xi:
        if not np.isfinite(z).all() or not z.all():
            raise UnderflowError("marginal scaling lost range")
    with np.errstate(over="ignore"):
        H = sub.Mtilde * scale
    if not np.isfinite(H).all():
        raise UnderflowError("working tensor became nonfinite")
    Gamma = _capacity_factor(sub, H)
    return DualState(None, None, xi, Gamma, H, sub.epsilon)


@dataclass
class SubproblemStats:
    sweeps: int = 0
    scheme: str = ""
    switched_to_logdomain: bool = False
    gate_checks: int = 0
    max_dual_increase: float = 0.0  # relative, only when dual tracking is on
    dual_trace: list = field(default_factory=list)
    wall_time: float = 0.0


def solve_subproblem(sub: ProxSubproblem, gate, warm: DualState | None = None,
                     scheme: str = "auto", cap: int = DEFAULT_INNER_CAP,
                     track_dual: bool = False):
    """Sweep until ``gate.check(sub, X)`` accepts the recovered primal.

    ``gate.check(sub, X, state=...)`` returns ``(accepted, Xtilde)``.  ``scheme='auto'`` uses the
    axis-reduction sweep on CMOT marginal blocks, the cached multiplicative
    sweep otherwise, and falls back to the log-domain sweep on underflow.
    Returns ``(X, Xtilde, state, stats)``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    t0 = time.perf_counter()
    st = cold_state(sub) if warm is None else warm
    stats = SubproblemStats()
    if scheme == "auto":
        current = "cmot" if sub.marginal else "multiplicative"
    else:
        current = scheme
    sweeps = {"multiplicative": sweep_multiplicative, "logdomain": sweep_logdomain, "cmot": cmot3_sweep}
    R_prev = dual_objective(sub, st) if track_dual else None
    for ell in range(1, cap + 1):
        try:
            new = sweeps[current](sub, st)
            X = recover_primal(sub, new)
        except UnderflowError as exc:
            if scheme != "auto" or current == "logdomain":
                raise
            log.info("switching to log-domain sweep: %s", exc)
            current = "logdomain"
            stats.switched_to_logdomain = True
            st = st.detached()
            new = sweep_logdomain(sub, st)
            X = recover_primal(sub, new)
        st = new
        stats.sweeps = ell
        if track_dual:
            R = dual_objective(sub, st)
            rise = (R - R_prev) / (1.0 + abs(R_prev))
            stats.max_dual_increase = max(stats.max_dual_increase, rise)
            stats.dual_trace.append(R)
            R_prev = R
        accepted, Xt = gate.check(sub, X, state=st)
        stats.gate_checks += 1
        if accepted:
            stats.scheme = current
            stats.wall_time = time.perf_counter() - t0
            return X, Xt, st, stats
    stats.scheme = current
    stats.wall_time = time.perf_counter() - t0
    err = InnerCapExceeded(f"inner cap of {cap} sweeps exceeded")
    err.stats = stats
    err.state = st
    raise err

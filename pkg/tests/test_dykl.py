import numpy as np
import pytest

from ieppa.constraints import Instance, cmot_marginal_blocks
from ieppa.dykl import dykl_sweep, dykl_sweep_stabilized, initial_state, solve_dykl
from ieppa.eppa import STATUS_CONVERGED, STATUS_MAX_OUTER
from ieppa.errors import NotMarginalError, UnderflowError
from ieppa.gen import GenSpec, gen_cmot

from conftest import random_marginal_instance


def data(inst):
    a, b = inst.rhs
    return inst.cost[:, :, 0], a, b, inst.upper[:, :, 0]


def logs(eps, a, b, U):
    return eps * np.log(a), eps * np.log(b), eps * np.log(U)


def test_initialization():
    C = np.array([[0.0, 1.0], [2.0, 0.5]])
    st = initial_state(C, 0.1)
    assert np.array_equal(st.X, np.exp(-C / 0.1))
    assert all(np.array_equal(q, np.ones((2, 2))) for q in st.Q)
    st = initial_state(C, 0.1, log_domain=True)
    assert np.array_equal(st.X, -C) and all(not q.any() for q in st.Q)


def test_feasible_point_is_fixed():
    a = np.array([0.5, 0.5])
    st = initial_state(np.zeros((2, 2)), 1.0)
    st.X = np.full((2, 2), 0.25)
    new = dykl_sweep(st, a, a, np.ones((2, 2)))
    assert np.array_equal(new.X, st.X)
    assert all(np.array_equal(q, np.ones((2, 2))) for q in new.Q)


def test_stabilized_zero_cost_fixed_after_one_sweep():
    n, eps = 4, 0.1
    a = np.full(n, 1 / n)
    st = initial_state(np.zeros((n, n)), eps, log_domain=True)
    args = logs(eps, a, a, np.full((n, n), 10.0))
    one = dykl_sweep_stabilized(st, *args)
    two = dykl_sweep_stabilized(one, *args)
    assert np.ptp(one.X) == 0
    assert np.allclose(two.X, one.X, rtol=0, atol=1e-15)


def test_projections_are_exact(rng):
    inst = random_marginal_instance(rng, (10, 10, 1))
    C, a, b, U = data(inst)
    st = initial_state(C, 0.1)
    for _ in range(30):
        st = dykl_sweep(st, a, b, U)
        P1, P2, P3 = st.last_pis
        assert np.allclose(P1.sum(axis=1), a, rtol=1e-12, atol=0)
        assert np.allclose(P2.sum(axis=0), b, rtol=1e-12, atol=0)
        assert np.all(P3 <= U)


def test_correction_identity(rng):
    inst = random_marginal_instance(rng, (6, 5, 1))
    C, a, b, U = data(inst)
    st = initial_state(C, 0.1)
    for _ in range(20):
        new = dykl_sweep(st, a, b, U)
        prev = (st.X,) + new.last_pis[:2]
        for i in range(3):
            lhs = new.Q[i] * new.last_pis[i]
            rhs = st.Q[i] * prev[i]
            assert np.allclose(lhs, rhs, rtol=1e-12, atol=0)
        st = new


def test_plain_and_stabilized_agree(rng):
    inst = random_marginal_instance(rng, (10, 10, 1))
    C, a, b, U = data(inst)
    eps = 0.1
    p, s = initial_state(C, eps), initial_state(C, eps, True)
    args = logs(eps, a, b, U)
    for _ in range(100):
        p = dykl_sweep(p, a, b, U)
        s = dykl_sweep_stabilized(s, *args)
        assert np.max(np.abs(p.primal() - s.primal())) <= 1e-6


def test_small_epsilon_needs_stabilized(rng):
    C = 5.0 + rng.random((5, 5))
    a = np.full(5, 0.2)
    U = np.full((5, 5), 1.0)
    with pytest.raises(UnderflowError):
        dykl_sweep(initial_state(C, 1e-4), a, a, U)
    st = initial_state(C, 1e-4, True)
    for _ in range(10):
        st = dykl_sweep_stabilized(st, *logs(1e-4, a, a, U))
    assert np.isfinite(st.X).all() and all(np.isfinite(q).all() for q in st.Q)


def test_solve_converges_quickly_at_large_epsilon():
    inst, _ = gen_cmot(GenSpec(2, (10,), seed=0))
    X, rep = solve_dykl(inst, 0.1)
    assert rep.status == STATUS_CONVERGED and rep.deltas["d1"] < 1e-5
    assert rep.outer_iters <= 100
    assert rep.deltas["kkt"] is None and rep.deltas["d2"] is None
    assert np.all(X <= inst.upper)


def test_solve_small_epsilon_uses_log_domain():
    inst, _ = gen_cmot(GenSpec(2, (6,), seed=1))
    X, rep = solve_dykl(inst, 1e-3)
    assert np.isfinite(X).all() and rep.status == STATUS_CONVERGED
    with pytest.raises(UnderflowError):
        solve_dykl(inst, 1e-3, stabilized=False)


def test_solve_auto_switches_on_underflow(rng):
    # exp(-C/eps) <= exp(-800) underflows to zero in the plain form
    inst = random_marginal_instance(rng, (4, 4, 1), cost=40.0 * (1 + rng.random((4, 4, 1))))
    X, rep = solve_dykl(inst, 0.05)
    assert "switched-to-logdomain" in rep.flags
    assert np.isfinite(X).all()


def test_max_iter_status():
    inst, _ = gen_cmot(GenSpec(2, (10,), seed=0))
    _, rep = solve_dykl(inst, 0.01, max_iter=3)
    assert rep.status == STATUS_MAX_OUTER and rep.outer_iters == 3


def test_rejects_three_marginals(rng):
    inst = random_marginal_instance(rng, (3, 3, 3))
    with pytest.raises(NotMarginalError):
        solve_dykl(inst, 0.1)
    with pytest.raises(ValueError):
        solve_dykl(random_marginal_instance(rng, (3, 3, 1)), 0.0)


def test_no_upper_bound():
    a = np.array([0.3, 0.7])
    inst = Instance(np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None], cmot_marginal_blocks((2, 2, 1)), [a, a])
    X, rep = solve_dykl(inst, 0.1)
    assert rep.status == STATUS_CONVERGED

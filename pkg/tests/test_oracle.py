import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from ieppa.constraints import Instance, apply_block, cmot_marginal_blocks, tomo_block
from ieppa.errors import SizeGuardError
from ieppa.gen import GenSpec, gen_cmot
from ieppa.oracle import (INFEASIBLE, MAX_VARS_ENV, OPTIMAL, UNBOUNDED, StandardLp, flatten, max_vars,
                          solve_instance, solve_lp_exact)
from ieppa.tomo import GrayImage, project_image

from conftest import random_marginal_instance

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None]


def two_by_two(upper=None, b=(0.5, 0.5)):
    a = np.array([0.5, 0.5])
    return Instance(SWAP, cmot_marginal_blocks((2, 2, 1)), [a, np.array(b)], upper)


def vertex_enumeration(lp):
    """Best objective over all basic feasible solutions, by brute force."""
    A, b, c, u = lp.A, lp.b, lp.c, lp.u
    # keep a maximal set of independent rows
    rows = []
    for i in range(A.shape[0]):
        if np.linalg.matrix_rank(A[rows + [i]]) > len(rows):
            rows.append(i)
    A, b = A[rows], b[rows]
    m, n = A.shape
    best = None
    for basis in itertools.combinations(range(n), m):
        B = A[:, basis]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        rest = [j for j in range(n) if j not in basis]
        choices = [(0.0,) if not np.isfinite(u[j]) else (0.0, u[j]) for j in rest]
        for vals in itertools.product(*choices):
            x = np.zeros(n)
            x[rest] = vals
            x[list(basis)] = np.linalg.solve(B, b - A[:, rest] @ np.array(vals))
            if np.all(x >= -1e-12) and np.all(x <= u + 1e-12):
                f = float(c @ x)
                best = f if best is None else min(best, f)
    return best


def highs(lp):
    bounds = [(0, None if not np.isfinite(v) else v) for v in lp.u]
    return linprog(lp.c, A_eq=lp.A, b_eq=lp.b, bounds=bounds, method="highs")


# ------------------------------------------------------------------ flatten

def test_flatten_two_by_two():
    lp = flatten(two_by_two())
    expect = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=float)
    assert np.array_equal(lp.A, expect)
    assert np.array_equal(lp.c, [0, 1, 1, 0]) and np.all(np.isinf(lp.u))


def test_flatten_tomography():
    img = np.arange(9, dtype=float).reshape(3, 3, 1) + 1
    blocks = [tomo_block(3, (1, 0)), tomo_block(3, (0, 1))]
    inst = Instance(np.zeros((3, 3, 1)), blocks, [apply_block(b, img) for b in blocks])
    lp = flatten(inst)
    assert lp.shape == (6, 9)
    assert np.array_equal(lp.A.sum(axis=0), np.full(9, 2.0))


def test_flatten_pins_masked_entries():
    img = np.array([[1.0, 0.0], [0.5, 0.0]])  # blank second column
    lp = flatten(project_image(GrayImage(img), [(1, 0), (0, 1)]))
    assert np.array_equal(lp.u, [np.inf, 0.0, np.inf, 0.0])


def test_size_guard(monkeypatch, rng):
    inst = random_marginal_instance(rng, (5, 5, 1))
    monkeypatch.setenv(MAX_VARS_ENV, "20")
    assert max_vars() == 20
    with pytest.raises(SizeGuardError):
        flatten(inst)
    monkeypatch.setenv(MAX_VARS_ENV, "99999999")
    assert max_vars() == 10000
    monkeypatch.setenv(MAX_VARS_ENV, "lots")
    with pytest.raises(SizeGuardError):
        max_vars()
    monkeypatch.delenv(MAX_VARS_ENV)
    big = Instance(np.zeros((101, 100, 1)), cmot_marginal_blocks((101, 100, 1)),
                   [np.full(101, 1 / 101), np.full(100, 0.01)])
    with pytest.raises(SizeGuardError):
        flatten(big)


# ------------------------------------------------------------------ examples

def test_zero_cost_matching():
    res = solve_instance(two_by_two())
    assert res.status == OPTIMAL and res.objective == 0.0
    assert np.allclose(res.x[:, :, 0], np.diag([0.5, 0.5]), atol=1e-15)


def test_capacity_example():
    res = solve_instance(two_by_two(np.full((2, 2, 1), 0.3)))
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(0.4, abs=1e-12)
    assert np.allclose(res.x[:, :, 0], [[0.3, 0.2], [0.2, 0.3]], atol=1e-12)
    assert vertex_enumeration(flatten(two_by_two(np.full((2, 2, 1), 0.3)))) == pytest.approx(0.4)


def test_inconsistent_marginals():
    assert solve_instance(two_by_two(b=(0.5, 0.6))).status == INFEASIBLE


def test_capacity_too_tight():
    assert solve_instance(two_by_two(np.full((2, 2, 1), 0.2))).status == INFEASIBLE


def test_unbounded():
    lp = StandardLp(np.array([[1.0, -1.0]]), np.array([0.0]), np.array([-1.0, 0.0]), np.full(2, np.inf))
    assert solve_lp_exact(lp).status == UNBOUNDED


# ------------------------------------------------------------------ cross-validation

@pytest.mark.parametrize("seed", range(8))
def test_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    dims = [(3, 3, 1), (2, 4, 1), (2, 2, 2)][seed % 3]
    inst = random_marginal_instance(rng, dims, capacity=[None, 1.5, 2.0][seed % 3])
    lp = flatten(inst)
    res = solve_lp_exact(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(vertex_enumeration(lp), abs=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_matches_highs(seed):
    inst, _ = gen_cmot(GenSpec(2 + seed % 2, (6 if seed % 2 == 0 else 4,), seed=seed))
    lp = flatten(inst)
    res = solve_lp_exact(lp)
    ref = highs(lp)
    assert res.status == OPTIMAL and ref.status == 0
    assert abs(res.objective - ref.fun) <= 1e-10 * (1 + abs(ref.fun))


@pytest.mark.parametrize("seed", range(4))
def test_solution_is_feasible_vertex(seed):
    inst, _ = gen_cmot(GenSpec(2, (7,), seed=seed))
    lp = flatten(inst)
    res = solve_lp_exact(lp)
    x = res.x
    assert np.max(np.abs(lp.A @ x - lp.b)) <= 1e-10
    assert np.all(x >= 0) and np.all(x <= lp.u)
    basic = res.basis[res.basis < x.size]
    free = np.setdiff1d(np.arange(x.size), basic)
    at_bound = np.isclose(x[free], 0, atol=1e-12) | np.isclose(x[free], lp.u[free], atol=1e-12)
    assert at_bound.all()


@pytest.mark.parametrize("seed", range(4))
def test_column_permutation_invariance(seed):
    inst, _ = gen_cmot(GenSpec(2, (6,), seed=seed))
    lp = flatten(inst)
    perm = np.random.default_rng(seed).permutation(lp.c.size)
    res = solve_lp_exact(lp)
    alt = solve_lp_exact(StandardLp(lp.A[:, perm], lp.b, lp.c[perm], lp.u[perm]))
    assert abs(res.objective - alt.objective) <= 1e-10

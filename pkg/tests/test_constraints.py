import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ieppa.constraints import (UNCOVERED, Instance, PartitionBlock, adjoint_block, apply_block,
                               block_from_indicators, bullet_block, cmot_marginal_blocks,
                               line_invariants, tomo_block)
from ieppa.errors import (DimensionError, EmptyRowError, InstanceFormatError, InvalidDirectionError,
                          NonBinaryError, OverlapError, ZeroRhsError)
from ieppa.tensor import inner_product, outer

admissible = st.one_of(
    st.tuples(st.just(1), st.integers(-4, 4)),
    st.tuples(st.integers(0, 4), st.sampled_from([1, -1])),
)


def random_block(rng, dims, m, cover=0.8):
    n = int(np.prod(dims))
    labels = rng.integers(0, m, size=n)
    labels[rng.random(n) > cover] = UNCOVERED
    labels[:m] = np.arange(m)  # no empty rows
    return PartitionBlock(m, labels, dims)


def test_block_from_indicators_first_marginal():
    e = np.eye(2)
    ind = [np.einsum("r,s,t->rst", e[j], np.ones(2), np.ones(2)) for j in range(2)]
    blk = block_from_indicators(ind)
    r, _, _ = np.indices((2, 2, 2))
    assert blk.m == 2 and np.array_equal(blk.labels, r.ravel())
    assert blk.same_as(cmot_marginal_blocks((2, 2, 2))[0])


def test_block_from_indicators_errors():
    a = np.zeros((2, 2, 2))
    a[0, 0, 0] = 1
    b = a.copy()
    b[1, 1, 1] = 1
    with pytest.raises(OverlapError):
        block_from_indicators([a, b])
    with pytest.raises(NonBinaryError):
        block_from_indicators([2 * a])
    with pytest.raises(EmptyRowError):
        block_from_indicators([a, np.zeros_like(a)])


def test_indicator_round_trip(rng):
    blk = random_block(rng, (3, 4, 2), 5)
    assert block_from_indicators(blk.indicators()).same_as(blk)


def test_apply_examples():
    b1, b2, b3 = cmot_marginal_blocks((2, 3, 4))
    assert (b1.m, b2.m, b3.m) == (2, 3, 4)
    X = np.full((2, 3, 4), 1 / 24)
    assert np.allclose(apply_block(b1, X), [0.5, 0.5], rtol=0, atol=1e-15)
    assert np.array_equal(apply_block(b1, np.zeros((2, 3, 4))), np.zeros(2))
    assert np.array_equal(apply_block(tomo_block(3, (1, 0)), np.ones((3, 3, 1))), [3.0, 3.0, 3.0])
    with pytest.raises(DimensionError):
        apply_block(b1, np.ones((2, 3, 3)))


def test_marginalization_of_product(rng):
    a, b, c = (v / v.sum() for v in (rng.random(2), rng.random(3), rng.random(4)))
    blocks = cmot_marginal_blocks((2, 3, 4))
    T = outer(a, b, c)
    for blk, v in zip(blocks, (a, b, c)):
        assert np.allclose(apply_block(blk, T), v, rtol=1e-14)


def test_two_marginal_reduction():
    assert len(cmot_marginal_blocks((4, 4, 1))) == 2


def test_adjoint_examples(rng):
    b1 = cmot_marginal_blocks((2, 2, 1))[0]
    assert np.array_equal(adjoint_block(b1, [1.0, 2.0])[:, :, 0], [[1, 1], [2, 2]])
    assert np.array_equal(adjoint_block(b1, np.zeros(2)), np.zeros((2, 2, 1)))
    blk = random_block(rng, (3, 3, 2), 4)
    y = rng.random(4)
    assert np.allclose(apply_block(blk, adjoint_block(blk, y)), y * blk.row_counts(), rtol=1e-14)
    with pytest.raises(DimensionError):
        adjoint_block(blk, np.ones(3))


def test_bullet_examples(rng):
    full = cmot_marginal_blocks((3, 2, 2))[1]
    z = rng.random(2) + 0.5
    assert np.array_equal(bullet_block(full, z), adjoint_block(full, z))
    part = random_block(rng, (3, 3, 1), 3, cover=0.5)
    assert np.array_equal(bullet_block(part, np.ones(3)), np.ones((3, 3, 1)))
    out = bullet_block(part, z := np.array([2.0, 3.0, 4.0]))
    assert np.all(out.ravel()[~part.covered] == 1.0)


def test_tomo_block_examples():
    assert tomo_block(3, (1, 0)).m == 3
    assert tomo_block(3, (1, 1)).m == 5
    blk = tomo_block(5, (2, 1))
    assert blk.m == 13 and blk.full_cover
    inv = line_invariants(5, (2, 1))
    assert inv.min() == -9 and inv.max() == 3 and len(np.unique(inv)) == 13


def test_tomo_row_order_follows_invariant():
    blk = tomo_block(4, (1, -1))
    inv = line_invariants(4, (1, -1))
    for j in range(blk.m - 1):
        assert inv[blk.labels == j].max() < inv[blk.labels == j + 1].min()


@pytest.mark.parametrize("bad", [(2, 2), (0, 0), (2, 3), (-1, 1), (0, 2), "x"])
def test_invalid_directions(bad):
    with pytest.raises(InvalidDirectionError):
        tomo_block(4, bad)


@given(st.integers(1, 7), admissible)
def test_tomo_blocks_cover_everything(n, d):
    blk = tomo_block(n, d)
    assert blk.full_cover
    img = np.random.default_rng(n).random((n, n, 1))
    sums = apply_block(blk, img)
    assert np.all(sums >= 0)
    assert abs(sums.sum() - img.sum()) <= 1e-12 * img.sum()


@given(st.integers(0, 10**6))
def test_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(1, 4, size=3))
    n = int(np.prod(dims))
    m = int(rng.integers(1, n + 1))
    blk = random_block(rng, dims, m)
    y, X = rng.standard_normal(m), rng.standard_normal(dims)
    lhs, rhs = inner_product(adjoint_block(blk, y), X), float(np.dot(y, apply_block(blk, X)))
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs) + np.abs(y).sum() * np.abs(X).sum())


@given(st.integers(0, 10**6))
def test_marginal_conservation(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(1, 5, size=3))
    X = rng.random(dims)
    for blk in cmot_marginal_blocks(dims):
        assert abs(apply_block(blk, X).sum() - X.sum()) <= 1e-12 * X.sum()


def test_instance_validation(rng):
    blocks = cmot_marginal_blocks((2, 2, 1))
    C = np.zeros((2, 2, 1))
    with pytest.raises(ZeroRhsError):
        Instance(C, blocks, [[0.5, 0.0], [0.5, 0.0]])
    with pytest.raises(DimensionError):
        Instance(C, blocks, [[1.0], [1.0, 1.0]])
    with pytest.raises(InstanceFormatError):
        Instance(C, blocks, [[1.0, 1.0], [1.0, 1.0]], upper=np.zeros((2, 2, 1)))
    with pytest.raises(InstanceFormatError):
        Instance(C, blocks, [[1.0, 1.0]])
    inst = Instance(C, blocks, [[1.0, 1.0], [1.0, 1.0]])
    assert inst.is_marginal() and inst.N == 2


def test_instance_json_round_trip(tmp_path, rng):
    blocks = [tomo_block(3, (1, 0)), tomo_block(3, (1, 1))]
    X = rng.random((3, 3, 1))
    U = np.full((3, 3, 1), np.inf)
    U[0, 0, 0] = 2.0
    inst = Instance(rng.random((3, 3, 1)), blocks, [apply_block(b, X) for b in blocks], U)
    path = tmp_path / "inst.json"
    inst.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"dims", "cost", "blocks", "rhs", "upper"}
    assert doc["upper"][1] == "inf"
    back = Instance.load(path)
    assert np.array_equal(back.cost, inst.cost)
    assert np.array_equal(back.upper, inst.upper)
    assert all(a.same_as(b) for a, b in zip(back.blocks, inst.blocks))
    assert all(np.array_equal(a, b) for a, b in zip(back.rhs, inst.rhs))


def test_instance_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("[1, 2]")
    with pytest.raises(InstanceFormatError):
        Instance.load(p)
    p.write_text("{not json")
    with pytest.raises(InstanceFormatError):
        Instance.load(p)
    p.write_text(json.dumps({"dims": [2, 2, 1], "cost": [0, 0, 0, 0]}))
    with pytest.raises(InstanceFormatError):
        Instance.load(p)

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melonic.errors import InputError
from melonic.symtensor import (
    SymmetricTensor,
    TensorShape,
    _propagator_bruteforce,
    apply_map,
    map_jacobian,
    multiplicities,
    multiplicity,
    multisets,
    propagator,
    rank_multi_index,
    read_tensor,
    sample_components,
    sample_gaussian,
    unrank_multi_index,
    write_tensor,
)


def dense_apply(dense, x):
    """Naive O(N^(q+1)) reference contraction."""
    out = dense
    for _ in range(dense.ndim - 1):
        out = out @ x
    return out


def random_tensor(n, q, seed):
    return sample_gaussian(TensorShape(n, q), seed)


# --- ranking --------------------------------------------------------------


def test_rank_examples():
    s = TensorShape(2, 2)
    assert rank_multi_index((1, 1, 1), s) == 0
    assert rank_multi_index((2, 2, 2), s) == 3


def test_rank_bijective_q3_n3():
    s = TensorShape(3, 3)
    tuples = list(itertools.combinations_with_replacement(range(1, 4), 4))
    assert len(tuples) == 15
    assert sorted(rank_multi_index(t, s) for t in tuples) == list(range(15))


@pytest.mark.parametrize("n", range(1, 7))
@pytest.mark.parametrize("q", range(1, 5))
def test_round_trip_exhaustive(n, q):
    s = TensorShape(n, q)
    tuples = list(itertools.combinations_with_replacement(range(1, n + 1), q + 1))
    assert len(tuples) == s.n_components
    # colex order: compare reversed tuples lexicographically
    colex = sorted(tuples, key=lambda t: t[::-1])
    for r, t in enumerate(colex):
        assert rank_multi_index(t, s) == r
        assert unrank_multi_index(r, s) == t
    rows = multisets(n, q + 1)
    assert [tuple(v + 1 for v in row) for row in rows] == colex


def test_rank_errors():
    s = TensorShape(3, 2)
    with pytest.raises(InputError):
        rank_multi_index((1, 2, 4), s)
    with pytest.raises(InputError):
        rank_multi_index((0, 1, 2), s)
    with pytest.raises(InputError):
        rank_multi_index((2, 1, 1), s)
    with pytest.raises(InputError):
        rank_multi_index((1, 1), s)
    with pytest.raises(InputError):
        unrank_multi_index(s.n_components, s)


def test_shape_validation():
    with pytest.raises(InputError):
        TensorShape(0, 2)
    with pytest.raises(InputError):
        TensorShape(3, 0)
    with pytest.raises(InputError):
        TensorShape(3, 8)


# --- multiplicity and propagator ------------------------------------------


@pytest.mark.parametrize(
    "mi, expected", [((1, 2, 3, 4), 24), ((1, 1, 1, 1), 1), ((1, 1, 2, 3), 12), ((2, 2, 3, 3), 6)]
)
def test_multiplicity(mi, expected):
    assert multiplicity(mi) == expected
    assert multiplicity(mi) == len(set(itertools.permutations(mi)))


def test_multiplicities_vectorized():
    rows = multisets(4, 4)
    assert list(multiplicities(rows)) == [multiplicity(tuple(r)) for r in rows]


def test_propagator_examples():
    assert propagator((1, 2, 3, 4), (1, 2, 3, 4)) == Fraction(1, 24)
    assert propagator((1, 1, 1, 1), (1, 1, 1, 1)) == 1
    assert propagator((1, 1, 2), (1, 2, 2)) == 0
    assert propagator((2, 1, 1), (1, 2, 1)) == Fraction(1, 3)
    with pytest.raises(InputError):
        propagator((1, 2), (1, 2, 3))


@given(st.lists(st.integers(1, 3), min_size=2, max_size=5).flatmap(
    lambda a: st.tuples(st.just(tuple(a)), st.permutations(a).map(tuple))
))
def test_propagator_matches_bruteforce(pair):
    a, b = pair
    assert propagator(a, b) == _propagator_bruteforce(a, b)
    assert propagator(a, b) == Fraction(1, multiplicity(a))


# --- sampling -------------------------------------------------------------


def test_sampling_deterministic_and_seed_sensitive():
    s = TensorShape(5, 3)
    a = sample_components(s, 7)
    assert np.array_equal(a, sample_components(s, 7))
    assert not np.array_equal(a, sample_components(s, 8))


def test_sampling_blocks_are_independent_of_total_size(monkeypatch):
    import melonic.symtensor as mod

    s = TensorShape(6, 3)
    full = sample_components(s, 11)
    monkeypatch.setattr(mod, "SAMPLE_BLOCK", 16)
    small_blocks = sample_components(s, 11)
    # a different block size gives a different but equally distributed draw
    assert small_blocks.shape == full.shape
    assert not np.array_equal(small_blocks, full)


def test_sampling_variances():
    s = TensorShape(3, 3)
    draws = np.array([sample_components(s, seed) for seed in range(20000)])
    rows = multisets(3, 4)
    var = draws.var(axis=0)
    expected = 1.0 / multiplicities(rows)
    # (1,1,1,1) has variance 1; chi-square relative stderr sqrt(2/n) ~ 1%
    assert var[0] == pytest.approx(1.0, rel=0.05)
    assert np.allclose(var, expected, rtol=0.06)
    # all-distinct component (1,2,3,?) exists only for N>=4; checked in acceptance


def test_symmetric_value_lookup():
    C = random_tensor(4, 3, 3)
    ref = C.value((1, 2, 3, 4))
    for perm in itertools.permutations((1, 2, 3, 4)):
        assert C.value(perm) == ref


# --- contraction ------------------------------------------------------------


def test_apply_scalar_case():
    C = SymmetricTensor(TensorShape(1, 3), [2.5])
    assert apply_map(C, [2.0]) == pytest.approx([2.5 * 8.0])
    assert map_jacobian(C, [2.0]) == pytest.approx(np.array([[3 * 2.5 * 4.0]]))


def test_apply_single_component():
    s = TensorShape(2, 2)
    comps = np.zeros(s.n_components)
    comps[rank_multi_index((1, 1, 2), s)] = 1.7
    C = SymmetricTensor(s, comps)
    x1, x2 = 0.3, -1.1
    y = apply_map(C, [x1, x2])
    assert y == pytest.approx([2 * 1.7 * x1 * x2, 1.7 * x1**2], rel=1e-14)


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_rank_one_fixed_point(q):
    rng = np.random.default_rng(q)
    v = rng.standard_normal(5)
    v /= np.linalg.norm(v)
    C = SymmetricTensor.rank_one(v, q)
    assert apply_map(C, v) == pytest.approx(v, abs=1e-14)


def test_rank_one_jacobian():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(4)
    v /= np.linalg.norm(v)
    C = SymmetricTensor.rank_one(v, 3)
    assert np.allclose(map_jacobian(C, v), 3 * np.outer(v, v), atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 4, 6])
@pytest.mark.parametrize("q", [1, 2, 3])
def test_apply_matches_dense(n, q):
    C = random_tensor(n, q, 100 * n + q)
    x = np.random.default_rng(n + q).standard_normal(n)
    ref = dense_apply(C.to_dense(), x)
    got = apply_map(C, x)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_apply_batched_columns():
    C = random_tensor(5, 3, 1)
    X = np.random.default_rng(2).standard_normal((5, 4))
    Y = apply_map(C, X)
    for r in range(4):
        assert np.allclose(Y[:, r], apply_map(C, X[:, r]), rtol=1e-13)


def test_dense_round_trip_and_symmetry_check():
    C = random_tensor(3, 2, 5)
    dense = C.to_dense()
    assert np.array_equal(SymmetricTensor.from_dense(dense).components, C.components)
    dense[0, 1, 2] += 1.0
    with pytest.raises(InputError):
        SymmetricTensor.from_dense(dense)


def test_jacobian_finite_differences():
    C = random_tensor(5, 3, 9)
    x = np.random.default_rng(3).standard_normal(5)
    J = map_jacobian(C, x)
    h = 1e-5
    fd = np.empty((5, 5))
    for j in range(5):
        e = np.zeros(5)
        e[j] = h
        fd[:, j] = (apply_map(C, x + e) - apply_map(C, x - e)) / (2 * h)
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-6 * np.abs(J).max())
    assert np.abs(J - J.T).max() <= 1e-12 * np.abs(J).max()


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 6), q=st.integers(1, 4), seed=st.integers(0, 2**32))
def test_jacobian_symmetric_and_matches_dense(n, q, seed):
    C = random_tensor(n, q, seed)
    x = np.random.default_rng(seed).standard_normal(n)
    J = map_jacobian(C, x)
    dense = C.to_dense()
    # dense reference: contract all but the first two slots, times q
    M = dense
    for _ in range(q - 1):
        M = M @ x
    ref = q * M
    scale = max(np.abs(ref).max(), 1e-300)
    assert np.abs(J - ref).max() <= 1e-12 * scale
    assert np.abs(J - J.T).max() <= 1e-12 * scale


def test_rotation_equivariance():
    # hard-coded orthogonal matrix (a fixed 4x4 Householder reflection composed with a plane rotation)
    u = np.array([1.0, -2.0, 0.5, 3.0])
    H = np.eye(4) - 2 * np.outer(u, u) / (u @ u)
    c, s = np.cos(0.7), np.sin(0.7)
    G = np.eye(4)
    G[[0, 0, 2, 2], [0, 2, 0, 2]] = [c, -s, s, c]
    R = G @ H
    assert np.allclose(R @ R.T, np.eye(4), atol=1e-14)
    C = random_tensor(4, 3, 2024)
    x = np.array([0.2, -0.4, 1.0, 0.3])
    lhs = R @ apply_map(C, x)
    rhs = apply_map(C.rotated(R), R @ x)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_dimension_mismatch():
    C = random_tensor(3, 2, 0)
    with pytest.raises(InputError):
        apply_map(C, np.ones(4))
    with pytest.raises(InputError):
        map_jacobian(C, np.ones(2))


# --- file format --------------------------------------------------------------


def test_file_round_trip(tmp_path):
    C = random_tensor(4, 3, 77)
    path = tmp_path / "t.melt"
    write_tensor(path, C)
    raw = path.read_bytes()
    assert raw[:4] == b"MELT"
    assert len(raw) == 16 + 8 * math.comb(7, 4)
    D = read_tensor(path)
    assert D.shape == C.shape
    assert np.array_equal(D.components, C.components)


def test_file_bad_magic(tmp_path):
    path = tmp_path / "bad.melt"
    path.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(InputError):
        read_tensor(path)

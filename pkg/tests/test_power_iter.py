import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melonic.errors import DegenerateStepError, InputError
from melonic.power_iter import (
    EigenPair,
    IterationTrace,
    PowerIterParams,
    eigen_residual,
    estimate_lambda_max,
    lambda_from_trace,
    log_norm_from_trace,
    normalized_step,
    q_bracket,
    random_unit_vector,
    rayleigh_value,
    refine_eigenpair,
    restart_seed,
    run_power_iteration,
    shifted_ascent,
)
from melonic.symtensor import SymmetricTensor, TensorShape, apply_map, sample_gaussian


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def trace_of(logs):
    logs = np.asarray(logs, dtype=float)
    return IterationTrace(logs, np.ones_like(logs), np.array([1.0]), len(logs), False)


def spiked(n, q, seed, strength=3.0, noise=0.05):
    v = unit(np.arange(1, n + 1))
    base = SymmetricTensor.rank_one(v, q, strength)
    g = sample_gaussian(TensorShape(n, q), seed)
    return SymmetricTensor(base.shape, base.components + noise * g.components), v


def rotation(n, seed=7):
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    return q * np.sign(np.diag(r))


V4 = unit([1.0, -2.0, 0.5, 3.0])


# --- q_bracket ---------------------------------------------------------------------


@pytest.mark.parametrize("p, q, expected", [(2, 3, 4), (1, 5, 1), (3, 2, 7), (0, 3, 0), (4, 1, 4)])
def test_q_bracket(p, q, expected):
    assert q_bracket(p, q) == expected


@given(st.integers(0, 12), st.integers(1, 6))
def test_q_bracket_is_geometric_sum(p, q):
    assert q_bracket(p, q) == sum(q**k for k in range(p))


def test_q_bracket_rejects_bad_input():
    with pytest.raises(InputError):
        q_bracket(-1, 2)


# --- params -------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [{"align_tol": 0.0}, {"align_tol": 1.0}, {"restarts": 0}, {"max_steps": -1}, {"newton_tol": 0.0},
     {"fallback": "bogus"}, {"seed": -1}],
)
def test_params_validation(kwargs):
    with pytest.raises(InputError):
        PowerIterParams(**kwargs)


def test_default_params():
    p = PowerIterParams()
    assert (p.max_steps, p.align_tol, p.restarts, p.newton_tol, p.newton_max_iters) == (60, 1e-12, 16, 1e-10, 50)


# --- single step ---------------------------------------------------------------------


def test_step_rank_one_fixed_point():
    C = SymmetricTensor.rank_one(V4, 3)
    y, s = normalized_step(C, V4)
    np.testing.assert_allclose(y, V4, atol=1e-14)
    assert abs(s) < 1e-14


def test_step_scaling_shifts_log_norm():
    C = sample_gaussian(TensorShape(5, 3), 3)
    x = random_unit_vector(5, 11)
    y1, s1 = normalized_step(C, x)
    y2, s2 = normalized_step(C.scaled(2.5), x)
    np.testing.assert_allclose(y1, y2, atol=1e-14)
    assert s2 - s1 == pytest.approx(math.log(2.5), abs=1e-12)


def test_step_on_eigenvector():
    C = SymmetricTensor.rank_one(V4, 3, -1.7)
    y, s = normalized_step(C, V4)
    assert s == pytest.approx(math.log(1.7), abs=1e-14)
    np.testing.assert_allclose(y, -V4, atol=1e-14)


def test_step_errors():
    C = SymmetricTensor.zeros(TensorShape(3, 2))
    with pytest.raises(DegenerateStepError):
        normalized_step(C, unit([1, 1, 1]))
    with pytest.raises(InputError):
        normalized_step(C, np.array([1.0, 1.0, 0.0]))
    with pytest.raises(InputError):
        normalized_step(C, np.array([1.0, 0.0]))


# --- iteration ------------------------------------------------------------------------


def test_rank_one_converges():
    C = SymmetricTensor.rank_one(V4, 3)
    x0 = random_unit_vector(4, 5)
    t = run_power_iteration(C, x0, PowerIterParams())
    assert t.converged
    assert abs(t.final_vector @ V4) >= 1 - 1e-8
    assert np.linalg.norm(t.final_vector) == pytest.approx(1.0, abs=1e-12)


def test_negative_rank_one_sign_flip_absorbed():
    C = SymmetricTensor.rank_one(V4, 3, -1.0)
    t = run_power_iteration(C, random_unit_vector(4, 9), PowerIterParams())
    assert t.converged
    assert abs(t.step_log_norms[-1]) < 1e-12
    assert t.alignments[-1] >= 1 - 1e-12


def test_zero_steps():
    C = SymmetricTensor.rank_one(V4, 3)
    t = run_power_iteration(C, V4, PowerIterParams(max_steps=0))
    assert t.steps_taken == 0 and not t.converged
    assert t.step_log_norms.size == 0 and t.alignments.size == 0
    with pytest.raises(InputError):
        lambda_from_trace(t, 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trace_invariants(seed):
    C = sample_gaussian(TensorShape(4, 3), seed)
    t = run_power_iteration(C, random_unit_vector(4, seed + 1), PowerIterParams(max_steps=12))
    assert np.all(t.alignments >= 0) and np.all(t.alignments <= 1 + 1e-12)
    assert abs(np.linalg.norm(t.final_vector) - 1) <= 1e-12


def test_log_norm_matches_raw_iteration():
    C = sample_gaussian(TensorShape(4, 2), 21)
    x0 = random_unit_vector(4, 22)
    t = run_power_iteration(C, x0, PowerIterParams(max_steps=5, align_tol=1e-15))
    raw = x0.copy()
    for _ in range(t.steps_taken):
        raw = apply_map(C, raw)
    assert log_norm_from_trace(t, 2) == pytest.approx(math.log(np.linalg.norm(raw)), rel=1e-12)


# --- lambda from trace ---------------------------------------------------------------


def test_lambda_constant_rate():
    assert lambda_from_trace(trace_of([math.log(2)] * 7), 3) == pytest.approx(2.0, rel=1e-15)
    assert lambda_from_trace(trace_of([math.log(2)] * 5), 1) == pytest.approx(2.0, rel=1e-15)


def test_lambda_weighted_formula():
    s = [0.3, -0.1, 0.7]
    q, p = 3, 3
    expected = math.exp(sum(q ** (p - k) * s[k - 1] for k in range(1, p + 1)) / q_bracket(p, q))
    assert lambda_from_trace(trace_of(s), q) == pytest.approx(expected, rel=1e-14)


def test_lambda_rank_one():
    C = SymmetricTensor.rank_one(V4, 3)
    t = run_power_iteration(C, random_unit_vector(4, 2), PowerIterParams())
    # early steps carry most of the weight, so a generic start is not exactly 1
    assert math.exp(t.step_log_norms[-1]) == pytest.approx(1.0, abs=1e-10)
    t = run_power_iteration(C, V4, PowerIterParams())
    assert lambda_from_trace(t, 3) == pytest.approx(1.0, abs=1e-10)


def test_lambda_exact_eigenvector_start():
    C = SymmetricTensor.diagonal([1.0, 2.5, 0.5], 3)
    t = run_power_iteration(C, np.array([0.0, 1.0, 0.0]), PowerIterParams(max_steps=4, align_tol=1e-15))
    assert lambda_from_trace(t, 3) == pytest.approx(2.5, rel=1e-14)


def test_lambda_homogeneity():
    C = sample_gaussian(TensorShape(5, 3), 8)
    x0 = random_unit_vector(5, 4)
    params = PowerIterParams(max_steps=6, align_tol=1e-15)
    t1 = run_power_iteration(C, x0, params)
    t2 = run_power_iteration(C.scaled(1.8), x0, params)
    p = t1.steps_taken
    assert log_norm_from_trace(t2, 3) - log_norm_from_trace(t1, 3) == pytest.approx(
        q_bracket(p, 3) * math.log(1.8), abs=1e-10
    )
    assert lambda_from_trace(t2, 3) / lambda_from_trace(t1, 3) == pytest.approx(1.8, abs=1e-10)


# --- rayleigh / refine -----------------------------------------------------------------


def test_rayleigh():
    C = SymmetricTensor.rank_one(V4, 3)
    assert rayleigh_value(C, V4) == pytest.approx(1.0, abs=1e-14)
    w = unit([3.0, 0.0, -1.0, 0.0] - (np.array([3.0, 0.0, -1.0, 0.0]) @ V4) * V4)
    assert abs(rayleigh_value(C, w)) < 1e-14


def test_rayleigh_dense():
    C = sample_gaussian(TensorShape(4, 3), 17)
    x = random_unit_vector(4, 18)
    dense = C.to_dense()
    ref = np.einsum("ijkl,i,j,k,l->", dense, x, x, x, x)
    assert rayleigh_value(C, x) == pytest.approx(ref, abs=1e-12)


def test_refine_fixed_point():
    C = SymmetricTensor.rank_one(V4, 3, 1.3)
    pair = refine_eigenpair(C, V4, 1.3, PowerIterParams())
    assert pair.residual <= 1e-14
    np.testing.assert_allclose(pair.vector, V4, atol=1e-14)


def test_refine_perturbed_rank_one():
    C = SymmetricTensor.rank_one(V4, 3)
    x0 = unit(V4 + 1e-2 * np.array([0.3, 0.1, -0.5, 0.2]))
    pair = refine_eigenpair(C, x0, rayleigh_value(C, x0), PowerIterParams())
    assert pair.residual <= 1e-10
    assert pair.lam == pytest.approx(1.0, abs=1e-10)
    assert abs(pair.vector @ V4) == pytest.approx(1.0, abs=1e-12)


def test_refine_diagonal():
    C = SymmetricTensor.diagonal([3.0, 1.0, 2.0], 3)
    pair = refine_eigenpair(C, np.array([1.0, 0.0, 0.0]), 3.0, PowerIterParams())
    assert pair.lam == 3.0 and pair.residual == 0.0


def test_refine_never_worse():
    C = sample_gaussian(TensorShape(6, 3), 30)
    x0 = random_unit_vector(6, 31)
    before = eigen_residual(C, x0, rayleigh_value(C, x0))
    pair = refine_eigenpair(C, x0, rayleigh_value(C, x0), PowerIterParams(newton_max_iters=3))
    assert pair.residual <= before
    assert abs(np.linalg.norm(pair.vector) - 1) <= 1e-12


# --- shifted ascent -------------------------------------------------------------------------


def test_shifted_ascent_reaches_eigenvector():
    C = sample_gaussian(TensorShape(24, 3), 40)
    params = PowerIterParams(fallback_steps=2000, fallback_tol=1e-10)
    ok = 0
    for k in range(4):
        x0 = random_unit_vector(24, restart_seed(1, k))
        x, steps = shifted_ascent(C, x0, params)
        lam = rayleigh_value(C, x)
        if steps < params.fallback_steps:
            assert eigen_residual(C, x, lam) < 1e-3 * abs(lam)
            # ascent never lowers |x . C x^q| below the start
            assert abs(lam) >= abs(rayleigh_value(C, x0))
            ok += 1
    assert ok >= 3


def test_fallback_off_matches_plain_pipeline():
    C = sample_gaussian(TensorShape(12, 3), 41)
    params = PowerIterParams(restarts=3, fallback="none")
    _, outs = estimate_lambda_max(C, params)
    assert all(o.fallback_steps == 0 for o in outs)


# --- estimate ----------------------------------------------------------------------------


def test_estimate_rank_one_scaled():
    C = SymmetricTensor.rank_one(V4, 3, 2.0)
    best, outs = estimate_lambda_max(C, PowerIterParams())
    assert best.abs_lambda == pytest.approx(2.0, abs=1e-8)
    assert len(outs) == 16 and all(o.converged for o in outs)


def test_estimate_diagonal():
    d = np.array([3.0, 1.0, 1.0, 1.0, 1.0])
    best, _ = estimate_lambda_max(SymmetricTensor.diagonal(d, 3), PowerIterParams())
    assert best.abs_lambda == pytest.approx(3.0, abs=1e-10)
    assert best.residual <= 1e-10


def test_estimate_matrix_case():
    C = SymmetricTensor.diagonal([3.0, 1.0], 1)
    best, _ = estimate_lambda_max(C, PowerIterParams())
    assert best.abs_lambda == pytest.approx(3.0, abs=1e-10)


def test_estimate_matrix_dense_oracle():
    C = sample_gaussian(TensorShape(6, 1), 50)
    best, _ = estimate_lambda_max(C, PowerIterParams(max_steps=2000))
    ref = np.max(np.abs(np.linalg.eigvalsh(C.to_dense())))
    assert best.abs_lambda == pytest.approx(ref, abs=1e-8)


def test_single_restart_is_the_pipeline():
    C = sample_gaussian(TensorShape(10, 3), 60)
    params = PowerIterParams(restarts=1, seed=99)
    best, (out,) = estimate_lambda_max(C, params)
    x0 = random_unit_vector(10, restart_seed(99, 0))
    t = run_power_iteration(C, x0, params)
    x = t.final_vector
    if not t.converged:
        x, _ = shifted_ascent(C, x, params)
    pair = refine_eigenpair(C, x, rayleigh_value(C, x), params)
    assert best.lam == pair.lam and np.array_equal(best.vector, pair.vector)
    assert out.trace.steps_taken == t.steps_taken


def test_bit_for_bit_reproducible():
    C = sample_gaussian(TensorShape(16, 3), 61)
    params = PowerIterParams(restarts=4, seed=3)
    a, oa = estimate_lambda_max(C, params)
    b, ob = estimate_lambda_max(C, params)
    assert a.lam == b.lam and np.array_equal(a.vector, b.vector)
    assert [o.pair.lam for o in oa] == [o.pair.lam for o in ob]


def test_rotation_equivariance():
    C, _ = spiked(4, 3, 70)
    R = rotation(4)
    params = PowerIterParams(restarts=6)
    starts = np.array([random_unit_vector(4, restart_seed(0, k)) for k in range(6)])
    _, plain = estimate_lambda_max(C, params, starts=starts)
    _, rot = estimate_lambda_max(C.rotated(R), params, starts=starts @ R.T)
    for a, b in zip(plain, rot):
        assert a.pair.lam == pytest.approx(b.pair.lam, abs=1e-10)
        np.testing.assert_allclose(R @ a.pair.vector, b.pair.vector, atol=1e-8)


def test_refined_not_worse_than_unrefined():
    C = sample_gaussian(TensorShape(8, 3), 80)
    params = PowerIterParams(restarts=4)
    _, outs = estimate_lambda_max(C, params)
    for o in outs:
        if o.converged and o.fallback_steps == 0:
            x = o.trace.final_vector
            assert o.pair.residual <= eigen_residual(C, x, rayleigh_value(C, x))


def test_unconverged_fallback():
    # no Newton and no fallback: nothing meets the tolerance, best-effort pair returned
    C = sample_gaussian(TensorShape(20, 3), 90)
    params = PowerIterParams(restarts=2, max_steps=1, newton_max_iters=0, fallback="none")
    best, outs = estimate_lambda_max(C, params)
    assert not any(o.converged for o in outs)
    assert best.residual == min(o.pair.residual for o in outs)


def test_starts_shape_checked():
    C = SymmetricTensor.rank_one(V4, 3)
    with pytest.raises(InputError):
        estimate_lambda_max(C, PowerIterParams(), starts=np.ones((2, 3)))


def test_eigenpair_abs():
    assert EigenPair(-2.0, V4, 0.0).abs_lambda == 2.0

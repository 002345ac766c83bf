"""Normalized nonlinear power iteration and Newton refinement of E-eigenpairs.

An E-eigenpair of ``C`` solves ``C x^q = lambda x`` with ``x . x = 1``.  The
raw iteration ``x <- C x^q`` grows doubly exponentially, so each step is
renormalized and only ``s_k = ln |y_k|`` is kept.  The log-norm of the raw
iterate after ``p`` steps is ``L_p = sum_k q^(p-k) s_k``.

For random tensors with N beyond a few dozen the plain iteration rarely
settles.  Restarts that fail to converge are then continued by an
adaptively shifted ascent (see :func:`shifted_ascent`) before Newton
refinement, unless ``PowerIterParams.fallback == "none"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStepError, InputError, NumericError
from .symtensor import SymmetricTensor, apply_map, map_jacobian

__all__ = [
    "PowerIterParams",
    "IterationTrace",
    "EigenPair",
    "RestartOutcome",
    "q_bracket",
    "normalized_step",
    "run_power_iteration",
    "log_norm_from_trace",
    "lambda_from_trace",
    "rayleigh_value",
    "eigen_residual",
    "refine_eigenpair",
    "shifted_ascent",
    "random_unit_vector",
    "restart_seed",
    "estimate_lambda_max",
]

_UNIT_TOL = 1e-10
FALLBACKS = ("shifted", "none")
# steps between recomputations of the shift in shifted_ascent
SHIFT_REFRESH = 10
# margin kept above zero by the shifted Jacobian's smallest eigenvalue
SHIFT_MARGIN = 1e-6


@dataclass(frozen=True)
class PowerIterParams:
    max_steps: int = 60
    align_tol: float = 1e-12
    restarts: int = 16
    newton_max_iters: int = 50
    newton_tol: float = 1e-10
    seed: int = 0
    fallback: str = "shifted"
    fallback_steps: int = 500
    fallback_tol: float = 1e-6

    def __post_init__(self):
        for name in ("max_steps", "restarts", "newton_max_iters", "fallback_steps"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise InputError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.restarts < 1:
            raise InputError("restarts must be at least 1")
        if not 0.0 < self.align_tol < 1.0:
            raise InputError(f"align_tol must lie in (0, 1), got {self.align_tol}")
        if not self.newton_tol > 0.0:
            raise InputError(f"newton_tol must be positive, got {self.newton_tol}")
        if isinstance(self.seed, bool) or not 0 <= int(self.seed) < 2**64:
            raise InputError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        if self.fallback not in FALLBACKS:
            raise InputError(f"fallback must be one of {FALLBACKS}, got {self.fallback!r}")
        if not 0.0 < self.fallback_tol < 1.0:
            raise InputError(f"fallback_tol must lie in (0, 1), got {self.fallback_tol}")


@dataclass(frozen=True, eq=False)
class IterationTrace:
    step_log_norms: np.ndarray
    alignments: np.ndarray
    final_vector: np.ndarray
    steps_taken: int
    converged: bool


@dataclass(frozen=True, eq=False)
class EigenPair:
    lam: float
    vector: np.ndarray
    residual: float

    @property
    def abs_lambda(self) -> float:
        return abs(self.lam)


@dataclass(frozen=True, eq=False)
class RestartOutcome:
    """Diagnostics for one restart of :func:`estimate_lambda_max`."""

    index: int
    pair: EigenPair
    trace: IterationTrace
    converged: bool = field(default=False)
    fallback_steps: int = 0

    @property
    def steps(self) -> int:
        return self.trace.steps_taken + self.fallback_steps


def q_bracket(p: int, q: int) -> int:
    """``[p]_q = 1 + q + ... + q^(p-1)``.

    >>> q_bracket(2, 3)
    4
    """
    if p < 0 or q < 1:
        raise InputError(f"q_bracket needs p >= 0 and q >= 1, got p={p}, q={q}")
    if q == 1:
        return p
    return (q**p - 1) // (q - 1)


def _check_unit(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise InputError(f"vector of shape {x.shape} does not match N={n}")
    if abs(np.linalg.norm(x) - 1.0) > _UNIT_TOL:
        raise InputError(f"start vector is not unit (norm {np.linalg.norm(x)!r})")
    return x


def normalized_step(C: SymmetricTensor, x: np.ndarray) -> tuple[np.ndarray, float]:
    """One renormalized application of the map; returns ``(y/|y|, ln|y|)``."""
    x = _check_unit(x, C.n_dim)
    y = apply_map(C, x)
    norm = float(np.linalg.norm(y))
    if not np.isfinite(norm):
        raise NumericError("non-finite value in power step")
    if norm == 0.0:
        raise DegenerateStepError("power map returned the zero vector")
    return y / norm, math.log(norm)


def run_power_iteration(C: SymmetricTensor, x0: np.ndarray, params: PowerIterParams) -> IterationTrace:
    """Iterate :func:`normalized_step` until ``|<x_k, x_{k-1}>| >= 1 - align_tol``.

    The absolute value absorbs the sign flip ``x -> -x`` that a negative
    eigenvalue produces at odd ``q``.
    """
    x = _check_unit(x0, C.n_dim)
    logs, aligns = [], []
    converged = False
    for _ in range(params.max_steps):
        y, s = normalized_step(C, x)
        # renormalize again so roundoff never trips the unit check
        y = y / np.linalg.norm(y)
        align = abs(float(y @ x))
        logs.append(s)
        aligns.append(align)
        x = y
        if align >= 1.0 - params.align_tol:
            converged = True
            break
    return IterationTrace(
        step_log_norms=np.array(logs),
        alignments=np.array(aligns),
        final_vector=x,
        steps_taken=len(logs),
        converged=converged,
    )


def log_norm_from_trace(trace: IterationTrace, q: int) -> float:
    """``ln |x^(p)|`` of the unnormalized iteration, ``sum_k q^(p-k) s_k``."""
    total = 0.0
    for s in trace.step_log_norms:
        total = q * total + float(s)
    return total


def lambda_from_trace(trace: IterationTrace, q: int) -> float:
    """Growth-rate estimate ``exp(L_p / [p]_q)`` of ``|lambda|``.

    Raw log-norms are weighted by ``q^(p-k)``, so for ``q > 1`` the early
    steps dominate.  Equal to ``exp(s_p)`` only when all steps grow alike,
    e.g. when the start vector is already an eigenvector.
    """
    p = trace.steps_taken
    if p == 0:
        raise InputError("empty iteration trace")
    if q == 1:
        return math.exp(float(np.mean(trace.step_log_norms)))
    # q^(p-k)/[p]_q = (q-1) q^-k / (1 - q^-p), finite for any p
    k = np.arange(1, p + 1)
    weights = (q - 1) * float(q) ** -k / (1.0 - float(q) ** -p)
    return math.exp(float(weights @ trace.step_log_norms))


def rayleigh_value(C: SymmetricTensor, x: np.ndarray) -> float:
    """``x . C x^q``, the eigenvalue attached to direction ``x``."""
    x = _check_unit(x, C.n_dim)
    return float(x @ apply_map(C, x))


def eigen_residual(C: SymmetricTensor, x: np.ndarray, lam: float) -> float:
    return float(np.linalg.norm(apply_map(C, x) - lam * x))


def _as_pair(C: SymmetricTensor, x: np.ndarray) -> EigenPair:
    v = x / np.linalg.norm(x)
    y = apply_map(C, v)
    lam = float(v @ y)
    return EigenPair(lam=lam, vector=v, residual=float(np.linalg.norm(y - lam * v)))


def refine_eigenpair(
    C: SymmetricTensor, x0: np.ndarray, lambda0: float, params: PowerIterParams
) -> EigenPair:
    """Newton's method on the bordered system ``(C x^q - lambda x, (x.x - 1)/2)``.

    Each iterate is scored by its normalized direction and Rayleigh value;
    the best-scoring iterate is returned, so the result is never worse than
    the start.  A singular Newton system ends the iteration quietly.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (C.n_dim,):
        raise InputError(f"vector of shape {x.shape} does not match N={C.n_dim}")
    lam = float(lambda0)
    n = C.n_dim
    best = _as_pair(C, x)
    for _ in range(params.newton_max_iters):
        if best.residual <= params.newton_tol:
            break
        F = np.concatenate([apply_map(C, x) - lam * x, [(x @ x - 1.0) / 2.0]])
        J = np.empty((n + 1, n + 1))
        J[:n, :n] = map_jacobian(C, x) - lam * np.eye(n)
        J[:n, n] = -x
        J[n, :n] = x
        J[n, n] = 0.0
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(delta)):
            raise NumericError("non-finite Newton update")
        x = x + delta[:n]
        lam = lam + float(delta[n])
        if not np.isfinite(lam) or not np.all(np.isfinite(x)):
            raise NumericError("non-finite Newton iterate")
        if np.linalg.norm(x) == 0.0:
            break
        cand = _as_pair(C, x)
        if cand.residual < best.residual:
            best = cand
    return best


def shifted_ascent(C: SymmetricTensor, x0: np.ndarray, params: PowerIterParams) -> tuple[np.ndarray, int]:
    """Shifted iteration ``x <- normalize(sign * C x^q + alpha x)``.

    ``sign`` is that of the Rayleigh value at ``x0``.  Every
    :data:`SHIFT_REFRESH` steps ``alpha`` is reset so that
    ``sign * J(x) + alpha I`` is positive definite, where ``J`` is the map
    Jacobian.  This makes the iteration a monotone ascent of ``sign * x.C x^q``
    near ``x``, which converges to an eigenvector where the unshifted map
    oscillates.  Stops once ``|<x_k, x_{k-1}>| >= 1 - fallback_tol``.

    Returns the final unit vector and the number of steps taken.
    """
    x = _check_unit(x0, C.n_dim)
    sign = 1.0 if rayleigh_value(C, x) >= 0.0 else -1.0
    alpha = 0.0
    for k in range(params.fallback_steps):
        if k % SHIFT_REFRESH == 0:
            J = map_jacobian(C, x)
            low = float(np.linalg.eigvalsh(sign * J)[0])
            alpha = max(0.0, SHIFT_MARGIN - low)
            # the map is homogeneous of degree q, so C x^q = J x / q
            y = J @ x / C.q
        else:
            y = apply_map(C, x)
        z = sign * y + alpha * x
        norm = float(np.linalg.norm(z))
        if not np.isfinite(norm):
            raise NumericError("non-finite value in shifted ascent")
        if norm == 0.0:
            raise DegenerateStepError("shifted ascent hit the zero vector")
        z = z / norm
        align = abs(float(z @ x))
        x = z
        if align >= 1.0 - params.fallback_tol:
            return x, k + 1
    return x, params.fallback_steps


def restart_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(index),))


def random_unit_vector(n: int, seed: np.random.SeedSequence | int) -> np.ndarray:
    """Uniform point on the unit sphere in ``R^n``."""
    rng = np.random.default_rng(seed)
    while True:
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
        if norm > 0.0:
            return v / norm


def _run_restart(C, x0, params, index) -> RestartOutcome:
    trace = run_power_iteration(C, x0, params)
    x = trace.final_vector
    extra = 0
    if not trace.converged and params.fallback == "shifted" and params.fallback_steps > 0:
        x, extra = shifted_ascent(C, x, params)
    pair = refine_eigenpair(C, x, rayleigh_value(C, x), params)
    return RestartOutcome(
        index=index, pair=pair, trace=trace, converged=pair.residual <= params.newton_tol, fallback_steps=extra
    )


def estimate_lambda_max(
    C: SymmetricTensor, params: PowerIterParams, starts: np.ndarray | None = None
) -> tuple[EigenPair, list[RestartOutcome]]:
    """Largest ``|lambda|`` over power-iteration + Newton restarts.

    Each restart runs :func:`run_power_iteration`, then :func:`shifted_ascent`
    if that did not converge (and the fallback is enabled), then
    :func:`refine_eigenpair` from the resulting direction.

    Restart ``k`` starts from ``random_unit_vector(N, restart_seed(seed, k))``
    unless ``starts`` (shape ``(restarts, N)``) is given.  Only restarts whose
    refined residual is at most ``newton_tol`` compete; if none does, the
    pair with the smallest residual is returned and every outcome is flagged
    unconverged.  Ties go to the lower restart index.
    """
    if starts is None:
        starts = [random_unit_vector(C.n_dim, restart_seed(params.seed, k)) for k in range(params.restarts)]
    else:
        starts = np.asarray(starts, dtype=np.float64)
        if starts.ndim != 2 or starts.shape[1] != C.n_dim:
            raise InputError(f"starts must have shape (restarts, {C.n_dim}), got {starts.shape}")
    outcomes = [_run_restart(C, x0, params, k) for k, x0 in enumerate(starts)]
    good = [o for o in outcomes if o.converged]
    if good:
        best = max(good, key=lambda o: (abs(o.pair.lam), -o.index))
    else:
        best = min(outcomes, key=lambda o: (o.pair.residual, o.index))
    return best.pair, outcomes

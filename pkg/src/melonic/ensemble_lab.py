"""Monte Carlo experiments over the Gaussian tensor ensemble.

Three kinds of run are supported: the mean of ``x^(p) . x^(p)`` against the
exact polynomial from :mod:`melonic.wick_oracle`, its variance, and sweeps
of the largest eigenvalue over the dimension ``N`` with a power-law fit.

Every random quantity is keyed by a :class:`numpy.random.SeedSequence`
spawned from the master seed and the integer coordinates of the sample, so
results do not depend on evaluation order or on how work is split among
processes.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError, InputError, MelonicError
from .power_iter import PowerIterParams, estimate_lambda_max
from .symtensor import SymmetricTensor, TensorShape, apply_map, sample_gaussian

__all__ = [
    "MODES",
    "MC_MAX_P",
    "ExperimentConfig",
    "LambdaEstimate",
    "NStatistics",
    "PowerLawFit",
    "SweepResult",
    "MomentEstimate",
    "VarianceEstimate",
    "PlantedSource",
    "ConstantSource",
    "derive_seed",
    "run_trial",
    "lambda_sweep",
    "norm_expectation_mc",
    "variance_mc",
    "fit_power_law",
    "sweep_csv",
    "CSV_COLUMNS",
]

MODES = ("norm_check", "lambda_sweep", "variance_check")
# x^(p) . x^(p) has degree 2 [p]_q in the Gaussians; beyond p = 2 its
# sample mean is useless at any affordable sample size
MC_MAX_P = 2
CSV_COLUMNS = ("n_dim", "q", "trial", "lambda_abs", "residual", "converged", "steps")

TensorSource = Callable[[TensorShape, int], SymmetricTensor]


def derive_seed(master_seed: int, *key: int) -> int:
    """64-bit seed for the stream at integer coordinates ``key``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    q: int
    n_values: tuple[int, ...]
    trials: int
    p: int = 1
    power_params: PowerIterParams = field(default_factory=PowerIterParams)
    master_seed: int = 0
    mode: str = "lambda_sweep"

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.trials, bool) or not isinstance(self.trials, (int, np.integer)) or self.trials < 1:
            raise InputError(f"trials must be a positive integer, got {self.trials!r}")
        if not self.n_values:
            raise InputError("n_values is empty")
        if any(n < 1 for n in self.n_values) or any(a >= b for a, b in zip(self.n_values, self.n_values[1:])):
            raise InputError(f"n_values must be positive and strictly increasing, got {self.n_values}")
        if self.p < 0:
            raise InputError(f"p must be nonnegative, got {self.p}")
        TensorShape(self.n_values[0], self.q)
        if not 0 <= int(self.master_seed) < 2**64:
            raise InputError(f"master_seed must lie in [0, 2**64), got {self.master_seed}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["n_values"] = list(self.n_values)
        return d


@dataclass(frozen=True)
class LambdaEstimate:
    """One sweep trial.  Failed trials carry ``lambda_abs = nan`` and the error text."""

    n_dim: int
    q: int
    trial_index: int
    lambda_abs: float
    residual: float
    converged: bool
    steps: int
    error: str | None = None


@dataclass(frozen=True)
class NStatistics:
    n_dim: int
    trials: int
    converged: int
    excluded: int
    mean: float
    median: float
    stderr: float
    q1: float
    q3: float
    ratio: float  # median / sqrt(N / (q+1))


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float


@dataclass(frozen=True)
class SweepResult:
    config: ExperimentConfig
    estimates: tuple[LambdaEstimate, ...]
    per_n: tuple[NStatistics, ...]
    fit: PowerLawFit | None
    fit_skipped: str | None = None

    @property
    def excluded(self) -> int:
        return sum(s.excluded for s in self.per_n)

    def summary(self) -> dict:
        """JSON-ready summary; the fit is the string ``"skipped"`` when not done."""
        return {
            "per_n": [asdict(s) for s in self.per_n],
            "fit": "skipped" if self.fit is None else asdict(self.fit),
            "fit_skipped_reason": self.fit_skipped,
            "excluded_trials": self.excluded,
            "failed_trials": sum(e.error is not None for e in self.estimates),
        }


# ---------------------------------------------------------------------------
# tensor sources (test hooks)


def _gaussian_source(shape: TensorShape, seed: int) -> SymmetricTensor:
    return sample_gaussian(shape, seed)


@dataclass(frozen=True)
class PlantedSource:
    """Rank-one tensors ``c N^exponent v^(q+1)`` along a seeded random unit ``v``."""

    exponent: float = 0.5
    scale: float = 1.0

    def __call__(self, shape: TensorShape, seed: int) -> SymmetricTensor:
        v = np.random.default_rng(seed).standard_normal(shape.n_dim)
        v /= np.linalg.norm(v)
        return SymmetricTensor.rank_one(v, shape.q, self.value(shape.n_dim))

    def value(self, n_dim: int) -> float:
        return self.scale * float(n_dim) ** self.exponent


@dataclass(frozen=True)
class ConstantSource:
    """The same tensor every draw: all packed components equal to ``value``."""

    value: float = 1.0

    def __call__(self, shape: TensorShape, seed: int) -> SymmetricTensor:
        return SymmetricTensor(shape, np.full(shape.n_components, float(self.value)))


# ---------------------------------------------------------------------------
# eigenvalue sweeps


def run_trial(
    config: ExperimentConfig, n_dim: int, trial_index: int, source: TensorSource | None = None
) -> LambdaEstimate:
    """Sample trial ``trial_index`` at dimension ``n_dim`` and estimate its ``|lambda_max|``.

    Tensor and restart seeds derive from ``(master_seed, n_dim, trial_index)``
    only.  Library errors are recorded on the estimate instead of raised.
    """
    source = source or _gaussian_source
    tensor_seed = derive_seed(config.master_seed, n_dim, trial_index, 0)
    restart_master = derive_seed(config.master_seed, n_dim, trial_index, 1)
    params = _with_seed(config.power_params, restart_master)
    try:
        C = source(TensorShape(n_dim, config.q), tensor_seed)
        best, outcomes = estimate_lambda_max(C, params)
    except MelonicError as exc:
        return LambdaEstimate(n_dim, config.q, trial_index, math.nan, math.nan, False, 0, f"{type(exc).__name__}: {exc}")
    winner = next(o for o in outcomes if o.pair is best)
    return LambdaEstimate(
        n_dim=n_dim,
        q=config.q,
        trial_index=trial_index,
        lambda_abs=best.abs_lambda,
        residual=best.residual,
        converged=any(o.converged for o in outcomes),
        steps=winner.steps,
    )


def _with_seed(params: PowerIterParams, seed: int) -> PowerIterParams:
    d = asdict(params)
    d["seed"] = seed
    return PowerIterParams(**d)


def _trial_job(args):
    config, n_dim, trial_index, source = args
    return run_trial(config, n_dim, trial_index, source)


def lambda_sweep(
    config: ExperimentConfig, *, workers: int = 1, source: TensorSource | None = None
) -> SweepResult:
    """Run ``trials`` trials at every N and summarize them.

    With ``workers > 1`` trials run in a process pool.  Results are folded
    in (N, trial) order, so the output is the same for any worker count.
    ``source`` must be picklable when ``workers > 1``.
    """
    if config.mode != "lambda_sweep":
        raise InputError(f"lambda_sweep needs mode 'lambda_sweep', got {config.mode!r}")
    jobs = [(config, n, t, source) for n in config.n_values for t in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            estimates = tuple(pool.map(_trial_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        estimates = tuple(_trial_job(j) for j in jobs)
    return summarize_sweep(config, estimates)


def summarize_sweep(config: ExperimentConfig, estimates: Sequence[LambdaEstimate]) -> SweepResult:
    per_n = []
    for n in config.n_values:
        rows = [e for e in estimates if e.n_dim == n]
        vals = np.array([e.lambda_abs for e in rows if e.converged])
        if vals.size:
            q1, med, q3 = (float(v) for v in np.quantile(vals, [0.25, 0.5, 0.75]))
            mean = float(vals.mean())
            stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
        else:
            q1 = med = q3 = mean = stderr = math.nan
        per_n.append(
            NStatistics(
                n_dim=n,
                trials=len(rows),
                converged=int(vals.size),
                excluded=len(rows) - int(vals.size),
                mean=mean,
                median=med,
                stderr=stderr,
                q1=q1,
                q3=q3,
                ratio=med / math.sqrt(n / (config.q + 1)),
            )
        )
    points = [(s.n_dim, s.median) for s in per_n if s.converged > 0]
    fit, skipped = None, None
    if len(points) < 2:
        skipped = f"need at least 2 dimensions with converged trials, have {len(points)}"
    else:
        fit = PowerLawFit(*fit_power_law(points))
    return SweepResult(config=config, estimates=tuple(estimates), per_n=tuple(per_n), fit=fit, fit_skipped=skipped)


def fit_power_law(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit of ``value = prefactor * N^exponent`` in log-log space."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError("points must be (N, value) pairs")
    if len(pts) < 2:
        raise InputError(f"a power-law fit needs at least 2 points, got {len(pts)}")
    if np.any(~np.isfinite(pts)) or np.any(pts <= 0):
        raise InputError("power-law fit needs finite positive N and values")
    if np.unique(pts[:, 0]).size < 2:
        raise InputError("power-law fit needs at least 2 distinct N")
    slope, intercept = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)
    return float(slope), float(math.exp(intercept))


def sweep_csv(result: SweepResult) -> str:
    """One row per trial with :data:`CSV_COLUMNS`; floats in shortest round-trip form."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in result.estimates:
        w.writerow([e.n_dim, e.q, e.trial_index, repr(e.lambda_abs), repr(e.residual), int(e.converged), e.steps])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# moments of x^(p) . x^(p)


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    stderr: float
    samples: int


@dataclass(frozen=True)
class VarianceEstimate:
    var_hat: float
    mean_sq: float
    var_stderr: float
    samples: int

    @property
    def relative(self) -> float:
        """``var_hat / mean_sq``, the quantity expected to shrink with N."""
        return self.var_hat / self.mean_sq


def _norm_samples(q: int, p: int, n_dim: int, samples: int, seed: int, sampler: TensorSource | None) -> np.ndarray:
    if p < 1:
        raise InputError(f"p must be at least 1, got {p}")
    if p > MC_MAX_P:
        raise CapacityError(f"Monte Carlo moments are limited to p <= {MC_MAX_P}, got p={p}")
    if samples < 1:
        raise InputError(f"samples must be positive, got {samples}")
    shape = TensorShape(n_dim, q)
    sampler = sampler or _gaussian_source
    e1 = np.zeros(n_dim)
    e1[0] = 1.0
    out = np.empty(samples)
    for s in range(samples):
        C = sampler(shape, derive_seed(seed, n_dim, s))
        x = e1
        for _ in range(p):
            x = apply_map(C, x)
        out[s] = x @ x
    if not np.all(np.isfinite(out)):
        raise CapacityError("x.x overflowed; reduce p or N")
    return out


def norm_expectation_mc(
    q: int, p: int, n_dim: int, samples: int, seed: int, sampler: TensorSource | None = None
) -> MomentEstimate:
    """Sample mean of ``x^(p) . x^(p)`` from ``x^(0) = e_1`` with its standard error.

    Sample ``s`` uses the tensor seeded by ``derive_seed(seed, n_dim, s)``.
    """
    v = _norm_samples(q, p, n_dim, samples, seed, sampler)
    stderr = float(v.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.nan
    return MomentEstimate(mean=float(v.mean()), stderr=stderr, samples=samples)


def variance_mc(
    q: int, p: int, n_dim: int, samples: int, seed: int, sampler: TensorSource | None = None
) -> VarianceEstimate:
    """Sample variance of ``x^(p) . x^(p)``, the squared sample mean, and the variance's standard error."""
    v = _norm_samples(q, p, n_dim, samples, seed, sampler)
    mean = float(v.mean())
    dev2 = (v - mean) ** 2
    var_hat = float(dev2.sum() / max(samples - 1, 1))
    var_stderr = float(dev2.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.nan
    return VarianceEstimate(var_hat=var_hat, mean_sq=mean * mean, var_stderr=var_stderr, samples=samples)

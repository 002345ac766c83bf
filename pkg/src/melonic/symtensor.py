"""Packed storage, Gaussian sampling and contraction of real symmetric tensors.

A symmetric tensor of order ``q+1`` in ``N`` dimensions is stored by its
independent components only: one value per nondecreasing index tuple,
ordered colexicographically.  There are ``binomial(N+q, q+1)`` of them.

Index tuples in the public API (:func:`rank_multi_index`,
:func:`multiplicity`, :func:`propagator`, :meth:`SymmetricTensor.value`) are
1-based, with entries in ``[1, N]``.  Arrays returned by :func:`multisets`
and friends are 0-based.
"""
from __future__ import annotations

import functools
import math
import struct
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse

from .errors import InputError

__all__ = [
    "TensorShape",
    "SymmetricTensor",
    "multisets",
    "rank_multi_index",
    "unrank_multi_index",
    "multiplicity",
    "multiplicities",
    "propagator",
    "sample_gaussian",
    "sample_components",
    "apply_map",
    "map_jacobian",
    "write_tensor",
    "read_tensor",
    "MAX_ORDER",
    "FILE_MAGIC",
    "FILE_VERSION",
]

MAX_ORDER = 8
FILE_MAGIC = b"MELT"
FILE_VERSION = 1
_HEADER = struct.Struct("<4sIII")

# Components per independently seeded RNG block.
SAMPLE_BLOCK = 1 << 16


@dataclass(frozen=True)
class TensorShape:
    """Dimension ``n_dim`` (N) and number of contracted slots ``q``."""

    n_dim: int
    q: int

    def __post_init__(self):
        for name in ("n_dim", "q"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise InputError(f"{name} must be a positive integer, got {v!r}")
        object.__setattr__(self, "n_dim", int(self.n_dim))
        object.__setattr__(self, "q", int(self.q))
        if self.q + 1 > MAX_ORDER:
            raise InputError(f"tensor order q+1={self.q + 1} exceeds {MAX_ORDER}")

    @property
    def order(self) -> int:
        return self.q + 1

    @property
    def n_components(self) -> int:
        return math.comb(self.n_dim + self.q, self.q + 1)


# ---------------------------------------------------------------------------
# multi-index combinatorics


@functools.lru_cache(maxsize=32)
def _binom_table(n_max: int, k_max: int) -> np.ndarray:
    table = np.zeros((n_max + 1, k_max + 1), dtype=np.int64)
    for n in range(n_max + 1):
        for k in range(k_max + 1):
            table[n, k] = math.comb(n, k)
    return table


@functools.lru_cache(maxsize=32)
def multisets(n: int, k: int) -> np.ndarray:
    """All nondecreasing 0-based ``k``-tuples over ``range(n)`` in colex order.

    Returns a read-only ``(binomial(n+k-1, k), k)`` integer array.  Row ``r``
    is the tuple of colex rank ``r``.
    """
    if n < 1 or k < 1:
        raise InputError("multisets needs n >= 1 and k >= 1")
    rows = np.arange(n, dtype=np.int64)[:, None]
    for j in range(1, k):
        # (j+1)-tuples with last entry v extend the j-tuples whose max is <= v,
        # which form a colex prefix of length binomial(v+j, j).
        blocks = []
        for v in range(n):
            head = rows[: math.comb(v + j, j)]
            blocks.append(np.column_stack([head, np.full(len(head), v, dtype=np.int64)]))
        rows = np.concatenate(blocks)
    rows.setflags(write=False)
    return rows


def _colex_ranks(sorted0: np.ndarray, n: int) -> np.ndarray:
    """Vectorized colex rank of nondecreasing 0-based tuples along the last axis."""
    k = sorted0.shape[-1]
    table = _binom_table(n + k, k)
    out = np.zeros(sorted0.shape[:-1], dtype=np.int64)
    for a in range(k):
        out += table[sorted0[..., a] + a, a + 1]
    return out


def _as_multi_index(mi: Sequence[int], shape: TensorShape, *, require_sorted: bool = True) -> tuple[int, ...]:
    idx = tuple(int(v) for v in mi)
    if len(idx) != shape.order:
        raise InputError(f"multi-index {idx} has length {len(idx)}, expected {shape.order}")
    if any(v < 1 or v > shape.n_dim for v in idx):
        raise InputError(f"multi-index {idx} has entries outside [1, {shape.n_dim}]")
    if require_sorted and any(a > b for a, b in zip(idx, idx[1:])):
        raise InputError(f"multi-index {idx} is not nondecreasing")
    return idx


def rank_multi_index(mi: Sequence[int], shape: TensorShape) -> int:
    """Colex rank of a nondecreasing 1-based index tuple.

    >>> rank_multi_index((2, 2, 2), TensorShape(2, 2))
    3
    """
    idx = _as_multi_index(mi, shape)
    return sum(math.comb(v - 1 + a, a + 1) for a, v in enumerate(idx))


def unrank_multi_index(rank: int, shape: TensorShape) -> tuple[int, ...]:
    """Inverse of :func:`rank_multi_index`."""
    if not 0 <= rank < shape.n_components:
        raise InputError(f"rank {rank} outside [0, {shape.n_components})")
    r = int(rank)
    out = []
    for a in range(shape.q, -1, -1):
        # largest t with comb(t, a+1) <= r; t = s_a + a
        t = a
        while math.comb(t + 1, a + 1) <= r:
            t += 1
        r -= math.comb(t, a + 1)
        out.append(t - a + 1)
    return tuple(reversed(out))


def multiplicity(mi: Sequence[int]) -> int:
    """Number of distinct orderings of an index tuple, ``k! / prod(r_v!)``."""
    idx = tuple(mi)
    if not idx:
        raise InputError("empty multi-index")
    denom = 1
    for r in Counter(idx).values():
        denom *= math.factorial(r)
    return math.factorial(len(idx)) // denom


def multiplicities(rows: np.ndarray) -> np.ndarray:
    """Row-wise :func:`multiplicity` of a sorted tuple array."""
    m, k = rows.shape
    run = np.ones(m, dtype=np.int64)
    denom = np.ones(m, dtype=np.int64)
    for a in range(1, k):
        run = np.where(rows[:, a] == rows[:, a - 1], run + 1, 1)
        denom *= run
    return math.factorial(k) // denom


def propagator(mi: Sequence[int], mj: Sequence[int]) -> Fraction:
    """Exact covariance of two tensor entries addressed by arbitrary index tuples.

    Counts the permutations of ``mj`` reproducing ``mi`` entrywise, over
    ``(q+1)!``; every permutation is counted, including ones that fix ``mj``.
    """
    a, b = tuple(mi), tuple(mj)
    if len(a) != len(b):
        raise InputError(f"index tuples of different lengths {len(a)} and {len(b)}")
    if not a:
        raise InputError("empty index tuple")
    if Counter(a) != Counter(b):
        return Fraction(0)
    # number of matching permutations = prod r_v! over repeated values
    hits = 1
    for r in Counter(b).values():
        hits *= math.factorial(r)
    return Fraction(hits, math.factorial(len(a)))


def _propagator_bruteforce(mi: Sequence[int], mj: Sequence[int]) -> Fraction:
    hits = sum(1 for perm in permutations(mj) if tuple(perm) == tuple(mi))
    return Fraction(hits, math.factorial(len(mi)))


@functools.lru_cache(maxsize=32)
def _tuple_weights(n: int, k: int) -> np.ndarray:
    w = multiplicities(multisets(n, k)).astype(np.float64)
    w.setflags(write=False)
    return w


def _monomials(x: np.ndarray, n: int, k: int) -> np.ndarray:
    """``prod_a x[t_a]`` for every sorted k-tuple ``t`` (rows of :func:`multisets`)."""
    cols = _columns(n, k)
    out = x[cols[0]]
    for c in cols[1:]:
        out = out * x[c]
    return out


@functools.lru_cache(maxsize=32)
def _columns(n: int, k: int) -> tuple[np.ndarray, ...]:
    return tuple(np.ascontiguousarray(col) for col in multisets(n, k).T)


@functools.lru_cache(maxsize=8)
def _unfold_index(shape: TensorShape) -> np.ndarray:
    """``idx[i, m]`` = packed rank of the sorted tuple ``{i} + multisets(N, q)[m]``."""
    n, q = shape.n_dim, shape.q
    rows = multisets(n, q)
    dtype = np.int32 if shape.n_components < 2**31 else np.int64
    idx = np.empty((n, len(rows)), dtype=dtype)
    for i in range(n):
        full = np.sort(np.column_stack([rows, np.full(len(rows), i, dtype=np.int64)]), axis=1)
        idx[i] = _colex_ranks(full, n)
    idx.setflags(write=False)
    return idx


# entries allowed in the cached two-index unfolding used by map_jacobian
PAIR_UNFOLD_LIMIT = 1 << 25


def _pair_unfold_size(shape: TensorShape) -> int:
    return shape.n_dim**2 * math.comb(shape.n_dim + shape.q - 2, shape.q - 1)


@functools.lru_cache(maxsize=4)
def _pair_unfold_index(shape: TensorShape) -> np.ndarray:
    """``idx[i, j, m]`` = packed rank of ``{i, j} + multisets(N, q-1)[m]``, for q >= 2."""
    n, q = shape.n_dim, shape.q
    rows = multisets(n, q - 1)
    dtype = np.int32 if shape.n_components < 2**31 else np.int64
    idx = np.empty((n, n, len(rows)), dtype=dtype)
    js = np.repeat(np.arange(n), len(rows))[:, None]
    tiled = np.tile(rows, (n, 1))
    for i in range(n):
        full = np.sort(np.hstack([tiled, js, np.full_like(js, i)]), axis=1)
        idx[i] = _colex_ranks(full, n).reshape(n, len(rows))
    idx.setflags(write=False)
    return idx


# ---------------------------------------------------------------------------
# the tensor


@dataclass(frozen=True, eq=False)
class SymmetricTensor:
    """Real totally symmetric tensor in packed colex storage."""

    shape: TensorShape
    components: np.ndarray

    def __post_init__(self):
        comps = np.array(self.components, dtype=np.float64, copy=True).reshape(-1)
        if comps.size != self.shape.n_components:
            raise InputError(
                f"expected {self.shape.n_components} components for {self.shape}, got {comps.size}"
            )
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)

    @property
    def n_dim(self) -> int:
        return self.shape.n_dim

    @property
    def q(self) -> int:
        return self.shape.q

    def value(self, mi: Sequence[int]) -> float:
        """Entry at any (not necessarily sorted) 1-based index tuple."""
        idx = _as_multi_index(mi, self.shape, require_sorted=False)
        return float(self.components[rank_multi_index(sorted(idx), self.shape)])

    def scaled(self, alpha: float) -> SymmetricTensor:
        return SymmetricTensor(self.shape, alpha * self.components)

    @functools.cached_property
    def _row_unfolding(self) -> np.ndarray:
        # (N, binomial(N+q-1, q)) view of C with one index split off
        return self.components[_unfold_index(self.shape)]

    @functools.cached_property
    def _pair_unfolding(self) -> np.ndarray:
        # (N*N, binomial(N+q-2, q-1)) view with two indices split off
        idx = _pair_unfold_index(self.shape)
        return self.components[idx.reshape(self.n_dim**2, -1)]

    # -- constructors -----------------------------------------------------

    @classmethod
    def zeros(cls, shape: TensorShape) -> SymmetricTensor:
        return cls(shape, np.zeros(shape.n_components))

    @classmethod
    def rank_one(cls, v: np.ndarray, q: int, alpha: float = 1.0) -> SymmetricTensor:
        """``alpha * v ⊗ ... ⊗ v`` with ``q+1`` factors."""
        v = np.asarray(v, dtype=np.float64)
        shape = TensorShape(v.size, q)
        rows = multisets(shape.n_dim, shape.order)
        return cls(shape, alpha * np.prod(v[rows], axis=1))

    @classmethod
    def diagonal(cls, d: np.ndarray, q: int) -> SymmetricTensor:
        """Tensor with ``C[i,...,i] = d[i]`` and all other entries zero."""
        d = np.asarray(d, dtype=np.float64)
        shape = TensorShape(d.size, q)
        comps = np.zeros(shape.n_components)
        for i, di in enumerate(d):
            comps[rank_multi_index((i + 1,) * shape.order, shape)] = di
        return cls(shape, comps)

    @classmethod
    def from_dense(cls, dense: np.ndarray, *, check: bool = True, atol: float = 1e-12) -> SymmetricTensor:
        """Pack a dense ``N**(q+1)`` array; with ``check`` it must be symmetric."""
        dense = np.asarray(dense, dtype=np.float64)
        n, order = dense.shape[0], dense.ndim
        if order < 2 or any(s != n for s in dense.shape):
            raise InputError(f"dense array of shape {dense.shape} is not a cubical tensor of order >= 2")
        if check:
            for perm in permutations(range(order)):
                if not np.allclose(dense, dense.transpose(perm), rtol=0.0, atol=atol):
                    raise InputError("dense array is not totally symmetric")
        shape = TensorShape(n, order - 1)
        rows = multisets(n, order)
        return cls(shape, dense[tuple(rows.T)])

    def to_dense(self) -> np.ndarray:
        """Full ``N**(q+1)`` array.  Only sensible for small N."""
        n, order = self.n_dim, self.shape.order
        grids = np.indices((n,) * order).reshape(order, -1).T
        ranks = _colex_ranks(np.sort(grids, axis=1), n)
        return self.components[ranks].reshape((n,) * order)

    def rotated(self, rot: np.ndarray) -> SymmetricTensor:
        """Apply an orthogonal matrix to every index (dense path, small N)."""
        rot = np.asarray(rot, dtype=np.float64)
        out = self.to_dense()
        for axis in range(self.shape.order):
            out = np.moveaxis(np.tensordot(rot, out, axes=([1], [axis])), 0, axis)
        return SymmetricTensor.from_dense(out, check=False)


# ---------------------------------------------------------------------------
# sampling


def _check_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed < 2**64:
        raise InputError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def sample_components(shape: TensorShape, seed: int) -> np.ndarray:
    """Packed components of a Gaussian tensor drawn from ``exp(-|C|^2/2)``.

    Component ``m`` has variance ``1/multiplicity(m)``.  Block ``b`` of
    :data:`SAMPLE_BLOCK` consecutive components draws from its own
    counter-based stream keyed by ``(seed, b)``, so any block can be
    regenerated independently.
    """
    seed = _check_seed(seed)
    total = shape.n_components
    out = np.empty(total)
    for b, start in enumerate(range(0, total, SAMPLE_BLOCK)):
        stop = min(start + SAMPLE_BLOCK, total)
        bitgen = np.random.Philox(np.random.SeedSequence(seed, spawn_key=(b,)))
        out[start:stop] = np.random.Generator(bitgen).standard_normal(stop - start)
    out /= np.sqrt(_tuple_weights(shape.n_dim, shape.order))
    return out


def sample_gaussian(shape: TensorShape, seed: int) -> SymmetricTensor:
    """Draw one tensor from the rotationally invariant Gaussian ensemble."""
    return SymmetricTensor(shape, sample_components(shape, seed))


# ---------------------------------------------------------------------------
# contraction


def _check_vector(C: SymmetricTensor, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != C.n_dim:
        raise InputError(f"vector of shape {x.shape} does not match N={C.n_dim}")
    return x


def apply_map(C: SymmetricTensor, x) -> np.ndarray:
    """``y_i = C[i, i1..iq] x[i1] ... x[iq]`` summed over all q-tuples.

    ``x`` may also be an ``(N, R)`` array, in which case each column is
    mapped independently.
    """
    x = _check_vector(C, x)
    w = _tuple_weights(C.n_dim, C.q)
    mono = _monomials(x, C.n_dim, C.q)
    if x.ndim == 2:
        return C._row_unfolding @ (w[:, None] * mono)
    return C._row_unfolding @ (w * mono)


def map_jacobian(C: SymmetricTensor, x, *, method: str = "auto") -> np.ndarray:
    """Derivative of :func:`apply_map` at ``x`` (an ``N x N`` symmetric matrix).

    ``method="pair"`` contracts a cached two-index unfolding (fast, needs
    ``N^2 binomial(N+q-2, q-1)`` doubles); ``"sparse"`` differentiates the
    monomials of :func:`apply_map` directly.  ``"auto"`` picks ``pair`` when
    it fits :data:`PAIR_UNFOLD_LIMIT`.
    """
    x = _check_vector(C, x)
    if x.ndim != 1:
        raise InputError("map_jacobian takes a single vector")
    n, q = C.n_dim, C.q
    if q == 1:
        return C._row_unfolding.copy()
    if method == "auto":
        method = "pair" if _pair_unfold_size(C.shape) <= PAIR_UNFOLD_LIMIT else "sparse"
    if method == "pair":
        w = _tuple_weights(n, q - 1)
        mono = _monomials(x, n, q - 1)
        return q * (C._pair_unfolding @ (w * mono)).reshape(n, n)
    if method != "sparse":
        raise InputError(f"unknown jacobian method {method!r}")
    rows = multisets(n, q)
    w = _tuple_weights(n, q)
    xs = x[rows]
    # products over all slots but one, via prefix/suffix products
    prefix = np.ones((len(rows), q + 1))
    suffix = np.ones((len(rows), q + 1))
    for a in range(q):
        prefix[:, a + 1] = prefix[:, a] * xs[:, a]
        suffix[:, q - a - 1] = suffix[:, q - a] * xs[:, q - a - 1]
    vals = (w[:, None] * prefix[:, :q] * suffix[:, 1:]).reshape(-1)
    m_idx = np.repeat(np.arange(len(rows)), q)
    deriv = scipy.sparse.csr_matrix((vals, (rows.reshape(-1), m_idx)), shape=(n, len(rows)))
    return np.asarray(deriv @ C._row_unfolding.T).T


# ---------------------------------------------------------------------------
# binary file format


def write_tensor(path: str | Path, C: SymmetricTensor) -> None:
    """Write the ``MELT`` binary format: header then little-endian float64 components."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FILE_MAGIC, FILE_VERSION, C.q, C.n_dim))
        fh.write(C.components.astype("<f8").tobytes())


def read_tensor(path: str | Path) -> SymmetricTensor:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, q, n = _HEADER.unpack_from(data)
    if magic != FILE_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    if version != FILE_VERSION:
        raise InputError(f"{path}: unsupported format version {version}")
    shape = TensorShape(n, q)
    body = data[_HEADER.size:]
    if len(body) != 8 * shape.n_components:
        raise InputError(f"{path}: expected {shape.n_components} components, found {len(body) / 8:g}")
    return SymmetricTensor(shape, np.frombuffer(body, dtype="<f8"))

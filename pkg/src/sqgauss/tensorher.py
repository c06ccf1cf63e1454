"""Symmetric Hermite-moment tensors.

An order-``t`` symmetric tensor over ``R^n`` is stored with one slot per
count vector ``a`` (``a_i >= 0``, ``sum a = t``); the slot value is shared by
all ``t!/n(a)`` index permutations, ``n(a) = prod a_i!``.  Count vectors are
enumerated as sorted index tuples ``i_1 <= ... <= i_t``.

Conventions
-----------
The Hermite-moment tensor of a distribution ``P`` has entries
``E_P[He_a(X)] / sqrt(t!)``.  The polynomial attached to a tensor ``A`` is
``h_A(x) = sum_a (t!/n(a)) A_a He_a(x) / sqrt(t!)``.  With these choices
``E_{N(0,I)}[h_A**2] = |A|_F**2``, ``E_P[h_A] = <A, P_t>`` and
``P_t(v, ..., v) = E_P[He_t(v . X)] / sqrt(t!)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Callable, Optional, Sequence

import numpy as np

from .polybasis import hermite_table
from .sqoracle import GaussianSource, HermiteQuery, SampleSource, SQOracle

__all__ = [
    "SymmetricTensor",
    "TensorSizeError",
    "count_vectors",
    "multivariate_hermite",
    "hermite_products",
    "estimate_hermite_tensor",
    "estimate_hermite_tensors",
    "h_eval",
    "flatten",
    "contract_power",
    "gram_singular_vectors",
]

DENSE_LIMIT = 10**8
CHUNK_ROWS = 4096


class TensorSizeError(MemoryError):
    """A dense materialisation would exceed the entry budget."""


# ---------------------------------------------------------------------------
# count-vector bookkeeping


@dataclass(frozen=True)
class _Level:
    tuples: tuple          # sorted index tuples of this degree
    last: np.ndarray       # largest index j of each tuple
    mult: np.ndarray       # multiplicity r of j in the tuple
    prefix: np.ndarray     # position of the tuple with all copies of j removed
    counts: np.ndarray     # (M, n) count vectors
    weights: np.ndarray    # t!/n(a)


@lru_cache(maxsize=64)
def _levels(n: int, t: int) -> tuple:
    levels = []
    index_maps = []
    for d in range(t + 1):
        tuples = tuple(combinations_with_replacement(range(n), d))
        index_maps.append({tp: i for i, tp in enumerate(tuples)})
        m = len(tuples)
        last = np.zeros(m, dtype=np.intp)
        mult = np.zeros(m, dtype=np.intp)
        prefix = np.zeros(m, dtype=np.intp)
        counts = np.zeros((m, n), dtype=np.intp)
        for i, tp in enumerate(tuples):
            for j in tp:
                counts[i, j] += 1
            if d:
                j = tp[-1]
                r = counts[i, j]
                last[i], mult[i] = j, r
                prefix[i] = index_maps[d - r][tp[: d - r]]
        log_na = np.array([sum(math.lgamma(c + 1) for c in row) for row in counts])
        weights = np.exp(math.lgamma(d + 1) - log_na)
        levels.append(_Level(tuples, last, mult, prefix, counts, np.round(weights)))
    return tuple(levels)


def count_vectors(n: int, t: int) -> np.ndarray:
    """Count vectors of order `t` in the storage order, shape ``(M, n)``."""
    return _levels(n, t)[t].counts


@lru_cache(maxsize=16)
def _dense_slots(n: int, t: int) -> np.ndarray:
    if n**t > DENSE_LIMIT:
        raise TensorSizeError(f"n**t = {n**t} exceeds {DENSE_LIMIT}")
    index = {tp: i for i, tp in enumerate(_levels(n, t)[t].tuples)}
    grid = np.indices((n,) * t).reshape(t, -1).T
    grid.sort(axis=1)
    return np.fromiter((index[tuple(row)] for row in grid), dtype=np.intp, count=grid.shape[0])


# ---------------------------------------------------------------------------
# Hermite products


def multivariate_hermite(a: Sequence[int], x) -> float:
    """``He_a(x) = prod_i He_{a_i}(x_i)``."""
    a = [int(v) for v in a]
    x = np.asarray(x, dtype=float)
    if len(a) != x.shape[-1]:
        raise ValueError("count vector and point dimensions differ")
    out = np.ones(x.shape[:-1])
    for i, ai in enumerate(a):
        if ai:
            out = out * hermite_table(ai, x[..., i])[ai]
    return float(out) if out.ndim == 0 else out


def _products_upto(x: np.ndarray, t: int) -> list:
    """``He_a(x)`` for every count vector of degree ``0..t``; rows are points."""
    n = x.shape[1]
    levels = _levels(n, t)
    table = hermite_table(t, x)  # (t+1, rows, n)
    out = [np.ones((x.shape[0], 1))]
    for d in range(1, t + 1):
        lv = levels[d]
        q = np.empty((x.shape[0], len(lv.tuples)))
        for r in range(1, d + 1):
            sel = np.nonzero(lv.mult == r)[0]
            if sel.size:
                q[:, sel] = out[d - r][:, lv.prefix[sel]] * table[r][:, lv.last[sel]]
        out.append(q)
    return out


def hermite_products(x, t: int) -> np.ndarray:
    """Matrix of ``He_a(x)`` for all order-`t` count vectors, one row per point."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return _products_upto(x, t)[t]


# ---------------------------------------------------------------------------
# the tensor type


@dataclass(frozen=True)
class SymmetricTensor:
    """Order-`order` symmetric tensor on ``R^dim`` with one slot per count vector."""

    order: int
    dim: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).copy()
        expected = math.comb(self.dim + self.order - 1, self.order)
        if vals.shape != (expected,):
            raise ValueError(f"expected {expected} slots, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # construction -----------------------------------------------------
    @classmethod
    def zeros(cls, order: int, dim: int) -> "SymmetricTensor":
        return cls(order, dim, np.zeros(math.comb(dim + order - 1, order)))

    @classmethod
    def outer_power(cls, v, order: int) -> "SymmetricTensor":
        """``v ⊗ ... ⊗ v`` (`order` factors)."""
        v = np.asarray(v, dtype=float)
        counts = count_vectors(v.size, order)
        vals = np.prod(np.power(v[None, :], counts), axis=1)
        return cls(order, v.size, vals)

    @classmethod
    def from_dense(cls, arr) -> "SymmetricTensor":
        """Read the canonical slots of a dense symmetric array."""
        arr = np.asarray(arr, dtype=float)
        t, n = arr.ndim, arr.shape[0]
        tuples = _levels(n, t)[t].tuples
        vals = np.array([arr[tp] for tp in tuples]) if t else np.array([float(arr)])
        return cls(t, n, vals)

    # structure ----------------------------------------------------------
    @property
    def weights(self) -> np.ndarray:
        """Multiplicities ``t!/n(a)``."""
        return _levels(self.dim, self.order)[self.order].weights

    @property
    def counts(self) -> np.ndarray:
        return count_vectors(self.dim, self.order)

    def frobenius(self) -> float:
        return float(math.sqrt(np.dot(self.weights, self.values**2)))

    def dot(self, other: "SymmetricTensor") -> float:
        """Multiplicity-weighted inner product (dense Frobenius inner product)."""
        self._check_same_shape(other)
        return float(np.dot(self.weights, self.values * other.values))

    def scaled(self, c: float) -> "SymmetricTensor":
        return SymmetricTensor(self.order, self.dim, c * self.values)

    def normalized(self) -> "SymmetricTensor":
        norm = self.frobenius()
        if norm == 0:
            raise ZeroDivisionError("cannot normalise the zero tensor")
        return self.scaled(1.0 / norm)

    def __sub__(self, other: "SymmetricTensor") -> "SymmetricTensor":
        self._check_same_shape(other)
        return SymmetricTensor(self.order, self.dim, self.values - other.values)

    def _check_same_shape(self, other):
        if (self.order, self.dim) != (other.order, other.dim):
            raise ValueError("tensor shapes differ")

    def dense(self) -> np.ndarray:
        """Materialise the full ``n**t`` array (guarded at 1e8 entries)."""
        slots = _dense_slots(self.dim, self.order)
        return self.values[slots].reshape((self.dim,) * self.order)

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "dim": self.dim,
            "entries": [
                {"count_vector": c.tolist(), "value": float(v)}
                for c, v in zip(self.counts, self.values)
            ],
        }


def h_eval(a: SymmetricTensor, x) -> np.ndarray:
    """``h_A(x) = sum_a (t!/n(a)) A_a He_a(x) / sqrt(t!)`` for each row of `x`.

    The largest index of each count vector is contracted with a matrix
    product, so only products of degree below ``t`` are materialised.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != a.dim:
        raise ValueError("point dimension does not match the tensor")
    t, n = a.order, a.dim
    lv = _levels(n, t)[t]
    coef = a.weights * a.values / math.sqrt(math.factorial(t))
    mats = {}
    for r in range(1, t + 1):
        sel = lv.mult == r
        if np.any(sel):
            c = np.zeros((len(_levels(n, t)[t - r].tuples), n))
            c[lv.prefix[sel], lv.last[sel]] = coef[sel]
            mats[r] = c.T
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], CHUNK_ROWS):
        block = x[start : start + CHUNK_ROWS]
        prods = _products_upto(block, t - 1)
        table = hermite_table(t, block)
        acc = np.zeros(block.shape[0])
        for r, ct in mats.items():
            acc += np.einsum("ij,ij->i", prods[t - r], table[r] @ ct)
        out[start : start + block.shape[0]] = acc
    return out


def flatten(a: SymmetricTensor) -> np.ndarray:
    """Dense ``n x n**(t-1)`` matrix ``M(A)``."""
    if a.order < 1:
        raise ValueError("flatten needs order >= 1")
    if a.dim**a.order > DENSE_LIMIT:
        raise TensorSizeError(f"n**t = {a.dim ** a.order} exceeds {DENSE_LIMIT}")
    return a.dense().reshape(a.dim, -1)


def contract_power(a: SymmetricTensor, v) -> float:
    """``A(v, ..., v) = sum_a (t!/n(a)) A_a prod_i v_i**a_i``."""
    v = np.asarray(v, dtype=float)
    if v.size != a.dim:
        raise ValueError("vector dimension does not match the tensor")
    mono = np.prod(np.power(v[None, :], a.counts), axis=1)
    return float(np.dot(a.weights * a.values, mono))


def gram_singular_vectors(a: SymmetricTensor) -> tuple[np.ndarray, np.ndarray]:
    """Singular values and n-side singular vectors of ``M(A)``.

    Computed from the eigen-decomposition of the ``n x n`` Gram matrix
    ``M M^T``; returned in decreasing order, vectors as columns.
    """
    m = flatten(a)
    gram = m @ m.T
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    svals = np.sqrt(np.clip(evals[order], 0.0, None))
    return svals, evecs[:, order]


# ---------------------------------------------------------------------------
# estimation


def estimate_hermite_tensors(x, k: int, mask: Optional[np.ndarray] = None) -> list:
    """Empirical Hermite-moment tensors of orders ``1..k`` over accepted rows.

    Parameters
    ----------
    x : ndarray, shape (N, n)
    k : int
        Highest order.
    mask : bool ndarray, optional
        Rows to keep (the conditioning event).

    Returns
    -------
    list of SymmetricTensor
        Element ``t - 1`` holds ``mean(He_a(X)) / sqrt(t!)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if mask is not None:
        x = x[np.asarray(mask, dtype=bool)]
    if x.shape[0] == 0:
        raise ValueError("no accepted samples")
    n = x.shape[1]
    levels = _levels(n, k)
    sums = [np.zeros(len(levels[t].tuples)) for t in range(k + 1)]
    picks = []
    for d in range(1, k + 1):
        lv = levels[d]
        for r in range(1, d + 1):
            sel = np.nonzero(lv.mult == r)[0]
            if sel.size:
                picks.append((d, r, sel, lv.prefix[sel], lv.last[sel]))
    for start in range(0, x.shape[0], CHUNK_ROWS):
        block = x[start : start + CHUNK_ROWS]
        prods = _products_upto(block, k - 1)
        table = hermite_table(k, block)
        for d, r, sel, pre, last in picks:
            # sum over rows of He_prefix(x) * He_r(x_j), for all (prefix, j) at once
            grid = prods[d - r].T @ table[r]
            sums[d][sel] += grid[pre, last]
    return [
        SymmetricTensor(t, n, sums[t] / (x.shape[0] * math.sqrt(math.factorial(t))))
        for t in range(1, k + 1)
    ]


def estimate_hermite_tensor(
    source,
    t: int,
    precision: float = 0.0,
    accept: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    dim: Optional[int] = None,
) -> SymmetricTensor:
    """Hermite-moment tensor of order `t`, from samples or through an oracle.

    Parameters
    ----------
    source : ndarray or SQOracle
        Samples (rows are points) or an oracle over a sample set or an exact
        Gaussian.  Oracle calls are recorded in the oracle's ledger.
    t : int
    precision : float
        Target accuracy; each entry is requested to within
        ``precision * n**(-t/2)``.  Ignored for raw samples.
    accept : callable, optional
        Conditioning predicate (e.g. a filter chain) on points.
    dim : int, optional
        Needed only for oracles over an exact source.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    if isinstance(source, np.ndarray):
        mask = None if accept is None else accept(source)
        return estimate_hermite_tensors(source, t, mask)[t - 1]
    if not isinstance(source, SQOracle):
        raise TypeError("source must be a sample array or an SQOracle")
    if precision <= 0:
        raise ValueError("oracle estimation needs a positive precision")
    src = source.source
    if isinstance(src, SampleSource):
        n = src.samples.shape[1]
    elif isinstance(src, GaussianSource):
        n = src.n
    else:
        n = dim
    if n is None:
        raise ValueError("dimension unknown; pass dim")
    root_tf = math.sqrt(math.factorial(t))
    entry_tol = precision * n ** (-t / 2.0) * root_tf
    counts = count_vectors(n, t)
    vals = np.empty(counts.shape[0])
    for i, a in enumerate(counts):
        exps = tuple(int(c) for c in a)
        scale = _query_scale(src, exps, accept)
        tau = entry_tol / (4.0 * scale)
        if accept is None:
            ans = source.stat(HermiteQuery(exps, scale), tau)
        else:
            ans = source.conditional(
                HermiteQuery(exps, scale), accept, tau, joint=HermiteQuery(exps, scale, accept)
            )
        vals[i] = ans * scale / root_tf
    return SymmetricTensor(t, n, vals)


def _query_scale(src, exps, accept) -> float:
    """Certified bound on ``|He_a|`` over the points the source evaluates."""
    if isinstance(src, SampleSource):
        x = src.samples
        if accept is not None:
            x = x[np.asarray(accept(x), dtype=bool)]
        if x.shape[0] == 0:
            return 1.0
        return max(1.0, float(np.max(np.abs(multivariate_hermite(exps, x)))))
    return 1.0

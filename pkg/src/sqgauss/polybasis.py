"""Orthogonal polynomial kernel.

Probabilists' Hermite polynomials, Gauss-Hermite quadrature against the
standard normal weight, and Legendre polynomials.  Everything is evaluated
through three-term recurrences so that high degrees never touch expanded
monomial coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "QuadratureRule",
    "QuadratureError",
    "hermite_eval",
    "hermite_table",
    "normalized_hermite_table",
    "hermite_quadrature",
    "legendre_eval",
    "legendre_table",
    "legendre_monomial_integral",
    "gaussian_raw_moment",
]


class QuadratureError(RuntimeError):
    """Raised when the Hermite root refinement fails to converge."""


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the standard normal weight.

    Attributes
    ----------
    nodes : ndarray
        Strictly increasing abscissae.
    weights : ndarray
        Non-negative weights summing to one.
    nodes_ext, weights_ext : ndarray, optional
        The same rule in ``numpy.longdouble``; :meth:`moment` uses them
        when present so that large even moments round to the exact
        integer.  Where ``longdouble`` is plain double precision they add
        nothing.
    """

    nodes: np.ndarray
    weights: np.ndarray
    nodes_ext: np.ndarray | None = field(default=None, repr=False, compare=False)
    weights_ext: np.ndarray | None = field(default=None, repr=False, compare=False)

    def integrate(self, f) -> float:
        """Apply the rule to a vectorised callable.

        The weighted terms are summed with :func:`math.fsum`, so exact
        cancellations (odd integrands on the symmetric rule) stay exact.
        """
        return math.fsum(self.weights * np.asarray(f(self.nodes), dtype=float))

    def moment(self, j: int) -> float:
        """``sum_i w_i x_i**j``."""
        x = self.nodes if self.nodes_ext is None else self.nodes_ext
        w = self.weights if self.weights_ext is None else self.weights_ext
        if j % 2 and np.array_equal(x, -x[::-1]):
            return 0.0
        # the powers are non-negative for even j; sum smallest terms first
        terms = np.sort(w * x**j)
        total = terms.dtype.type(0)
        for term in terms:
            total += term
        return float(total)


def hermite_table(kmax: int, x: ArrayLike) -> np.ndarray:
    """Return ``He_0(x), ..., He_kmax(x)`` stacked along the first axis.

    Parameters
    ----------
    kmax : int
        Highest degree, ``kmax >= 0``.
    x : array_like
        Evaluation points of any shape.

    Returns
    -------
    ndarray
        Array of shape ``(kmax + 1,) + np.shape(x)``.
    """
    if kmax < 0:
        raise ValueError("kmax must be non-negative")
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for i in range(1, kmax):
        out[i + 1] = x * out[i] - i * out[i - 1]
    return out


def normalized_hermite_table(kmax: int, x: ArrayLike) -> np.ndarray:
    """Return ``He_i(x) / sqrt(i!)`` for ``i = 0..kmax``.

    Uses the normalised recurrence, which stays in floating range for
    degrees in the thousands.
    """
    if kmax < 0:
        raise ValueError("kmax must be non-negative")
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for i in range(1, kmax):
        out[i + 1] = (x * out[i] - math.sqrt(i) * out[i - 1]) / math.sqrt(i + 1)
    return out


def hermite_eval(i: int, x: ArrayLike):
    """Evaluate the probabilists' Hermite polynomial ``He_i``.

    Parameters
    ----------
    i : int
        Degree, ``i >= 0``.
    x : float or array_like
        Evaluation point(s).

    Returns
    -------
    float or ndarray
        ``He_i(x)`` with the same shape as `x`.

    Examples
    --------
    >>> hermite_eval(3, 2.0)
    2.0
    """
    if i < 0:
        raise ValueError("degree must be non-negative")
    x_arr = np.asarray(x, dtype=float)
    prev = np.ones_like(x_arr)
    if i == 0:
        return _scalarize(prev, x)
    cur = x_arr.copy()
    for j in range(1, i):
        prev, cur = cur, x_arr * cur - j * prev
    return _scalarize(cur, x)


def _scalarize(value: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def hermite_quadrature(k: int) -> QuadratureRule:
    """Gauss-Hermite rule with `k` nodes for the N(0, 1) weight.

    Nodes are the roots of ``He_k``, obtained as eigenvalues of the
    symmetric Jacobi matrix (zero diagonal, off-diagonal ``sqrt(i)``) and
    refined with one Newton step.  Weights use
    ``k! / (k**2 * He_{k-1}(x)**2)``, evaluated in log space.

    Parameters
    ----------
    k : int
        Number of nodes, ``1 <= k <= 64``.

    Returns
    -------
    QuadratureRule
        Rule exact for polynomials of degree ``<= 2k - 1``.

    Raises
    ------
    QuadratureError
        If the Newton correction after polishing exceeds ``1e-12``.
    """
    if not 1 <= k <= 64:
        raise ValueError("k must lie in [1, 64]")
    if k == 1:
        return QuadratureRule(np.array([0.0]), np.array([1.0]))
    off = np.sqrt(np.arange(1, k, dtype=float))
    nodes = eigh_tridiagonal(np.zeros(k), off, eigvals_only=True)
    nodes = np.sort(nodes)

    def newton_step(x):
        table = hermite_table(k, x)
        return table[k] / (k * table[k - 1])

    nodes = nodes - newton_step(nodes)
    residual = np.abs(newton_step(nodes))
    if np.any(residual > 1e-12 * np.maximum(1.0, np.abs(nodes))):
        raise QuadratureError(
            f"Hermite root refinement did not converge (max step {residual.max():.3e})"
        )
    # Symmetrise: roots of He_k are symmetric about zero.
    nodes = 0.5 * (nodes - nodes[::-1])
    he_km1 = hermite_table(k - 1, nodes)[k - 1]
    log_w = math.lgamma(k + 1) - 2.0 * math.log(k) - 2.0 * np.log(np.abs(he_km1))
    weights = np.exp(log_w)
    if not np.all(np.diff(nodes) > 0):
        raise QuadratureError("quadrature nodes are not strictly increasing")
    nodes_ext, weights_ext = _extended_rule(nodes, k)
    if np.finfo(np.longdouble).eps < np.finfo(float).eps:
        nodes, weights = nodes_ext.astype(float), weights_ext.astype(float)
    return QuadratureRule(nodes=nodes, weights=weights, nodes_ext=nodes_ext, weights_ext=weights_ext)


def _hermite_pair_ext(k: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``He_{k-1}(x)`` and ``He_k(x)`` in the precision of `x`."""
    prev, cur = np.ones_like(x), x.copy()
    for j in range(1, k):
        prev, cur = cur, x * cur - j * prev
    return prev, cur


def _extended_rule(nodes: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Newton-polish the nodes and recompute the weights in ``longdouble``."""
    x = nodes.astype(np.longdouble)
    for _ in range(3):
        he_km1, he_k = _hermite_pair_ext(k, x)
        x = x - he_k / (k * he_km1)
    x = (x - x[::-1]) / 2
    he_km1, _ = _hermite_pair_ext(k, x)
    kfact = np.longdouble(1)
    for j in range(2, k + 1):
        kfact *= j
    w = kfact / (np.longdouble(k) ** 2 * he_km1**2)
    return x, w


def legendre_table(kmax: int, x: ArrayLike) -> np.ndarray:
    """Return ``P_0(x), ..., P_kmax(x)`` via Bonnet's recurrence."""
    if kmax < 0:
        raise ValueError("kmax must be non-negative")
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = x
    for j in range(1, kmax):
        out[j + 1] = ((2 * j + 1) * x * out[j] - j * out[j - 1]) / (j + 1)
    return out


def legendre_eval(k: int, x: ArrayLike):
    """Evaluate the Legendre polynomial ``P_k``.

    Examples
    --------
    >>> legendre_eval(2, 0.0)
    -0.5
    """
    if k < 0:
        raise ValueError("degree must be non-negative")
    return _scalarize(legendre_table(k, x)[k], x)


def legendre_monomial_integral(t: int, j: int) -> float:
    """Exact value of the integral of ``u**t * P_j(u)`` over [-1, 1].

    Zero unless ``t >= j`` and ``t - j`` is even, in which case it equals
    ``2**(j+1) t! ((t+j)/2)! / (((t-j)/2)! (t+j+1)!)``.
    """
    if t < j or (t - j) % 2:
        return 0.0
    num = 2 ** (j + 1) * math.factorial(t) * math.factorial((t + j) // 2)
    den = math.factorial((t - j) // 2) * math.factorial(t + j + 1)
    return num / den


def gaussian_raw_moment(t: int, mean: float = 0.0, variance: float = 1.0) -> float:
    """Raw moment ``E[X**t]`` for ``X ~ N(mean, variance)``.

    Uses ``m_t = mean * m_{t-1} + (t - 1) * variance * m_{t-2}``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    m_prev, m_cur = 0.0, 1.0
    for s in range(1, t + 1):
        m_prev, m_cur = m_cur, mean * m_cur + (s - 1) * variance * m_prev
    return m_cur

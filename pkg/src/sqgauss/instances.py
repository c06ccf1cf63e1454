"""Hard instances and hidden-direction distributions.

Every one-dimensional instance here agrees with N(0, 1) on a block of low
moments while differing from the standard Gaussian in some other respect
(narrow components, a mean shift, a variance shift, heavy outlying mass).
Embedding such a density along a hidden unit direction gives the
high-dimensional distributions used by the learners and testers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from . import oned
from .oned import Gaussian1D, Mixture1D, PerturbedGaussian1D, Univariate
from .polybasis import gaussian_raw_moment, hermite_quadrature, legendre_table

__all__ = [
    "HiddenDirectionDistribution",
    "DirectionPack",
    "InfeasiblePackError",
    "InstanceError",
    "gmm_delta",
    "gmm_hard_instance",
    "robust_mean_instance",
    "robust_cov_instance",
    "cov_tradeoff_instance",
    "sparse_mean_instance",
    "hidden_direction_sample",
    "hidden_direction_log_ratio",
    "monte_carlo_tv",
    "direction_pack",
    "standard_basis_pack",
    "moment_residuals",
]

MOMENT_TOL = 1e-8


class InstanceError(ValueError):
    """An instance failed one of its certificates."""


class InfeasiblePackError(RuntimeError):
    """The rejection sampler for a direction pack gave up."""


# ---------------------------------------------------------------------------
# one-dimensional instances


def moment_residuals(d, m: int) -> np.ndarray:
    """``moment(d, t) - E[Z**t]`` for ``t = 1..m``."""
    return np.array([oned.moment(d, t) - gaussian_raw_moment(t) for t in range(1, m + 1)])


def gmm_delta(k: int, eps: float, c_delta: float = 1.0) -> float:
    """Common component variance ``c_delta / (k**2 ln(k + 1/eps)**2)``."""
    return c_delta / (k * k * math.log(k + 1.0 / eps) ** 2)


def gmm_hard_instance(k: int, eps: float, c_delta: float = 1.0) -> Mixture1D:
    """Parallel-pancakes mixture matching ``2k - 1`` Gaussian moments.

    Components sit at ``sqrt(1 - delta) * x_i`` with Gauss-Hermite nodes
    ``x_i`` and weights ``w_i``, all with variance ``delta``.

    Parameters
    ----------
    k : int
        Number of components, ``2 <= k <= 10``.
    eps : float
        Target separation: each pair of components has TV at least ``1 - eps``.
    c_delta : float, default 1.0

    Raises
    ------
    InstanceError
        If some pair of components overlaps by more than `eps`.
    """
    if not 2 <= k <= 10:
        raise ValueError("k must lie in [2, 10]")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    delta = gmm_delta(k, eps, c_delta)
    rule = hermite_quadrature(k)
    scale = math.sqrt(1.0 - delta)
    comps = tuple((float(w), Gaussian1D(scale * float(x), delta)) for x, w in zip(rule.nodes, rule.weights))
    # renormalise the last few ulps so the mixture invariant holds exactly
    total = sum(w for w, _ in comps)
    comps = tuple((w / total, g) for w, g in comps)
    gap = scale * float(np.min(np.diff(rule.nodes)))
    # equal-variance Gaussians: TV = 2 Phi(gap / (2 sigma)) - 1
    tv = 2.0 * special.ndtr(gap / (2.0 * math.sqrt(delta))) - 1.0
    if tv < 1.0 - eps:
        raise InstanceError(f"component TV {tv:.6f} < 1 - eps; c_delta too large")
    return Mixture1D(comps)


def _legendre_coefficients(target_minus_base, half_width: float, m: int, radius: float) -> np.ndarray:
    """``a_j = (2j+1)/(2C) * int_R f(x) P_j(x/C) dx`` for ``j = 0..m``."""
    c = half_width
    coeffs = np.empty(m + 1)
    for j in range(m + 1):
        def integrand(x, j=j):
            return target_minus_base(x) * legendre_table(j, x / c)[j]

        val = oned.integrate(integrand, -radius, radius, breakpoints=(-c, c), tol=1e-15)
        coeffs[j] = (2 * j + 1) / (2.0 * c) * val
    return coeffs


def _certify_perturbed(d: PerturbedGaussian1D, m: int, grid_points: int) -> None:
    low = d.min_on_grid(grid_points)
    if low < 0:
        raise InstanceError(f"density negative on the grid (min {low:.3e})")
    res = np.max(np.abs(moment_residuals(d, m))) if m else 0.0
    if res > MOMENT_TOL:
        raise InstanceError(f"moment residual {res:.3e} exceeds {MOMENT_TOL}")


def robust_mean_instance(delta: float, m: int, grid_points: int = 100_001) -> PerturbedGaussian1D:
    """Mean-shifted Gaussian corrected to match ``m`` moments of N(0, 1).

    The base is ``N(delta, 1)``; the correction is the unique polynomial of
    degree ``m`` on ``[-C, C]``, ``C = sqrt(ln(1/delta)) - delta``, that
    restores moments ``1..m``.

    Parameters
    ----------
    delta : float
        Mean shift in ``[0, 0.05)``.  ``delta = 0`` yields N(0, 1).
    m : int
        Number of matched moments, ``m >= 1``.
    grid_points : int
        Size of the non-negativity grid.

    Raises
    ------
    InstanceError
        If the density is negative on the grid or a moment residual
        exceeds ``1e-8``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0 <= delta < 0.05:
        raise ValueError("delta must lie in [0, 0.05)")
    if delta == 0:
        return PerturbedGaussian1D(Gaussian1D(0.0, 1.0), (0.0,) * (m + 1), 1.0, 1)
    log_term = math.log(1.0 / delta)
    if m * m > math.sqrt(log_term):
        warnings.warn(
            f"m={m} exceeds the comfortable range m**2 <= sqrt(ln(1/delta)); "
            "relying on the numerical certificate",
            stacklevel=2,
        )
    c = math.sqrt(log_term) - delta
    g0 = Gaussian1D(0.0, 1.0)
    base = Gaussian1D(delta, 1.0)

    def diff(x):
        return g0.pdf(x) - base.pdf(x)

    coeffs = _legendre_coefficients(diff, c, m, oned.integration_radius(base))
    coeffs[0] = 0.0 if abs(coeffs[0]) < 1e-15 else coeffs[0]
    d = PerturbedGaussian1D(base, tuple(coeffs), c, 1, validate=False)
    _certify_perturbed(d, m, grid_points)
    return PerturbedGaussian1D(base, tuple(coeffs), c, 1, validate=True)


def robust_cov_instance(
    delta: float, m: int, half_width_factor: float = 0.5, grid_points: int = 100_001
) -> PerturbedGaussian1D:
    """Variance-shrunk Gaussian corrected to match ``m`` moments of N(0, 1).

    The base is ``N(0, (1 - delta)**2)``; the stored coefficients describe
    the polynomial that is *subtracted* on ``[-C, C]``,
    ``C = half_width_factor * sqrt(ln(1/delta))``.  Odd coefficients vanish
    by symmetry and are set to zero exactly.

    Raises
    ------
    InstanceError
        As for :func:`robust_mean_instance`.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if not 0 <= delta < 1.0 / 3.0:
        raise ValueError("delta must lie in [0, 1/3)")
    if delta == 0:
        return PerturbedGaussian1D(Gaussian1D(0.0, 1.0), (0.0,) * (m + 1), 1.0, -1)
    c = half_width_factor * math.sqrt(math.log(1.0 / delta))
    g0 = Gaussian1D(0.0, 1.0)
    base = Gaussian1D(0.0, (1.0 - delta) ** 2)

    def diff(x):
        # the subtracted polynomial carries the moments of base - G
        return base.pdf(x) - g0.pdf(x)

    coeffs = _legendre_coefficients(diff, c, m, oned.integration_radius(base, g0))
    coeffs[1::2] = 0.0
    d = PerturbedGaussian1D(base, tuple(coeffs), c, -1, validate=False)
    _certify_perturbed(d, m, grid_points)
    return PerturbedGaussian1D(base, tuple(coeffs), c, -1, validate=True)


def cov_tradeoff_instance(eps: float) -> Mixture1D:
    """Three-Gaussian mixture with variance one but a narrow core.

    ``(1-eps) N(0, (1/5 - eps)/(1 - eps)) + eps/2 N(+-sqrt(4/(5 eps)), 1)``.
    """
    if not 0 < eps < 0.19:
        raise ValueError("eps must lie in (0, 0.19)")
    core = Gaussian1D(0.0, (0.2 - eps) / (1.0 - eps))
    shift = math.sqrt(4.0 / (5.0 * eps))
    return Mixture1D(
        (
            (1.0 - eps, core),
            (eps / 2.0, Gaussian1D(shift, 1.0)),
            (eps / 2.0, Gaussian1D(-shift, 1.0)),
        )
    )


def sparse_mean_instance(eps: float, delta: float) -> Mixture1D:
    """Zero-mean two-component mixture ``(1-delta) N(eps,1) + delta N(-(1-delta) eps/delta, 1)``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not 0 < delta <= eps:
        raise ValueError("delta must lie in (0, eps]")
    far = -(1.0 - delta) * eps / delta
    return Mixture1D(((1.0 - delta, Gaussian1D(eps, 1.0)), (delta, Gaussian1D(far, 1.0))))


# ---------------------------------------------------------------------------
# high-dimensional embedding


@dataclass(frozen=True)
class HiddenDirectionDistribution:
    """Law of ``s v + g_perp`` with ``s ~ a`` and ``g_perp`` Gaussian on ``v``'s complement."""

    a: Univariate
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).copy()
        if v.ndim != 1:
            raise ValueError("v must be a vector")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("v must be a unit vector")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "a", oned.as_univariate(self.a))

    @property
    def n(self) -> int:
        return self.v.size

    @classmethod
    def random(cls, a, n: int, rng: np.random.Generator) -> "HiddenDirectionDistribution":
        """Uniformly random hidden direction."""
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        return cls(a, v)


def hidden_direction_sample(h: HiddenDirectionDistribution, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw a ``count x n`` sample from the hidden-direction distribution."""
    s = oned.sample(h.a, rng, count)
    g = rng.standard_normal((count, h.n))
    g -= np.outer(g @ h.v, h.v)
    return g + np.outer(s, h.v)


def hidden_direction_log_ratio(h: HiddenDirectionDistribution, x: np.ndarray) -> np.ndarray:
    """``log(P_v(x) / N(0, I)(x))`` = ``log A(v.x) - log G(v.x)``."""
    s = np.asarray(x, dtype=float) @ h.v
    with np.errstate(divide="ignore"):
        log_a = np.log(oned.pdf(h.a, s))
    return log_a + 0.5 * s * s + 0.5 * math.log(2.0 * math.pi)


def monte_carlo_tv(
    h1: HiddenDirectionDistribution,
    h2: HiddenDirectionDistribution,
    rng: np.random.Generator,
    count: int = 10_000,
) -> float:
    """Estimate ``TV(P1, P2) = E_{P1}[max(0, 1 - P2/P1)]`` by sampling."""
    x = hidden_direction_sample(h1, rng, count)
    log_r = hidden_direction_log_ratio(h2, x) - hidden_direction_log_ratio(h1, x)
    return float(np.mean(np.maximum(0.0, 1.0 - np.exp(np.minimum(log_r, 50.0)))))


# ---------------------------------------------------------------------------
# direction packs


@dataclass(frozen=True)
class DirectionPack:
    """Unit vectors with a certified bound on pairwise inner products."""

    vectors: np.ndarray
    max_inner: float
    sparsity: Optional[int] = None

    def __post_init__(self):
        vecs = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "vectors", vecs)
        if np.any(np.abs(np.linalg.norm(vecs, axis=1) - 1.0) > 1e-12):
            raise ValueError("pack vectors must be unit-norm")
        if self.actual_max_inner() > self.max_inner + 1e-12:
            raise ValueError("pack violates its inner-product bound")
        if self.sparsity is not None and np.any(np.count_nonzero(vecs, axis=1) > self.sparsity):
            raise ValueError("pack violates its sparsity bound")

    def actual_max_inner(self) -> float:
        vecs = self.vectors
        if len(vecs) < 2:
            return 0.0
        gram = np.abs(vecs @ vecs.T)
        np.fill_diagonal(gram, 0.0)
        return float(gram.max())


def standard_basis_pack(n: int) -> DirectionPack:
    return DirectionPack(np.eye(n), 0.0, sparsity=1)


def direction_pack(
    n: int,
    count: int,
    max_inner: float,
    rng: np.random.Generator,
    sparsity: Optional[int] = None,
) -> DirectionPack:
    """Greedy rejection sampling of nearly orthogonal unit vectors.

    Candidates are uniform on the sphere, or, with ``sparsity=k``, uniform
    among vectors with exactly ``k`` coordinates equal to ``1/sqrt(k)``.

    Raises
    ------
    InfeasiblePackError
        After ``100 * count`` consecutive rejections.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if sparsity is not None and not 1 <= sparsity <= n:
        raise ValueError("sparsity must lie in [1, n]")
    accepted = np.empty((count, n))
    filled = 0
    misses = 0
    while filled < count:
        if sparsity is None:
            cand = rng.standard_normal(n)
            cand /= np.linalg.norm(cand)
        else:
            cand = np.zeros(n)
            cand[rng.choice(n, size=sparsity, replace=False)] = 1.0 / math.sqrt(sparsity)
        if filled and np.max(np.abs(accepted[:filled] @ cand)) > max_inner:
            misses += 1
            if misses >= 100 * count:
                raise InfeasiblePackError(
                    f"gave up after {misses} consecutive rejections with {filled} vectors"
                )
            continue
        accepted[filled] = cand
        filled += 1
        misses = 0
    pack_bound = DirectionPack(accepted, max_inner, sparsity).actual_max_inner()
    return DirectionPack(accepted, max(pack_bound, 0.0), sparsity)

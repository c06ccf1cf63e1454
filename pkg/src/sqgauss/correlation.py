"""Correlation and sample-complexity bounds, evaluated numerically.

The correlation between two hidden-direction distributions that share the
univariate law ``A`` depends only on the angle between their directions and
is a power series in ``cos(theta)`` with the squared Hermite coefficients
of ``A`` as weights.  This module evaluates that series, checks it against
the moment-matching bound, reports the generic statistical-query bound and
evaluates the Beta series behind the testing lower bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from . import oned
from .oned import HermiteExpansion
from .polybasis import gaussian_raw_moment

__all__ = [
    "TruncationError",
    "SqBoundReport",
    "CorrelationCheck",
    "pairwise_correlation",
    "expansion_with_tail",
    "correlation_bound_check",
    "sparse_correlation_bound",
    "sq_bound_report",
    "testing_chi2_series",
    "testing_chi2_series_log",
    "testing_tv_bound",
    "testing_sample_boundary",
    "angle_density",
]

TAIL_TOL = 1e-10


class TruncationError(ValueError):
    """The Hermite series was truncated too early for the requested accuracy."""


def pairwise_correlation(e: HermiteExpansion, cos_theta: float, chi2: float | None = None) -> float:
    """Correlation ``sum_{i>=1} a_i**2 cos(theta)**i`` of two hidden directions.

    Parameters
    ----------
    e : HermiteExpansion
        Expansion of the shared univariate law.
    cos_theta : float
        Inner product of the two unit directions.
    chi2 : float, optional
        Exact ``chi2(A, N(0, 1))``.  When given, the omitted tail
        ``sum_{i > max_i} a_i**2 |cos|**i``, which is at most
        ``|cos|**(max_i + 1) * (chi2 - sum_{i <= max_i} a_i**2)``, must stay
        below ``1e-10``.

    Raises
    ------
    TruncationError
        If the tail bound exceeds ``1e-10``.
    """
    if not -1.0 <= cos_theta <= 1.0:
        raise ValueError("cos_theta must lie in [-1, 1]")
    a2 = e.coeffs[1:] ** 2
    if chi2 is not None:
        tail = abs(cos_theta) ** (e.max_i + 1) * max(0.0, chi2 - float(a2.sum()))
        if tail > TAIL_TOL:
            raise TruncationError(
                f"series tail bound {tail:.3e} exceeds {TAIL_TOL:g}; raise max_i"
            )
    powers = np.power(float(cos_theta), np.arange(1, e.max_i + 1))
    return float(np.dot(a2, powers))


def expansion_with_tail(d, tol: float = 1e-12, start: int = 40, cap: int | None = None):
    """Hermite expansion long enough that the Parseval tail is below `tol`.

    The default cap is 8192 terms for mixtures and 2048 for perturbed
    densities, whose coefficients decay only polynomially because the
    correction jumps at the interval ends.

    Returns
    -------
    (HermiteExpansion, float)
        The expansion and ``chi2_vs_standard(d)``.  If the cap is reached the
        expansion at the cap is returned; callers see the remaining tail
        through :func:`pairwise_correlation`'s check.
    """
    d = oned.as_univariate(d)
    if cap is None:
        cap = 8192 if isinstance(d, oned.Mixture1D) else 2048
    chi2 = oned.chi2_vs_standard(d)
    max_i = min(start, cap)
    while True:
        e = oned.hermite_expansion(d, max_i)
        if chi2 - e.chi2_partial() <= tol or max_i >= cap:
            return e, chi2
        max_i = min(cap, 2 * max_i)


@dataclass(frozen=True)
class CorrelationCheck:
    """Outcome of :func:`correlation_bound_check`."""

    m: int
    trials: int
    chi2: float
    max_ratio: float
    max_excess: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0 + 1e-6


def correlation_bound_check(a, m: int, trials: int, rng: np.random.Generator) -> CorrelationCheck:
    """Compare the correlation with ``|cos|**(m+1) chi2`` at random angles.

    ``max_excess`` is the largest value of
    ``sum_{i>m} a_i**2 cos**i - |cos|**(m+1) chi2``; the moment-matching
    bound says it is never positive.
    """
    res = np.array([oned.moment(a, t) - gaussian_raw_moment(t) for t in range(1, m + 1)])
    if m and np.max(np.abs(res)) > 1e-8:
        raise ValueError(f"distribution does not match {m} moments (residual {np.max(np.abs(res)):.2e})")
    e, chi2 = expansion_with_tail(a)
    a2 = e.coeffs ** 2
    cos = rng.uniform(-1.0, 1.0, size=trials)
    idx = np.arange(e.max_i + 1)
    powers = np.power(cos[:, None], idx[None, :])
    high = powers[:, m + 1 :] @ a2[m + 1 :]
    full = powers[:, 1:] @ a2[1:]
    bound = np.abs(cos) ** (m + 1) * chi2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, np.abs(full) / bound, 0.0)
    return CorrelationCheck(
        m=m,
        trials=trials,
        chi2=chi2,
        max_ratio=float(np.max(ratio)) if trials else 0.0,
        max_excess=float(np.max(high - bound)) if trials else 0.0,
    )


def sparse_correlation_bound(eps: float, delta: float, cos_theta: float) -> float:
    """``exp(eps**4 cos**2 / delta**4)`` for the sparse-mean instance.

    Returns ``inf`` when the exponent overflows a double.
    """
    exponent = eps**4 * cos_theta**2 / delta**4
    return math.exp(exponent) if exponent < 709.0 else math.inf


@dataclass(frozen=True)
class SqBoundReport:
    """Generic statistical-query bound with every hidden constant set to one.

    The numbers are indicative only and are not certified.
    """

    n: int
    m: int
    c: float
    query_floor: float
    stat_tolerance: float
    vstat_size: float
    chi2: float
    certified: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def sq_bound_report(a, n: int, m: int, c: float) -> SqBoundReport:
    """Evaluate the generic SQ lower bound formulas for a matched law.

    ``query_floor`` is the natural log ``n**(c/2) ln 2`` of the query
    count ``2**(n**(c/2))``;
    ``stat_tolerance = n**(-(m+1)(1/4 - c/2)) sqrt(chi2)`` and
    ``vstat_size = n**((m+1)(1/2 - c)) / chi2``.
    """
    if not 0 < c < 0.5:
        raise ValueError("c must lie in (0, 1/2)")
    if n < 1 or m < 0:
        raise ValueError("n must be positive and m non-negative")
    chi2 = oned.chi2_vs_standard(a)
    floor = float(n) ** (c / 2.0) * math.log(2.0)
    tol = float(n) ** (-(m + 1) * (0.25 - c / 2.0)) * math.sqrt(chi2)
    size = float(n) ** ((m + 1) * (0.5 - c)) / chi2 if chi2 > 0 else math.inf
    return SqBoundReport(n=n, m=m, c=c, query_floor=floor, stat_tolerance=tol, vstat_size=size, chi2=chi2)


def testing_chi2_series_log(n: int, samples_n: int, chi2: float) -> float:
    """Natural log of ``sum_{i=0}^N b_i`` (see :func:`testing_chi2_series`)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 <= samples_n <= 10**6:
        raise ValueError("samples_n must lie in [0, 1e6]")
    if chi2 < 0:
        raise ValueError("chi2 must be non-negative")
    if samples_n == 0 or chi2 == 0:
        return 0.0
    i = np.arange(samples_n, dtype=float)
    log_ratio = (
        math.log(chi2)
        + np.log(samples_n - i)
        - np.log(i + n / 2.0)
        + np.log(i + 0.5)
        - np.log(i + 1.0)
    )
    log_b = np.concatenate(([0.0], np.cumsum(log_ratio)))
    return float(special.logsumexp(log_b))


def testing_chi2_series(n: int, samples_n: int, chi2: float) -> float:
    """Beta series bounding ``1 + chi2`` between N-sample product laws.

    ``b_0 = 1`` and
    ``b_{i+1}/b_i = chi2 (N - i)/(i + n/2) (i + 1/2)/(i + 1)``.
    The sum is accumulated in log space; the result is ``inf`` only if it
    exceeds the floating range.

    Examples
    --------
    >>> testing_chi2_series(200, 100, 0.25) <= 4 / 3
    True
    """
    log_s = testing_chi2_series_log(n, samples_n, chi2)
    return math.exp(log_s) if log_s < 709.0 else math.inf


def testing_tv_bound(series_value: float) -> float:
    """TV bound ``sqrt((S - 1)/4)`` implied by ``4 TV**2 + 1 <= S``."""
    return math.sqrt(max(0.0, series_value - 1.0) / 4.0)


def testing_sample_boundary(n: int, chi2: float) -> float:
    """Sample size ``n / (8 chi2)`` below which the series stays under 4/3."""
    return n / (8.0 * chi2)


def angle_density(n: int, theta):
    """Density of the angle between two independent uniform unit vectors.

    ``sin(theta)**(n-2) / B((n-1)/2, 1/2)`` on ``[0, pi]``; the Beta
    function is evaluated through log-gamma.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    th = np.asarray(theta, dtype=float)
    if np.any((th < 0) | (th > math.pi)):
        raise ValueError("theta must lie in [0, pi]")
    log_beta = special.betaln((n - 1) / 2.0, 0.5)
    if n == 2:
        out = np.full_like(th, math.exp(-log_beta))
    else:
        s = np.abs(np.sin(th))
        with np.errstate(divide="ignore"):
            out = np.exp((n - 2) * np.log(s) - log_beta)
    return float(out) if np.ndim(theta) == 0 else out

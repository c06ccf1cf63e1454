"""Statistical query oracle simulators.

An oracle answers queries ``E[f(X)]`` for bounded ``f`` up to a tolerance.
The *truth* comes from a source: a fixed sample set (empirical mean), an
exact univariate law (numerical integration) or an exact Gaussian / hidden
direction law for structured queries.  A policy then decides where inside
the tolerance band the answer lands, and every call is recorded in a
ledger.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from scipy import special, stats

from . import oned
from .polybasis import hermite_table
from .instances import HiddenDirectionDistribution

__all__ = [
    "QueryRangeError",
    "UnsupportedQueryError",
    "ConditioningError",
    "QueryRecord",
    "QueryLedger",
    "OraclePolicy",
    "HONEST",
    "SampleSource",
    "UnivariateSource",
    "GaussianSource",
    "HiddenDirectionSource",
    "ProjectionQuery",
    "ThresholdQuery",
    "BallMonomialQuery",
    "BallQuery",
    "HermiteQuery",
    "stat_query",
    "vstat_query",
    "vstat_tolerance",
    "conditional_expectation",
    "SQOracle",
    "gaussian_monomial_moment",
]

RANGE_SLACK = 1e-12


class QueryRangeError(ValueError):
    """A query function left its declared range."""


class UnsupportedQueryError(NotImplementedError):
    """An exact source cannot evaluate this query in closed form."""


class ConditioningError(ArithmeticError):
    """The conditioning event of a ratio query has probability below one half."""


# ---------------------------------------------------------------------------
# ledger and policy


@dataclass(frozen=True)
class QueryRecord:
    kind: str
    tolerance: float
    answer: float
    truth: Optional[float]


@dataclass
class QueryLedger:
    """Append-only record of oracle calls."""

    records: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.records)

    def append(self, record: QueryRecord) -> None:
        self.records.append(record)

    def to_json(self) -> dict:
        return {"count": self.count, "records": [asdict(r) for r in self.records]}


@dataclass(frozen=True)
class OraclePolicy:
    """Where inside the tolerance band an answer is placed.

    Parameters
    ----------
    mode : {"honest", "fixed_offset", "worst_case"}
        ``honest`` returns the truth; ``fixed_offset`` returns
        ``truth + sign * tau``; ``worst_case`` moves as close to `target`
        as the band allows.
    sign : {+1, -1}
        Offset direction for ``fixed_offset``.
    target : float
        Target value for ``worst_case``.
    """

    mode: str = "honest"
    sign: int = 1
    target: float = 0.0

    def __post_init__(self):
        if self.mode not in ("honest", "fixed_offset", "worst_case"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def answer(self, truth: float, tau: float) -> float:
        if self.mode == "honest":
            raw = truth
        elif self.mode == "fixed_offset":
            raw = truth + self.sign * tau
        else:
            raw = self.target
        return float(min(truth + tau, max(truth - tau, raw)))


HONEST = OraclePolicy()


# ---------------------------------------------------------------------------
# structured queries


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


@dataclass(frozen=True)
class ProjectionQuery:
    """``f(x) = g(w . x)`` for a unit vector ``w`` (or scalar data if ``w`` is None)."""

    g: Callable[[np.ndarray], np.ndarray]
    w: Optional[np.ndarray] = None
    breakpoints: tuple = ()

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.w is None:
            return x if x.ndim == 1 else x[:, 0]
        return _as_2d(x) @ np.asarray(self.w, dtype=float)

    def __call__(self, x):
        return self.g(self.project(x))


@dataclass(frozen=True)
class ThresholdQuery:
    """Indicator of ``x_i <= thr`` (``upper=False``) or ``x_i >= thr`` (``upper=True``)."""

    index: Optional[int]
    threshold: float
    upper: bool = False

    @property
    def breakpoints(self) -> tuple:
        return (self.threshold,)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        col = x if (self.index is None and x.ndim == 1) else _as_2d(x)[:, self.index or 0]
        hit = col >= self.threshold if self.upper else col <= self.threshold
        return hit.astype(float)


@dataclass(frozen=True)
class BallMonomialQuery:
    """``prod_i x_i**a_i * 1[|x| <= radius] / scale``."""

    exponents: tuple
    radius: float
    scale: float = 1.0

    def __call__(self, x):
        x = _as_2d(x)
        val = np.ones(x.shape[0])
        for i, a in enumerate(self.exponents):
            if a:
                val = val * x[:, i] ** a
        inside = np.einsum("ij,ij->i", x, x) <= self.radius**2
        return np.where(inside, val, 0.0) / self.scale


@dataclass(frozen=True)
class HermiteQuery:
    """``He_a(x) * accept(x) / scale`` for a count vector ``a``."""

    exponents: tuple
    scale: float = 1.0
    accept: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x):
        x = _as_2d(x)
        val = np.ones(x.shape[0])
        for i, a in enumerate(self.exponents):
            if a:
                val = val * hermite_table(a, x[:, i])[a]
        if self.accept is not None:
            val = np.where(self.accept(x), val, 0.0)
        return val / self.scale


@dataclass(frozen=True)
class BallQuery:
    """Indicator of ``|x| <= radius``."""

    radius: float

    def __call__(self, x):
        x = _as_2d(x)
        return (np.einsum("ij,ij->i", x, x) <= self.radius**2).astype(float)


# ---------------------------------------------------------------------------
# sources


class Source(Protocol):
    def truth(self, f) -> tuple[float, float]:
        """Return ``(expectation, max |f|)`` over the evaluated points."""


def _range_of(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


@dataclass(frozen=True)
class SampleSource:
    """A fixed data set; truths are empirical means."""

    samples: np.ndarray

    def truth(self, f):
        vals = np.asarray(f(self.samples), dtype=float)
        return float(np.mean(vals)), _range_of(vals)


@dataclass(frozen=True)
class UnivariateSource:
    """An exact one-dimensional law; truths by numerical integration."""

    dist: object

    def truth(self, f):
        d = oned.as_univariate(self.dist)
        radius = oned.integration_radius(d)
        seen = [0.0]

        def integrand(x):
            v = np.asarray(f(x), dtype=float)
            seen[0] = max(seen[0], _range_of(v))
            return v * oned.pdf(d, x)

        bps = list(getattr(f, "breakpoints", ()))
        if isinstance(d, oned.PerturbedGaussian1D):
            bps += [-d.half_width, d.half_width]
        value = oned.integrate(integrand, -radius, radius, bps, tol=1e-12)
        return float(value), seen[0]


def gaussian_monomial_moment(exponents: Sequence[int]) -> float:
    """``E[prod x_i**a_i]`` under N(0, I): product of double factorials."""
    out = 1.0
    for a in exponents:
        if a % 2:
            return 0.0
        out *= float(special.factorial2(a - 1, exact=True)) if a else 1.0
    return out


@dataclass(frozen=True)
class GaussianSource:
    """``N(mean, I)``; exact for threshold queries and, at mean zero, ball queries."""

    mean: np.ndarray

    @property
    def n(self) -> int:
        return np.asarray(self.mean).size

    def _is_centered(self) -> bool:
        return not np.any(np.asarray(self.mean))

    def truth(self, f):
        mu = np.asarray(self.mean, dtype=float)
        if isinstance(f, ThresholdQuery):
            shift = mu[f.index or 0]
            p = special.ndtr(f.threshold - shift)
            return float(1.0 - p if f.upper else p), 1.0
        if isinstance(f, BallQuery) and self._is_centered():
            return float(stats.chi2.cdf(f.radius**2, self.n)), 1.0
        if isinstance(f, BallMonomialQuery) and self._is_centered():
            t = int(sum(f.exponents))
            base = gaussian_monomial_moment(f.exponents)
            frac = stats.chi2.cdf(f.radius**2, self.n + t)
            bound = f.radius**t / f.scale
            return float(base * frac / f.scale), float(bound)
        if isinstance(f, HermiteQuery) and f.accept is None:
            # coordinates are independent and E[He_j(N(m, 1))] = m**j
            val = float(np.prod(np.power(mu, np.asarray(f.exponents))))
            return val / f.scale, 0.0
        if isinstance(f, ProjectionQuery) and f.w is not None:
            w = np.asarray(f.w, dtype=float)
            law = oned.Gaussian1D(float(w @ mu), float(w @ w))
            return UnivariateSource(law).truth(ProjectionQuery(f.g, None, f.breakpoints))
        raise UnsupportedQueryError(f"no exact Gaussian expectation for {type(f).__name__}")


@dataclass(frozen=True)
class HiddenDirectionSource:
    """Exact hidden-direction law; supports projection and threshold queries.

    The projection of ``P_v`` onto a unit ``w`` is the law of
    ``c S + sqrt(1 - c**2) Z`` with ``c = v . w``, available in closed form
    when the hidden law is a mixture (or when ``w = v``).
    """

    dist: HiddenDirectionDistribution

    def truth(self, f):
        if isinstance(f, ThresholdQuery):
            w = np.zeros(self.dist.n)
            w[f.index or 0] = 1.0
            thr, upper = f.threshold, f.upper
            g = (lambda s: (s >= thr).astype(float)) if upper else (lambda s: (s <= thr).astype(float))
            f = ProjectionQuery(g, w, (thr,))
        if not isinstance(f, ProjectionQuery) or f.w is None:
            raise UnsupportedQueryError(f"no exact expectation for {type(f).__name__}")
        w = np.asarray(f.w, dtype=float)
        c = float(np.clip(w @ self.dist.v, -1.0, 1.0))
        a = self.dist.a
        if abs(abs(c) - 1.0) < 1e-15:
            law = a if c > 0 else _reflect(a)
        elif isinstance(a, oned.Mixture1D):
            law = oned.ou_transform(a, c)
        else:
            raise UnsupportedQueryError("oblique projections of perturbed laws are not closed form")
        return UnivariateSource(law).truth(ProjectionQuery(f.g, None, f.breakpoints))


def _reflect(a):
    a = oned.as_univariate(a)
    if isinstance(a, oned.Mixture1D):
        return oned.Mixture1D(tuple((w, oned.Gaussian1D(-g.mean, g.variance)) for w, g in a.components))
    raise UnsupportedQueryError("reflection of a perturbed law is not supported")


def _as_source(source):
    if isinstance(source, np.ndarray):
        return SampleSource(source)
    if isinstance(source, HiddenDirectionDistribution):
        return HiddenDirectionSource(source)
    if isinstance(source, (oned.Mixture1D, oned.PerturbedGaussian1D, oned.Gaussian1D)):
        return UnivariateSource(source)
    return source


# ---------------------------------------------------------------------------
# queries


def stat_query(source, f, tau: float, policy: OraclePolicy = HONEST, ledger: Optional[QueryLedger] = None) -> float:
    """Answer ``E[f(X)]`` within ``tau``.

    Parameters
    ----------
    source
        A source object, a sample array, a univariate law or a
        hidden-direction distribution.
    f : callable
        Query with values in ``[-1, 1]``.
    tau : float
        Tolerance, ``tau > 0``.

    Raises
    ------
    QueryRangeError
        If ``|f|`` exceeds one on any evaluated point.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    truth, reach = _as_source(source).truth(f)
    if reach > 1.0 + RANGE_SLACK:
        raise QueryRangeError(f"query magnitude {reach:.6g} exceeds 1")
    answer = policy.answer(truth, tau)
    if ledger is not None:
        ledger.append(QueryRecord("stat", float(tau), answer, truth))
    return answer


def vstat_tolerance(p: float, t: float) -> float:
    """``max(1/t, sqrt(p (1 - p) / t))``."""
    p = min(1.0, max(0.0, p))
    return max(1.0 / t, math.sqrt(p * (1.0 - p) / t))


def vstat_query(source, f, t: float, policy: OraclePolicy = HONEST, ledger: Optional[QueryLedger] = None) -> float:
    """VSTAT(t) answer for a query with values in ``[0, 1]``."""
    if not t > 0:
        raise ValueError("t must be positive")
    src = _as_source(source)
    truth, reach = src.truth(f)
    if reach > 1.0 + RANGE_SLACK:
        raise QueryRangeError(f"query magnitude {reach:.6g} exceeds 1")
    if isinstance(src, SampleSource) and np.min(f(src.samples)) < -RANGE_SLACK:
        raise QueryRangeError("VSTAT queries must be non-negative")
    tau = vstat_tolerance(truth, t)
    answer = policy.answer(truth, tau)
    if ledger is not None:
        ledger.append(QueryRecord("vstat", tau, answer, truth))
    return answer


def conditional_expectation(
    source,
    f,
    event,
    tau: float,
    policy: OraclePolicy = HONEST,
    ledger: Optional[QueryLedger] = None,
    joint=None,
) -> float:
    """``E[f | event]`` as the ratio of two STAT answers.

    ``event`` is a query with values in ``{0, 1}``; the numerator query is
    ``f * event`` unless a structured `joint` query computing the same
    product is supplied (exact sources only understand structured queries).

    Raises
    ------
    ConditioningError
        If the answered event probability is below one half.
    """
    if joint is None:
        def joint(x):
            return f(x) * event(x)

        bps = tuple(getattr(f, "breakpoints", ())) + tuple(getattr(event, "breakpoints", ()))
        if bps:
            joint.breakpoints = bps
    num = stat_query(source, joint, tau, policy, ledger)
    den = stat_query(source, event, tau, policy, ledger)
    if den < 0.5:
        raise ConditioningError(f"conditioning probability {den:.4f} < 1/2")
    return num / den


@dataclass
class SQOracle:
    """Bundle of a source, a policy and a ledger."""

    source: object
    policy: OraclePolicy = HONEST
    ledger: QueryLedger = field(default_factory=QueryLedger)

    def __post_init__(self):
        self.source = _as_source(self.source)

    def stat(self, f, tau: float) -> float:
        return stat_query(self.source, f, tau, self.policy, self.ledger)

    def vstat(self, f, t: float) -> float:
        return vstat_query(self.source, f, t, self.policy, self.ledger)

    def conditional(self, f, event, tau: float, joint=None) -> float:
        return conditional_expectation(self.source, f, event, tau, self.policy, self.ledger, joint)

"""Univariate distributions built from Gaussians.

Two concrete families cover every one-dimensional density used in the
package: finite Gaussian mixtures and Gaussians perturbed by a polynomial
supported on a symmetric interval.  This module supplies densities,
sampling, exact moments, chi-square and total-variation distances, Hermite
expansions and Ornstein-Uhlenbeck smoothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize, special

from .polybasis import (
    gaussian_raw_moment,
    legendre_monomial_integral,
    legendre_table,
    normalized_hermite_table,
)

__all__ = [
    "Gaussian1D",
    "Mixture1D",
    "PerturbedGaussian1D",
    "Univariate",
    "HermiteExpansion",
    "DivergentIntegralError",
    "standard_normal",
    "as_univariate",
    "pdf",
    "cdf",
    "sample",
    "moment",
    "chi2_vs_standard",
    "cross_correlation",
    "correlation_with_density",
    "tv_distance",
    "hermite_expansion",
    "ou_smooth",
    "ou_transform",
    "expansion_pdf",
    "integrate",
    "integration_radius",
    "to_dict",
    "from_dict",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)
_GL_ORDER = 20
_GL_NODES, _GL_WEIGHTS = leggauss(_GL_ORDER)


class DivergentIntegralError(ArithmeticError):
    """Raised when a chi-square type integral is infinite."""


@dataclass(frozen=True)
class Gaussian1D:
    """Univariate normal ``N(mean, variance)``."""

    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (_SQRT2PI * self.std)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mean) / self.std)


@dataclass(frozen=True)
class Mixture1D:
    """Finite mixture of univariate Gaussians.

    Parameters
    ----------
    components : sequence of (weight, Gaussian1D)
        Non-negative weights summing to one within ``1e-12``.
    """

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), g) for w, g in self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        weights = np.array([w for w, _ in comps])
        if np.any(weights < 0):
            raise ValueError("mixture weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {weights.sum()!r}, not 1")
        for _, g in comps:
            if not isinstance(g, Gaussian1D):
                raise TypeError("mixture components must be Gaussian1D")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([g.mean for _, g in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.array([g.variance for _, g in self.components])


@dataclass(frozen=True)
class PerturbedGaussian1D:
    """Gaussian plus a scaled-Legendre polynomial on ``[-C, C]``.

    The density is ``base.pdf(x) + sign * sum_j a_j P_j(x / C)`` for
    ``|x| <= C`` and ``base.pdf(x)`` elsewhere.

    Parameters
    ----------
    base : Gaussian1D
    correction_coeffs : sequence of float
        Coefficients ``a_0, ..., a_m``.
    half_width : float
        The interval half-width ``C > 0``.
    correction_sign : {+1, -1}
    validate : bool, default True
        Check non-negativity on a dense grid and unit mass.
    """

    base: Gaussian1D
    correction_coeffs: tuple
    half_width: float
    correction_sign: int = 1
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "correction_coeffs", tuple(float(a) for a in self.correction_coeffs)
        )
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.correction_sign not in (1, -1):
            raise ValueError("correction_sign must be +1 or -1")
        if self.validate:
            self.check()

    @property
    def degree(self) -> int:
        return len(self.correction_coeffs) - 1

    def correction(self, x):
        """Signed polynomial correction, zero outside the interval."""
        x = np.asarray(x, dtype=float)
        coeffs = np.asarray(self.correction_coeffs)
        out = np.zeros_like(x)
        if coeffs.size == 0:
            return out
        inside = np.abs(x) <= self.half_width
        table = legendre_table(coeffs.size - 1, x[inside] / self.half_width)
        out[inside] = self.correction_sign * np.tensordot(coeffs, table, axes=1)
        return out

    def pdf(self, x):
        return self.base.pdf(x) + self.correction(x)

    def min_on_grid(self, points: int = 100_001) -> float:
        """Minimum of the density on a uniform grid over the interval."""
        grid = np.linspace(-self.half_width, self.half_width, points)
        return float(np.min(self.pdf(grid)))

    def total_mass(self) -> float:
        # Only the constant Legendre term has non-zero integral.
        a0 = self.correction_coeffs[0] if self.correction_coeffs else 0.0
        return 1.0 + self.correction_sign * a0 * 2.0 * self.half_width

    def check(self, points: int = 100_001) -> None:
        """Raise ``ValueError`` if the density is negative or mis-normalised."""
        if abs(self.total_mass() - 1.0) > 1e-9:
            raise ValueError(f"perturbed density has mass {self.total_mass()!r}")
        low = self.min_on_grid(points)
        if low < 0:
            raise ValueError(f"perturbed density is negative (min {low:.3e})")


Univariate = Union[Mixture1D, PerturbedGaussian1D]


@dataclass(frozen=True)
class HermiteExpansion:
    """Coefficients ``a_i`` of ``A(x) = sum_i a_i He_i(x) G(x) / sqrt(i!)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    @property
    def max_i(self) -> int:
        return self.coeffs.size - 1

    def chi2_partial(self) -> float:
        """Truncated Parseval sum ``sum_{i>=1} a_i**2``."""
        return float(np.sum(self.coeffs[1:] ** 2))


def standard_normal() -> Mixture1D:
    """N(0, 1) as a one-component mixture."""
    return Mixture1D(((1.0, Gaussian1D(0.0, 1.0)),))


def as_univariate(d) -> Univariate:
    """Promote a bare ``Gaussian1D`` to a trivial mixture."""
    if isinstance(d, Gaussian1D):
        return Mixture1D(((1.0, d),))
    if isinstance(d, (Mixture1D, PerturbedGaussian1D)):
        return d
    raise TypeError(f"not a univariate distribution: {type(d).__name__}")


# ---------------------------------------------------------------------------
# density, cdf, sampling


def pdf(d, x):
    """Density of `d` at `x` (scalar or array)."""
    d = as_univariate(d)
    xa = np.asarray(x, dtype=float)
    if isinstance(d, Mixture1D):
        out = np.zeros_like(xa)
        for w, g in d.components:
            out = out + w * g.pdf(xa)
    else:
        out = d.pdf(xa)
    return float(out) if np.ndim(x) == 0 else out


def cdf(d, x):
    """Cumulative distribution function, exact for both families."""
    d = as_univariate(d)
    xa = np.asarray(x, dtype=float)
    if isinstance(d, Mixture1D):
        out = np.zeros_like(xa)
        for w, g in d.components:
            out = out + w * g.cdf(xa)
    else:
        out = d.base.cdf(xa) + _perturbation_cdf(d, xa)
    return float(out) if np.ndim(x) == 0 else out


def _perturbation_cdf(d: PerturbedGaussian1D, x: np.ndarray) -> np.ndarray:
    # Antiderivative of P_j is (P_{j+1} - P_{j-1}) / (2j + 1) for j >= 1.
    c = d.half_width
    coeffs = np.asarray(d.correction_coeffs)
    if coeffs.size == 0:
        return np.zeros_like(x)
    u = np.clip(x / c, -1.0, 1.0)
    m = coeffs.size - 1
    tab = legendre_table(m + 1, u)
    tab_lo = legendre_table(m + 1, -np.ones_like(u))
    total = coeffs[0] * (u + 1.0)
    for j in range(1, m + 1):
        anti = (tab[j + 1] - tab[j - 1]) / (2 * j + 1)
        anti_lo = (tab_lo[j + 1] - tab_lo[j - 1]) / (2 * j + 1)
        total = total + coeffs[j] * (anti - anti_lo)
    return d.correction_sign * c * total


def sample(d, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw `count` i.i.d. samples.

    Mixtures are sampled by picking a component and then a Gaussian draw.
    Perturbed densities use rejection against ``2 * base.pdf``.

    Raises
    ------
    RuntimeError
        If the rejection acceptance rate drops below ``1e-3``.
    """
    d = as_univariate(d)
    if count < 0:
        raise ValueError("count must be non-negative")
    if isinstance(d, Mixture1D):
        idx = rng.choice(len(d.components), size=count, p=d.weights)
        return rng.normal(d.means[idx], np.sqrt(d.variances[idx]))
    out = np.empty(count)
    filled = 0
    proposed = 0
    while filled < count:
        batch = max(1024, 2 * (count - filled))
        x = rng.normal(d.base.mean, d.base.std, size=batch)
        u = rng.random(batch)
        ratio = d.pdf(x) / (2.0 * d.base.pdf(x))
        keep = x[u < ratio]
        proposed += batch
        take = min(keep.size, count - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
        if proposed >= 10_000 and filled / proposed < 1e-3:
            raise RuntimeError("rejection acceptance rate below 1e-3")
    return out


# ---------------------------------------------------------------------------
# moments


def moment(d, t: int) -> float:
    """Exact raw moment ``E[X**t]``.

    Gaussian moments come from the two-term recursion; the perturbation
    contributes ``sign * sum_j a_j C**(t+1) * int_{-1}^{1} u**t P_j(u) du``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    d = as_univariate(d)
    if isinstance(d, Mixture1D):
        return float(
            sum(w * gaussian_raw_moment(t, g.mean, g.variance) for w, g in d.components)
        )
    base = gaussian_raw_moment(t, d.base.mean, d.base.variance)
    c = d.half_width
    pert = sum(
        a * c ** (t + 1) * legendre_monomial_integral(t, j)
        for j, a in enumerate(d.correction_coeffs)
    )
    return float(base + d.correction_sign * pert)


# ---------------------------------------------------------------------------
# numerical integration


def integration_radius(*dists) -> float:
    """``R = max(10, |mu| + 10 sigma)`` over every Gaussian involved."""
    r = 10.0
    for d in dists:
        d = as_univariate(d)
        gs = [g for _, g in d.components] if isinstance(d, Mixture1D) else [d.base]
        for g in gs:
            r = max(r, abs(g.mean) + 10.0 * g.std)
    return r


def _panel_sum(f, points: np.ndarray, panels_per_piece: int) -> float:
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        edges = np.linspace(lo, hi, panels_per_piece + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        vals = np.asarray(f(x), dtype=float).reshape(panels_per_piece, _GL_ORDER)
        total += float(np.sum(half * (vals @ _GL_WEIGHTS)))
    return total


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    breakpoints: Sequence[float] = (),
    tol: float = 1e-10,
    max_doublings: int = 12,
) -> float:
    """Composite Gauss-Legendre integration with panel doubling.

    The interval is split at `breakpoints`; each piece is covered by equal
    panels of 20-point Gauss-Legendre rules and the panel count doubles
    until consecutive estimates agree within `tol` (absolute) or
    ``tol * |estimate|``.
    """
    pts = sorted({float(lo), float(hi), *(float(b) for b in breakpoints if lo < b < hi)})
    points = np.array(pts)
    panels = 4
    prev = _panel_sum(f, points, panels)
    for _ in range(max_doublings):
        panels *= 2
        cur = _panel_sum(f, points, panels)
        if abs(cur - prev) < max(tol, tol * abs(cur)):
            return cur
        prev = cur
    return cur


def _breakpoints(*dists) -> list:
    pts = []
    for d in dists:
        if isinstance(d, PerturbedGaussian1D):
            pts.extend([-d.half_width, d.half_width])
    return pts


# ---------------------------------------------------------------------------
# chi-square and correlations


def _gauss_pair_integral(m1, s1, m2, s2) -> float:
    """Closed form of ``int N(m1,s1) N(m2,s2) / G``."""
    a = 1.0 / s1 + 1.0 / s2 - 1.0
    if a <= 0:
        raise DivergentIntegralError(
            "Gaussian correlation integral diverges (1/s1 + 1/s2 <= 1)"
        )
    b = m1 / s1 + m2 / s2
    c = -0.5 * (m1 * m1 / s1 + m2 * m2 / s2)
    return math.exp(b * b / (2.0 * a) + c) / math.sqrt(s1 * s2 * a)


def _mixture_pair(d1: Mixture1D, d2: Mixture1D) -> float:
    total = 0.0
    for w1, g1 in d1.components:
        for w2, g2 in d2.components:
            if w1 == 0 or w2 == 0:
                continue
            total += w1 * w2 * _gauss_pair_integral(g1.mean, g1.variance, g2.mean, g2.variance)
    return total - 1.0


def _std_normal_pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT2PI


def correlation_with_density(d, density: Callable[[np.ndarray], np.ndarray]) -> float:
    """Numerical ``int d * density / G - 1`` for an arbitrary second density.

    Used to compare series evaluations against a density reconstructed
    from a Hermite expansion.
    """
    d = as_univariate(d)
    radius = integration_radius(d)

    def integrand(x):
        return pdf(d, x) * density(x) / _std_normal_pdf(x)

    value = integrate(integrand, -radius, radius, _breakpoints(d))
    if not math.isfinite(value):
        raise DivergentIntegralError("correlation integral is not finite")
    return value - 1.0


def chi2_vs_standard(d) -> float:
    """Chi-square divergence ``chi2(d, N(0, 1))``.

    Closed form for mixtures.  For perturbed densities the Gaussian part
    is closed form and the perturbation terms are integrated over the
    interval only.

    Raises
    ------
    DivergentIntegralError
        If the integral is infinite, e.g. a component variance ``>= 2``.
    """
    return cross_correlation(d, d)


def cross_correlation(d1, d2) -> float:
    """Pairwise correlation ``int d1 d2 / G - 1`` relative to N(0, 1)."""
    d1 = as_univariate(d1)
    d2 = as_univariate(d2)
    if isinstance(d1, Mixture1D) and isinstance(d2, Mixture1D):
        return _mixture_pair(d1, d2)
    if isinstance(d1, PerturbedGaussian1D) and isinstance(d2, PerturbedGaussian1D):
        return _perturbed_pair(d1, d2)
    # one mixture, one perturbed density
    mix, pert = (d1, d2) if isinstance(d1, Mixture1D) else (d2, d1)
    base = Mixture1D(((1.0, pert.base),))
    gauss_part = _mixture_pair(mix, base) + 1.0
    c = pert.half_width
    extra = integrate(
        lambda x: pdf(mix, x) * pert.correction(x) / _std_normal_pdf(x), -c, c
    )
    return gauss_part + extra - 1.0


def _perturbed_pair(d1: PerturbedGaussian1D, d2: PerturbedGaussian1D) -> float:
    b1 = Mixture1D(((1.0, d1.base),))
    b2 = Mixture1D(((1.0, d2.base),))
    total = _mixture_pair(b1, b2) + 1.0
    c1, c2 = d1.half_width, d2.half_width
    total += integrate(lambda x: d1.base.pdf(x) * d2.correction(x) / _std_normal_pdf(x), -c2, c2)
    total += integrate(lambda x: d2.base.pdf(x) * d1.correction(x) / _std_normal_pdf(x), -c1, c1)
    c = min(c1, c2)
    total += integrate(
        lambda x: d1.correction(x) * d2.correction(x) / _std_normal_pdf(x), -c, c
    )
    return total - 1.0


def tv_distance(d1, d2) -> float:
    """Total variation distance ``0.5 * int |d1 - d2|``.

    Crossing points of the two densities are located on a fine grid and
    refined with Brent's method so that every integration panel sees a
    smooth integrand.
    """
    d1 = as_univariate(d1)
    d2 = as_univariate(d2)
    radius = integration_radius(d1, d2)

    def diff(x):
        return pdf(d1, x) - pdf(d2, x)

    grid = np.linspace(-radius, radius, 20_001)
    vals = diff(grid)
    if np.max(np.abs(vals)) == 0.0:
        return 0.0
    crossings = []
    sign = np.sign(vals)
    for i in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        crossings.append(optimize.brentq(diff, grid[i], grid[i + 1], xtol=1e-14))
    bps = crossings + _breakpoints(d1, d2)
    value = 0.5 * integrate(lambda x: np.abs(diff(x)), -radius, radius, bps)
    return float(min(1.0, max(0.0, value)))


# ---------------------------------------------------------------------------
# Hermite expansion and smoothing


def _gaussian_hermite_moments(mean: float, variance: float, max_i: int) -> np.ndarray:
    """``E[He_i(X)] / sqrt(i!)`` for ``X ~ N(mean, variance)``.

    From the generating function, ``h_{i+1} = mean h_i + i (variance - 1) h_{i-1}``;
    the normalised form keeps every term of order one.
    """
    out = np.empty(max_i + 1)
    out[0] = 1.0
    if max_i >= 1:
        out[1] = mean
    s = variance - 1.0
    for i in range(1, max_i):
        out[i + 1] = (mean * out[i] + math.sqrt(i) * s * out[i - 1]) / math.sqrt(i + 1)
    return out


def hermite_expansion(d, max_i: int) -> HermiteExpansion:
    """Coefficients ``a_i = E_d[He_i(X)] / sqrt(i!)`` for ``i <= max_i``.

    Gaussian parts use a stable recurrence; the polynomial perturbation is
    integrated with a Gauss-Legendre rule exact for its degree.
    """
    if max_i < 0:
        raise ValueError("max_i must be non-negative")
    d = as_univariate(d)
    if isinstance(d, Mixture1D):
        coeffs = np.zeros(max_i + 1)
        for w, g in d.components:
            coeffs += w * _gaussian_hermite_moments(g.mean, g.variance, max_i)
        return HermiteExpansion(coeffs)
    coeffs = _gaussian_hermite_moments(d.base.mean, d.base.variance, max_i)
    c = d.half_width
    n_nodes = (d.degree + max_i) // 2 + 8
    u, wts = leggauss(n_nodes)
    x = c * u
    poly = d.correction(x)
    psi = normalized_hermite_table(max_i, x)
    coeffs = coeffs + c * (psi @ (wts * poly))
    return HermiteExpansion(coeffs)


def ou_smooth(e: HermiteExpansion, t: float) -> HermiteExpansion:
    """Apply the Ornstein-Uhlenbeck operator: ``a_i -> a_i * t**i``."""
    if not -1.0 <= t <= 1.0:
        raise ValueError("t must lie in [-1, 1]")
    powers = np.power(float(t), np.arange(e.coeffs.size))
    return HermiteExpansion(e.coeffs * powers)


def ou_transform(d: Mixture1D, t: float) -> Mixture1D:
    """Law of ``t S + sqrt(1 - t**2) Z`` for ``S ~ d`` and independent Z.

    This is the mixture that `ou_smooth` acts on coefficient-wise.
    """
    d = as_univariate(d)
    if not isinstance(d, Mixture1D):
        raise TypeError("exact transform available for mixtures only")
    comps = tuple(
        (w, Gaussian1D(t * g.mean, t * t * g.variance + 1.0 - t * t)) for w, g in d.components
    )
    return Mixture1D(comps)


def expansion_pdf(e: HermiteExpansion, x):
    """Density reconstructed from a (truncated) Hermite expansion."""
    x = np.asarray(x, dtype=float)
    psi = normalized_hermite_table(e.max_i, x)
    return np.tensordot(e.coeffs, psi, axes=1) * _std_normal_pdf(x)


# ---------------------------------------------------------------------------
# serialisation


def to_dict(d) -> dict:
    """JSON-ready description of a univariate distribution."""
    d = as_univariate(d)
    if isinstance(d, Mixture1D):
        return {
            "kind": "mixture",
            "components": [
                {"weight": w, "mean": g.mean, "variance": g.variance} for w, g in d.components
            ],
        }
    return {
        "kind": "perturbed",
        "base": {"mean": d.base.mean, "variance": d.base.variance},
        "correction_coeffs": list(d.correction_coeffs),
        "half_width": d.half_width,
        "correction_sign": d.correction_sign,
    }


def from_dict(doc: dict) -> Univariate:
    """Inverse of :func:`to_dict`."""
    kind = doc.get("kind")
    if kind == "mixture":
        comps = tuple(
            (c["weight"], Gaussian1D(c["mean"], c["variance"])) for c in doc["components"]
        )
        return Mixture1D(comps)
    if kind == "perturbed":
        base = Gaussian1D(doc["base"]["mean"], doc["base"]["variance"])
        return PerturbedGaussian1D(
            base,
            tuple(doc["correction_coeffs"]),
            doc["half_width"],
            int(doc["correction_sign"]),
        )
    raise ValueError(f"unknown distribution kind {kind!r}")

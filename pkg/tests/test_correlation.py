import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate as sint
from scipy import special

from sqgauss import correlation, instances, oned
from sqgauss.correlation import TruncationError
from sqgauss.oned import Gaussian1D, Mixture1D


def robust_mean(delta, m):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return instances.robust_mean_instance(delta, m)


FAMILIES = {
    "gmm3": lambda: (instances.gmm_hard_instance(3, 0.01), 5),
    "gmm4": lambda: (instances.gmm_hard_instance(4, 0.05), 7),
    "robust-mean": lambda: (robust_mean(1e-3, 4), 4),
    "robust-cov": lambda: (instances.robust_cov_instance(1e-3, 4), 4),
    "cov-tradeoff": lambda: (instances.cov_tradeoff_instance(0.1), 3),
    "sparse-mean": lambda: (instances.sparse_mean_instance(0.1, 0.05), 1),
}


@pytest.fixture(scope="module")
def expansions():
    out = {}
    for name, make in FAMILIES.items():
        d, m = make()
        e, chi2 = correlation.expansion_with_tail(d)
        out[name] = (d, m, e, chi2)
    return out


# -- pairwise correlation ----------------------------------------------------


def test_zero_angle_gives_zero():
    e = oned.hermite_expansion(Gaussian1D(0.7, 1.0), 30)
    assert correlation.pairwise_correlation(e, 0.0) == 0.0


@pytest.mark.parametrize("mu", [0.3, 0.8, 1.0])
def test_self_correlation_of_shifted_gaussian(mu):
    d = Gaussian1D(mu, 1.0)
    e = oned.hermite_expansion(d, 60)
    value = correlation.pairwise_correlation(e, 1.0, chi2=math.exp(mu * mu) - 1)
    assert value == pytest.approx(math.exp(mu * mu) - 1, abs=1e-10)


@pytest.mark.parametrize("mu, mu2, cos", [(0.5, 0.5, 0.3), (1.0, 1.0, -0.6)])
def test_gaussian_correlation_closed_form(mu, mu2, cos):
    # hidden-direction pair of N(mu, 1): correlation exp(mu^2 cos) - 1
    e = oned.hermite_expansion(Gaussian1D(mu, 1.0), 60)
    assert correlation.pairwise_correlation(e, cos) == pytest.approx(math.exp(mu * mu2 * cos) - 1, abs=1e-10)


def test_truncation_is_detected():
    d = Gaussian1D(1.5, 1.0)
    e = oned.hermite_expansion(d, 5)
    with pytest.raises(TruncationError):
        correlation.pairwise_correlation(e, 0.99, chi2=oned.chi2_vs_standard(d))


def test_cos_range_checked():
    e = oned.hermite_expansion(Gaussian1D(0.0, 1.0), 4)
    with pytest.raises(ValueError):
        correlation.pairwise_correlation(e, 1.5)


def test_gmm_small_angle_bound(expansions):
    d, m, e, chi2 = expansions["gmm3"]
    value = correlation.pairwise_correlation(e, 0.1, chi2=chi2)
    assert abs(value) <= 0.1**6 * chi2


@pytest.mark.parametrize("name", list(FAMILIES))
def test_series_bound_at_random_angles(expansions, name, rng):
    d, m, e, chi2 = expansions[name]
    a2 = e.coeffs**2
    for cos in rng.uniform(-1, 1, size=200):
        powers = cos ** np.arange(e.max_i + 1)
        high = float(powers[m + 1 :] @ a2[m + 1 :])
        assert high <= abs(cos) ** (m + 1) * chi2 + 1e-9


@pytest.mark.parametrize("name", list(FAMILIES))
def test_low_coefficients_vanish(expansions, name):
    d, m, e, chi2 = expansions[name]
    assert np.all(np.abs(e.coeffs[1 : m + 1]) <= 1e-7)
    assert e.coeffs[0] == pytest.approx(1.0, abs=1e-10)


def test_series_agrees_with_integral():
    """Series evaluation against an independent density integral."""
    rng = np.random.default_rng(11)
    names = list(FAMILIES)
    cache = {}
    for _ in range(20):
        name = names[rng.integers(len(names))]
        cos = float(rng.uniform(-0.9, 0.9))
        if name not in cache:
            d, _ = FAMILIES[name]()
            cache[name] = (d, *correlation.expansion_with_tail(d))
        d, e, chi2 = cache[name]
        series = correlation.pairwise_correlation(e, cos)
        if isinstance(d, Mixture1D):
            other = oned.cross_correlation(d, oned.ou_transform(d, cos))
        else:
            smooth = oned.ou_smooth(oned.hermite_expansion(d, 200), cos)
            other = oned.correlation_with_density(d, lambda x: oned.expansion_pdf(smooth, x))
        assert series == pytest.approx(other, abs=1e-5), (name, cos)


def test_ou_transform_matches_smoothed_coefficients():
    d = instances.gmm_hard_instance(2, 0.05)
    t = 0.4
    lhs = oned.hermite_expansion(oned.ou_transform(d, t), 20).coeffs
    rhs = oned.ou_smooth(oned.hermite_expansion(d, 20), t).coeffs
    assert np.allclose(lhs, rhs, atol=1e-12)


# -- correlation bound check --------------------------------------------------


def test_bound_check_standard_normal(rng):
    rep = correlation.correlation_bound_check(oned.standard_normal(), 3, 100, rng)
    assert rep.max_ratio == 0.0 and rep.passed


@pytest.mark.parametrize(
    "make, m",
    [
        (lambda: instances.sparse_mean_instance(0.1, 0.05), 1),
        (lambda: robust_mean(1e-3, 4), 4),
        (lambda: instances.gmm_hard_instance(3, 0.01), 5),
    ],
)
def test_bound_check_passes(make, m, rng):
    rep = correlation.correlation_bound_check(make(), m, 1000, rng)
    assert rep.passed
    assert rep.max_ratio <= 1.0 + 1e-6
    assert rep.max_excess <= 1e-9


def test_bound_check_requires_matched_moments(rng):
    with pytest.raises(ValueError):
        correlation.correlation_bound_check(Gaussian1D(0.5, 1.0), 2, 10, rng)


def test_sparse_mean_improved_bound():
    for eps in np.linspace(0.05, 0.5, 4):
        for frac in (0.25, 0.5, 1.0):
            delta = eps * frac
            d = instances.sparse_mean_instance(eps, delta)
            e, chi2 = correlation.expansion_with_tail(d)
            for cos in np.linspace(-1, 1, 9):
                value = correlation.pairwise_correlation(e, cos)
                assert 1 + abs(value) <= correlation.sparse_correlation_bound(eps, delta, cos) * (1 + 1e-12)


# -- generic SQ report --------------------------------------------------------


def test_sq_report_fields():
    a = instances.gmm_hard_instance(2, 0.01)
    rep = correlation.sq_bound_report(a, 100, 3, 0.25)
    assert rep.chi2 == oned.chi2_vs_standard(a)
    assert rep.certified is False
    assert rep.query_floor == pytest.approx(100**0.125 * math.log(2))
    assert rep.to_dict()["n"] == 100


def test_sq_report_stat_tolerance_formula():
    a = robust_mean(1e-3, 4)
    rep = correlation.sq_bound_report(a, 10**4, 4, 1 / 6)
    assert rep.stat_tolerance == pytest.approx((10**4) ** (-5 / 6) * math.sqrt(rep.chi2), rel=1e-12)
    assert rep.vstat_size == pytest.approx((10**4) ** (5 / 3) / rep.chi2, rel=1e-12)


def test_sq_report_near_half():
    a = instances.sparse_mean_instance(0.1, 0.05)
    rep = correlation.sq_bound_report(a, 1000, 2, 0.5 - 1e-9)
    assert rep.stat_tolerance == pytest.approx(math.sqrt(rep.chi2), rel=1e-6)


@pytest.mark.parametrize("c", [0.0, 0.5, -0.1])
def test_sq_report_rejects_c(c):
    with pytest.raises(ValueError):
        correlation.sq_bound_report(oned.standard_normal(), 10, 1, c)


# -- testing series -----------------------------------------------------------


def direct_series(n, big_n, chi2):
    """Sum of binom(N, i) chi2**i B((n-1)/2, i + 1/2) / B((n-1)/2, 1/2)."""
    total = 0.0
    for i in range(big_n + 1):
        log_b = (
            math.lgamma(big_n + 1) - math.lgamma(i + 1) - math.lgamma(big_n - i + 1)
            + i * math.log(chi2)
            + special.betaln((n - 1) / 2, i + 0.5)
            - special.betaln((n - 1) / 2, 0.5)
        )
        total += math.exp(log_b)
    return total


@pytest.mark.parametrize("n, big_n, chi2", [(200, 100, 0.25), (10, 7, 1.3), (50, 40, 0.05), (3, 20, 2.0)])
def test_series_matches_beta_definition(n, big_n, chi2):
    assert correlation.testing_chi2_series(n, big_n, chi2) == pytest.approx(direct_series(n, big_n, chi2), rel=1e-10)


def test_series_trivial_cases():
    assert correlation.testing_chi2_series(50, 0, 3.0) == 1.0
    assert correlation.testing_chi2_series(50, 10, 0.0) == 1.0


def test_series_at_boundary():
    s = correlation.testing_chi2_series(200, 100, 0.25)
    assert s <= 4 / 3
    assert correlation.testing_tv_bound(s) < 1 / 3
    assert correlation.testing_sample_boundary(200, 0.25) == 100


def test_series_past_boundary():
    assert correlation.testing_chi2_series(200, 1000, 0.25) > 4 / 3


def test_series_huge_values_stay_in_log_space():
    log_s = correlation.testing_chi2_series_log(10, 10**6, 50.0)
    assert math.isfinite(log_s) and log_s > 709
    assert correlation.testing_chi2_series(10, 10**6, 50.0) == math.inf


@given(st.integers(2, 400), st.integers(0, 500), st.floats(0.0, 3.0))
def test_series_monotone(n, big_n, chi2):
    s = correlation.testing_chi2_series_log(n, big_n, chi2)
    assert correlation.testing_chi2_series_log(n, big_n + 1, chi2) >= s - 1e-12
    assert correlation.testing_chi2_series_log(n, big_n, chi2 * 1.1 + 1e-3) >= s - 1e-12


def test_series_validation():
    with pytest.raises(ValueError):
        correlation.testing_chi2_series(1, 5, 0.1)
    with pytest.raises(ValueError):
        correlation.testing_chi2_series(5, 10**6 + 1, 0.1)


# -- angle density ------------------------------------------------------------


def test_angle_density_n2_is_flat():
    th = np.linspace(0, math.pi, 7)
    assert np.allclose(correlation.angle_density(2, th), 1 / math.pi)


def test_angle_density_n3_at_right_angle():
    assert correlation.angle_density(3, math.pi / 2) == pytest.approx(0.5)


@pytest.mark.parametrize("n", [3, 5, 50, 10_000])
def test_angle_density_vanishes_at_zero(n):
    assert correlation.angle_density(n, 0.0) == 0.0


@pytest.mark.parametrize("n", [2, 3, 8, 100, 10_000])
def test_angle_density_integrates_to_one(n):
    spread = 8 / math.sqrt(n)
    points = [max(0.0, math.pi / 2 - spread), min(math.pi, math.pi / 2 + spread)]
    total, _ = sint.quad(lambda t: correlation.angle_density(n, t), 0, math.pi, points=points, epsabs=1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_angle_density_matches_random_vectors(rng):
    n = 6
    u = rng.standard_normal((40_000, n))
    v = rng.standard_normal((40_000, n))
    cos = np.sum(u * v, axis=1) / np.linalg.norm(u, axis=1) / np.linalg.norm(v, axis=1)
    frac = np.mean(np.arccos(np.clip(cos, -1, 1)) < math.pi / 3)
    exact, _ = sint.quad(lambda t: correlation.angle_density(n, t), 0, math.pi / 3)
    assert abs(frac - exact) < 4 * math.sqrt(exact * (1 - exact) / 40_000)


def test_angle_density_validation():
    with pytest.raises(ValueError):
        correlation.angle_density(1, 0.3)
    with pytest.raises(ValueError):
        correlation.angle_density(4, 4.0)

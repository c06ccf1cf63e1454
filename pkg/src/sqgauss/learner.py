"""Robust mean estimation with higher-order Hermite-tensor filters.

Pipeline
--------
1. A spectral baseline filter gives a coarse centre ``mu'``.
2. Points far from ``mu'`` are pruned.
3. Hermite-moment tensors of orders ``1..k`` of the surviving points are
   estimated.  While some tensor is too large, the polynomial ``h_A`` of
   the normalised tensor is used to remove points whose value is far out
   in the Gaussian tail, and the tensors are re-estimated.
4. The directions in which the final tensors still carry signal span a
   low-dimensional subspace ``V``.  Medians of one-dimensional projections
   onto a cover of the unit sphere of ``V`` pin down the mean inside ``V``
   through a small feasibility problem.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .sqoracle import QueryLedger, SampleSource, SQOracle
from .tensorher import (
    SymmetricTensor,
    estimate_hermite_tensor,
    estimate_hermite_tensors,
    gram_singular_vectors,
    h_eval,
)
from .polybasis import gaussian_raw_moment

__all__ = [
    "LearnerConfig",
    "LearnResult",
    "NormPrune",
    "PolynomialFilter",
    "FilterChain",
    "BaselineError",
    "baseline_filter_mean",
    "robust_mean_learn",
    "default_k",
    "loop_thresholds",
    "sphere_cover",
    "bisect_median",
    "solve_median_lp",
    "moment_matching_k",
    "moment_matching_check",
]


class BaselineError(RuntimeError):
    """The baseline filter failed to make progress."""


def default_k(eps: float) -> int:
    """``2 * ceil(sqrt(ln(1/eps)))``."""
    return 2 * math.ceil(math.sqrt(math.log(1.0 / eps)))


@dataclass(frozen=True)
class LearnerConfig:
    """Tuning knobs for :func:`robust_mean_learn`.

    Attributes
    ----------
    eps : float
        Contamination rate in ``(0, 0.2)``.
    k : int, optional
        Highest tensor order (even); defaults to :func:`default_k`.
    c_f : float
        Constant in the loop threshold ``eps (c_f ln(1/eps))**(t/2)``.
    filter_threshold_const : float
        Constant ``C`` in the additive trigger slack ``2 eps / (C n**(2t))``.
    tail_reference : {"monte_carlo", "analytic"}
        How the Gaussian tail of ``h_A`` is obtained.
    tail_radius : float
        ``R`` in the analytic reference ``exp(2 - (T/R)**(2/t))``.
    tail_draws : int
        Fresh N(0, I) draws for the Monte Carlo reference.
    iteration_cap : int
        Maximum number of polynomial filters.
    lp_slack : float
        Constraints read ``|v . mu_V - m_v| <= lp_slack * eps``.
    c_b : float
        Half-width of the median bracket in units of ``eps sqrt(ln(1/eps))``.
    c1 : float
        Baseline stopping rule: top eigenvalue ``<= 1 + c1 eps ln(1/eps)``.
    sv_noise_factor : float
        Singular values must also exceed this multiple of the sampling
        noise level of the flattened tensor (both modes read the same
        samples); ``0`` disables the guard.
    max_cover_dim : int
        Practical cap on ``dim(V)``; the cover has ``O(l)**l`` points.
    mode : {"samples", "oracle"}
        Empirical expectations or honest oracle queries over the samples.
    bisection_steps, lp_iterations : int
    """

    eps: float
    k: Optional[int] = None
    c_f: float = 1.0
    filter_threshold_const: float = 1.0
    tail_reference: str = "monte_carlo"
    tail_radius: float = 1.0
    tail_draws: int = 100_000
    iteration_cap: int = 50
    lp_slack: float = 2.0
    c_b: float = 5.0
    c1: float = 1.0
    sv_noise_factor: float = 2.0
    max_cover_dim: int = 4
    mode: str = "samples"
    bisection_steps: int = 40
    lp_iterations: int = 10_000

    def __post_init__(self):
        if not 0 < self.eps < 0.2:
            raise ValueError("eps must lie in (0, 0.2)")
        if self.k is None:
            object.__setattr__(self, "k", default_k(self.eps))
        if self.k < 2 or self.k % 2:
            raise ValueError("k must be an even integer >= 2")
        if self.tail_reference not in ("monte_carlo", "analytic"):
            raise ValueError("tail_reference must be 'monte_carlo' or 'analytic'")
        if self.mode not in ("samples", "oracle"):
            raise ValueError("mode must be 'samples' or 'oracle'")

    @property
    def dim_cap(self) -> int:
        """``ceil(sum_t (c_f ln(1/eps))**(t/2))``."""
        base = self.c_f * math.log(1.0 / self.eps)
        return math.ceil(sum(base ** (t / 2.0) for t in range(1, self.k + 1)))


def loop_thresholds(cfg: LearnerConfig) -> np.ndarray:
    """``eps (c_f ln(1/eps))**(t/2)`` for ``t = 1..k``."""
    base = cfg.c_f * math.log(1.0 / cfg.eps)
    return np.array([cfg.eps * base ** (t / 2.0) for t in range(1, cfg.k + 1)])


# ---------------------------------------------------------------------------
# filters


@dataclass(frozen=True)
class NormPrune:
    """Accept ``|x - center| <= radius``."""

    center: np.ndarray
    radius: float

    def __call__(self, x):
        y = np.atleast_2d(x) - self.center
        return np.einsum("ij,ij->i", y, y) <= self.radius**2

    def describe(self) -> dict:
        return {"kind": "norm_prune", "radius": self.radius}


@dataclass(frozen=True)
class PolynomialFilter:
    """Accept ``|h_A(x - center)| <= threshold + 1``."""

    center: np.ndarray
    tensor: SymmetricTensor
    threshold: int
    rejected_mass: float

    @property
    def order(self) -> int:
        return self.tensor.order

    def __call__(self, x):
        return np.abs(h_eval(self.tensor, np.atleast_2d(x) - self.center)) <= self.threshold + 1

    def describe(self) -> dict:
        return {
            "kind": "polynomial",
            "order": self.order,
            "threshold": self.threshold,
            "rejected_mass": self.rejected_mass,
        }


@dataclass
class FilterChain:
    """Conjunction of accept-predicates; evaluation results are cached per array."""

    filters: list = field(default_factory=list)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        keep = np.ones(x.shape[0], dtype=bool)
        for f in self.filters:
            keep &= f(x)
        return keep

    def append(self, f) -> None:
        self.filters.append(f)

    def __len__(self):
        return len(self.filters)

    def describe(self) -> list:
        return [f.describe() for f in self.filters]


class _CachedPredicate:
    """A fixed mask for one array; falls back to the chain for other inputs."""

    def __init__(self, chain: FilterChain, data: np.ndarray, mask: np.ndarray):
        self.chain, self.data, self.mask = chain, data, mask

    def __call__(self, x):
        if x is self.data:
            return self.mask
        return self.chain(x)


# ---------------------------------------------------------------------------
# expectation back ends


class _EmpiricalEngine:
    """Expectations as plain averages over the (centred) sample set."""

    def __init__(self, y: np.ndarray):
        self.y = y
        self.queries = 0
        self._sorted_cache = {}

    def tensors(self, mask, k, precision):
        ts = estimate_hermite_tensors(self.y, k, mask)
        self.queries += sum(t.values.size for t in ts)
        return ts

    def tail_probabilities(self, h, mask, thresholds):
        vals = np.sort(np.abs(h[mask]))
        self.queries += len(thresholds)
        above = vals.size - np.searchsorted(vals, np.asarray(thresholds) + 1.0, side="left")
        return above / vals.size

    def upper_probability(self, key, proj, x):
        self.queries += 1
        srt = self._sorted_cache.get(key)
        if srt is None:
            srt = np.sort(proj)
            self._sorted_cache[key] = srt
        return (srt.size - np.searchsorted(srt, x, side="left")) / srt.size


class _OracleEngine:
    """Expectations answered by an honest SQ oracle over the sample set."""

    def __init__(self, y: np.ndarray, eps: float):
        self.y = y
        self.eps = eps
        self.oracle = SQOracle(SampleSource(y))

    @property
    def queries(self) -> int:
        return self.oracle.ledger.count

    @property
    def ledger(self) -> QueryLedger:
        return self.oracle.ledger

    def tensors(self, mask, k, precision):
        chain = _CachedPredicate(FilterChain(), self.y, mask)
        return [
            estimate_hermite_tensor(self.oracle, t, precision, accept=chain)
            for t in range(1, k + 1)
        ]

    def tail_probabilities(self, h, mask, thresholds):
        absval = np.abs(h)
        event = _CachedPredicate(FilterChain(), self.y, mask)
        out = []
        for thr in thresholds:
            hit = (absval >= thr + 1.0).astype(float)

            def f(x, hit=hit):
                return hit if x is self.y else np.zeros(len(x))

            def joint(x, hit=hit):
                return hit * mask if x is self.y else np.zeros(len(x))

            out.append(self.oracle.conditional(f, lambda x: event(x).astype(float), 1e-12, joint=joint))
        return np.array(out)

    def upper_probability(self, key, proj, x):
        query = _FixedProjectionQuery(self.y, proj, x)
        return self.oracle.stat(query, self.eps / 10.0)


class _FixedProjectionQuery:
    def __init__(self, data, proj, x):
        self.data, self.proj, self.x = data, proj, x

    def __call__(self, pts):
        if pts is not self.data:
            raise ValueError("query bound to a fixed data set")
        return (self.proj >= self.x).astype(float)


# ---------------------------------------------------------------------------
# baseline


def baseline_filter_mean(samples, eps: float, c1: float = 1.0, min_threshold: float = 1.0):
    """Iterative spectral filter for the mean of a contaminated N(mu, I).

    While the top eigenvalue of the empirical covariance of retained points
    exceeds ``1 + c1 eps ln(1/eps)``, points are projected on the top
    eigenvector, centred at the median projection, and those beyond the
    smallest threshold ``T >= min_threshold`` at which the empirical tail
    exceeds twice the Gaussian tail (plus ``eps / (T**2 ln N)``) are
    removed.  If no threshold qualifies, the single most extreme point goes.

    Returns
    -------
    (ndarray, ndarray)
        Mean estimate and boolean mask of retained samples.

    Raises
    ------
    BaselineError
        If more than ``N`` iterations are needed.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n_total = x.shape[0]
    keep = np.ones(n_total, dtype=bool)
    stop = 1.0 + c1 * eps * math.log(1.0 / eps)
    log_n = math.log(max(n_total, 3))
    for _ in range(n_total + 1):
        idx = np.nonzero(keep)[0]
        pts = x[idx]
        mu = pts.mean(axis=0)
        cov = np.cov(pts, rowvar=False, bias=True)
        cov = np.atleast_2d(cov)
        evals, evecs = np.linalg.eigh(cov)
        if evals[-1] <= stop:
            return mu, keep
        proj = (pts - mu) @ evecs[:, -1]
        dev = np.abs(proj - np.median(proj))
        order = np.sort(dev)
        m = order.size
        above = m - 1 - np.arange(m)  # points strictly beyond order[i] (ties aside)
        emp = above / m
        gauss = 2.0 * special.ndtr(-order)
        with np.errstate(divide="ignore"):
            slack = eps / (np.maximum(order, 1e-12) ** 2 * log_n)
        ok = (order >= min_threshold) & (emp > 2.0 * gauss + slack)
        if np.any(ok):
            thr = order[np.argmax(ok)]
            drop = dev > thr
        else:
            drop = dev >= order[-1]
        if not np.any(drop):
            drop = dev >= order[-1]
        keep[idx[drop]] = False
    raise BaselineError("baseline filter exceeded N iterations")


# ---------------------------------------------------------------------------
# cover, medians, LP


def sphere_cover(dim: int) -> np.ndarray:
    """Normalised centres of the grid cubes of side ``<= 1/(2 sqrt(dim))`` meeting the sphere.

    Every unit vector lies within distance 1/2 of some returned point.
    """
    if dim < 1:
        return np.zeros((0, dim))
    side = 1.0 / (2.0 * math.sqrt(dim))
    cells = math.ceil(2.0 / side)
    edges = np.linspace(-1.0, 1.0, cells + 1)
    lo_1d, hi_1d = edges[:-1], edges[1:]
    grids = np.meshgrid(*([np.arange(cells)] * dim), indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    lo, hi = lo_1d[idx], hi_1d[idx]
    nearest = np.clip(0.0, lo, hi)
    farthest = np.maximum(np.abs(lo), np.abs(hi))
    keep = (np.linalg.norm(nearest, axis=1) <= 1.0) & (np.linalg.norm(farthest, axis=1) >= 1.0)
    centres = 0.5 * (lo[keep] + hi[keep])
    return centres / np.linalg.norm(centres, axis=1, keepdims=True)


def bisect_median(prob_at, lo: float, hi: float, steps: int = 40) -> float:
    """Bisection for the point where ``prob_at(x) = Pr[proj >= x]`` crosses 1/2."""
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if prob_at(mid) > 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_median_lp(directions: np.ndarray, medians: np.ndarray, bound: float, iterations: int = 10_000):
    """Minimise ``max_v |v . z - m_v|`` by subgradient descent.

    Parameters
    ----------
    directions : ndarray, shape (S, l)
    medians : ndarray, shape (S,)
    bound : float
        Target violation; iteration stops once reached.

    Returns
    -------
    (ndarray, float)
        Best point found and its maximal violation.
    """
    z, *_ = np.linalg.lstsq(directions, medians, rcond=None)
    best_z = z.copy()
    best = float(np.max(np.abs(directions @ z - medians)))
    step0 = max(best, bound)
    for it in range(iterations):
        if best <= 0.5 * bound:
            break
        res = directions @ z - medians
        i = int(np.argmax(np.abs(res)))
        val = abs(res[i])
        if val < best:
            best, best_z = float(val), z.copy()
        g = np.sign(res[i]) * directions[i]
        z = z - step0 / math.sqrt(it + 1.0) * g / max(np.dot(g, g), 1e-300)
    res = float(np.max(np.abs(directions @ z - medians)))
    if res < best:
        best, best_z = res, z
    return best_z, best


# ---------------------------------------------------------------------------
# the learner


@dataclass
class LearnResult:
    """Outcome of :func:`robust_mean_learn`.

    ``failed`` is set when the iteration cap is hit or the median LP stays
    infeasible after widening; ``estimate`` is then the best current value.
    ``stalled`` records that some tensor was still large but no integer
    threshold met the tail trigger, so the loop ended early.
    """

    estimate: np.ndarray
    baseline_estimate: np.ndarray
    failed: bool
    failure_reason: Optional[str]
    stalled: bool
    filters: list
    tensor_norms: list
    thresholds: list
    dim_v: int
    cover_size: int
    lp_violation: Optional[float]
    lp_slack_used: Optional[float]
    retained_fraction: float
    queries: int

    def to_json(self) -> dict:
        out = asdict(self)
        out["estimate"] = self.estimate.tolist()
        out["baseline_estimate"] = self.baseline_estimate.tolist()
        return out


def _noise_levels(n: int, k: int, count: int, factor: float) -> np.ndarray:
    # spectral norm of an n x n**(t-1) matrix with entries of variance 1/(t! N)
    return np.array(
        [
            factor * (math.sqrt(n) + n ** ((t - 1) / 2.0)) / math.sqrt(math.factorial(t) * count)
            for t in range(1, k + 1)
        ]
    )


def _reference_tail(cfg, tensor, draws, thresholds):
    t = tensor.order
    if cfg.tail_reference == "analytic":
        return np.minimum(1.0, np.exp(2.0 - (np.asarray(thresholds) / cfg.tail_radius) ** (2.0 / t)))
    hz = np.sort(np.abs(h_eval(tensor, draws)))
    above = hz.size - np.searchsorted(hz, np.asarray(thresholds) + 1.0, side="left")
    return above / hz.size


def _subspace(tensors, thresholds, cap):
    scored = []
    for tensor, thr in zip(tensors, thresholds):
        svals, vecs = gram_singular_vectors(tensor)
        for s, v in zip(svals, vecs.T):
            if s > thr:
                scored.append((s / thr, v))
    scored.sort(key=lambda item: -item[0])
    basis = []
    for _, v in scored:
        if len(basis) >= cap:
            break
        w = v - sum(np.dot(b, v) * b for b in basis) if basis else v.copy()
        norm = np.linalg.norm(w)
        if norm > 1e-6:
            basis.append(w / norm)
    n = tensors[0].dim
    return np.array(basis).T if basis else np.zeros((n, 0))


def robust_mean_learn(samples, eps: float, config: Optional[LearnerConfig] = None, rng=None) -> LearnResult:
    """Estimate the mean of an ``eps``-contaminated ``N(mu, I)`` sample.

    Parameters
    ----------
    samples : ndarray, shape (N, n)
    eps : float
    config : LearnerConfig, optional
        Defaults to ``LearnerConfig(eps)``.
    rng : numpy Generator or int, optional
        Used for the Monte Carlo tail reference.

    Returns
    -------
    LearnResult
    """
    cfg = config or LearnerConfig(eps)
    if cfg.eps != eps:
        raise ValueError("config.eps and eps differ")
    rng = np.random.default_rng(rng)
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    big_n, n = x.shape
    k = cfg.k

    mu0, _ = baseline_filter_mean(x, eps, cfg.c1)
    y = x - mu0
    engine = _EmpiricalEngine(y) if cfg.mode == "samples" else _OracleEngine(y, eps)

    origin = np.zeros(n)
    chain = FilterChain([NormPrune(origin, math.sqrt(2.0 * n * math.log(1.0 / eps)))])
    mask = chain(y)
    precision = eps
    tensors = engine.tensors(mask, k, precision)
    loop_thr = loop_thresholds(cfg)
    draws = rng.standard_normal((cfg.tail_draws, n)) if cfg.tail_reference == "monte_carlo" else None
    slack_c = cfg.filter_threshold_const
    failed, reason, stalled = False, None, False
    records = []

    while True:
        norms = np.array([t.frobenius() for t in tensors])
        over = np.nonzero(norms >= loop_thr)[0]
        if over.size == 0:
            break
        if len(records) >= cfg.iteration_cap:
            failed, reason = True, "iteration cap reached"
            break
        tp = int(over[0]) + 1
        a = tensors[tp - 1].normalized()
        h = h_eval(a, y)
        t_max = int(math.ceil(np.max(np.abs(h[mask]))))
        grid = np.arange(0, t_max + 1)
        emp = engine.tail_probabilities(h, mask, grid)
        ref = _reference_tail(cfg, a, draws, grid)
        trigger = 3.0 * ref + 2.0 * eps / (slack_c * float(n) ** (2 * tp))
        hits = np.nonzero(emp >= trigger)[0]
        if hits.size == 0:
            stalled = True
            break
        thr = int(grid[hits[0]])
        new_mask = mask & (np.abs(h) <= thr + 1)
        rejected = 1.0 - new_mask.sum() / mask.sum()
        filt = PolynomialFilter(origin, a, thr, float(rejected))
        chain.append(filt)
        records.append(filt.describe())
        mask = new_mask
        tensors = engine.tensors(mask, k, precision)

    norms = [t.frobenius() for t in tensors]
    sv_thr = np.full(k, eps)
    if cfg.sv_noise_factor > 0:
        sv_thr = np.maximum(sv_thr, _noise_levels(n, k, int(mask.sum()), cfg.sv_noise_factor))
    cap = min(cfg.dim_cap, cfg.max_cover_dim, n)
    basis = _subspace(tensors, sv_thr, cap)
    dim_v = basis.shape[1]

    est = mu0.copy()
    lp_violation = None
    slack_used = None
    cover_size = 0
    if dim_v:
        cover = sphere_cover(dim_v)
        cover_size = cover.shape[0]
        dirs = cover @ basis.T
        half = cfg.c_b * eps * math.sqrt(math.log(1.0 / eps))
        medians = np.empty(cover_size)
        for i, v in enumerate(dirs):
            proj = y @ v
            medians[i] = bisect_median(
                lambda s, i=i, proj=proj: engine.upper_probability(i, proj, s),
                -half,
                half,
                cfg.bisection_steps,
            )
        slack_used = cfg.lp_slack
        z, lp_violation = solve_median_lp(cover, medians, slack_used * eps, cfg.lp_iterations)
        if lp_violation > slack_used * eps:
            slack_used *= 2.0
            z, lp_violation = solve_median_lp(cover, medians, slack_used * eps, cfg.lp_iterations)
            if lp_violation > slack_used * eps:
                failed, reason = True, "median LP infeasible"
        est = mu0 + basis @ z

    return LearnResult(
        estimate=est,
        baseline_estimate=mu0,
        failed=failed,
        failure_reason=reason,
        stalled=stalled,
        filters=records,
        tensor_norms=[float(v) for v in norms],
        thresholds=[float(v) for v in loop_thr],
        dim_v=int(dim_v),
        cover_size=int(cover_size),
        lp_violation=lp_violation,
        lp_slack_used=slack_used,
        retained_fraction=float(mask.mean()),
        queries=int(engine.queries),
    )


# ---------------------------------------------------------------------------
# moment matching


def moment_matching_k(eps: float, delta: float) -> int:
    """``2 * ceil(eps sqrt(ln(1/eps)) / delta)``."""
    return 2 * math.ceil(eps * math.sqrt(math.log(1.0 / eps)) / delta)


def moment_matching_check(moments, eps: float, delta: float) -> bool:
    """Accept iff the first ``k`` moments are within ``(t-1)! (delta/eps)**t eps / t`` of N(0, 1).

    Parameters
    ----------
    moments : sequence of float
        Raw moments ``E[X**t]`` for ``t = 1, 2, ...``; at least ``k`` values.
    """
    if not delta > eps:
        raise ValueError("delta must exceed eps")
    k = moment_matching_k(eps, delta)
    moments = list(moments)
    if len(moments) < k:
        raise ValueError(f"need {k} moments, got {len(moments)}")
    for t in range(1, k + 1):
        tol = math.factorial(t - 1) * (delta / eps) ** t * eps / t
        if abs(moments[t - 1] - gaussian_raw_moment(t)) > tol:
            return False
    return True

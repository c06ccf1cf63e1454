"""Command-line experiment harness.

Subcommands
-----------
gen      build a hard instance, certify it and optionally sample from it
learn    run the robust mean learner on generated or CSV data
test     run the mean testers or the two-component power experiment
bounds   evaluate the statistical-query and testing bound formulas

Every command writes one JSON report with the top-level keys
``command``, ``config``, ``seed``, ``version`` and ``results``.  Reports go to
``--out`` (relative paths are resolved against ``$SQGAUSS_OUTPUT_DIR`` when
it is set) or to standard output.  ``--config FILE`` supplies any flag from
a JSON object; explicit flags take precedence.

Exit status is 0 on success, 1 when a certificate or learner run fails and
2 for invalid parameters.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, correlation, instances, learner, oned, testers
from .sqoracle import GaussianSource, SQOracle

__all__ = ["main", "build_parser", "run"]

OUTPUT_ENV = "SQGAUSS_OUTPUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
FAMILIES = ("gmm", "robust-mean", "robust-cov", "cov-tradeoff", "sparse-mean")
MOMENT_TOL = 1e-8


class UsageError(ValueError):
    """Invalid command-line parameters."""


# ---------------------------------------------------------------------------
# JSON helpers


def _clean(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        if math.isnan(val):
            return "nan"
        if math.isinf(val):
            return "inf" if val > 0 else "-inf"
        return val
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


# ---------------------------------------------------------------------------
# instances


def build_instance(args):
    """Return ``(distribution, matched moments, reference law, family params)``."""
    fam = args.family
    if fam == "gmm":
        d = instances.gmm_hard_instance(args.k, args.eps, args.c_delta)
        return d, 2 * args.k - 1, oned.Gaussian1D(0.0, 1.0), {"k": args.k, "eps": args.eps, "c_delta": args.c_delta}
    if fam == "robust-mean":
        d = instances.robust_mean_instance(args.delta, args.m)
        return d, args.m, oned.Gaussian1D(args.delta, 1.0), {"delta": args.delta, "m": args.m}
    if fam == "robust-cov":
        d = instances.robust_cov_instance(args.delta, args.m, args.half_width_factor)
        ref = oned.Gaussian1D(0.0, (1.0 - args.delta) ** 2)
        return d, args.m, ref, {"delta": args.delta, "m": args.m, "half_width_factor": args.half_width_factor}
    if fam == "cov-tradeoff":
        d = instances.cov_tradeoff_instance(args.eps)
        return d, 3, oned.Gaussian1D(0.0, 1.0), {"eps": args.eps}
    if fam == "sparse-mean":
        d = instances.sparse_mean_instance(args.eps, args.delta)
        return d, 1, oned.Gaussian1D(args.eps, 1.0), {"eps": args.eps, "delta": args.delta}
    raise UsageError(f"unknown family {fam!r}")


def certify(args, d, m, ref) -> dict:
    res = instances.moment_residuals(d, m)
    if isinstance(d, oned.PerturbedGaussian1D):
        grid_min = d.min_on_grid(100_001)
    else:
        r = oned.integration_radius(d)
        grid_min = float(np.min(oned.pdf(d, np.linspace(-r, r, 100_001))))
    chi2 = oned.chi2_vs_standard(d)
    tv = oned.tv_distance(d, ref)
    tol = 1e-9 if args.family == "gmm" else MOMENT_TOL
    cert = {
        "matched_moments": m,
        "moment_residuals": res.tolist(),
        "max_moment_residual": float(np.max(np.abs(res))) if m else 0.0,
        "moment_tolerance": tol,
        "chi2_vs_standard": chi2,
        "tv_to_reference": tv,
        "reference": {"mean": ref.mean, "variance": ref.variance},
        "grid_min_density": grid_min,
        "grid_points": 100_001,
    }
    checks = [cert["max_moment_residual"] <= tol, grid_min >= 0.0]
    if args.family == "robust-mean":
        bound = 10.0 * args.delta * args.m**2 / math.sqrt(math.log(1.0 / args.delta))
        cert["tv_bound"] = bound
        cert["chi2_bound"] = 100.0 * args.delta
        checks += [tv <= bound, chi2 <= 100.0 * args.delta]
    if args.family == "gmm":
        means = np.array([g.mean for _, g in d.components])
        var = d.components[0][1].variance
        gap = np.min(np.diff(np.sort(means)))
        pair_tv = float(2.0 * oned.cdf(oned.Gaussian1D(0.0, 1.0), gap / (2.0 * math.sqrt(var))) - 1.0)
        cert["min_pairwise_component_tv"] = pair_tv
        checks.append(pair_tv >= 1.0 - args.eps)
    cert["passed"] = bool(all(checks))
    return cert


def cmd_gen(args) -> tuple[dict, int]:
    d, m, ref, params = build_instance(args)
    cert = certify(args, d, m, ref)
    results = {"family": args.family, "params": params, "instance": oned.to_dict(d), "certificate": cert}
    if args.samples:
        rng = np.random.default_rng(args.seed)
        if args.n:
            v = rng.standard_normal(args.n)
            v /= np.linalg.norm(v)
            x = instances.hidden_direction_sample(instances.HiddenDirectionDistribution(d, v), rng, args.samples)
            results["direction"] = v.tolist()
        else:
            x = oned.sample(d, rng, args.samples)[:, None]
        if args.samples_out:
            path = _resolve(args.samples_out)
            path.parent.mkdir(parents=True, exist_ok=True)
            np.savetxt(path, x, delimiter=",", fmt="%.17g")
            results["samples_path"] = str(args.samples_out)
        results["sample_mean"] = x.mean(axis=0).tolist()
        results["sample_count"] = int(x.shape[0])
    return results, EXIT_OK if cert["passed"] else EXIT_FAIL


# ---------------------------------------------------------------------------
# learner


def _learn_data(args, rng):
    if args.data:
        x = np.loadtxt(_resolve(args.data), delimiter=",", ndmin=2)
        truth = np.array([float(v) for v in args.truth.split(",")]) if args.truth else None
        return x, truth, {"source": "csv", "path": args.data}
    n, count, eps = args.n, args.N, args.eps
    mu = rng.standard_normal(n)
    kind = args.contaminate or "pure"
    if kind == "pure":
        x = rng.standard_normal((count, n)) + mu
        return x, mu, {"source": "pure"}
    if kind == "far-point":
        x = rng.standard_normal((count, n)) + mu
        bad = int(round(eps * count))
        x[:bad] = mu + args.far_distance * np.eye(n)[0]
        return x, mu, {"source": "far-point", "far_distance": args.far_distance, "corrupted": bad}
    if kind == "paper-instance":
        delta = min(eps, args.instance_delta)
        a = instances.robust_mean_instance(delta, args.m)
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        x = instances.hidden_direction_sample(instances.HiddenDirectionDistribution(a, v), rng, count) + mu
        return x, mu + delta * v, {"source": "paper-instance", "delta": delta, "m": args.m}
    raise UsageError(f"unknown contamination {kind!r}")


def cmd_learn(args) -> tuple[dict, int]:
    rng = np.random.default_rng(args.seed)
    x, truth, data_info = _learn_data(args, rng)
    cfg = learner.LearnerConfig(
        eps=args.eps,
        k=args.k,
        c_f=args.c_f,
        tail_reference=args.tail_reference,
        tail_radius=args.tail_radius,
        tail_draws=args.tail_draws,
        iteration_cap=args.iteration_cap,
        lp_slack=args.lp_slack,
        mode=args.mode,
    )
    res = learner.robust_mean_learn(x, args.eps, cfg, rng=np.random.default_rng(args.seed + 1))
    out = {"data": data_info, "n": int(x.shape[1]), "N": int(x.shape[0]), "run": res.to_json()}
    norms, thr = res.tensor_norms, res.thresholds
    out["loop_exit"] = {
        "tensor_norms": norms,
        "thresholds": thr,
        "all_below": bool(all(a < b for a, b in zip(norms, thr))),
    }
    if truth is not None:
        out["error"] = float(np.linalg.norm(res.estimate - truth))
        out["baseline_error"] = float(np.linalg.norm(res.baseline_estimate - truth))
        out["empirical_mean_error"] = float(np.linalg.norm(x.mean(axis=0) - truth))
    return out, EXIT_FAIL if res.failed else EXIT_OK


# ---------------------------------------------------------------------------
# testers


def _rate(flags) -> float:
    return float(np.mean(flags)) if len(flags) else 0.0


def cmd_test(args) -> tuple[dict, int]:
    if args.kind == "basic":
        k = args.k or testers.basic_sample_size(args.n, args.eps)
        null_yes, alt_no = [], []
        for trial in range(args.trials):
            rng = np.random.default_rng(args.seed + trial)
            v = testers.basic_mean_test(rng.standard_normal((k, args.n)), args.eps)
            null_yes.append(v.verdict == testers.YES)
            mu = rng.standard_normal(args.n)
            mu *= args.eps / np.linalg.norm(mu)
            v = testers.basic_mean_test(rng.standard_normal((k, args.n)) + mu, args.eps)
            alt_no.append(v.verdict == testers.NO)
        return {"kind": "basic", "k": k, "yes_rate_null": _rate(null_yes), "no_rate_alternative": _rate(alt_no)}, EXIT_OK
    if args.kind == "robust":
        cfg = testers.TesterConfig(c_l=args.c_l, c_prime=args.c_prime)
        delta = args.delta
        exact = testers.robust_mean_test(SQOracle(GaussianSource(np.zeros(args.n))), args.eps, delta, cfg)
        no_flags, steps = [], []
        for trial in range(args.trials):
            rng = np.random.default_rng(args.seed + trial)
            mu = rng.standard_normal(args.n)
            mu *= delta / np.linalg.norm(mu)
            x = rng.standard_normal((args.N, args.n)) + mu
            bad = int(round(args.eps * args.N))
            # the corrupted mass cancels the shift of the first moment
            x[:bad] = -(1.0 - args.eps) / args.eps * mu
            v = testers.robust_mean_test(x, args.eps, delta, cfg)
            no_flags.append(v.verdict == testers.NO)
            steps.append(v.step)
        return {
            "kind": "robust",
            "exact_gaussian": exact.to_json(),
            "no_rate_alternative": _rate(no_flags),
            "rejecting_steps": {str(s): steps.count(s) for s in sorted(set(steps), key=str)},
            "soundness_margin_ok": testers.soundness_margin_ok(args.n, args.eps, delta, args.c_l),
        }, EXIT_OK
    if args.kind == "gmm-power":
        sizes = [int(s) for s in args.sizes.split(",")]
        table = []
        for size in sizes:
            stats0, stats1 = [], []
            for trial in range(args.trials):
                rng = np.random.default_rng(args.seed + trial)
                v = rng.standard_normal(args.n)
                v /= np.linalg.norm(v)
                x0 = rng.standard_normal((size, args.n))
                signs = rng.choice([-1.0, 1.0], size=size)
                x1 = rng.standard_normal((size, args.n)) + np.outer(signs * args.eps, v)
                stats0.append(np.linalg.eigvalsh(x0.T @ x0 / size)[-1])
                stats1.append(np.linalg.eigvalsh(x1.T @ x1 / size)[-1])
            table.append({"N": size, "accuracy": _best_threshold_accuracy(stats0, stats1)})
        return {"kind": "gmm-power", "statistic": "top covariance eigenvalue", "table": table}, EXIT_OK
    raise UsageError(f"unknown test kind {args.kind!r}")


def _best_threshold_accuracy(null, alt) -> float:
    null, alt = np.sort(null), np.sort(alt)
    cuts = np.concatenate(([-np.inf], null, alt))
    best = 0.0
    for c in cuts:
        acc = 0.5 * (np.mean(null <= c) + np.mean(alt > c))
        best = max(best, float(acc))
    return best


# ---------------------------------------------------------------------------
# bounds


def cmd_bounds(args) -> tuple[dict, int]:
    if args.kind == "testing-series":
        log_s = correlation.testing_chi2_series_log(args.n, args.N, args.chi2)
        value = correlation.testing_chi2_series(args.n, args.N, args.chi2)
        return {
            "kind": "testing-series",
            "value": value,
            "log_value": log_s,
            "tv_bound": correlation.testing_tv_bound(value) if math.isfinite(value) else math.inf,
            "at_most_4_3": bool(value <= 4.0 / 3.0),
            "sample_boundary": correlation.testing_sample_boundary(args.n, args.chi2) if args.chi2 > 0 else math.inf,
        }, EXIT_OK
    if args.kind == "sq-report":
        d, m, _, params = build_instance(args)
        rep = correlation.sq_bound_report(d, args.n, args.m_report if args.m_report is not None else m, args.c)
        return {"kind": "sq-report", "family": args.family, "params": params, "report": rep.to_dict()}, EXIT_OK
    raise UsageError(f"unknown bounds kind {args.kind!r}")


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--config", default=None, help="JSON file supplying flag values")


def _family_args(p):
    p.add_argument("family", choices=FAMILIES)
    p.add_argument("--k", type=int, default=3, help="gmm components")
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--m", type=int, default=4, help="matched moments for Legendre instances")
    p.add_argument("--c-delta", type=float, default=1.0)
    p.add_argument("--half-width-factor", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqgauss", description="Hard instances, learners and testers for Gaussian means.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="build and certify a hard instance")
    _family_args(g)
    g.add_argument("--samples", type=int, default=0, help="number of samples to draw")
    g.add_argument("--n", type=int, default=0, help="embed along a random direction in R^n")
    g.add_argument("--samples-out", default=None, help="CSV path for the samples")
    _common(g)

    lr = sub.add_parser("learn", help="run the robust mean learner")
    src = lr.add_mutually_exclusive_group()
    src.add_argument("--pure", action="store_true", help="uncorrupted N(mu, I) data")
    src.add_argument("--contaminate", choices=("far-point", "paper-instance"))
    src.add_argument("--data", default=None, help="CSV file of samples")
    lr.add_argument("--truth", default=None, help="comma-separated true mean for --data")
    lr.add_argument("--n", type=int, default=16)
    lr.add_argument("--N", type=int, default=200_000)
    lr.add_argument("--eps", type=float, default=0.05)
    lr.add_argument("--far-distance", type=float, default=10.0)
    lr.add_argument("--instance-delta", type=float, default=0.04)
    lr.add_argument("--m", type=int, default=4)
    lr.add_argument("--k", type=int, default=None)
    lr.add_argument("--c-f", type=float, default=1.0)
    lr.add_argument("--tail-reference", choices=("monte_carlo", "analytic"), default="monte_carlo")
    lr.add_argument("--tail-radius", type=float, default=1.0)
    lr.add_argument("--tail-draws", type=int, default=100_000)
    lr.add_argument("--iteration-cap", type=int, default=50)
    lr.add_argument("--lp-slack", type=float, default=2.0)
    lr.add_argument("--mode", choices=("samples", "oracle"), default="samples")
    _common(lr)

    t = sub.add_parser("test", help="run a tester or power experiment")
    t.add_argument("kind", choices=("basic", "robust", "gmm-power"))
    t.add_argument("--n", type=int, default=8)
    t.add_argument("--eps", type=float, default=0.05)
    t.add_argument("--delta", type=float, default=0.4)
    t.add_argument("--k", type=int, default=None, help="basic tester sample size")
    t.add_argument("--N", type=int, default=20_000, help="robust tester sample size")
    t.add_argument("--sizes", default="100,1000,10000", help="gmm-power sample sizes")
    t.add_argument("--trials", type=int, default=100)
    t.add_argument("--c-l", type=float, default=1.0)
    t.add_argument("--c-prime", type=float, default=2.0)
    _common(t)

    b = sub.add_parser("bounds", help="evaluate bound formulas")
    bsub = b.add_subparsers(dest="kind", required=True)
    ts = bsub.add_parser("testing-series")
    ts.add_argument("--n", type=int, default=200)
    ts.add_argument("--N", type=int, default=100)
    ts.add_argument("--chi2", type=float, default=0.25)
    _common(ts)
    sq = bsub.add_parser("sq-report")
    _family_args(sq)
    sq.add_argument("--n", type=int, default=1000)
    sq.add_argument("--c", type=float, default=0.25)
    sq.add_argument("--m-report", type=int, default=None, help="override the matched-moment count")
    _common(sq)
    return parser


def _leaf_parser(parser, argv):
    """The subparser that handles `argv`."""
    node = parser
    args = list(argv)
    while True:
        subs = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not subs:
            return node
        choices = subs[0].choices
        idx = next((i for i, a in enumerate(args) if a in choices), None)
        if idx is None:
            return node
        node = choices[args[idx]]
        args = args[idx + 1 :]


_HANDLERS = {"gen": cmd_gen, "learn": cmd_learn, "test": cmd_test, "bounds": cmd_bounds}
_NON_CONFIG = {"config", "out", "command"}


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(_resolve(args.config)) as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a JSON object")
        leaf = _leaf_parser(parser, argv)
        known = {a.dest for a in leaf._actions}
        unknown = set(k.replace("-", "_") for k in overrides) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        leaf.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
        args = parser.parse_args(argv)
    return args


def run(argv) -> tuple[dict, int, argparse.Namespace]:
    args = parse(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        results, code = _HANDLERS[args.command](args)
    messages = sorted({str(w.message) for w in caught})
    if messages:
        results["warnings"] = messages
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _NON_CONFIG}
    report = {
        "command": args.command,
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "results": results,
    }
    return report, code, args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        report, code, args = run(argv)
    except SystemExit as exc:  # argparse
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except instances.InstanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = dumps(report)
    path = _resolve(args.out)
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 ok, 1 usage/config error, 2 data/schema error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from ..errors import DataError, InvalidInputError, TrainingDivergedError, UndefinedMetricError
from .experiments import ExperimentConfig, NhanesConfig, run_coverage, run_nhanes, run_simulation
from .nhanes import load_nhanes

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("svyconf")


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text):
    return [int(t) for t in text.replace(",", " ").split()]


def _grid(text):
    """``"16;32,16;64,32"`` -> ((16,), (32, 16), (64, 32))."""
    return [tuple(int(h) for h in part.split(",")) for part in text.split(";") if part.strip()]


def _batch(text):
    return text if text == "full" else int(text)


def _load_config(path, cls):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
    return data


def _merge(cls, args, mapping):
    """Config file values overridden by any flag the user actually passed."""
    values = _load_config(args.config, cls)
    for flag, key in mapping.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    return cls(**values)


def _common(p):
    p.add_argument("--config", help="JSON file of settings; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--grid", type=_grid, help='architecture candidates, e.g. "16;32,16;64,32"')
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=_batch)


def _experiment_flags(p):
    p.add_argument("--scenario", choices=("a", "b"))
    p.add_argument("--n", type=_ints, help="expected sample size(s), e.g. 5000 or 5000,20000")
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--states", type=int, help="number of first-stage clusters")
    p.add_argument("--state-prob", type=float)


_EXPERIMENT_MAP = {
    "scenario": "scenario", "n": "n_values", "reps": "reps", "seed": "seed", "workers": "workers",
    "grid": "grid", "epochs": "epochs", "lr": "learning_rate", "batch_size": "batch_size",
    "states": "n_states", "state_prob": "state_prob",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="svyconf", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replicated two-stage simulation with metric tables")
    _common(p)
    _experiment_flags(p)

    p = sub.add_parser("coverage", help="conformal coverage experiment")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--alpha", type=_floats, help="nominal coverage levels, e.g. 0.8,0.9,0.95")
    p.add_argument("--method", choices=("cqc", "split"))
    p.add_argument("--score-weighting", choices=("literal", "plain"))
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("nhanes", help="fit and conformalize the diabetes model suite")
    _common(p)
    p.add_argument("--data", required=True, help="CSV extract (see README for the schema)")
    p.add_argument("--models", type=_ints, help="model ids, e.g. 1,4,7")
    p.add_argument("--alpha", type=float, help="nominal coverage level of the prediction sets")
    p.add_argument("--score-weighting", choices=("literal", "plain"))
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("gradcheck", help="backprop vs finite differences on random networks")
    p.add_argument("--nets", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)

    p = sub.add_parser("quantile-oracle", help="weighted quantile vs brute-force scan")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _simulate(args):
    cfg = _merge(ExperimentConfig, args, _EXPERIMENT_MAP)
    t0 = time.perf_counter()
    _, summary = run_simulation(cfg, args.out)
    for r in summary:
        print(f"{r['scenario']} N={r['N']:>6} {r['metric']:<14} {r['mean']:.4f} +/- {r['sd'] or 0:.4f}")
    logger.info("simulation finished in %.1fs, results in %s", time.perf_counter() - t0, args.out)
    return EXIT_OK


def _coverage(args):
    mapping = {**_EXPERIMENT_MAP, "alpha": "levels", "method": "method",
               "score_weighting": "score_weighting", "n_test": "n_test"}
    cfg = _merge(ExperimentConfig, args, mapping)
    _, summary = run_coverage(cfg, args.out)
    for r in summary:
        print(f"{r['method']} level={r['level']:.2f} N={r['N']:>6} {r['metric']:<14} "
              f"mean={r['mean']:.4f} median={r['median']:.4f} iqr={r['iqr']:.4f}")
    return EXIT_OK


def _nhanes(args):
    mapping = {"models": "model_ids", "alpha": "level", "score_weighting": "score_weighting",
               "repeats": "repeats", "seed": "seed", "grid": "grid", "epochs": "epochs",
               "lr": "learning_rate", "batch_size": "batch_size"}
    cfg = _merge(NhanesConfig, args, mapping)
    ds = load_nhanes(args.data)
    results = run_nhanes(ds, cfg, args.out)
    for mid, r in results.items():
        rep = r["report"]
        print(f"model {mid} cost={r['cost']:<4} auc={rep.auc:.3f} acc={rep.accuracy:.3f} "
              f"mean_set_size={r['calibration_coverage'].mean_set_size:.2f}")
    return EXIT_OK


def gradcheck(nets=20, seed=0, tol=1e-5):
    """Relative error of backprop vs central differences for every loss kind.

    Returns a list of ``(loss_name, worst_relative_error)``.
    """
    from .. import numnet

    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(nets):
        p_in = int(rng.integers(2, 6))
        hidden = [int(h) for h in rng.integers(2, 8, size=int(rng.integers(1, 3)))]
        n = int(rng.integers(5, 15))
        X = rng.standard_normal((n, p_in))
        w = rng.uniform(0.2, 5.0, n)
        K = int(rng.integers(2, 4))
        cases = [("cross_entropy", [p_in, *hidden, K], rng.integers(0, K, n),
                  lambda P, y: numnet.weighted_cross_entropy(P, X, y, w)),
                 ("mse", [p_in, *hidden, 1], rng.standard_normal(n),
                  lambda P, y: numnet.weighted_mse(P, X, y, w))]
        for a in (0.1, 0.5, 0.9):
            cases.append((f"pinball({a})", [p_in, *hidden, 1], rng.standard_normal(n),
                          lambda P, y, a=a: numnet.weighted_pinball(P, X, y, w, a)))
        for name, sizes, y, fn in cases:
            params = numnet.init_params(sizes, rng)
            params = params.with_flat(params.flat() + 0.1 * rng.standard_normal(params.n_params))
            theta = params.flat()
            analytic = fn(params, y).gradient
            numeric = numnet.numerical_gradient(lambda t: fn(params.with_flat(t), y).value, theta)
            err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
            worst[name] = max(worst.get(name, 0.0), err)
    return sorted(worst.items())


def _gradcheck(args):
    ok = True
    for name, err in gradcheck(args.nets, args.seed, args.tol):
        passed = err < args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name:<14} max relative error {err:.2e}")
    return EXIT_OK if ok else EXIT_NUMERIC


def quantile_oracle(cases=100, seed=0):
    """Compare weighted_quantile with an O(n^2) cumulative scan; returns mismatch count."""
    from .. import survey

    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(cases):
        n = int(rng.integers(1, 200))
        values = rng.normal(size=n).round(int(rng.integers(0, 3)))
        weights = rng.uniform(0.01, 3, n)
        inf_w = float(rng.choice([0.0, rng.uniform(0, 1)]))
        d = survey.WeightedEmpirical(values, weights, inf_w)
        for level in rng.uniform(0.001, 1.0, 50):
            got = survey.weighted_quantile(d, level)
            if got != brute_force_quantile(values, weights, inf_w, level):
                mismatches += 1
    return mismatches


def brute_force_quantile(values, weights, inf_weight, level):
    """Smallest value v whose total weight at or below v reaches ``level`` of all weight."""
    total = math.fsum(weights) + inf_weight
    best = math.inf
    for v in values:
        mass = math.fsum(w for u, w in zip(values, weights) if u <= v)
        if mass >= level * total * (1 - 1e-12) and v < best:
            best = v
    return float(best)


def _quantile_oracle(args):
    bad = quantile_oracle(args.cases, args.seed)
    print(f"{'PASS' if bad == 0 else 'FAIL'} {args.cases} cases x 50 levels, {bad} mismatches")
    return EXIT_OK if bad == 0 else EXIT_NUMERIC


COMMANDS = {"simulate": _simulate, "coverage": _coverage, "nhanes": _nhanes,
            "gradcheck": _gradcheck, "quantile-oracle": _quantile_oracle}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, UndefinedMetricError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

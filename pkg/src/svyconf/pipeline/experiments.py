"""Replicated simulation, coverage and NHANES experiment runners."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import conformal, metrics, numnet, survey
from ..dataset import Dataset
from ..errors import DataError, InvalidInputError, TrainingDivergedError
from ..numnet import TrainConfig
from .io import config_hash, write_csv, write_json
from .nhanes import complete_cases, model_spec, require_columns

logger = logging.getLogger(__name__)

DEFAULT_GRID = ((16,), (32, 16), (64, 32))
METRIC_NAMES = ("auc", "accuracy", "recall", "precision", "f1", "cross_entropy")
_SCENARIO_TAG = {"a": 0, "b": 1}


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by the simulation and coverage runners.

    ``n_values`` are expected two-stage sample sizes; each replicate builds a
    population of ``population_size(N)`` units so the sample lands near N.
    ``levels`` are nominal coverage levels (0.9 means 90 % sets).
    """

    scenario: str = "a"
    n_values: tuple = (5000,)
    reps: int = 20
    levels: tuple = (0.8, 0.9, 0.95)
    fractions: tuple = (0.5, 0.3, 0.2)
    seed: int = 2024
    state_prob: float = 0.8
    n_states: int = 40
    min_cities: int = 3
    max_cities: int = 8
    grid: tuple = DEFAULT_GRID
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int | str = 32
    method: str = "cqc"
    score_weighting: str = "literal"
    n_test: int = 5000
    workers: int = 1

    def __post_init__(self):
        if self.scenario not in _SCENARIO_TAG:
            raise InvalidInputError(f"scenario must be 'a' or 'b', got {self.scenario!r}")
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "grid", tuple(tuple(int(h) for h in g) for g in self.grid))
        if not self.n_values or min(self.n_values) < 10:
            raise InvalidInputError("sample sizes must be at least 10")
        if self.reps < 1:
            raise InvalidInputError("need at least one replicate")
        if len(self.fractions) != 3 or min(self.fractions) <= 0 or abs(sum(self.fractions) - 1) > 1e-9:
            raise InvalidInputError("split fractions must be three positive numbers summing to 1")
        if any(not 0 < a < 1 for a in self.levels):
            raise InvalidInputError("coverage levels must lie in (0, 1)")
        if self.method not in ("cqc", "split"):
            raise InvalidInputError("method must be 'cqc' or 'split'")
        if not self.grid:
            raise InvalidInputError("architecture grid is empty")

    @property
    def design(self) -> survey.SurveyDesign:
        return survey.SurveyDesign(kind="two_stage", state_prob=self.state_prob, n_states=self.n_states,
                                   min_cities=self.min_cities, max_cities=self.max_cities)

    def population_size(self, n) -> int:
        mean_cities = (self.min_cities + self.max_cities) / 2
        return int(math.ceil(n * mean_cities / self.state_prob))

    def train_config(self, hidden, seed) -> TrainConfig:
        return TrainConfig(hidden_widths=hidden, epochs=self.epochs, learning_rate=self.learning_rate,
                           batch_size=self.batch_size, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def hash(self) -> str:
        # worker count does not change results
        d = self.to_dict()
        d.pop("workers")
        return config_hash(d)


def replicate_rng(seed, *keys) -> np.random.Generator:
    """Independent stream for (master seed, keys...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _child_seed(rng) -> int:
    return int(rng.integers(0, 2**63))


# ---------------------------------------------------------------------------
# splitting and preprocessing


def split_dataset(ds, fractions=(0.5, 0.3, 0.2), seed=0):
    """Random disjoint (train, architecture, test) index arrays covering every row.

    ``seed`` may be an int or a Generator. Sizes are rounded for the first two
    parts; the last part takes the remainder.
    """
    n = ds if isinstance(ds, (int, np.integer)) else len(ds)
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size != 3 or (fr <= 0).any() or abs(fr.sum() - 1) > 1e-9:
        raise InvalidInputError("fractions must be three positive numbers summing to 1")
    if n < 10:
        raise InvalidInputError(f"need at least 10 rows to split, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    a = int(round(fr[0] * n))
    b = a + int(round(fr[1] * n))
    return perm[:a], perm[a:b], perm[b:]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, w):
        mean = np.average(X, axis=0, weights=w)
        sd = np.sqrt(np.average((X - mean) ** 2, axis=0, weights=w))
        return cls(mean, np.where(sd > 0, sd, 1.0))

    def __call__(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


@dataclass(frozen=True, eq=False)
class Selection:
    config: TrainConfig
    params: numnet.NetworkParams
    losses: dict = field(default_factory=dict)


def select_architecture(train: Dataset, arch: Dataset, candidates, base: TrainConfig) -> Selection:
    """Train each hidden-width candidate on ``train``; keep the lowest weighted CE on ``arch``.

    Ties (exactly equal loss) go to the smaller parameter count. Diverging
    candidates are skipped.
    """
    if not candidates:
        raise InvalidInputError("no architecture candidates")
    best = None
    losses = {}
    for hidden in candidates:
        cfg = base.replace(hidden_widths=tuple(hidden), loss_kind="cross_entropy")
        try:
            params = numnet.train(train.X, train.y, train.weights, cfg)
        except TrainingDivergedError as exc:
            logger.warning("candidate %s diverged at epoch %d", hidden, exc.epoch)
            continue
        ce = numnet.weighted_cross_entropy(params, arch.X, arch.y, arch.weights).value
        losses[tuple(hidden)] = ce
        key = (ce, params.n_params)
        if best is None or key < best[0]:
            best = (key, cfg, params)
    if best is None:
        raise TrainingDivergedError(-1, "every architecture candidate diverged")
    return Selection(best[1], best[2], losses)


def _standardized(parts, train_idx, ds):
    std = Standardizer.fit(ds.X[train_idx], ds.weights[train_idx])
    return [replace(ds.subset(p), X=std(ds.X[p])) for p in parts], std


# ---------------------------------------------------------------------------
# simulation


def _simulation_replicate(cfg: ExperimentConfig, n, rep):
    rng = replicate_rng(cfg.seed, _SCENARIO_TAG[cfg.scenario], n, rep)
    pop = survey.generate_population(cfg.scenario, cfg.population_size(n), rng, cfg.design)
    sample = survey.draw_two_stage_sample(cfg.design, pop, rng).rows
    idx = split_dataset(sample, cfg.fractions, rng)
    (train, arch, test), _ = _standardized(idx, idx[0], sample)
    sel = select_architecture(train, arch, cfg.grid, cfg.train_config(cfg.grid[0], _child_seed(rng)))
    probs = numnet.predict_proba(sel.params, test.X)[:, 1]
    report = metrics.evaluate(probs, test.y, test.weights)
    row = {
        "scenario": cfg.scenario,
        "N": n,
        "replicate": rep,
        "sample_size": len(sample),
        "n_test": len(test),
        "hidden": "-".join(map(str, sel.config.hidden_widths)),
    }
    row.update({k: getattr(report, k) for k in METRIC_NAMES})
    row["confusion"] = report.confusion
    return row


def _run_tasks(fn, cfg, tasks):
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(fn, cfg, *t) for t in tasks]
            results = [f.result() for f in futures]
    else:
        results = [fn(cfg, *t) for t in tasks]
    # merge in task-key order regardless of completion order
    return [r for _, r in sorted(zip(tasks, results), key=lambda p: p[0])]


def _tagged(fn, cfg, n, rep):
    try:
        return fn(cfg, n, rep)
    except Exception:
        logger.error("scenario %s, N=%d, replicate %d failed", cfg.scenario, n, rep)
        raise


def _simulation_task(cfg, n, rep):
    return _tagged(_simulation_replicate, cfg, n, rep)


def summarize(rows, group_keys, value_keys):
    """Mean and sample sd of ``value_keys`` per distinct ``group_keys`` tuple."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group_keys), []).append(r)
    out = []
    for key in sorted(groups):
        members = groups[key]
        for name in value_keys:
            vals = np.array([m[name] for m in members if m[name] is not None], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            out.append({
                **dict(zip(group_keys, key)),
                "metric": name,
                "mean": float(vals.mean()) if vals.size else None,
                "sd": float(vals.std(ddof=1)) if vals.size > 1 else None,
                "median": float(np.median(vals)) if vals.size else None,
                "iqr": float(np.subtract(*np.percentile(vals, [75, 25]))) if vals.size else None,
                "n": int(vals.size),
            })
    return out


def run_simulation(cfg: ExperimentConfig, out_dir=None):
    """Replicated two-stage simulation; returns ``(replicate_rows, summary_rows)``.

    With ``out_dir`` writes ``simulation_replicates.csv``,
    ``simulation_summary.csv`` and ``config.json``.
    """
    tasks = [(n, rep) for n in cfg.n_values for rep in range(cfg.reps)]
    rows = _run_tasks(_simulation_task, cfg, tasks)
    h = cfg.hash
    for r in rows:
        r["config_hash"] = h
    summary = summarize(rows, ("scenario", "N"), METRIC_NAMES)
    for r in summary:
        r["config_hash"] = h
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "simulation_replicates.csv", rows,
                  ["scenario", "N", "replicate", "sample_size", "n_test", "hidden", *METRIC_NAMES,
                   "confusion", "config_hash"])
        write_csv(out / "simulation_summary.csv", summary,
                  ["scenario", "N", "metric", "mean", "sd", "median", "iqr", "n", "config_hash"])
        write_json(out / "config.json", {**cfg.to_dict(), "config_hash": h})
    return rows, summary


# ---------------------------------------------------------------------------
# coverage


def _coverage_replicate(cfg: ExperimentConfig, n, rep):
    rng = replicate_rng(cfg.seed, 100 + _SCENARIO_TAG[cfg.scenario], n, rep)
    pop = survey.generate_population(cfg.scenario, cfg.population_size(n), rng, cfg.design)
    sample = survey.draw_two_stage_sample(cfg.design, pop, rng).rows
    i1, i2, i3 = split_dataset(sample, cfg.fractions, rng)
    std = Standardizer.fit(sample.X[i1], sample.weights[i1])
    rows_std = replace(sample, X=std(sample.X))
    test_pop = survey.generate_population(cfg.scenario, cfg.n_test, rng, cfg.design)
    X_test = std(test_pop.X)
    train_seed = _child_seed(rng)
    base = cfg.train_config(cfg.grid[0], train_seed)
    out = []
    if cfg.method == "cqc":
        score_net = numnet.train(rows_std.X[i1], rows_std.y[i1], rows_std.weights[i1], base)
        for level in cfg.levels:
            model = conformal.cqc_fit(rows_std, (i1, i2), 1 - level, base,
                                      score_weighting=cfg.score_weighting, score_net=score_net)
            model = conformal.cqc_calibrate(model, rows_std, i3)
            mask = conformal.cqc_membership(model, X_test)
            res = conformal.evaluate_coverage(mask, test_pop.y, alpha=model.alpha)
            out.append((level, res, model.threshold))
    else:
        fit_idx = np.concatenate([i1, i2])
        reg = numnet.train(rows_std.X[fit_idx], rows_std.y[fit_idx].astype(np.float64),
                           rows_std.weights[fit_idx], base.replace(loss_kind="mse"))
        cal = rows_std.subset(i3)
        for level in cfg.levels:
            sets = conformal.split_conformal_interval(reg, cal, X_test, 1 - level)
            res = conformal.evaluate_coverage(sets, test_pop.y, alpha=1 - level)
            out.append((level, res, (sets[0].hi - sets[0].lo) / 2))
    return [{
        "scenario": cfg.scenario,
        "method": cfg.method,
        "level": level,
        "N": n,
        "replicate": rep,
        "sample_size": len(sample),
        "n_calibration": len(i3),
        "coverage": res.empirical_coverage,
        "mean_set_size": res.mean_set_size,
        "threshold": thr,
        "n_eval": res.n_eval,
    } for level, res, thr in out]


def _coverage_task(cfg, n, rep):
    return _tagged(_coverage_replicate, cfg, n, rep)


def run_coverage(cfg: ExperimentConfig, out_dir=None):
    """Per-replicate conformal coverage on an independent test population.

    Returns ``(rows, summary)``; rows are one per (level, N, replicate), which
    is the boxplot layout. Writes ``coverage_replicates.csv`` and
    ``coverage_summary.csv`` when ``out_dir`` is given.
    """
    tasks = [(n, rep) for n in cfg.n_values for rep in range(cfg.reps)]
    rows = [r for chunk in _run_tasks(_coverage_task, cfg, tasks) for r in chunk]
    rows.sort(key=lambda r: (r["level"], r["N"], r["replicate"]))
    h = cfg.hash
    for r in rows:
        r["config_hash"] = h
    summary = summarize(rows, ("scenario", "method", "level", "N"), ("coverage", "mean_set_size"))
    for r in summary:
        r["config_hash"] = h
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "coverage_replicates.csv", rows,
                  ["scenario", "method", "level", "N", "replicate", "sample_size", "n_calibration",
                   "coverage", "mean_set_size", "threshold", "n_eval", "config_hash"])
        write_csv(out / "coverage_summary.csv", summary,
                  ["scenario", "method", "level", "N", "metric", "mean", "sd", "median", "iqr", "n",
                   "config_hash"])
        write_json(out / "config.json", {**cfg.to_dict(), "config_hash": h})
    return rows, summary


# ---------------------------------------------------------------------------
# NHANES


@dataclass(frozen=True)
class NhanesConfig:
    model_ids: tuple = (1, 2, 3, 4, 5, 6, 7)
    level: float = 0.9
    repeats: int = 10
    fractions: tuple = (0.5, 0.3, 0.2)
    seed: int = 2024
    grid: tuple = DEFAULT_GRID
    epochs: int = 60
    learning_rate: float = 1e-3
    batch_size: int | str = 32
    score_weighting: str = "literal"
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "model_ids", tuple(int(m) for m in self.model_ids))
        object.__setattr__(self, "grid", tuple(tuple(int(h) for h in g) for g in self.grid))
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        for m in self.model_ids:
            model_spec(m)
        if not 0 < self.level < 1:
            raise InvalidInputError("coverage level must lie in (0, 1)")
        if self.repeats < 1:
            raise InvalidInputError("need at least one repeat")

    @property
    def hash(self) -> str:
        return config_hash(asdict(self))


def _nhanes_model(cfg: NhanesConfig, ds: Dataset, mid):
    spec = model_spec(mid)
    data = ds.select(spec.columns)
    reports = []
    first = None
    for r in range(cfg.repeats):
        rng = replicate_rng(cfg.seed, mid, r)
        idx = split_dataset(data, cfg.fractions, rng)
        (train, arch, test), std = _standardized(idx, idx[0], data)
        base = TrainConfig(hidden_widths=cfg.grid[0], epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                           batch_size=cfg.batch_size, seed=_child_seed(rng))
        sel = select_architecture(train, arch, cfg.grid, base)
        probs = numnet.predict_proba(sel.params, test.X)[:, 1]
        reports.append(metrics.evaluate(probs, test.y, test.weights, threshold=cfg.threshold))
        if first is None:
            first = (idx, std, sel)
    return spec, data, reports, first


def _mean_report(reports):
    def avg(name):
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        vals = [v for v in vals if np.isfinite(v)]
        return float(np.mean(vals)) if vals else None

    confusion = tuple(int(sum(r.confusion[i] for r in reports)) for i in range(4))
    return metrics.MetricsReport(
        auc=avg("auc"), accuracy=avg("accuracy"), recall=avg("recall"), precision=avg("precision"),
        f1=avg("f1"), cross_entropy=avg("cross_entropy"), confusion=confusion,
        n_eval=int(sum(r.n_eval for r in reports)), cross_entropy_sum=avg("cross_entropy_sum"),
    )


def run_nhanes(ds: Dataset, cfg: NhanesConfig, out_dir=None):
    """Fit, evaluate and conformalize each requested model on one analysis sample.

    Rows incomplete on the union of requested columns are dropped first so
    every model sees the same people. Per model: ``repeats`` random 50/30/20
    re-splits with architecture selection, averaged metrics (confusion counts
    summed over repeats), then CQC on the first re-split (score net from the
    training part, quantile net on the architecture part, calibration on the
    test part) and a per-record score export.
    """
    require_columns(ds, cfg.model_ids)
    union = []
    for mid in cfg.model_ids:
        union += [c for c in model_spec(mid).columns if c not in union]
    extra = [c for c in ("glucose", "pulse", "age") if c in ds.columns]
    ds = complete_cases(ds, union)
    if len(ds) < 10:
        raise DataError("fewer than 10 complete rows for the requested models")
    h = cfg.hash
    results = {}
    metric_rows = []
    for mid in cfg.model_ids:
        spec, data, reports, (idx, std, sel) = _nhanes_model(cfg, ds, mid)
        summary = _mean_report(reports)
        i1, i2, i3 = idx
        rows_std = replace(data, X=std(data.X))
        model = conformal.cqc_fit(rows_std, (i1, i2), 1 - cfg.level, sel.config,
                                  score_weighting=cfg.score_weighting, score_net=sel.params)
        model = conformal.cqc_calibrate(model, rows_std, i3)
        model = replace(model, meta={"model_id": mid, "columns": list(spec.columns),
                                     "standardizer": std.to_dict(), "config_hash": h})
        mask = conformal.cqc_membership(model, rows_std.X)
        cal_cov = conformal.evaluate_coverage(mask[i3], rows_std.y[i3], rows_std.weights[i3],
                                              use_weights=True, alpha=model.alpha)
        scores = conformal.candidate_scores(model, rows_std.X)[:, 1]
        part = np.empty(len(data), dtype=object)
        part[i1], part[i2], part[i3] = "train", "architecture", "test"
        export = [{
            "id": data.ids[i],
            "split": part[i],
            "label": int(data.y[i]),
            "score_class1": float(scores[i]),
            "set_size": int(mask[i].sum()),
            **{c: float(ds.column(c)[i]) for c in extra},
        } for i in range(len(data))]
        aucs = [r.auc for r in reports]
        results[mid] = {
            "model_id": mid,
            "variables": list(spec.variables),
            "cost": spec.cost,
            "report": summary,
            "repeats": reports,
            "auc_sd": float(np.std(aucs, ddof=1)) if len(aucs) > 1 else None,
            "hidden": list(sel.config.hidden_widths),
            "cqc": model,
            "calibration_coverage": cal_cov,
            "scores": export,
        }
        metric_rows.append({"model_id": mid, "cost": spec.cost, **summary.to_dict(),
                            "auc_sd": results[mid]["auc_sd"], "n_rows": len(data),
                            "mean_set_size": cal_cov.mean_set_size,
                            "threshold": model.threshold, "config_hash": h})
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "nhanes_metrics.csv", metric_rows,
                  ["model_id", "cost", "auc", "auc_sd", "accuracy", "recall", "precision", "f1",
                   "cross_entropy", "cross_entropy_sum", "confusion", "n_eval", "n_rows",
                   "mean_set_size", "threshold", "config_hash"])
        write_json(out / "nhanes_report.json", {
            "config": asdict(cfg),
            "config_hash": h,
            "models": [{
                "model_id": r["model_id"], "variables": r["variables"], "cost": r["cost"],
                "hidden": r["hidden"], "metrics": r["report"].to_dict(), "auc_sd": r["auc_sd"],
                "prediction_sets": {"level": cfg.level,
                                    "threshold": r["cqc"].threshold,
                                    "calibration_coverage": r["calibration_coverage"].empirical_coverage,
                                    "mean_set_size": r["calibration_coverage"].mean_set_size},
            } for r in results.values()],
        })
        for mid, r in results.items():
            write_csv(out / f"nhanes_scores_model{mid}.csv", [{**s, "config_hash": h} for s in r["scores"]],
                      ["id", "split", "label", "score_class1", "set_size", *extra, "config_hash"])
            (out / f"cqc_model{mid}.json").write_text(r["cqc"].to_json(sort_keys=True) + "\n")
    return results

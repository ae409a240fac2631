"""Family-level leave-one-out evaluation.

For each test family only its ``k`` smallest models are visible during
training; the rest are predicted.  Families sharing a base family with the
test family are withheld from training, and a family is not tested while a
newer generation of its line is in the training pool.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import fit_flops, fit_pca_flops, predict_baseline
from .dataset import AsymptoteConfig, ScoreTable
from .design import build_design
from .errors import ConfigError, DimensionError
from .fit import FitConfig, fit
from .model import predict_scores

METRICS = ("mae", "mape")
LEVELS = ("overall", "per-family", "per-benchmark")
EMPTY = "empty"


# ----------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitPlan:
    test_family: str
    k_observed: int
    train_ids: tuple
    observed_ids: tuple
    heldout_ids: tuple
    exclusions: tuple = ()

    def check(self):
        leak = set(self.heldout_ids) & set(self.train_ids)
        if leak:
            raise AssertionError(f"plan {self.test_family}: held-out models in train set: {sorted(leak)}")
        if not set(self.observed_ids) <= set(self.train_ids):
            raise AssertionError(f"plan {self.test_family}: observed models missing from train set")

    def to_dict(self):
        return asdict(self)


def parse_version(group):
    """``"line:generation"`` -> ``(line, generation)``; generation is a float
    when numeric, ``None`` when absent."""
    if ":" not in group:
        return group, None
    line, gen = group.rsplit(":", 1)
    try:
        return line, float(gen)
    except ValueError:
        return line, gen


def _newer(a, b):
    """True when generation ``a`` is newer than ``b``."""
    if a is None or b is None:
        return False
    if isinstance(a, float) != isinstance(b, float):
        return str(a) > str(b)
    return a > b


def smallest_models(records, k):
    """The ``k`` smallest models: by size, then tokens, then model id."""
    return sorted(records, key=lambda r: (r.size_s, r.tokens_t, r.model_id))[:k]


def _family_meta(table):
    meta = {}
    for fam in table.families:
        first = table.family_records(fam)[0]
        meta[fam] = (first.base_family_id, parse_version(first.version_group))
    return meta


def make_splits(table: ScoreTable, k_observed: int = 1):
    """One :class:`SplitPlan` per eligible test family plus a skip log.

    Returns ``(plans, log)`` where ``log`` lists families that produced no
    plan and why.
    """
    if k_observed not in (1, 2):
        raise ConfigError(f"k_observed must be 1 or 2, got {k_observed}")
    meta = _family_meta(table)
    plans, log = [], []
    for fam in table.families:
        members = table.family_records(fam)
        if len(members) < k_observed + 1:
            log.append({"family": fam, "reason": f"only {len(members)} models; need {k_observed + 1}"})
            continue
        base, (line, gen) = meta[fam]
        siblings = [g for g in table.families if g != fam and meta[g][0] == base]
        pool = [g for g in table.families if g != fam and g not in siblings]
        newer = [g for g in pool if meta[g][1][0] == line and _newer(meta[g][1][1], gen)]
        if newer:
            log.append({"family": fam, "reason": f"newer generation in training pool: {newer}"})
            continue
        observed = smallest_models(members, k_observed)
        obs_ids = tuple(r.model_id for r in observed)
        held = tuple(r.model_id for r in members if r.model_id not in obs_ids)
        train = tuple(r.model_id for r in table.records if r.family_id in pool) + obs_ids
        excl = tuple({"family": g, "reason": "sibling of test family"} for g in siblings)
        plan = SplitPlan(fam, k_observed, train, obs_ids, held, excl)
        plan.check()
        plans.append(plan)
    return plans, log


# -------------------------------------------------------------- estimators


@dataclass(frozen=True)
class EstimatorSpec:
    """Named estimator with its options.

    ``kind`` is one of ``sloth``, ``sloth-shared``, ``sloth-link``,
    ``size-tokens``, ``flops-shared``, ``flops``, ``flops-both``,
    ``pca-flops``, ``pca-flops-both``.
    """

    kind: str
    d: int = 3

    KINDS = ("sloth", "sloth-shared", "sloth-link", "size-tokens", "flops-shared", "flops",
             "flops-both", "pca-flops", "pca-flops-both")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown estimator {self.kind!r}; expected one of {self.KINDS}")

    @property
    def name(self):
        if self.kind in ("sloth", "sloth-shared", "sloth-link", "pca-flops", "pca-flops-both"):
            return f"{self.kind}:d={self.d}"
        return self.kind

    @property
    def min_observed(self):
        return 2 if self.kind in ("flops-both", "pca-flops-both") else 1

    def fit_predict(self, train: ScoreTable, test_records, asymptotes: AsymptoteConfig, config: FitConfig,
                    weights=None):
        k = self.kind
        if k.startswith("sloth") or k == "size-tokens":
            variant, link = {"sloth": ("basic", None), "sloth-shared": ("shared-intercept", None),
                             "sloth-link": ("trainable-link", None),
                             "size-tokens": ("size-and-tokens", "monotone")}[k]
            cfg = replace(config, d=self.d, variant=variant, link=link, check_gradients=False)
            params, _ = fit(train, cfg, asymptotes, weights=weights)
            design = build_design(test_records, params.families, warn_rank=False)
            return predict_scores(params, design)
        if k.startswith("flops"):
            sharing = {"flops-shared": "shared-all", "flops": "family-intercept",
                       "flops-both": "family-both"}[k]
            params, _ = fit_flops(train, sharing, asymptotes, config, weights=weights)
            return predict_baseline(params, test_records)
        sharing = "family-both" if k == "pca-flops-both" else "family-intercept"
        params = fit_pca_flops(train, self.d, sharing)
        return predict_baseline(params, test_records)


def parse_estimators(text):
    """Comma-separated estimator list; ``key=value`` tokens (or ``:key=value``
    suffixes) attach options to the preceding estimator, so
    ``"sloth:d=3,flops-shared"`` and ``"sloth,d=3,flops-shared"`` agree."""
    specs = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        if "=" in token and ":" not in token:
            if not specs:
                raise ConfigError(f"option {token!r} does not follow an estimator")
            specs[-1][1].append(token)
            continue
        kind, _, opt = token.partition(":")
        specs.append((kind, [opt] if opt else []))
    out = []
    for kind, opts in specs:
        kwargs = {}
        for opt in opts:
            key, _, val = opt.partition("=")
            if key != "d":
                raise ConfigError(f"unknown estimator option {key!r} for {kind}")
            try:
                kwargs["d"] = int(val)
            except ValueError:
                raise ConfigError(f"d must be an integer, got {val!r}") from None
        out.append(EstimatorSpec(kind, **kwargs))
    return out


# ------------------------------------------------------------------ report


@dataclass
class CVReport:
    """Per-cell errors in percentage points plus inapplicable combinations."""

    cells: list = field(default_factory=list)
    inapplicable: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def estimators(self):
        return list(dict.fromkeys([c["estimator"] for c in self.cells] +
                                  [c["estimator"] for c in self.inapplicable]))

    def mape_excluded(self, estimator=None):
        return sum(1 for c in self.cells if c["ape"] is None and
                   (estimator is None or c["estimator"] == estimator))

    def to_dict(self):
        ests = self.estimators
        return {
            "metadata": self.metadata,
            "summary": {m: {e: aggregate(self, m, "overall", e) for e in ests} for m in METRICS},
            "mape_excluded_cells": {e: self.mape_excluded(e) for e in ests},
            "cells": self.cells,
            "inapplicable": self.inapplicable,
            "plans": self.plans,
            "skipped": self.skipped,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        fields = ["estimator", "family", "benchmark", "model", "abs_error", "ape", "y", "prediction"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for c in self.cells:
                w.writerow({k: ("" if c[k] is None else (repr(c[k]) if isinstance(c[k], float) else c[k]))
                            for k in fields})


def _value(cell, metric):
    return cell["abs_error"] if metric == "mae" else cell["ape"]


def aggregate(report: CVReport, metric="mae", level="overall", estimator=None, weighting="family"):
    """Aggregate errors (percentage points).

    ``weighting="family"`` (default) averages within each family first and
    then across families with equal weight; ``"cell"`` is the plain mean
    over all cells.  ``level`` selects one number, a per-family mapping, or
    a per-benchmark mapping.  Selections without cells give :data:`EMPTY`.
    """
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}")
    if level not in LEVELS:
        raise ConfigError(f"level must be one of {LEVELS}")
    if weighting not in ("family", "cell"):
        raise ConfigError("weighting must be 'family' or 'cell'")
    if estimator is None:
        return {e: aggregate(report, metric, level, e, weighting) for e in report.estimators}
    cells = [c for c in report.cells if c["estimator"] == estimator and _value(c, metric) is not None]
    if level == "per-family":
        out = {}
        for c in cells:
            out.setdefault(c["family"], []).append(_value(c, metric))
        return {f: float(np.mean(v)) for f, v in out.items()} or EMPTY
    if level == "per-benchmark":
        benches = list(dict.fromkeys(c["benchmark"] for c in cells))
        out = {b: _overall([c for c in cells if c["benchmark"] == b], metric, weighting) for b in benches}
        return out or EMPTY
    return _overall(cells, metric, weighting)


def _overall(cells, metric, weighting):
    if not cells:
        return EMPTY
    if weighting == "cell":
        return float(np.mean([_value(c, metric) for c in cells]))
    fams = {}
    for c in cells:
        fams.setdefault(c["family"], []).append(_value(c, metric))
    return float(np.mean([np.mean(v) for v in fams.values()]))


# --------------------------------------------------------------------- run


def _plan_job(args):
    table, plan, estimators, asymptotes, config = args
    train = table.subset(plan.train_ids)
    test = [table.record(m) for m in plan.heldout_ids]
    Y = ScoreTable(tuple(test), table.benchmarks).score_matrix()
    bench = table.benchmarks
    cells, inapplicable = [], []
    for est in estimators:
        need = getattr(est, "min_observed", 1)
        if plan.k_observed < need:
            inapplicable.append({"estimator": est.name, "family": plan.test_family,
                                 "reason": f"needs {need} observed models, plan has {plan.k_observed}"})
            continue
        try:
            pred = np.asarray(est.fit_predict(train, test, asymptotes, config), dtype=float)
        except DimensionError as exc:
            inapplicable.append({"estimator": est.name, "family": plan.test_family, "reason": str(exc)})
            continue
        for i, rec in enumerate(test):
            for j, b in enumerate(bench):
                y = Y[i, j]
                if not math.isfinite(y):
                    continue
                err = abs(pred[i, j] - y)
                cells.append({
                    "estimator": est.name, "family": plan.test_family, "benchmark": b,
                    "model": rec.model_id, "y": float(y), "prediction": float(pred[i, j]),
                    "abs_error": 100.0 * float(err),
                    "ape": 100.0 * float(err / y) if y > 0 else None,
                })
    return cells, inapplicable


def run_cv(table: ScoreTable, estimators, asymptotes: AsymptoteConfig, k_observed=1, config: FitConfig | None = None,
           splits=None, workers=1):
    """Fit every estimator on every plan's training set and score held-out cells.

    ``estimators`` are :class:`EstimatorSpec` instances or any objects with
    ``name``, ``fit_predict(train, test_records, asymptotes, config)`` and
    optionally ``min_observed``.
    """
    config = config or FitConfig()
    if isinstance(estimators, str):
        estimators = parse_estimators(estimators)
    if splits is None:
        plans, skipped = make_splits(table, k_observed)
    else:
        plans, skipped = list(splits), []
    for plan in plans:
        plan.check()
    jobs = [(table, plan, estimators, asymptotes, config) for plan in plans]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_plan_job, jobs))
    else:
        results = [_plan_job(job) for job in jobs]
    report = CVReport(plans=[p.to_dict() for p in plans], skipped=skipped,
                      metadata={"k_observed": k_observed, "estimators": [e.name for e in estimators],
                                "config": asdict(config), "n_plans": len(plans)})
    for cells, inapp in results:
        report.cells.extend(cells)
        report.inapplicable.extend(inapp)
    return report


def plot_rows(report: CVReport, metric="mae"):
    """Bar-chart rows: one per estimator with its overall aggregate."""
    return [{"estimator": e, "metric": metric, "value": aggregate(report, metric, "overall", e)}
            for e in report.estimators]


def rows_to_csv(rows, fields=None):
    if fields is None:
        fields = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


__all__ = ["SplitPlan", "CVReport", "EstimatorSpec", "make_splits", "run_cv", "aggregate",
           "parse_estimators", "parse_version", "smallest_models", "plot_rows", "EMPTY"]

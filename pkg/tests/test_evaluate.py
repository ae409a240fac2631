import csv
import json

import numpy as np
import pytest

from skillscale.dataset import AsymptoteConfig, ModelRecord, ScoreTable
from skillscale.errors import ConfigError
from skillscale.evaluate import (EMPTY, CVReport, EstimatorSpec, aggregate, make_splits, parse_estimators,
                                 parse_version, run_cv, smallest_models)
from skillscale.fit import FitConfig

QUICK = FitConfig(restarts=1, max_steps=500)


def grid_table(families, sizes=(1e9, 3e9, 9e9), benches=("a", "b"), meta=None, rng=None):
    rng = rng or np.random.default_rng(0)
    meta = meta or {}
    recs = []
    for f in families:
        base, vg = meta.get(f, (f, f))
        for k, s in enumerate(sizes):
            scores = {b: float(rng.uniform(0.05, 0.95)) for b in benches}
            recs.append(ModelRecord(f"{f}-{k}", f, s, 1e12 * (k + 1), scores, base, vg))
    return ScoreTable(tuple(recs), tuple(benches))


class Oracle:
    name = "oracle"

    def __init__(self, table):
        self.table = table

    def fit_predict(self, train, test, asymptotes, config):
        return np.array([[r.scores[b] for b in self.table.benchmarks] for r in test])


class Constant:
    name = "half"

    def fit_predict(self, train, test, asymptotes, config):
        return np.full((len(test), len(train.benchmarks)), 0.5)


# ------------------------------------------------------------------ splits


def test_three_by_three():
    table = grid_table(["x", "y", "z"])
    plans, log = make_splits(table, 1)
    assert [p.test_family for p in plans] == ["x", "y", "z"] and log == []
    for p in plans:
        assert len(p.observed_ids) == 1 and len(p.heldout_ids) == 2
        assert p.observed_ids == (f"{p.test_family}-0",)
        assert len(p.train_ids) == 7


def test_sibling_excluded():
    table = grid_table(["llama", "llama-it", "qwen"], meta={"llama-it": ("llama", "llama-it")})
    plans, _ = make_splits(table, 1)
    by = {p.test_family: p for p in plans}
    assert not any(m.startswith("llama-it") for m in by["llama"].train_ids)
    assert not any(m.startswith("llama-") and not m.startswith("llama-it") for m in by["llama-it"].train_ids)
    assert any(m.startswith("llama") for m in by["qwen"].train_ids)
    assert by["llama"].exclusions[0]["family"] == "llama-it"


def _rule_oracle(table):
    """Eligible test families, evaluated rule by rule from raw record fields."""
    fams = {}
    for r in table.records:
        fams.setdefault(r.family_id, (r.base_family_id, r.version_group))
    eligible = set()
    for f, (base, vg) in fams.items():
        line, _, gen = vg.partition(":")
        blocked = False
        for g, (gbase, gvg) in fams.items():
            if g == f or gbase == base:
                continue
            gline, _, ggen = gvg.partition(":")
            if gen and ggen and gline == line and float(ggen) > float(gen):
                blocked = True
        if not blocked and len(table.family_records(f)) >= 2:
            eligible.add(f)
    return eligible


def test_version_rule():
    meta = {"llama2": ("llama2", "llama:2"), "llama3": ("llama3", "llama:3"),
            "llama3-it": ("llama3", "llama:3"), "qwen": ("qwen", "qwen:1")}
    table = grid_table(list(meta), meta=meta)
    plans, log = make_splits(table, 1)
    got = {p.test_family for p in plans}
    assert "llama2" not in got and {"llama3", "llama3-it", "qwen"} <= got
    assert got == _rule_oracle(table)
    assert any(e["family"] == "llama2" for e in log)


def test_small_family_skipped():
    table = grid_table(["x", "y"], sizes=(1e9, 2e9))
    plans, log = make_splits(table, 2)
    assert plans == [] and len(log) == 2


def test_tie_breaks():
    recs = [ModelRecord("b", "f", 1e9, 2e12), ModelRecord("a", "f", 1e9, 2e12),
            ModelRecord("c", "f", 1e9, 1e12), ModelRecord("d", "f", 5e8, 9e12)]
    assert [r.model_id for r in smallest_models(recs, 4)] == ["d", "c", "a", "b"]


def test_parse_version():
    assert parse_version("llama:3") == ("llama", 3.0)
    assert parse_version("gemma") == ("gemma", None)


def _random_family_table(seed, n_fam=30):
    rng = np.random.default_rng(seed)
    recs = []
    lines = ["alpha", "beta", "gamma", "delta", "eps"]
    for f in range(n_fam):
        base = f"base{f // 2}" if rng.uniform() < 0.6 else f"solo{f}"
        vg = f"{lines[rng.integers(len(lines))]}:{rng.integers(1, 4)}"
        for k in range(int(rng.integers(2, 6))):
            recs.append(ModelRecord(f"m{f}-{k}", f"fam{f}", float(10 ** rng.uniform(8, 11)),
                                    float(10 ** rng.uniform(11, 13)), {"a": float(rng.uniform())}, base, vg))
    return ScoreTable(tuple(recs), ("a",))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("k", [1, 2])
def test_no_leakage_random(seed, k):
    table = _random_family_table(seed)
    plans, _ = make_splits(table, k)
    assert plans
    base = {r.family_id: r.base_family_id for r in table.records}
    for p in plans:
        p.check()
        assert not set(p.heldout_ids) & set(p.train_ids)
        fam_recs = table.family_records(p.test_family)
        assert set(p.observed_ids) == {r.model_id for r in smallest_models(fam_recs, k)}
        for m in p.train_ids:
            f = table.record(m).family_id
            assert f == p.test_family or base[f] != base[p.test_family]


# ---------------------------------------------------------------------- cv


def test_oracle_estimator_zero_error():
    table = grid_table(["x", "y", "z"])
    rep = run_cv(table, [Oracle(table)], AsymptoteConfig.constant(table.benchmarks))
    assert aggregate(rep, "mae", "overall", "oracle") == 0.0


def test_constant_estimator_hand_mad():
    table = grid_table(["x", "y"], benches=("a",))
    rep = run_cv(table, [Constant()], AsymptoteConfig.constant(table.benchmarks))
    fams = []
    for f in ("x", "y"):
        held = [r.scores["a"] for r in table.family_records(f)[1:]]
        fams.append(100 * sum(abs(0.5 - y) for y in held) / len(held))
    assert aggregate(rep, "mae", "overall", "half") == pytest.approx(sum(fams) / 2, abs=1e-12)


def test_estimator_order_independent(synth_default):
    table = synth_default.table
    asym = AsymptoteConfig.constant(table.benchmarks)
    a = run_cv(table, [EstimatorSpec("flops"), EstimatorSpec("pca-flops", 2)], asym, config=QUICK)
    b = run_cv(table, [EstimatorSpec("pca-flops", 2), EstimatorSpec("flops")], asym, config=QUICK)
    for e in ("flops", "pca-flops:d=2"):
        for m in ("mae", "mape"):
            assert aggregate(a, m, "overall", e) == aggregate(b, m, "overall", e)
    # adding an estimator leaves the others' cells untouched
    only = run_cv(table, [EstimatorSpec("flops")], asym, config=QUICK)
    assert [c for c in a.cells if c["estimator"] == "flops"] == only.cells


def test_flops_both_inapplicable_at_one(synth_default):
    table = synth_default.table
    rep = run_cv(table, [EstimatorSpec("flops-both")], AsymptoteConfig.constant(table.benchmarks), config=QUICK)
    assert rep.cells == [] and len(rep.inapplicable) == len(table.families)
    assert aggregate(rep, "mae", "overall", "flops-both") == EMPTY


def test_mape_excludes_zero_targets():
    rng = np.random.default_rng(3)
    table = grid_table(["x", "y"], benches=("a",), rng=rng)
    recs = list(table.records)
    recs[1] = ModelRecord("x-1", "x", 3e9, 2e12, {"a": 0.0})
    table = ScoreTable(tuple(recs), table.benchmarks)
    rep = run_cv(table, [Constant()], AsymptoteConfig.constant(table.benchmarks))
    assert rep.mape_excluded("half") == 1
    assert aggregate(rep, "mape", "overall", "half") != EMPTY


# --------------------------------------------------------------- aggregate


def _cell(est, fam, bench, model, err):
    return {"estimator": est, "family": fam, "benchmark": bench, "model": model, "y": 0.5,
            "prediction": 0.5, "abs_error": err, "ape": 2 * err}


def test_aggregate_examples():
    rep = CVReport(cells=[_cell("e", "f", "a", "m1", 1.0), _cell("e", "f", "a", "m2", 3.0)])
    assert aggregate(rep, "mae", "overall", "e") == 2.0
    rep = CVReport(cells=[_cell("e", "f", "a", "m1", 2.0),
                          _cell("e", "g", "a", "n1", 3.0), _cell("e", "g", "a", "n2", 5.0),
                          _cell("e", "g", "a", "n3", 4.0)])
    assert aggregate(rep, "mae", "overall", "e") == 3.0
    assert aggregate(rep, "mae", "overall", "e", weighting="cell") == 3.5
    assert aggregate(rep, "mae", "per-family", "e") == {"f": 2.0, "g": 4.0}
    assert aggregate(rep, "mae", "overall", "other") == EMPTY


def test_aggregate_nested_loop_oracle():
    rng = np.random.default_rng(1)
    cells = []
    for e in ("p", "q"):
        for f in range(6):
            for b in ("a", "b", "c"):
                for m in range(int(rng.integers(1, 5))):
                    cells.append(_cell(e, f"f{f}", b, f"m{m}", float(rng.uniform(0, 10))))
    rep = CVReport(cells=cells)
    for e in ("p", "q"):
        fam_means = []
        for f in sorted({c["family"] for c in cells}):
            vals = [c["abs_error"] for c in cells if c["estimator"] == e and c["family"] == f]
            total = 0.0
            for v in vals:
                total += v
            fam_means.append(total / len(vals))
        want = sum(fam_means) / len(fam_means)
        assert abs(aggregate(rep, "mae", "overall", e) - want) < 1e-12
        per_b = aggregate(rep, "mae", "per-benchmark", e)
        for b in ("a", "b", "c"):
            sub = [c for c in cells if c["estimator"] == e and c["benchmark"] == b]
            fams = sorted({c["family"] for c in sub})
            want_b = sum(np.mean([c["abs_error"] for c in sub if c["family"] == f]) for f in fams) / len(fams)
            assert abs(per_b[b] - want_b) < 1e-12


def test_aggregate_bad_args():
    with pytest.raises(ConfigError):
        aggregate(CVReport(), "rmse")


def test_parse_estimators():
    a = parse_estimators("sloth:d=3,flops-shared")
    b = parse_estimators("sloth,d=3,flops-shared")
    assert a == b == [EstimatorSpec("sloth", 3), EstimatorSpec("flops-shared")]
    assert [e.name for e in parse_estimators("pca-flops:d=2,size-tokens")] == ["pca-flops:d=2", "size-tokens"]
    for bad in ("d=3,sloth", "sloth:k=2", "wizard"):
        with pytest.raises(ConfigError):
            parse_estimators(bad)


def test_report_outputs(tmp_path):
    table = grid_table(["x", "y", "z"])
    rep = run_cv(table, [Constant()], AsymptoteConfig.constant(table.benchmarks))
    rep.to_json(tmp_path / "r.json")
    rep.to_csv(tmp_path / "r.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["summary"]["mae"]["half"] == aggregate(rep, "mae", "overall", "half")
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(rep.cells) == 12
    assert {"estimator", "family", "benchmark", "model", "abs_error"} <= set(rows[0])

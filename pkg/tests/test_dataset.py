import csv
import math

import numpy as np
import pytest

from skillscale.dataset import (AsymptoteConfig, AsymptoteEntry, BenchmarkSpec, ColumnSchema, ModelRecord,
                                ScoreTable, default_asymptotes, load_asymptotes, load_scores, validate,
                                write_scores)
from skillscale.errors import ConfigError, DataError

HEADER = "model,family,base_family,version_group,params,tokens,mmlu,gsm8k\n"


def write(tmp_path, body, header=HEADER, name="scores.csv"):
    p = tmp_path / name
    p.write_text(header + body, encoding="utf-8")
    return p


def test_three_rows_two_benchmarks(tmp_path):
    p = write(tmp_path, "a,f,f,f,1e9,1e12,0.5,0.1\nb,f,f,f,2e9,1e12,0.6,0.2\nc,g,g,g,1e9,2e12,0.4,\n")
    table = load_scores(p)
    assert len(table) == 3
    assert table.benchmarks == ("mmlu", "gsm8k")
    # empty cell stays missing, never 0
    assert "gsm8k" not in table.record("c").scores
    assert math.isnan(table.score_matrix()[2, 1])


def test_score_out_of_range_names_cell(tmp_path):
    p = write(tmp_path, "a,f,f,f,1e9,1e12,0.5,0.1\nb,f,f,f,2e9,1e12,1.2,0.2\n")
    with pytest.raises(DataError) as exc:
        load_scores(p)
    assert exc.value.row == 3 and exc.value.column == "mmlu"


def test_malformed_number_names_row_and_column(tmp_path):
    p = write(tmp_path, "a,f,f,f,abc,1e12,0.5,0.1\n")
    with pytest.raises(DataError) as exc:
        load_scores(p)
    assert exc.value.row == 2 and exc.value.column == "params"


def test_duplicate_model_rejected(tmp_path):
    p = write(tmp_path, "a,f,f,f,1e9,1e12,0.5,0.1\na,f,f,f,2e9,1e12,0.6,0.2\n")
    with pytest.raises(DataError, match="duplicate"):
        load_scores(p)


def test_missing_column_and_file(tmp_path):
    p = write(tmp_path, "a,f,1e9,1e12,0.5\n", header="model,family,params,tokens,mmlu\n")
    with pytest.raises(DataError, match="missing required columns"):
        load_scores(p)
    with pytest.raises(DataError):
        load_scores(tmp_path / "nope.csv")


def test_family_count_matches_line_count(tmp_path):
    body = "".join(f"fam-{k},fam,fam,fam,{(k + 1) * 1e9},{2e12},0.{k + 3},0.{k + 1}\n" for k in range(5))
    body += "x,other,other,other,1e9,1e12,0.5,0.5\n"
    p = write(tmp_path, body)
    table = load_scores(p)
    # independent count straight off the raw file
    with open(p, newline="") as fh:
        hand = sum(1 for row in csv.DictReader(fh) if row["family"] == "fam")
    assert hand == 5
    assert len(table.family_records("fam")) == hand


def test_units_schema(tmp_path):
    p = write(tmp_path, "a,f,f,f,7,2,0.5,0.1\n")
    table = load_scores(p, ColumnSchema(params_unit=1e9, tokens_unit=1e12))
    assert table.records[0].size_s == 7e9
    assert table.records[0].tokens_t == 2e12


def test_round_trip_bit_exact(tmp_path, synth_default):
    table = synth_default.table
    p = tmp_path / "rt.csv"
    write_scores(table, p)
    again = load_scores(p)
    assert again.benchmarks == table.benchmarks
    for a, b in zip(table.records, again.records):
        assert (a.model_id, a.family_id, a.base_family_id, a.version_group) == \
               (b.model_id, b.family_id, b.base_family_id, b.version_group)
        assert a.size_s == b.size_s and a.tokens_t == b.tokens_t
        assert dict(a.scores) == dict(b.scores)


def test_load_is_order_preserving(tmp_path):
    p = write(tmp_path, "z,f,f,f,1e9,1e12,0.5,0.1\na,f,f,f,2e9,1e12,0.6,0.2\nm,g,g,g,3e9,1e12,0.6,0.2\n")
    assert load_scores(p).model_ids == ["z", "a", "m"]
    assert load_scores(p) == load_scores(p)


def test_record_invariants():
    with pytest.raises(DataError):
        ModelRecord("a", "f", 0.0, 1.0)
    with pytest.raises(DataError):
        ModelRecord("a", "f", 1.0, 1.0, {"x": -0.1})
    with pytest.raises(DataError):
        ScoreTable((ModelRecord("a", "f", 1, 1, {"y": 0.5}),), ("x",))


# ---------------------------------------------------------------- asymptotes


def test_four_choice_is_quarter():
    cfg = default_asymptotes({"mmlu": BenchmarkSpec(choices=4)})
    assert cfg["mmlu"].gamma == 0.25


def test_generative_is_zero():
    assert default_asymptotes({"gsm8k": BenchmarkSpec()})["gsm8k"].gamma == 0.0


def test_weighted_subsections():
    cfg = default_asymptotes({"bbh": BenchmarkSpec(subsections=((4, 100), (2, 300)))})
    assert cfg["bbh"].gamma == pytest.approx((100 * 0.25 + 300 * 0.5) / 400, abs=1e-15)
    assert cfg["bbh"].gamma == pytest.approx(0.4375, abs=1e-15)


@pytest.mark.parametrize("c", [2, 3, 4, 5, 7, 10])
def test_single_section_is_exact_reciprocal(c):
    g = default_asymptotes({"b": BenchmarkSpec(choices=c)})["b"].gamma
    assert g == 1.0 / c and 0 <= g < 1


def test_percentile_matches_sorting_oracle(rng):
    scores = rng.uniform(0.1, 0.9, size=201)
    g = default_asymptotes({"t": BenchmarkSpec(percentile=1.0)}, {"t": scores})["t"].gamma
    s = np.sort(scores)
    pos = 0.01 * (len(s) - 1)
    lo = int(math.floor(pos))
    oracle = s[lo] + (pos - lo) * (s[lo + 1] - s[lo])
    assert g == pytest.approx(oracle, abs=1e-14)


def test_percentile_without_scores_errors():
    with pytest.raises(ConfigError):
        default_asymptotes({"t": BenchmarkSpec(percentile=1.0)}, {"t": []})


def test_bad_choice_count_and_weight():
    with pytest.raises(ConfigError):
        default_asymptotes({"b": BenchmarkSpec(choices=1)})
    with pytest.raises(ConfigError):
        default_asymptotes({"b": BenchmarkSpec(subsections=((4, 0),))})


def test_load_asymptotes_yaml(tmp_path):
    p = tmp_path / "asym.yaml"
    p.write_text("benchmarks:\n  mmlu: {choices: 4}\n  gsm8k: {generative: true}\n"
                 "  bbh: {subsections: [{choices: 4, weight: 100}, {choices: 2, weight: 300}]}\n"
                 "  tq: {gamma: 0.1, trainable: true}\n")
    cfg = load_asymptotes(p)
    assert cfg["mmlu"].gamma == 0.25
    assert cfg["gsm8k"].gamma == 0.0
    assert cfg["bbh"].gamma == 0.4375
    assert cfg["tq"].trainable and cfg["tq"].gamma == 0.1


def test_asymptote_entry_range():
    with pytest.raises(ConfigError):
        AsymptoteEntry(1.0)


# ---------------------------------------------------------------- validate


def _table():
    return ScoreTable((ModelRecord("a", "f", 1e9, 1e12, {"mmlu": 0.5, "gsm8k": 0.1}),
                       ModelRecord("b", "f", 2e9, 1e12, {"mmlu": 0.6, "gsm8k": 0.2})), ("mmlu", "gsm8k"))


def test_validate_clean():
    cfg = AsymptoteConfig({"mmlu": AsymptoteEntry(0.25), "gsm8k": AsymptoteEntry(0.0)})
    assert validate(_table(), cfg) == []


def test_validate_missing_asymptote():
    diags = validate(_table(), AsymptoteConfig({"mmlu": AsymptoteEntry(0.25)}))
    assert [d.code for d in diags] == ["missing-asymptote"]
    assert diags[0].benchmark == "gsm8k"


def test_validate_below_asymptote_warns_without_mutation():
    table = ScoreTable((ModelRecord("a", "f", 1e9, 1e12, {"mmlu": 0.20}),), ("mmlu",))
    before = table.score_matrix().copy()
    diags = validate(table, AsymptoteConfig({"mmlu": AsymptoteEntry(0.25)}))
    assert len(diags) == 1 and diags[0].level == "warning" and diags[0].code == "below-asymptote"
    assert np.array_equal(before, table.score_matrix())


def test_validate_family_without_complete_row():
    table = ScoreTable((ModelRecord("a", "f", 1e9, 1e12, {"mmlu": 0.5}),), ("mmlu", "gsm8k"))
    cfg = AsymptoteConfig({"mmlu": AsymptoteEntry(0.25), "gsm8k": AsymptoteEntry(0.0)})
    assert [d.code for d in validate(table, cfg)] == ["no-complete-rows"]

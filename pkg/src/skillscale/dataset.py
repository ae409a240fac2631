"""Benchmark score tables and lower-asymptote configuration.

A score table is a leaderboard-style CSV: one row per model with its family
labels, parameter count, training tokens and one column per benchmark.
Empty cells mean "not evaluated" and are kept as missing (never as 0).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError, DataError

REQUIRED_ROLES = ("model", "family", "base_family", "version_group", "params", "tokens")


@dataclass(frozen=True)
class ModelRecord:
    model_id: str
    family_id: str
    size_s: float
    tokens_t: float
    scores: Mapping[str, float] = field(default_factory=dict)
    base_family_id: str = ""
    version_group: str = ""

    def __post_init__(self):
        if not self.model_id:
            raise DataError("empty model id")
        if not self.family_id:
            raise DataError(f"model {self.model_id!r} has no family")
        if not (self.size_s > 0 and math.isfinite(self.size_s)):
            raise DataError(f"model {self.model_id!r}: size must be positive, got {self.size_s}")
        if not (self.tokens_t > 0 and math.isfinite(self.tokens_t)):
            raise DataError(f"model {self.model_id!r}: tokens must be positive, got {self.tokens_t}")
        for bench, val in self.scores.items():
            if not (0.0 <= val <= 1.0):
                raise DataError(f"model {self.model_id!r}: score {val} outside [0, 1]", column=bench)
        object.__setattr__(self, "scores", MappingProxyType(dict(self.scores)))
        if not self.base_family_id:
            object.__setattr__(self, "base_family_id", self.family_id)
        if not self.version_group:
            object.__setattr__(self, "version_group", self.family_id)

    def score(self, benchmark):
        return self.scores.get(benchmark, math.nan)


@dataclass(frozen=True)
class ScoreTable:
    records: tuple
    benchmarks: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "benchmarks", tuple(self.benchmarks))
        if len(set(self.benchmarks)) != len(self.benchmarks):
            raise DataError("duplicate benchmark names")
        seen = set()
        known = set(self.benchmarks)
        for rec in self.records:
            if rec.model_id in seen:
                raise DataError(f"duplicate model id {rec.model_id!r}")
            seen.add(rec.model_id)
            extra = set(rec.scores) - known
            if extra:
                raise DataError(f"model {rec.model_id!r} has scores for unknown benchmarks {sorted(extra)}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def model_ids(self):
        return [r.model_id for r in self.records]

    @property
    def families(self):
        """Family ids in order of first appearance."""
        return list(dict.fromkeys(r.family_id for r in self.records))

    def family_records(self, family):
        return [r for r in self.records if r.family_id == family]

    def record(self, model_id):
        for r in self.records:
            if r.model_id == model_id:
                return r
        raise KeyError(model_id)

    def score_matrix(self, benchmarks=None):
        """n x J float array with NaN for missing cells."""
        benchmarks = self.benchmarks if benchmarks is None else tuple(benchmarks)
        out = np.full((len(self.records), len(benchmarks)), np.nan)
        for i, rec in enumerate(self.records):
            for j, bench in enumerate(benchmarks):
                if bench in rec.scores:
                    out[i, j] = rec.scores[bench]
        return out

    def subset(self, model_ids: Iterable[str]):
        """Sub-table of the given models, in table order."""
        keep = set(model_ids)
        return ScoreTable(tuple(r for r in self.records if r.model_id in keep), self.benchmarks)

    def select_benchmarks(self, benchmarks: Sequence[str]):
        missing = [b for b in benchmarks if b not in self.benchmarks]
        if missing:
            raise DataError(f"unknown benchmarks {missing}")
        recs = tuple(
            ModelRecord(r.model_id, r.family_id, r.size_s, r.tokens_t,
                        {b: v for b, v in r.scores.items() if b in benchmarks},
                        r.base_family_id, r.version_group)
            for r in self.records
        )
        return ScoreTable(recs, tuple(benchmarks))


@dataclass(frozen=True)
class ColumnSchema:
    """Maps table roles to CSV column names.

    ``params_unit``/``tokens_unit`` multiply the raw column values, so a file
    listing sizes in billions uses ``params_unit=1e9``.
    """

    model: str = "model"
    family: str = "family"
    base_family: str = "base_family"
    version_group: str = "version_group"
    params: str = "params"
    tokens: str = "tokens"
    params_unit: float = 1.0
    tokens_unit: float = 1.0
    benchmarks: tuple | None = None

    @classmethod
    def from_mapping(cls, data: Mapping):
        data = dict(data)
        if "benchmarks" in data and data["benchmarks"] is not None:
            data["benchmarks"] = tuple(data["benchmarks"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown schema keys {sorted(unknown)}")
        return cls(**data)


def _parse_float(text, row, column):
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} as a number", row=row, column=column) from None
    if not math.isfinite(val):
        raise DataError(f"non-finite value {text!r}", row=row, column=column)
    return val


def load_scores(path, schema: ColumnSchema | None = None) -> ScoreTable:
    """Read and validate a score table from a delimited text file.

    Row numbers in error messages count the header as row 1.
    """
    schema = schema or ColumnSchema()
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        roles = {role: getattr(schema, role) for role in REQUIRED_ROLES}
        missing = [col for col in roles.values() if col not in header]
        if missing:
            raise DataError(f"missing required columns {missing}")
        if schema.benchmarks is None:
            role_cols = set(roles.values())
            benchmarks = [h for h in header if h not in role_cols]
        else:
            benchmarks = list(schema.benchmarks)
            absent = [b for b in benchmarks if b not in header]
            if absent:
                raise DataError(f"missing benchmark columns {absent}")
        col = {name: k for k, name in enumerate(header)}

        records = []
        seen = {}
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(row)}", row=rowno)
            cell = lambda name: row[col[name]].strip()  # noqa: E731
            model_id = cell(roles["model"])
            if not model_id:
                raise DataError("empty model id", row=rowno, column=roles["model"])
            if model_id in seen:
                raise DataError(f"duplicate model id {model_id!r} (first at row {seen[model_id]})",
                                row=rowno, column=roles["model"])
            seen[model_id] = rowno
            family = cell(roles["family"])
            if not family:
                raise DataError("empty family", row=rowno, column=roles["family"])
            size = _parse_float(cell(roles["params"]), rowno, roles["params"]) * schema.params_unit
            tokens = _parse_float(cell(roles["tokens"]), rowno, roles["tokens"]) * schema.tokens_unit
            if size <= 0:
                raise DataError(f"params must be positive, got {size}", row=rowno, column=roles["params"])
            if tokens <= 0:
                raise DataError(f"tokens must be positive, got {tokens}", row=rowno, column=roles["tokens"])
            scores = {}
            for bench in benchmarks:
                text = cell(bench)
                if text == "":
                    continue
                val = _parse_float(text, rowno, bench)
                if not 0.0 <= val <= 1.0:
                    raise DataError(f"score {val} outside [0, 1]", row=rowno, column=bench)
                scores[bench] = val
            records.append(ModelRecord(
                model_id=model_id, family_id=family, size_s=size, tokens_t=tokens, scores=scores,
                base_family_id=cell(roles["base_family"]), version_group=cell(roles["version_group"]),
            ))
    return ScoreTable(tuple(records), tuple(benchmarks))


def write_scores(table: ScoreTable, path) -> None:
    """Write ``table`` in the canonical column layout (absolute units)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(REQUIRED_ROLES) + list(table.benchmarks))
        for r in table.records:
            row = [r.model_id, r.family_id, r.base_family_id, r.version_group, repr(r.size_s), repr(r.tokens_t)]
            row += [repr(r.scores[b]) if b in r.scores else "" for b in table.benchmarks]
            writer.writerow(row)


# ---------------------------------------------------------------- asymptotes


@dataclass(frozen=True)
class AsymptoteEntry:
    gamma: float
    trainable: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"asymptote must lie in [0, 1), got {self.gamma}")


@dataclass(frozen=True)
class AsymptoteConfig:
    entries: Mapping[str, AsymptoteEntry]

    def __post_init__(self):
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def __contains__(self, benchmark):
        return benchmark in self.entries

    def __getitem__(self, benchmark):
        return self.entries[benchmark]

    def gammas(self, benchmarks):
        return np.array([self.entries[b].gamma for b in benchmarks], dtype=float)

    def trainable(self, benchmarks):
        return np.array([self.entries[b].trainable for b in benchmarks], dtype=bool)

    @classmethod
    def constant(cls, benchmarks, gamma=0.0, trainable=False):
        return cls({b: AsymptoteEntry(gamma, trainable) for b in benchmarks})

    def to_dict(self):
        return {b: {"gamma": e.gamma, "trainable": e.trainable} for b, e in self.entries.items()}


@dataclass(frozen=True)
class BenchmarkSpec:
    """How to derive one benchmark's lower asymptote.

    Exactly one source applies, checked in this order: explicit ``gamma``,
    ``percentile`` of supplied scores, ``subsections`` as (choices, weight)
    pairs, ``choices`` for single-section multiple choice, else generative (0).
    """

    choices: int | None = None
    subsections: tuple = ()
    percentile: float | None = None
    gamma: float | None = None
    trainable: bool = False


def _mc_gamma(choices):
    if choices < 2:
        raise ConfigError(f"multiple-choice benchmarks need >= 2 choices, got {choices}")
    return 1.0 / choices


def default_asymptotes(specs: Mapping[str, BenchmarkSpec],
                       percentile_scores: Mapping[str, Sequence[float]] | None = None) -> AsymptoteConfig:
    percentile_scores = percentile_scores or {}
    entries = {}
    for bench, spec in specs.items():
        if spec.gamma is not None:
            gamma = float(spec.gamma)
        elif spec.percentile is not None:
            scores = np.asarray(percentile_scores.get(bench, ()), dtype=float)
            scores = scores[np.isfinite(scores)]
            if scores.size == 0:
                raise ConfigError(f"{bench}: percentile asymptote requested but no scores supplied")
            gamma = float(np.percentile(scores, spec.percentile))
        elif spec.subsections:
            total = 0.0
            acc = 0.0
            for choices, weight in spec.subsections:
                if weight <= 0:
                    raise ConfigError(f"{bench}: subsection weights must be positive")
                acc += weight * _mc_gamma(choices)
                total += weight
            gamma = acc / total
        elif spec.choices is not None:
            gamma = _mc_gamma(spec.choices)
        else:
            gamma = 0.0
        entries[bench] = AsymptoteEntry(gamma, spec.trainable)
    return AsymptoteConfig(entries)


def _spec_from_mapping(bench, data):
    if data is None:
        return BenchmarkSpec()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{bench}: expected a mapping, got {data!r}")
    unknown = set(data) - {"choices", "subsections", "percentile", "gamma", "trainable", "generative"}
    if unknown:
        raise ConfigError(f"{bench}: unknown keys {sorted(unknown)}")
    subs = []
    for sub in data.get("subsections") or ():
        try:
            subs.append((int(sub["choices"]), float(sub.get("weight", 1.0))))
        except (KeyError, TypeError):
            raise ConfigError(f"{bench}: subsections need 'choices' and optional 'weight'") from None
    pct = data.get("percentile")
    if pct is True:
        pct = 1.0
    return BenchmarkSpec(
        choices=None if data.get("generative") else data.get("choices"),
        subsections=tuple(subs),
        percentile=None if pct in (None, False) else float(pct),
        gamma=data.get("gamma"),
        trainable=bool(data.get("trainable", False)),
    )


def load_asymptotes(path, table: ScoreTable | None = None) -> AsymptoteConfig:
    """Read an asymptote document (YAML or JSON).

    Layout::

        benchmarks:
          mmlu: {choices: 4}
          bbh: {subsections: [{choices: 4, weight: 100}, {choices: 2, weight: 300}]}
          gsm8k: {generative: true}
          truthfulqa: {percentile: 1}

    Percentile entries take their scores from ``percentile_scores`` in the
    document if given, else from the matching column of ``table``.
    """
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    benches = doc.get("benchmarks", doc)
    if not isinstance(benches, Mapping):
        raise ConfigError("asymptote document must map benchmark names to settings")
    specs = {b: _spec_from_mapping(b, v) for b, v in benches.items()}
    pct_scores = dict(doc.get("percentile_scores") or {})
    if table is not None:
        for bench, spec in specs.items():
            if spec.percentile is not None and bench not in pct_scores and bench in table.benchmarks:
                col = table.score_matrix([bench])[:, 0]
                pct_scores[bench] = col[np.isfinite(col)].tolist()
    return default_asymptotes(specs, pct_scores)


# --------------------------------------------------------------- validation


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    code: str
    message: str
    benchmark: str | None = None
    model: str | None = None
    family: str | None = None

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


def validate(table: ScoreTable, config: AsymptoteConfig) -> list:
    diags = []
    for bench in table.benchmarks:
        if bench not in config:
            diags.append(Diagnostic("error", "missing-asymptote", f"no asymptote for {bench!r}", benchmark=bench))
    for family in table.families:
        recs = table.family_records(family)
        if not any(all(b in r.scores for b in table.benchmarks) for r in recs):
            diags.append(Diagnostic("warning", "no-complete-rows",
                                    f"family {family!r} has no model with every benchmark", family=family))
    for rec in table.records:
        for bench, val in rec.scores.items():
            if bench in config and val < config[bench].gamma:
                diags.append(Diagnostic(
                    "warning", "below-asymptote",
                    f"{rec.model_id!r} scores {val} on {bench!r}, below its asymptote {config[bench].gamma}",
                    benchmark=bench, model=rec.model_id))
    return diags

"""Command-line entry point: ``skillscale <subcommand> [flags]``.

Every subcommand writes its artifacts plus ``manifest.json`` into ``--out``.
Exit status is 0 on success, 2 on usage errors and 1 when the analysis
itself fails; failures print a JSON error record to stderr and, when the
output directory exists, also save it as ``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__, kernels
from .dataset import load_asymptotes, load_scores, validate, write_scores
from .design import build_design
from .downstream import (DEFAULT_LAMBDA, fit_item_models, fit_task_regression, hypothetical_skills,
                         load_task_data, predict_items, predict_pass_at_k, predict_task)
from .errors import ConfigError, SkillScaleError
from .evaluate import aggregate, parse_estimators, plot_rows, run_cv
from .fit import FitConfig, fit
from .identify import interpret_pipeline
from .model import VARIANTS, dump_params, load_params, predict_scores, skills
from .optimal import allocation_table, markdown_table, parse_policy, training_bounds
from .synth import SynthSpec, generate, truth_to_dict

SUBCOMMANDS = ("fit", "predict", "cv", "rotate", "optimal", "downstream", "passk", "synth", "validate")
GRID = 50


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _existing(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not Path(path).exists():
        raise UsageError(f"{flag}: no such file {path!r}")
    return Path(path)


def _load_yaml(path):
    if path is None:
        return {}
    with open(_existing(path, "--config"), encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError("--config must hold a mapping")
    return doc


def _fit_config(args):
    doc = _load_yaml(args.config)
    section = doc.get("fit", doc)
    known = {f.name for f in fields(FitConfig)}
    cfg = FitConfig.from_mapping({k: v for k, v in section.items() if k in known})
    changes = {"seed": args.seed}
    if getattr(args, "d", None) is not None:
        changes["d"] = args.d
    if getattr(args, "variant", None) is not None:
        changes["variant"] = args.variant
    if args.workers is not None:
        changes["workers"] = args.workers
    return replace(cfg, **changes)


def _table_and_asymptotes(args):
    table = load_scores(_existing(args.data, "--data"))
    if args.asymptotes is None:
        raise UsageError("--asymptotes is required")
    asym = load_asymptotes(_existing(args.asymptotes, "--asymptotes"), table)
    return table, asym


def _skills_rows(params, table):
    design = build_design(table, params.families if params.variant != "shared-intercept" else None,
                          warn_rank=False)
    sk = skills(params, design).values
    return [[r.model_id, r.family_id, *row] for r, row in zip(table.records, sk)]


def _level_curves(params, table, path, family=None):
    """Skill values on a GRID x GRID (log s, log t) grid over the training range."""
    u = np.log([r.size_s for r in table.records])
    v = np.log([r.tokens_t for r in table.records])
    family = family or params.families[0]
    alpha = params.intercept(family)
    S = params.slopes
    rows = []
    for ls in np.linspace(u.min(), u.max(), GRID):
        for lt in np.linspace(v.min(), v.max(), GRID):
            rows.append([family, ls, lt, *(np.array([ls, lt, ls * lt]) @ S + alpha)])
    _write_csv(path, ["family", "log_s", "log_t", *[f"skill_{k + 1}" for k in range(S.shape[1])]], rows)


# -------------------------------------------------------------- subcommands


def cmd_synth(args, out):
    doc = _load_yaml(args.config)
    section = doc.get("synth", doc)
    known = {f.name for f in fields(SynthSpec)}
    opts = {k: (tuple(v) if isinstance(v, list) else v) for k, v in section.items() if k in known}
    opts["seed"] = args.seed
    if args.d is not None:
        opts["d"] = args.d
    syn = generate(SynthSpec(**opts))
    write_scores(syn.table, out / "scores.csv")
    with open(out / "asymptotes.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump({"benchmarks": {b: {"gamma": float(g)} for b, g in
                                       zip(syn.truth.benchmarks, syn.truth.gammas)}}, fh, sort_keys=True)
    _write_json(out / "truth.json", truth_to_dict(syn.truth, syn.info))
    return {"spec": {k: v for k, v in asdict(SynthSpec(**opts)).items() if k != "loadings"}, **syn.info}


def cmd_validate(args, out):
    table, asym = _table_and_asymptotes(args)
    diags = validate(table, asym)
    _write_json(out / "validation.json", {"diagnostics": [d.to_dict() for d in diags],
                                          "asymptotes": asym.to_dict()})
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ConfigError("; ".join(d.message for d in errors))
    return {"n_diagnostics": len(diags)}


def cmd_fit(args, out):
    table, asym = _table_and_asymptotes(args)
    cfg = _fit_config(args)
    params, report = fit(table, cfg, asym)
    dump_params(params, out / "params.json")
    _write_json(out / "fit_report.json", report.to_dict())
    k = params.n_skills
    _write_csv(out / "skills.csv", ["model", "family", *[f"skill_{i + 1}" for i in range(k)]],
               _skills_rows(params, table))
    _write_csv(out / "loadings.csv", ["benchmark", *[f"skill_{i + 1}" for i in range(k)]],
               [[b, *row] for b, row in zip(params.benchmarks, params.loadings)])
    if params.variant != "size-and-tokens":
        _level_curves(params, table, out / "plotdata" / "level_curves.csv")
    return {"fit": asdict(cfg), "final_loss": report.final_loss}


def cmd_predict(args, out):
    params = load_params(_existing(args.params, "--params"))
    table = load_scores(_existing(args.data, "--data"))
    fams = None if params.variant == "shared-intercept" else params.families
    design = build_design(table, fams, warn_rank=False)
    mu = predict_scores(params, design)
    Y = table.score_matrix(params.benchmarks)
    rows = []
    for i, rec in enumerate(table.records):
        for j, b in enumerate(params.benchmarks):
            rows.append([rec.model_id, rec.family_id, b, mu[i, j], None if np.isnan(Y[i, j]) else Y[i, j]])
    _write_csv(out / "predictions.csv", ["model", "family", "benchmark", "prediction", "observed"], rows)
    return {"n_predictions": len(rows)}


def cmd_cv(args, out):
    table, asym = _table_and_asymptotes(args)
    cfg = replace(_fit_config(args), workers=1)
    ests = parse_estimators(args.estimators or "sloth:d=3,flops-shared")
    report = run_cv(table, ests, asym, k_observed=args.k_observed, config=cfg, workers=args.workers or 1)
    report.to_json(out / "cv_report.json")
    report.to_csv(out / "cv_report.csv")
    metric = args.metric or "mae"
    _write_csv(out / "plotdata" / "cv_bars.csv", ["estimator", "metric", "value"],
               [[r["estimator"], r["metric"], r["value"]] for r in plot_rows(report, metric)])
    fam = aggregate(report, metric, "per-family")
    _write_csv(out / "plotdata" / "cv_per_family.csv", ["estimator", "family", "value"],
               [[e, f, v] for e, per in fam.items() if isinstance(per, dict) for f, v in per.items()])
    return {"summary": {metric: aggregate(report, metric)}}


def cmd_rotate(args, out):
    params = load_params(_existing(args.params, "--params"))
    table = load_scores(_existing(args.data, "--data"))
    design = build_design(table, params.families if params.variant != "shared-intercept" else None,
                          warn_rank=False)
    final, result = interpret_pipeline(params, design, seed=args.seed)
    dump_params(final, out / "params.json")
    _write_json(out / "rotation.json", result.to_dict())
    k = final.n_skills
    names = [f"skill_{i + 1}" for i in range(k)]
    _write_csv(out / "loadings.csv", ["benchmark", *names],
               [[b, *row] for b, row in zip(final.benchmarks, final.loadings)])
    _write_csv(out / "skills.csv", ["model", "family", *names], _skills_rows(final, table))
    _write_csv(out / "plotdata" / "loadings_heatmap.csv", ["benchmark", "skill", "loading"],
               [[b, names[c], final.loadings[j, c]] for j, b in enumerate(final.benchmarks) for c in range(k)])
    _write_csv(out / "plotdata" / "skill_correlation.csv", ["skill", *names],
               [[names[r], *result.correlation[r]] for r in range(k)])
    _level_curves(final, table, out / "plotdata" / "level_curves.csv")
    return {"geomin_criterion": result.criterion, "converged": result.converged}


def _budgets(args):
    if not args.budgets:
        raise UsageError("--budgets is required (comma-separated, in units of --budget-unit)")
    try:
        return [float(x) * args.budget_unit for x in args.budgets.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--budgets: not a number list: {args.budgets!r}") from None


def cmd_optimal(args, out):
    params = load_params(_existing(args.params, "--params"))
    table = load_scores(_existing(args.data, "--data"))
    policy = parse_policy(args.bounds_policy)
    bounds = training_bounds(table, policy if policy[0] == "quantile" else "min-max")
    budgets = _budgets(args)
    skills_ = range(params.n_skills) if args.skill is None else [args.skill]
    rows, md = [], []
    for k in skills_:
        table_rows = allocation_table(params, k, budgets, bounds, family=args.family, on_infeasible="record")
        md.append(f"### skill_{k + 1}\n\n" + markdown_table(table_rows, args.budget_unit))
        for r in table_rows:
            if isinstance(r, dict):
                rows.append([k + 1, r["budget"], None, None, None, None, "infeasible", r["error"]])
            else:
                rows.append([k + 1, r.budget, r.size, r.tokens, r.size / 1e9, r.tokens / 1e12, r.flag, ""])
    _write_csv(out / "allocations.csv",
               ["skill", "budget_flops", "params", "tokens", "params_b", "tokens_t", "flag", "note"], rows)
    (out / "allocations.md").write_text("\n".join(md), encoding="utf-8")
    return {"bounds": {"u_lo": bounds[0], "u_hi": bounds[1], "v_lo": bounds[2], "v_hi": bounds[3]},
            "bounds_policy": list(policy)}


def _task_skills(params, table, ids):
    lookup = {r.model_id: r for r in table.records}
    missing = [m for m in ids if m not in lookup]
    if missing:
        raise ConfigError(f"task models not in --data: {missing}")
    return np.array([hypothetical_skills(params, lookup[m].family_id, lookup[m].size_s, lookup[m].tokens_t)
                     for m in ids])


def _target(args, params):
    if args.target_family is None or args.target_size is None or args.target_tokens is None:
        return None
    return hypothetical_skills(params, args.target_family, args.target_size, args.target_tokens)


def cmd_downstream(args, out):
    params = load_params(_existing(args.params, "--params"))
    table = load_scores(_existing(args.data, "--data"))
    task = load_task_data(_existing(args.task, "--task"), mode="task")
    S = _task_skills(params, table, task.model_ids)
    reg = fit_task_regression(S, task.outcomes, lam=args.lam)
    _write_json(out / "task_regression.json", {**reg.to_dict(), "encoding": task.encoding})
    rows = [[m, y, predict_task(reg, s)] for m, y, s in zip(task.model_ids, task.outcomes, S)]
    target = _target(args, params)
    if target is not None:
        rows.append(["<target>", None, predict_task(reg, target)])
    _write_csv(out / "predictions.csv", ["model", "observed", "predicted"], rows)
    fam = args.target_family or table.records[0].family_id
    tokens = args.target_tokens or float(np.median([r.tokens_t for r in table.records]))
    sizes = np.exp(np.linspace(*np.log([min(r.size_s for r in table.records),
                                        max(r.size_s for r in table.records)]), GRID))
    _write_csv(out / "plotdata" / "downstream_curve.csv", ["family", "size", "tokens", "predicted"],
               [[fam, s, tokens, predict_task(reg, hypothetical_skills(params, fam, s, tokens))] for s in sizes])
    return {"degenerate": reg.degenerate, "n_models": len(task.model_ids)}


def cmd_passk(args, out):
    params = load_params(_existing(args.params, "--params"))
    table = load_scores(_existing(args.data, "--data"))
    task = load_task_data(_existing(args.task, "--task"), mode="item")
    S = _task_skills(params, table, task.model_ids)
    regs = fit_item_models(S, task.outcomes, lam=args.lam)
    target = _target(args, params)
    if target is None:
        raise UsageError("passk needs --target-family, --target-size and --target-tokens")
    p_hat = predict_items(regs, target)
    try:
        ks = [int(k) for k in args.k.split(",")]
    except ValueError:
        raise UsageError(f"--k: not an integer list: {args.k!r}") from None
    _write_csv(out / "passk.csv", ["k", "pass_at_k"], zip(ks, predict_pass_at_k(p_hat, ks)))
    grid = sorted({int(round(x)) for x in np.logspace(0, 3, GRID)})
    _write_csv(out / "plotdata" / "passk_curve.csv", ["k", "pass_at_k"], zip(grid, predict_pass_at_k(p_hat, grid)))
    _write_csv(out / "item_probabilities.csv", ["question", "p_hat", "degenerate"],
               [[q, p, r.degenerate] for q, p, r in zip(task.questions, p_hat, regs)])
    return {"encoding": task.encoding, "n_questions": len(regs),
            "degenerate_questions": int(sum(r.degenerate for r in regs))}


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv, "rotate": cmd_rotate,
            "optimal": cmd_optimal, "downstream": cmd_downstream, "passk": cmd_passk,
            "synth": cmd_synth, "validate": cmd_validate}


# ------------------------------------------------------------------ parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (created if needed)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--config", help="YAML file with option defaults")
    common.add_argument("--data", help="score table CSV")
    common.add_argument("--asymptotes", help="asymptote YAML/JSON")
    common.add_argument("--params", help="parameter JSON from `fit` or `rotate`")

    parser = argparse.ArgumentParser(prog="skillscale", description="Latent-skill scaling-law toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic score table")
    p.add_argument("--d", type=int)
    p = sub.add_parser("validate", parents=[common], help="check a table against its asymptotes")
    for name in ("fit", "cv"):
        p = sub.add_parser(name, parents=[common], help=f"{name} on a score table")
        p.add_argument("--d", type=int)
        p.add_argument("--variant", choices=VARIANTS)
        if name == "cv":
            p.add_argument("--estimators", help="e.g. 'sloth:d=3,size-tokens,flops-shared,flops,pca-flops:d=3'")
            p.add_argument("--k-observed", type=int, choices=(1, 2), default=1)
            p.add_argument("--metric", choices=("mae", "mape"), default="mae")
    sub.add_parser("predict", parents=[common], help="predict scores for a table's models")
    sub.add_parser("rotate", parents=[common], help="identify and rotate fitted skills")
    p = sub.add_parser("optimal", parents=[common], help="compute-optimal allocations")
    p.add_argument("--budgets", help="comma-separated budgets in units of --budget-unit")
    p.add_argument("--budget-unit", type=float, default=1e19)
    p.add_argument("--skill", type=int, help="0-based skill index (default: all)")
    p.add_argument("--family", help="family whose intercept sets the reported skill value")
    p.add_argument("--bounds-policy", default="min-max", help="'min-max' or 'quantile:LO,HI'")
    for name in ("downstream", "passk"):
        p = sub.add_parser(name, parents=[common], help=f"{name} prediction from skills")
        p.add_argument("--task", help="task CSV")
        p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
        p.add_argument("--target-family")
        p.add_argument("--target-size", type=float)
        p.add_argument("--target-tokens", type=float)
        if name == "passk":
            p.add_argument("--k", default="1,10,100,1000")
    return parser


def _error_exit(out, record, status):
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None and out.is_dir():
        _write_json(out / "error.json", record)
    return status


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    out = Path(args.out)
    started = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        detail = COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _error_exit(out, {"error": "usage", "message": str(exc)}, 2)
    except SkillScaleError as exc:
        return _error_exit(out, exc.to_record(), 1)
    except OSError as exc:
        return _error_exit(out, {"error": "io", "type": type(exc).__name__, "message": str(exc)}, 1)
    manifest = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "options": {k: v for k, v in vars(args).items() if k != "command"},
        "seed": args.seed,
        "versions": {"skillscale": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "kernels": kernels.BACKEND},
        "elapsed_seconds": time.perf_counter() - started,
        "outputs": sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()
                          and p.name != "manifest.json"),
        "result": detail,
    }
    _write_json(out / "manifest.json", manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())

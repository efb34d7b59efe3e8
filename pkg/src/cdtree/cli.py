"""``cdtree`` command line.

Subcommands
-----------
fit             distill a teacher into a tree and estimate subgroup effects
select-teacher  rank teachers by bootstrap partition stability
simulate        run a seeded simulation study
diagnose        summarize a saved fit report

Exit codes: 0 success, 2 invalid input or data, 3 estimation failure.
``--threads`` (default: the ``CDT_THREADS`` environment variable, else 1)
only changes speed; outputs are identical for any thread count.

Report schema (``schema_version`` 1): ``schema_version``, ``command``,
``config``, ``seed``, ``data`` (n, p, column names), ``partition`` (the
student tree as nested nodes), ``subgroups`` (label, rules, n_g, n_g1, n_g0,
tau_hat, se, var_hat, undefined, note, student_mean, dr_tau_hat, dr_se),
``heterogeneity_test``, ``diagnostics`` and ``warnings``.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from cdtree.errors import CdtError, DataError, EstimationError, PartitionError
from cdtree.io import SCHEMA_VERSION, canonical_json, load_json, read_csv
from cdtree.pipeline import CdtConfig, CdtReport, run_cdt
from cdtree.simulation import (
    METHODS, RESULT_COLUMNS, StudyConfig, run_replicates, summarize, summary_columns, to_csv,
)
from cdtree.stability import select_teacher
from cdtree.teachers import ESTIMATE, ForestParams, GbtParams, TeacherKind, TeacherSpec
from cdtree.tree import TreeParams, to_json, to_text

EXIT_OK, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3

TEACHER_NAMES = [k.value for k in TeacherKind]


class UsageError(CdtError):
    pass


# ---------------------------------------------------------------- argument helpers

def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _prune(text: str) -> tuple[str, int]:
    if text in ("cv", "none"):
        return text, 2
    if text.startswith("depth="):
        try:
            d = int(text.split("=", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad depth in {text!r}") from None
        if d < 0:
            raise argparse.ArgumentTypeError("depth must be >= 0")
        return "depth", d
    raise argparse.ArgumentTypeError(f"--prune must be cv, none or depth=K (got {text!r})")


def _propensity(text: str):
    if text == ESTIMATE:
        return ESTIMATE
    if text.startswith("known="):
        try:
            e = float(text.split("=", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad propensity {text!r}") from None
        if not 0 < e < 1:
            raise argparse.ArgumentTypeError("known propensity must lie in (0, 1)")
        return e
    raise argparse.ArgumentTypeError("--propensity must be known=E or estimate")


def _teacher_spec(kind: str, args) -> TeacherSpec:
    if kind not in TEACHER_NAMES:
        raise UsageError(f"unknown teacher {kind!r}; choose from {TEACHER_NAMES}")
    propensity = getattr(args, "propensity", 0.5)
    return TeacherSpec(kind=kind, forest=ForestParams(n_trees=args.n_trees),
                       gbt=GbtParams(n_rounds=args.gbt_rounds),
                       propensity=propensity, randomized=propensity != ESTIMATE,
                       crossfit_repeats=args.crossfit_repeats)


def _student(args) -> TreeParams:
    return TreeParams(min_leaf=args.min_leaf, min_split=args.min_split,
                      max_depth=args.max_depth, complexity=args.cp)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $CDT_THREADS or 1); never changes output")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file of option defaults; explicit flags win")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True, help="CSV file with a header row")
    p.add_argument("--outcome", required=True, help="outcome column")
    p.add_argument("--treatment", required=True, help="0/1 treatment column")
    p.add_argument("--covariates", type=_csv_list, default=None,
                   help="comma list of covariate columns (default: all other columns)")
    p.add_argument("--id-column", default=None, help="unit id column, excluded from covariates")


def _add_teacher_knobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-trees", type=int, default=500, help="forest size (default 500)")
    p.add_argument("--gbt-rounds", type=int, default=200, help="boosting rounds (default 200)")
    p.add_argument("--crossfit-repeats", type=int, default=50,
                   help="cross-fitting repeats R for s-gbt/r-gbt (default 50)")


def _add_student(p: argparse.ArgumentParser, cp: float) -> None:
    p.add_argument("--min-leaf", type=int, default=7, help="student min leaf size (default 7)")
    p.add_argument("--min-split", type=int, default=20, help="student min split size (default 20)")
    p.add_argument("--max-depth", type=int, default=30, help="student max depth (default 30)")
    p.add_argument("--cp", type=float, default=cp,
                   help=f"student complexity: min SSE decrease as a fraction of the root SSE "
                        f"(default {cp})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdtree", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a distilled tree and estimate subgroup effects")
    _add_data(fit)
    fit.add_argument("--teacher", default="t-forest",
                     help=f"teacher model, one of {TEACHER_NAMES} (default t-forest)")
    fit.add_argument("--pi-train", type=float, default=0.7,
                     help="fraction of units used to fit teacher and tree (default 0.7)")
    fit.add_argument("--prune", type=_prune, default=("cv", 2),
                     help="cv, none or depth=K (default cv)")
    fit.add_argument("--cv-folds", type=int, default=10, help="pruning CV folds (default 10)")
    fit.add_argument("--dr", action="store_true",
                     help="add the propensity-weighted covariate-adjusted estimate")
    fit.add_argument("--propensity", type=_propensity, default=0.5,
                     help="known=E (default known=0.5) or estimate")
    fit.add_argument("--literal-test", action="store_true",
                     help="heterogeneity test against the overall effect with G degrees of "
                          "freedom instead of Cochran's Q")
    _add_teacher_knobs(fit)
    _add_student(fit, 0.01)
    fit.add_argument("--out", type=Path, default=None, help="report JSON path (default stdout)")
    fit.add_argument("--tree-out", type=Path, default=None,
                     help="text tree path (default: printed to stderr)")
    _add_common(fit)

    sel = sub.add_parser("select-teacher", help="rank teachers by partition stability")
    _add_data(sel)
    sel.add_argument("--teachers", type=_csv_list, default=["t-forest", "s-gbt", "r-gbt"],
                     help="comma list of teachers (default t-forest,s-gbt,r-gbt)")
    sel.add_argument("--depths", type=_csv_list, default=["1", "2", "3", "4"],
                     help="comma list of tree depths (default 1,2,3,4)")
    sel.add_argument("--bootstraps", type=int, default=100, help="bootstrap pairs B (default 100)")
    sel.add_argument("--propensity", type=_propensity, default=0.5,
                     help="known=E (default known=0.5) or estimate")
    _add_teacher_knobs(sel)
    _add_student(sel, 0.0)
    sel.add_argument("--out-csv", type=Path, required=True, help="per-bootstrap SSI CSV")
    sel.add_argument("--out-json", type=Path, required=True, help="summary JSON")
    _add_common(sel)

    sim = sub.add_parser("simulate", help="run a seeded simulation study")
    sim.add_argument("--dgp", type=_csv_list, default=["and"], help="and, additive, or (comma list)")
    sim.add_argument("--pve", type=_csv_list, default=["1.0"], help="comma list in (0, 1]")
    sim.add_argument("--n", type=_csv_list, default=["500"], help="comma list of sample sizes")
    sim.add_argument("--p", type=int, default=10, help="number of covariates (default 10)")
    sim.add_argument("--outcome", default="cate-only",
                     help="cate-only or linear-covariates (default cate-only)")
    sim.add_argument("--methods", type=_csv_list, default=["cdt-tforest"],
                     help=f"comma list from {sorted(METHODS)}")
    sim.add_argument("--reps", type=int, default=1, help="replicates per cell (default 1)")
    sim.add_argument("--n-trees", type=int, default=500, help="forest size (default 500)")
    sim.add_argument("--crossfit-repeats", type=int, default=50, help="R (default 50)")
    sim.add_argument("--mc-n", type=int, default=1_000_000,
                     help="Monte Carlo draws for subgroup truths; 0 skips (default 1e6)")
    sim.add_argument("--prune", type=_prune, default=("cv", 2), help="cv, none or depth=K")
    sim.add_argument("--student-cp", type=float, default=0.01,
                     help="complexity for distilled trees (default 0.01)")
    sim.add_argument("--baseline-cp", type=float, default=0.0,
                     help="complexity for the transformed-outcome tree (default 0)")
    sim.add_argument("--out", type=Path, required=True, help="long-format results CSV")
    sim.add_argument("--summary", type=Path, default=None, help="per-cell mean/SE CSV")
    _add_common(sim)

    diag = sub.add_parser("diagnose", help="summarize a saved fit report")
    diag.add_argument("report", type=Path, help="report JSON written by 'cdtree fit'")
    diag.add_argument("--csv", type=Path, default=None, help="write the per-node table as CSV")
    # accepted for a uniform interface; diagnose is deterministic and single-threaded
    diag.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    diag.add_argument("--threads", type=int, default=None, help="accepted for uniformity; unused")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if path is None:
        return args
    try:
        doc = load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    if doc.pop("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise UsageError(f"config schema_version must be {SCHEMA_VERSION}")
    sub = next(a for a in parser._subparsers._group_actions if a.dest == "command")
    subparser = sub.choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(k.replace("-", "_") for k in doc) - set(known) - {"config"})
    if unknown:
        raise UsageError(f"unknown config fields: {unknown}")
    defaults = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        action = known[dest]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        elif action.type is not None and action.type not in (int, float, Path):
            value = action.type(str(value))
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    for a in subparser._actions:
        if a.dest in defaults:
            a.required = False
    return parser.parse_args(argv)


# ---------------------------------------------------------------- report document

def _num(v):
    return None if v is None or not np.isfinite(v) else float(v)


def report_document(report: CdtReport, data_info: dict) -> dict:
    names = data_info["feature_names"]
    subgroups = []
    for est in report.estimates:
        subgroups.append({
            "label": est.subgroup.label,
            "rules": [{"feature": r.feature_index, "name": names[r.feature_index],
                       "direction": r.direction.value, "threshold": r.threshold}
                      for r in est.subgroup.rules],
            "n_g": est.n_g, "n_g1": est.n_g1, "n_g0": est.n_g0,
            "tau_hat": _num(est.tau_hat), "var_hat": _num(est.var_hat), "se": _num(est.se),
            "undefined": not est.defined, "note": est.note,
            "student_mean": _num(est.student_mean),
            "dr_tau_hat": _num(est.dr_tau_hat),
            "dr_se": None if est.dr_var_hat is None else _num(np.sqrt(est.dr_var_hat)),
        })
    test = report.test.to_dict()
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "config": report.config.to_dict(),
        "seed": report.config.seed,
        "data": data_info,
        "partition": to_json(report.tree, names),
        "subgroups": subgroups,
        "heterogeneity_test": {k: (_num(v) if isinstance(v, float) else v)
                               for k, v in test.items()},
        "diagnostics": report.diagnostics,
        "warnings": list(report.warnings),
    }


def tree_text(report: CdtReport, names) -> str:
    by_leaf = dict(zip(report.tree.leaves, report.estimates))

    def leaf(node):
        est = by_leaf[node]
        if not est.defined:
            return f"undefined, {est.n_g1}/{est.n_g0}"
        return f"{est.tau_hat:.3f} ({est.se:.3f}), {est.n_g1}/{est.n_g0}"

    return ("subgroup ATE (SE), treated/control\n"
            + to_text(report.tree, names, leaf_text=leaf) + "\n")


# ---------------------------------------------------------------- commands

def _load_data(args):
    return read_csv(args.data, args.outcome, args.treatment, args.covariates, args.id_column)


def cmd_fit(args) -> int:
    data = _load_data(args)
    prune, depth = args.prune
    spec = _teacher_spec(args.teacher, args)
    if spec.kind is TeacherKind.NOISE_TEACHER:
        raise UsageError("the noise teacher is a selection control, not a fitting option")
    config = CdtConfig(pi_train=args.pi_train, teacher=spec, student=_student(args),
                       prune=prune, prune_depth=depth, cv_folds=args.cv_folds,
                       literal_test=args.literal_test, dr=args.dr, seed=args.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = run_cdt(data, config, threads=args.threads)
    info = {"n": data.n, "p": data.p, "feature_names": list(data.feature_names),
            "outcome": args.outcome, "treatment": args.treatment}
    text = canonical_json(report_document(report, info))
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    tree = tree_text(report, data.feature_names)
    if args.tree_out:
        args.tree_out.write_text(tree, encoding="utf-8")
    else:
        sys.stderr.write(tree)
    return EXIT_OK


def cmd_select_teacher(args) -> int:
    if args.bootstraps < 2:
        raise UsageError("--bootstraps must be >= 2")
    try:
        depths = [int(d) for d in args.depths]
    except ValueError:
        raise UsageError(f"--depths must be integers: {args.depths}") from None
    if not depths or min(depths) < 1:
        raise UsageError("--depths must be >= 1")
    data = _load_data(args)
    specs = [_teacher_spec(t, args) for t in args.teachers]
    result = select_teacher(data, specs, depths, args.bootstraps, _student(args), args.seed,
                            args.threads, names=args.teachers)
    args.out_csv.write_text(result.to_csv(), encoding="utf-8")
    summary = {"schema_version": SCHEMA_VERSION, "command": "select-teacher",
               "seed": args.seed, **result.summary()}
    args.out_json.write_text(canonical_json(summary), encoding="utf-8")
    print(f"recommended teacher: {result.recommended}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        pves = [float(v) for v in args.pve]
        ns = [int(v) for v in args.n]
    except ValueError as exc:
        raise UsageError(f"bad --pve or --n value: {exc}") from None
    prune, depth = args.prune
    try:
        study = StudyConfig(dgps=args.dgp, pves=pves, ns=ns, p=args.p, outcome=args.outcome,
                            methods=args.methods, reps=args.reps, seed=args.seed,
                            n_trees=args.n_trees, crossfit_repeats=args.crossfit_repeats,
                            mc_n=args.mc_n, prune=prune, prune_depth=depth,
                            student_cp=args.student_cp, baseline_cp=args.baseline_cp)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = run_replicates(study, args.threads)
    args.out.write_text(to_csv(rows, RESULT_COLUMNS), encoding="utf-8")
    if args.summary:
        args.summary.write_text(to_csv(summarize(rows), summary_columns()), encoding="utf-8")
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} rows written ({failed} errors)")
    return EXIT_OK


def _load_report(path: Path) -> dict:
    try:
        doc = load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read report {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        found = doc.get("schema_version") if isinstance(doc, dict) else None
        raise UsageError(f"report schema_version {found!r} is not {SCHEMA_VERSION}")
    for key in ("subgroups", "diagnostics"):
        if key not in doc:
            raise UsageError(f"report is missing {key!r}")
    return doc


def cmd_diagnose(args) -> int:
    doc = _load_report(args.report)
    diag = doc["diagnostics"]
    out = [f"student RMSE vs teacher predictions: {diag['student_rmse']:.6g}",
           f"training units: {diag['n_train']}  estimation units: {diag['n_est']}",
           "", "teacher prediction quantiles per subgroup (training side):",
           f"{'subgroup':40s} {'n':>6s} {'min':>9s} {'q25':>9s} {'median':>9s} "
           f"{'q75':>9s} {'max':>9s}"]
    rows = []
    for node in diag["nodes"]:
        q = node["teacher_quantiles"]
        vals = [q[k] for k in ("min", "q25", "median", "q75", "max")]
        out.append(f"{node['label'][:40]:40s} {node['n_train']:6d} "
                   + " ".join("      nan" if v is None else f"{v:9.4g}" for v in vals))
        rows.append([node["label"], node["n_train"]] + vals)
    out += ["", "estimation-side arm counts (treated/control):"]
    warn = []
    for sg in doc["subgroups"]:
        out.append(f"  {sg['label']}: {sg['n_g1']}/{sg['n_g0']}")
        if sg["n_g1"] < 2 or sg["n_g0"] < 2:
            warn.append(f"WARNING: subgroup {sg['label']} has {sg['n_g1']} treated and "
                        f"{sg['n_g0']} control units (fewer than 2 in an arm)")
    undefined = [sg["label"] for sg in doc["subgroups"] if sg["undefined"]]
    out += [""] + warn
    out.append("undefined estimates: " + (", ".join(undefined) if undefined else "none"))
    print("\n".join(out))
    if args.csv:
        import csv as _csv
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = _csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "n_train", "min", "q25", "median", "q75", "max"])
            for r in rows:
                w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                            for v in r])
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "select-teacher": cmd_select_teacher,
            "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_DATA
    except (UsageError, DataError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, PartitionError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 1 pipeline failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from joblib import Parallel, delayed

from vrident import __version__
from vrident import reports
from vrident.adversary import (
    Scope, _prepare, app_plan, build_model, evaluate_avg, load_scoped_model, model_filename,
    parse_scope, predict_app, report_at, save_scoped_model, sensor_channels, zero_day_matrix,
)
from vrident.blocking import build_block_table, common_channels, postprocess_blocks
from vrident.config import PipelineConfig, load_config
from vrident.errors import ConfigError, EvaluationError, VrIdentError
from vrident.ingest import DiskDataset, load_session, preprocess_with_log, scan_dataset, write_preprocess_log
from vrident.schema import AppGroups, SensorGroup, validate_trace

log = logging.getLogger("vrident")


class UsageError(Exception):
    pass


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _sensors(values) -> list[SensorGroup]:
    if not values:
        return list(SensorGroup)
    out = []
    for v in values:
        for item in _csv_list(v):
            try:
                g = SensorGroup.parse(item)
            except VrIdentError as exc:
                raise UsageError(str(exc.args[0])) from None
            if g not in out:
                out.append(g)
    return out


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    overrides = {"seed": args.seed, "jobs": args.jobs}
    for key in ("r", "mode"):
        if getattr(args, key, None) is not None:
            overrides[f"blocking.{key}"] = getattr(args, key)
    return cfg.with_overrides(**overrides)


def _groups(cfg: PipelineConfig, data: Path) -> AppGroups:
    """App groups from the config, else from the dataset directory, else the packaged default."""
    if cfg.app_groups is not None:
        return AppGroups.load(cfg.app_groups)
    local = data / "app_groups.yaml"
    return AppGroups.load(local if local.is_file() else None)


def _open(data: Path) -> DiskDataset:
    return DiskDataset(scan_dataset(data))


# ---- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    from vrident.synth import SyntheticDataset, generate_cohort

    vary = None
    if args.vary:
        vary = "clone" if args.vary == "clone" else tuple(_csv_list(args.vary))
    cohort = generate_cohort(args.users, args.seed if args.seed is not None else 0, vary=vary, noise=args.noise)
    ds = SyntheticDataset(cohort, seed=args.seed if args.seed is not None else 0, jitter=args.jitter,
                          duration_scale=args.duration_scale)
    if args.apps:
        keep = {int(a) for a in _csv_list(args.apps)}
        ds.archetypes = {a: v for a, v in ds.archetypes.items() if a in keep}
    root = ds.write(args.out, groups=_sensors(args.sensor))
    print(f"wrote {len(ds.users)} users x {len(ds.apps)} apps to {root}")
    return 0


# ---- ingest -----------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _config(args)
    index = scan_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = reports.utc_now()
    artifacts = []
    violations = []
    failures = 0
    for key in sorted(index.entries, key=lambda k: (k[0], k[1], k[2], k[3].value)):
        ref = index.entries[key]
        tag = f"u{ref.user}_a{ref.app}_s{ref.session}_{ref.group.value}"
        try:
            raw = load_session(ref)
            for v in validate_trace(raw, cfg.validation.quat_tolerance):
                violations.append({"trace": tag, "rule": v.rule, "severity": v.severity, "message": v.message})
            _, record = preprocess_with_log(raw)
        except VrIdentError as exc:
            failures += 1
            record = {"trace": tag, "error": str(exc)}
            log.warning("%s: %s", tag, exc)
        path = (out / "preprocess" / f"user_{ref.user}" / f"app_{ref.app}" / f"session_{ref.session}"
                / f"{ref.group.value}.preprocess_log.json")
        write_preprocess_log(record, path)
        artifacts.append(path)
    summary = out / "dataset_summary.json"
    summary.write_text(json.dumps({**index.summary(), "failed": failures}, indent=2) + "\n")
    vpath = out / "violations.csv"
    reports._write_csv(vpath, ["trace", "rule", "severity", "message"], violations)
    artifacts += [summary, vpath]
    reports.write_run_manifest(out, config_hash=cfg.config_hash(), seed=cfg.seed, dataset=str(args.data),
                               command="ingest", started=started, artifacts=artifacts)
    print(f"scanned {len(index)} traces ({failures} failed); summary in {summary}")
    return 1 if failures and args.strict else 0


# ---- summarize --------------------------------------------------------------

def cmd_summarize(args) -> int:
    cfg = _config(args)
    ds = _open(Path(args.data))
    apps = [int(a) for a in _csv_list(args.apps)] if args.apps else ds.apps
    out = Path(args.out)
    started = reports.utc_now()
    artifacts = []
    plans = []
    for sensor in _sensors(args.sensor):
        for app in apps:
            if not any(ds.has(u, app, 1, sensor) for u in ds.users):
                continue
            plan = app_plan(ds, app, sensor, cfg)
            plans.append(plan.to_dict())
            for session in (1, 2):
                traces = [_prepare(ds.trace(u, app, session, sensor))
                          for u in ds.users if ds.has(u, app, session, sensor)]
                if not traces:
                    continue
                channels = common_channels(traces, sensor_channels(sensor))
                table = build_block_table(traces, plan, channels)
                table = postprocess_blocks(table, cfg.blocking.zero_block_threshold,
                                           prune_columns=(session == 1))
                table.provenance["config_hash"] = cfg.config_hash()
                path = out / f"app_{app}" / f"{sensor.value}_session{session}.csv"
                table.save(path)
                artifacts += [path, path.with_name(path.stem + ".columns.json")]
    ppath = out / "block_plans.json"
    ppath.parent.mkdir(parents=True, exist_ok=True)
    ppath.write_text(json.dumps(plans, indent=2) + "\n")
    artifacts.append(ppath)
    reports.write_run_manifest(out, config_hash=cfg.config_hash(), seed=cfg.seed,
                               dataset=ds.fingerprint(), command="summarize", started=started,
                               artifacts=artifacts)
    print(f"wrote {len(artifacts) - 1} table files to {out}")
    return 0


# ---- train / evaluate -------------------------------------------------------

def _scopes(args, groups: AppGroups, ds) -> list[Scope]:
    items = [s for v in (args.scope or []) for s in _csv_list(v)]
    if not items:
        items = [f"app:a_{a}" for a in ds.apps]
        items += [f"group:{g}" for g, m in groups.groups.items() if set(m) <= set(ds.apps)]
        items.append("universal")
    scopes = []
    for it in items:
        sc = parse_scope(it, groups, ds.apps)
        missing = [a for a in sc.apps if a not in ds.apps]
        if missing:
            raise EvaluationError(f"scope {it}: app(s) {missing} not in the dataset")
        scopes.append(sc)
    return scopes


def _train_task(ds, scope, sensor, cfg, models_dir):
    path = Path(models_dir) / model_filename(scope, sensor) if models_dir else None
    if path is not None and path.is_file():
        m = load_scoped_model(path)
        if m.meta.get("config_hash") == cfg.config_hash():
            return m, False
    m = build_model(ds, scope, sensor, cfg)
    if path is not None:
        save_scoped_model(m, path)
    return m, True


def _eval_task(ds, scope, sensor, cfg, models_dir, opts):
    model, _ = _train_task(ds, scope, sensor, cfg, models_dir)
    accuracy, curves = [], []
    preds = {a: predict_app(model, ds, a) for a in scope.apps}
    for a in scope.apps:
        p = preds[a]
        s = p.n_max if opts["s"] == "max" else min(int(opts["s"]), p.n_max)
        accuracy.append(report_at(model, p, s))
        if opts["curves"]:
            curves += [report_at(model, p, k) for k in range(1, p.n_max + 1)]
    if opts["avg"] and len(scope.apps) > 1:
        accuracy.append(evaluate_avg(model, ds, preds=preds))
    top = reports.top_feature_rows(model, opts["top_k"]) if opts["top_k"] else []
    return accuracy, curves, top


def _parallel(cfg: PipelineConfig, fn, tasks):
    if cfg.jobs == 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    return Parallel(n_jobs=cfg.jobs, backend="loky")(delayed(fn)(*t) for t in tasks)


def cmd_train(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    ds = _open(data)
    groups = _groups(cfg, data)
    tasks = [(ds, sc, g, cfg, args.models) for sc in _scopes(args, groups, ds) for g in _sensors(args.sensor)]
    for model, fresh in _parallel(cfg, _train_task, tasks):
        state = "trained" if fresh else "cached"
        print(f"{state} {model.name}: cv={model.model.chosen['cv_mean']:.4f} "
              f"val={model.model.val_accuracy:.4f} -> {Path(args.models) / model_filename(model.scope, model.sensor)}")
    return 0


def run_evaluation(args, cfg: PipelineConfig, out: Path) -> list[Path]:
    data = Path(args.data)
    ds = _open(data)
    groups = _groups(cfg, data)
    sensors = _sensors(args.sensor)
    opts = {"s": args.s, "curves": args.curves, "avg": args.avg, "top_k": args.top_k}
    if opts["s"] != "max":
        try:
            if int(opts["s"]) < 1:
                raise ValueError
        except ValueError:
            raise UsageError(f"--s must be 'max' or a positive integer, got {args.s!r}") from None
    artifacts = []
    tasks = [(ds, sc, g, cfg, args.models, opts) for sc in _scopes(args, groups, ds) for g in sensors]
    results = _parallel(cfg, _eval_task, tasks)
    acc = [r for res in results for r in res[0]]
    artifacts.append(reports.write_accuracy_table(acc, out / reports.ACCURACY_TABLE))
    if args.curves:
        artifacts.append(reports.write_subsession_curves(
            [c for res in results for c in res[1]], out / reports.SUBSESSION_CURVES))
    if args.top_k:
        artifacts.append(reports.write_top_features(
            [t for res in results for t in res[2]], out / reports.TOP_FEATURES))
    if args.zero_day:
        eligible = [g for g, m in groups.groups.items() if set(m) <= set(ds.apps)]
        test_apps = [a for a in groups.apps if a in ds.apps]
        tasks = [(ds, groups, g, cfg, [gname], test_apps) for g in sensors for gname in eligible]
        cells = [c for res in _parallel(cfg, _zero_day_task, tasks) for c in res]
        artifacts.append(reports.write_zero_day_matrix(cells, out / reports.ZERO_DAY_MATRIX))
    return artifacts


def _zero_day_task(ds, groups, sensor, cfg, train_groups, test_apps):
    return zero_day_matrix(ds, groups, sensor, cfg, train_groups=train_groups, test_apps=test_apps)


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = reports.utc_now()
    artifacts = run_evaluation(args, cfg, out)
    reports.write_run_manifest(out, config_hash=cfg.config_hash(), seed=cfg.seed,
                               dataset=_open(Path(args.data)).fingerprint(), command="evaluate",
                               started=started, artifacts=artifacts)
    for a in artifacts:
        print(f"wrote {a}")
    return 0


def cmd_sweep_r(args) -> int:
    base = _config(args)
    try:
        values = [float(v) for v in _csv_list(args.values)]
    except ValueError:
        raise UsageError(f"--values must be a comma-separated list of numbers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    root = Path(args.out)
    for r in values:
        cfg = base.with_overrides(**{"blocking.r": r})
        out = root / f"r_{r:g}"
        out.mkdir(parents=True, exist_ok=True)
        started = reports.utc_now()
        models = Path(args.models) / f"r_{r:g}" if args.models else None
        sub = argparse.Namespace(**{**vars(args), "models": models})
        artifacts = run_evaluation(sub, cfg, out)
        reports.write_run_manifest(out, config_hash=cfg.config_hash(), seed=cfg.seed,
                                   dataset=_open(Path(args.data)).fingerprint(),
                                   command=f"sweep-r r={r:g}", started=started, artifacts=artifacts,
                                   extra={"r": r})
        print(f"r={r:g}: wrote {len(artifacts)} report(s) to {out}")
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise EvaluationError(f"report input {src} is not a directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = reports.utc_now()
    copied = []
    for f in sorted(src.rglob("*")):
        if f.is_file() and f.suffix in (".csv", ".json") and f.name != reports.RUN_MANIFEST:
            dest = out / f.relative_to(src)
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(f, dest)
            copied.append(dest)
    if not copied:
        raise EvaluationError(f"no CSV/JSON outputs under {src}")
    cfg = _config(args)
    reports.write_run_manifest(out, config_hash=cfg.config_hash(), seed=cfg.seed, dataset=str(src),
                               command="report", started=started, artifacts=copied)
    print(f"bundled {len(copied)} file(s) into {out}")
    return 0


# ---- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (default: $VRIDENT_CONFIG, then built-in defaults)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, help="parallel workers for independent model tasks")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vrident", description="Identify VR users from per-app sensor traces.")
    p.add_argument("--version", action="version", version=f"vrident {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--users", type=int, default=20)
    s.add_argument("--apps", help="comma-separated archetype ids (default: all 8)")
    s.add_argument("--sensor", action="append", help="sensor group(s) to write (default: all)")
    s.add_argument("--vary", help="'clone' or comma-separated profile fields to vary (default: all)")
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--jitter", type=float, default=0.1, help="relative session-duration jitter")
    s.add_argument("--duration-scale", type=float, default=1.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="scan, validate and preprocess a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--strict", action="store_true", help="exit 1 if any trace fails to load")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("summarize", parents=[common], help="write block tables per app and sensor group")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sensor", action="append")
    s.add_argument("--apps")
    s.add_argument("--mode", choices=["fba", "fbl"])
    s.add_argument("--r", type=float)
    s.set_defaults(func=cmd_summarize)

    def model_args(s):
        s.add_argument("--data", required=True)
        s.add_argument("--scope", action="append",
                       help="app:a_<j>, group:<name> or universal (repeatable; default: all)")
        s.add_argument("--sensor", action="append", help="bm, eg, hj, fe (repeatable; default: all)")
        s.add_argument("--mode", choices=["fba", "fbl"])
        s.add_argument("--r", type=float)

    s = sub.add_parser("train", parents=[common], help="train models for the requested scopes")
    model_args(s)
    s.add_argument("--models", required=True, help="model directory")
    s.set_defaults(func=cmd_train)

    def eval_args(s):
        model_args(s)
        s.add_argument("--models", help="reuse/save models here")
        s.add_argument("--out", required=True)
        s.add_argument("--s", default="max", help="blocks per user to vote over: 'max' or an integer")
        s.add_argument("--curves", action="store_true", help="also write sub-session curves")
        s.add_argument("--avg", action="store_true", help="a_avg evaluation for multi-app scopes")
        s.add_argument("--zero-day", action="store_true", help="also write the zero-day matrix")
        s.add_argument("--top-k", type=int, default=0, help="write the top-k features per model")

    s = sub.add_parser("evaluate", parents=[common], help="accuracy tables, curves, a_avg, zero-day")
    eval_args(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep-r", parents=[common], help="evaluate for several r values")
    eval_args(s)
    s.add_argument("--values", required=True, help="comma-separated r values, e.g. 0.1,0.5,1,2")
    s.set_defaults(func=cmd_sweep_r)

    s = sub.add_parser("report", parents=[common], help="bundle CSV/JSON outputs with a manifest")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vrident: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except VrIdentError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

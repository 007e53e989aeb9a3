"""``cellcast`` command line: ingest, synth, cluster, train, evaluate, report, run.

Stages talk to each other only through files in the work directory
(``--workdir``, else ``$CELLCAST_WORKDIR``, else ``./cellcast-work``).
Logs go to stderr as one JSON object per line. Exit codes: 0 ok, 2 usage,
3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import cluster as cl
from . import evaluation as ev
from . import ingest as ig
from . import profile as pf
from .config import RunConfig, default_workdir
from .errors import CellcastError, MissingInputError, UsageError, ValidationError
from .model import VARIANTS
from .store import RUN_FILE, find_run_dirs, load_runs, save_runs
from .trainer import Splits, TrainConfig, routing_for, run_experiment

log = logging.getLogger("cellcast")

TABLE_ORDER = ["lstm", "mlp", "multi-tcn-lstm", "lstm-C", "mlp-C", "multi-tcn-lstm-C"]


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        data = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        data.update(getattr(record, "fields", {}))
        return json.dumps(data, sort_keys=True, default=str)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging(level):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("cellcast")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _event(msg, **fields):
    log.info(msg, extra={"fields": fields})


def _workdir(args) -> Path:
    return Path(args.workdir) if args.workdir else default_workdir()


def _series_path(args) -> Path:
    if args.series:
        return Path(args.series)
    wd = _workdir(args)
    cache = wd / "series.bin"
    return cache if cache.is_file() else wd / "series.csv"


def _select_cells(series, block):
    if not block:
        return dict(series)
    keep = ig.select_central_cells(100, block)
    return {c: s for c, s in series.items() if c in keep}


def _load_assignment(text):
    if text is None or text.lower() == "none":
        return None
    cell_cluster, _ = cl.read_assignment_csv(text)
    return cell_cluster


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for key, value in cfg.items():
        _event("config", key=key, value=value)
    return cfg


# -- commands ------------------------------------------------------------------


def cmd_ingest(args):
    start = ig.local_midnight_hour(args.start, args.tz)
    span = (start, start + 24 * args.days)
    series, skipped = ig.ingest_directory(args.input, args.selector, span, args.jobs)
    out = Path(args.out) if args.out else _workdir(args) / "series.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    ig.write_series_csv(series, out.with_suffix(".csv"))
    ig.write_series_cache(series, out.with_suffix(".bin"))
    _event("ingest done", cells=len(series), hours=span[1] - span[0], skipped=skipped, out=str(out.with_suffix(".csv")))


def _parse_regimes(args):
    try:
        peaks = [int(p) for p in args.regimes.split(":")]
    except ValueError:
        raise UsageError(f"--regimes expects hours separated by ':', got {args.regimes!r}") from None
    if args.fractions:
        fractions = [float(f) for f in args.fractions.split(":")]
        if len(fractions) != len(peaks):
            raise UsageError("--fractions needs one value per regime")
    else:
        fractions = [1.0 / len(peaks)] * len(peaks)
    return tuple(ig.Regime(p, args.base, args.amplitude, args.sigma, f) for p, f in zip(peaks, fractions))


def cmd_synth(args):
    spec = ig.SyntheticSpec(args.cells, _parse_regimes(args), args.days, args.seed)
    series, labels = ig.generate_synthetic(spec)
    out = Path(args.out) if args.out else _workdir(args)
    out.mkdir(parents=True, exist_ok=True)
    ig.write_series_csv(series, out / "series.csv")
    ig.write_series_cache(series, out / "series.bin")
    with open(out / "labels.csv", "w", encoding="utf-8") as fh:
        fh.write("cell_id,regime,peak_hour\n")
        for cid in sorted(labels):
            fh.write(f"{cid},{labels[cid]},{spec.regimes[labels[cid]].peak_hour}\n")
    _event("synth done", cells=len(series), days=args.days, out=str(out))


def cmd_cluster(args):
    series = _select_cells(ig.load_series(_series_path(args)), args.block)
    if not series:
        raise MissingInputError("no cells to cluster")
    out = Path(args.out) if args.out else _workdir(args)
    out.mkdir(parents=True, exist_ok=True)
    groups = pf.group_by_peak_hour(series, args.days, fold=args.fold)
    assignment = cl.cluster_groups(groups, args.k, series)
    pf.write_peak_histograms_csv([pf.peak_histogram(s, args.days) for s in series.values()], out / "peaks.csv")
    pf.write_group_profiles_csv(groups, out / "groups.csv")
    usable = {g: p for g, p in groups.items() if not p.is_constant}
    if len(usable) >= 2:
        cl.write_correlation_csv(cl.correlation_matrix(usable), out / "correlation.csv")
    cl.write_assignment_csv(groups, assignment, out / "assignment.csv")
    with open(out / "clusters.csv", "w", encoding="utf-8") as fh:
        fh.write("group_id,cluster,cells,flagged\n")
        for gid in sorted(groups):
            flagged = int(gid in assignment.flagged_groups)
            fh.write(f"{gid},{assignment.group_to_cluster[gid]},{groups[gid].size},{flagged}\n")
    _event(
        "cluster done",
        groups=len(groups),
        k=assignment.k,
        quality=assignment.quality,
        clusters=assignment.clusters(),
        flagged=list(assignment.flagged_groups),
    )


def cmd_train(args):
    cfg = _run_config(args)
    if args.seed is not None:
        cfg = RunConfig(**{**cfg.__dict__, "seed": args.seed})
        cfg.tcn = type(cfg.tcn)(**{**cfg.tcn.to_dict(), "seed": args.seed})
        cfg.train = type(cfg.train)(**{**cfg.train.__dict__, "seed": args.seed})
    series = _select_cells(ig.load_series(_series_path(args)), args.block if args.block is not None else cfg.block)
    assignment = _load_assignment(args.assignment)
    spec = cfg.model_spec(args.variant)
    out_root = Path(args.out) if args.out else _workdir(args) / "models"
    def on_epoch(rec):
        log.debug("epoch", extra={"fields": rec})

    runs = run_experiment(series, assignment, spec, cfg.train, jobs=args.jobs or cfg.jobs, on_epoch=on_epoch)
    name = spec.variant + ("-C" if assignment is not None else "")
    run_dir = save_runs(runs, spec, cfg.train, assignment is not None, out_root / name)
    for model_id, run in sorted(runs.items()):
        _event("train done", variant=name, model_id=model_id, epochs=run.epochs, best_epoch=run.best_epoch,
               best_val_mape=run.val_mape[run.best_epoch] if run.best_epoch >= 0 else None)
    _event("models saved", dir=str(run_dir), models=len(runs))


def _evaluate_run(run_dir, series, assignment):
    variant, spec, clustered, runs = load_runs(run_dir)
    predictors = {mid: run.predictor(spec) for mid, run in runs.items()}
    if clustered and assignment is not None:
        routing = routing_for(series, assignment)
    else:
        routing = {c: mid for mid, run in runs.items() for c in run.cells}
    cells = sorted(c for c in series if c in routing)
    missing = sorted(set(series) - set(routing))
    if missing:
        raise ValidationError(f"{len(missing)} cells are not routed to any {variant} model, e.g. {missing[:5]}")
    start = next(iter(series.values())).start_hour
    tc = json.loads((Path(run_dir) / RUN_FILE).read_text(encoding="utf-8"))["train_config"]
    splits = Splits.from_start(start, TrainConfig(**tc))
    return ev.evaluate(predictors, series, routing, splits.eval, spec.window, variant, cells)


def cmd_evaluate(args):
    series = _select_cells(ig.load_series(_series_path(args)), args.block)
    models_dir = Path(args.models) if args.models else _workdir(args) / "models"
    run_dirs = find_run_dirs(models_dir)
    if not run_dirs:
        raise MissingInputError(f"no trained runs under {models_dir}")
    assignment = _load_assignment(args.assignment)
    out = Path(args.out) if args.out else _workdir(args) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for run_dir in run_dirs:
        report = _evaluate_run(run_dir, series, assignment)
        report.save(out / f"{report.variant}.json")
        reports.append(report)
        _event("evaluate done", **report.summary())
    reports.sort(key=_table_key)
    ev.write_comparison_csv(reports, out / "comparison.csv")


def _table_key(report):
    name = report.variant
    return (TABLE_ORDER.index(name) if name in TABLE_ORDER else len(TABLE_ORDER), name)


def cmd_report(args):
    wd = _workdir(args)
    eval_dir = Path(args.eval) if args.eval else wd / "eval"
    paths = sorted(eval_dir.glob("*.json")) if eval_dir.is_dir() else []
    if not paths:
        raise MissingInputError(f"no evaluation reports in {eval_dir}")
    reports = sorted((ev.EvalReport.load(p) for p in paths), key=_table_key)
    out = Path(args.out) if args.out else wd / "report"
    out.mkdir(parents=True, exist_ok=True)
    ev.write_comparison_csv(reports, out / "comparison.csv")
    ev.write_per_cell_csv(reports, out / "per_cell.csv")
    common = set.intersection(*(set(r.traces) for r in reports))
    cells = [int(c) for c in args.cells.split(",")] if args.cells else sorted(common)
    ev.export_traces(cells, reports, out / "traces.csv")
    series_path = _series_path(args)
    if series_path.is_file():
        ev.export_grid_heatmap(ig.load_series(series_path), out / "heatmap.csv")
    _event("report done", variants=[r.variant for r in reports], out=str(out))


def cmd_run(args):
    """Full pipeline from a config: [ingest], cluster, train all variants, evaluate, report."""
    cfg = _run_config(args)
    wd = Path(args.workdir) if args.workdir else Path(cfg.workdir)
    base = ["--workdir", str(wd)]
    if cfg.input_dir:
        main(base + ["ingest", "--input", cfg.input_dir, "--selector", cfg.selector, "--start", cfg.start,
                     "--days", str(cfg.days), "--tz", cfg.tz], _nested=True)
    main(base + ["cluster", "--k", str(cfg.k), "--block", str(cfg.block), "--days", str(cfg.train.train_days)]
         + (["--fold"] if cfg.fold else []), _nested=True)
    for variant in cfg.variants:
        for assignment in ("none", str(wd / "assignment.csv")):
            main(base + ["train", "--variant", variant, "--assignment", assignment, "--config", args.config,
                         "--block", str(cfg.block)], _nested=True)
    main(base + ["evaluate", "--block", str(cfg.block)], _nested=True)
    main(base + ["report"], _nested=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cellcast", description=__doc__.splitlines()[0])
    p.add_argument("--workdir", help="work directory (default $CELLCAST_WORKDIR or ./cellcast-work)")
    p.add_argument("-v", "--verbose", action="store_true", help="log every training epoch")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="raw grid records to hourly series")
    s.add_argument("--input", required=True)
    s.add_argument("--selector", choices=ig.SELECTORS, default="internet")
    s.add_argument("--start", default="2013-11-01", help="first local date, YYYY-MM-DD")
    s.add_argument("--days", type=int, default=30)
    s.add_argument("--tz", default=ig.DEFAULT_TZ)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="labelled synthetic traffic")
    s.add_argument("--cells", type=int, default=200)
    s.add_argument("--regimes", default="15:21", help="peak hours separated by ':'")
    s.add_argument("--fractions", help="cell fractions separated by ':' (default equal)")
    s.add_argument("--days", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--base", type=float, default=100.0)
    s.add_argument("--amplitude", type=float, default=200.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("cluster", help="peak-hour groups merged into K clusters")
    s.add_argument("--series")
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--days", type=int, default=pf.TRAIN_DAYS, help="training days used for peaks and profiles")
    s.add_argument("--fold", action="store_true", help="fold group profiles into one 24-hour day")
    s.add_argument("--block", type=int, default=0, help="restrict to the central block of this side (0 = all cells)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("train", help="train one variant, clustered or global")
    s.add_argument("--series")
    s.add_argument("--assignment", default="none", help="assignment CSV or 'none'")
    s.add_argument("--variant", choices=VARIANTS, required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--block", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="MAPE / MAE of trained runs on the evaluation days")
    s.add_argument("--models")
    s.add_argument("--series")
    s.add_argument("--assignment", default="none")
    s.add_argument("--block", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="comparison table, traces and heatmap from existing results")
    s.add_argument("--eval")
    s.add_argument("--series")
    s.add_argument("--cells", help="comma-separated cells for the trace export (default all)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="whole pipeline from a config file")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None, _nested=False) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not _nested:
            _setup_logging(logging.DEBUG if args.verbose else logging.INFO)
        args.func(args)
    except CellcastError as exc:
        if _nested:
            raise
        message = str(exc).replace("\n", " ")
        print(f"cellcast: error[{exc.category}]: {message}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

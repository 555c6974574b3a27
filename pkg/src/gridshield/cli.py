"""``gridshield`` command line.

Subcommands share ``--config`` (required), ``--seed`` and ``--out``::

    gridshield simulate --config exp.yaml
    gridshield attack   --config exp.yaml --kind all
    gridshield detect   --config exp.yaml --method cecd-as
    gridshield evaluate --config exp.yaml --suite paper
    gridshield evaluate --config exp.yaml --sweep-beta 10,30,60,90,150
    gridshield sweep    --config exp.yaml

Exit status is 0 on success, 1 when a run fails and 2 for usage or config
errors.
"""
from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .attackgen import (
    ATTACK_KINDS,
    CleanStreams,
    LabeledDataset,
    columns_for,
    make_dataset,
    simulate_clean,
)
from .config import ConfigError, ExperimentConfig, load_config
from .detector import CrossLayerEnsemble, run_global_corrdet
from .eval import compare_methods, reports_to_csv, reports_summary, sweep_beta
from .sestimator import detect_stream
from .traceio import (
    TraceError,
    atomic_write_text,
    config_hash,
    header_line,
    read_trace,
    write_manifest,
    write_trace,
)

__all__ = ["main", "build_parser"]

METHODS = ("se", "cd", "ecd-as", "cecd-as")
CHANNEL_CHOICES = ("sg", "iat", "td", "pc", "all")
DEFAULT_BETAS = (10, 30, 60, 90, 150, 300)


class UsageError(Exception):
    pass


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 2 for v in vals):
        raise argparse.ArgumentTypeError("window sizes must be integers >= 2")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="experiment YAML file")
    common.add_argument("--seed", type=_u64, help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: config 'out')")

    p = argparse.ArgumentParser(prog="gridshield", description="Cross-layer attack detection experiments.")
    p.add_argument("--version", action="version", version=f"gridshield {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write the clean trace")

    a = sub.add_parser("attack", parents=[common], help="inject attacks into the clean trace")
    a.add_argument("--trace", metavar="PATH", help="clean trace (default: OUT/clean_trace.csv)")
    a.add_argument("--kind", choices=ATTACK_KINDS + ("all",), help="attack kind (default: config scenario.kind)")

    d = sub.add_parser("detect", parents=[common], help="run one detector and write per-fold logs")
    d.add_argument("--trace", metavar="PATH", help="labelled trace (default: OUT/<kind>_trace.csv)")
    d.add_argument("--method", choices=METHODS, default="cecd-as")
    d.add_argument("--channels", choices=CHANNEL_CHOICES, default=None)

    e = sub.add_parser("evaluate", parents=[common], help="compare methods or sweep the window size")
    e.add_argument("--trace", metavar="PATH", help="labelled trace (single-dataset mode)")
    e.add_argument("--suite", choices=("paper",), help="evaluate every attack kind in the config suite")
    e.add_argument("--sweep-beta", type=_int_list, metavar="B1,B2,...", help="window sizes to sweep")
    e.add_argument("--timing", action="store_true", help="record per-fold wall times in the report")

    s = sub.add_parser("sweep", parents=[common], help="window-size sweep with config sweep.betas")
    s.add_argument("--trace", metavar="PATH", help="labelled trace (default: OUT/<kind>_trace.csv)")
    return p


# --- helpers -----------------------------------------------------------------


def _context(args) -> tuple[ExperimentConfig, Path, str]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg, cfg.out_dir(args.out), config_hash(cfg.as_dict())


def _trace_path(out: Path, explicit: str | None, kind: str) -> Path:
    path = Path(explicit) if explicit else out / f"{kind}_trace.csv"
    if not path.exists():
        hint = "run 'gridshield simulate'" if kind == "clean" else f"run 'gridshield attack --kind {kind}'"
        raise FileNotFoundError(f"expected trace {path} not found; {hint} first or pass --trace")
    return path


def _clean_from_trace(cfg: ExperimentConfig, path: Path) -> CleanStreams:
    case = cfg.load_case()
    ds = read_trace(path, case)
    missing = {"sg", "iat", "td", "pc"} - set(ds.channels)
    if missing:
        raise TraceError(f"{path}: not a clean trace (missing channels {sorted(missing)})")
    if ds.attacked_count:
        raise TraceError(f"{path}: clean trace contains {ds.attacked_count} attacked samples")
    chans = {ch: ds.select(ch).features for ch in ("sg", "iat", "td", "pc")}
    return CleanStreams(case=case, queue=cfg.queue(), **chans)


def _kind_of(ds, fallback: str) -> str:
    kinds = sorted(set(ds.attack_kind.tolist()) - {""})
    if ds.layout == "pc":
        return "mitm"
    if set(kinds) == {"mfdi", "mdos"}:
        return "mfdi_mdos"
    return kinds[0] if len(kinds) == 1 else fallback


# --- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg, out, sha = _context(args)
    case = cfg.load_case()
    clean = simulate_clean(case, cfg.load_profile(), cfg.samples, cfg.queue(), seed=cfg.seed)
    chans = ("sg", "iat", "td", "pc")
    ds = LabeledDataset(
        features=np.hstack([clean.channel(c) for c in chans]),
        labels=np.zeros(len(clean), dtype=np.int8),
        attack_kind=np.full(len(clean), "", dtype="<U1"),
        columns=columns_for(case, chans),
        layout="cross",
        case_name=case.name,
    )
    path = write_trace(out / "clean_trace.csv", ds, sha)
    print(f"case {case.name}: N={case.state_dim} d={case.meas_dim} samples={len(clean)} "
          f"channels={','.join(chans)} -> {path}")
    return 0


def cmd_attack(args) -> int:
    cfg, out, sha = _context(args)
    clean = _clean_from_trace(cfg, _trace_path(out, args.trace, "clean"))
    kinds = cfg.suite if args.kind == "all" else (args.kind or cfg.kind,)
    for kind in kinds:
        ds = make_dataset(clean, cfg.scenario_for(kind))
        trace = write_trace(out / f"{kind}_trace.csv", ds, sha)
        write_manifest(out / f"{kind}_manifest.json", ds, sha)
        print(f"{kind}: {ds.attacked_count}/{len(ds)} attacked samples in {len(ds.events)} events "
              f"layout={ds.layout} -> {trace}")
    return 0


def _resolve_channels(method: str, choice: str | None, available: tuple[str, ...]) -> tuple[str, ...]:
    if choice == "all":
        chans = available
    elif choice is not None:
        chans = (choice,)
    elif method == "se":
        chans = ("sg",)
    elif method == "ecd-as":
        chans = available[:1]
    else:
        chans = available
    missing = set(chans) - set(available)
    if missing:
        raise UsageError(f"trace has no {sorted(missing)} channel(s); available: {','.join(available)}")
    if method == "se" and chans != ("sg",):
        raise UsageError("method 'se' works on the sg channel only")
    return tuple(chans)


def cmd_detect(args) -> int:
    cfg, out, sha = _context(args)
    case = cfg.load_case()
    path = _trace_path(out, args.trace, cfg.kind)
    full = read_trace(path, case)
    chans = _resolve_channels(args.method, args.channels, full.channels)
    ds = full.select(chans)
    kind = _kind_of(full, cfg.kind)
    ens_cfg = cfg.ensemble(kind)
    plan = cfg.plan()
    header = [header_line(sha), f"method={args.method} channels={','.join(chans)} trace={path.name}"]
    tag = f"{args.method}_{'-'.join(chans)}"
    for f, (train, test) in enumerate(plan.ranges(len(ds)), start=1):
        target = out / f"detections_{tag}_fold{f:02d}.csv"
        if args.method == "se":
            hit, j, thr = detect_stream(case, ds.features[test])
            lines = [f"# {h}" for h in header] + ["index,predicted,j_cme,threshold"]
            lines += [f"{test.start + k},{int(hit[k])},{float(j[k])!r},{thr!r}" for k in range(len(hit))]
            atomic_write_text(target, "\n".join(lines) + "\n")
            continue
        if args.method == "cd":
            log = run_global_corrdet(ds.features[train], ds.labels[train], ds.features[test], ens_cfg)
        else:
            ens = CrossLayerEnsemble(ens_cfg, ds.bus_groups()).fit(ds.features[train], ds.labels[train])
            log = ens.run(ds.features[test], start=test.start)
        tmp = target.with_suffix(".tmp")
        log.write_csv(tmp, header)
        os.replace(tmp, target)
    print(f"{args.method} on {','.join(chans)}: {plan.folds} fold logs of {plan.k2} rows in {out}")
    return 0


def _evaluate_one(cfg, case, ds, kind, out, sha, timing: bool):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reports = compare_methods(ds, case, cfg.ensemble(kind), cfg.plan(), record_timing=timing)
    atomic_write_text(out / f"report_{kind}.csv", reports_to_csv(reports, header_line(sha)))
    atomic_write_text(out / f"summary_{kind}.json", reports_summary(reports, sha, {"attack": kind}))
    print(f"== {kind} ==")
    print(f"{'method':8s} {'information':14s} {'accuracy':>15s} {'precision':>15s} {'recall':>15s} {'f1':>15s}")
    for r in reports:
        cells = " ".join(f"{r.mean(m):6.2f} +- {r.std(m):5.2f}" for m in ("accuracy", "precision", "recall", "f1"))
        print(f"{r.method:8s} {r.information:14s} {cells}")
    return reports


def _sweep(cfg, out, sha, ds, kind, betas, repeats) -> int:
    res = sweep_beta(ds, cfg.ensemble(kind), betas, cfg.plan(), repeats=repeats)
    path = atomic_write_text(out / "sweep_beta.csv", res.to_csv(header_line(sha)))
    for r in res.rows:
        print(f"beta={r.beta:4d} f1={r.f1:7.3f} wall_ms={r.wall_ms:9.1f}{'  <- knee' if r.beta == res.knee else ''}")
    print(f"-> {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, out, sha = _context(args)
    case = cfg.load_case()
    if args.suite and args.trace:
        raise UsageError("--suite and --trace are mutually exclusive")
    if args.sweep_beta:
        path = _trace_path(out, args.trace, "mfdi" if args.suite else cfg.kind)
        ds = read_trace(path, case)
        return _sweep(cfg, out, sha, ds, _kind_of(ds, cfg.kind), args.sweep_beta, cfg.sweep.get("repeats", 5))
    if args.suite:
        paths = {kind: _trace_path(out, None, kind) for kind in cfg.suite}
        for kind, path in paths.items():
            _evaluate_one(cfg, case, read_trace(path, case), kind, out, sha, args.timing)
        return 0
    path = _trace_path(out, args.trace, cfg.kind)
    ds = read_trace(path, case)
    _evaluate_one(cfg, case, ds, _kind_of(ds, cfg.kind), out, sha, args.timing)
    return 0


def cmd_sweep(args) -> int:
    cfg, out, sha = _context(args)
    path = _trace_path(out, args.trace, cfg.kind)
    ds = read_trace(path, cfg.load_case())
    betas = cfg.sweep.get("betas", list(DEFAULT_BETAS))
    return _sweep(cfg, out, sha, ds, _kind_of(ds, cfg.kind), betas, cfg.sweep.get("repeats", 5))


COMMANDS = {
    "simulate": cmd_simulate,
    "attack": cmd_attack,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    env = os.environ.get("GRIDSHIELD_THREADS")
    if env is not None and (not env.isdigit() or int(env) < 1):
        print(f"gridshield: error: GRIDSHIELD_THREADS must be a positive integer, got {env!r}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"gridshield: error: {exc}", file=sys.stderr)
        return 2
    except (TraceError, FileNotFoundError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"gridshield: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``jchlens run|sweep|report``."""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import sys
from pathlib import Path

from .experiments.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .experiments.results import GuardBreach, load_report, summary_table, write_result
from .experiments.runners import parallel_map, run_experiment


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if cfg.paper_scale and not args.paper_scale:
        raise ConfigError(f"{cfg.source or cfg.experiment} is a paper-scale config; pass --paper-scale to run it")
    if args.tol is not None:
        cfg.tol = float(args.tol)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.out is not None:
        cfg.out = str(args.out)
    return config_from_dict(cfg.to_dict(), cfg.source)


def _out_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    stem = Path(cfg.source).stem if cfg.source else cfg.experiment
    return Path("results") / stem


def sweep_points(cfg: ExperimentConfig) -> list[dict]:
    """Cartesian product of the sweep axes, one dict of scalar values per point."""
    from .experiments.config import sweep_values

    axes = sorted(cfg.sweep)
    if not axes:
        return [{}]
    values = [[float(v) for v in sweep_values(cfg.sweep[a])] for a in axes]
    return [dict(zip(axes, combo)) for combo in itertools.product(*values)]


def _run_point(payload):
    raw, point, threads = payload
    cfg = config_from_dict(raw, raw.get("source"))
    cfg.sweep = {k: [v] for k, v in point.items()}
    return run_experiment(cfg, threads=threads)


def cmd_run(args) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    result = run_experiment(cfg, threads=args.threads)
    out = _out_dir(cfg)
    write_result(result, out)
    print(summary_table(result.comparisons), end="")
    print(f"wrote {out}")
    return 0 if all(c.passed is not False for c in result.comparisons) else 1


def cmd_sweep(args) -> int:
    """Each sweep point runs as an isolated job; this process is the only writer."""
    cfg = _apply_flags(load_config(args.config), args)
    points = sweep_points(cfg)
    raw = cfg.to_dict()
    workers = max(1, int(args.threads or 1))
    results = parallel_map(_run_point, [(raw, p, 1 if workers > 1 else args.threads) for p in points], workers)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    digest = hashlib.sha256()
    ok = True
    for i, (point, res) in enumerate(zip(points, results)):
        sub = out / f"point_{i:03d}"
        man = json.loads(write_result(res, sub).read_text())
        digest.update(f"{i}:{man['datasets_checksum']}\n".encode())
        entries.append({"index": i, "point": point, "dir": sub.name, "datasets_checksum": man["datasets_checksum"]})
        ok &= all(c.passed is not False for c in res.comparisons)
        print(f"[{i}] {point}")
        print(summary_table(res.comparisons), end="")
    manifest = {"experiment": cfg.experiment, "config": raw, "points": entries, "sweep_checksum": digest.hexdigest()}
    (out / "sweep_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return 0 if ok else 1


def cmd_report(args) -> int:
    manifest, problems = load_report(args.result_dir)
    print(f"experiment: {manifest['experiment']}")
    conv = manifest.get("info", {}).get("convention")
    if conv:
        print(f"convention: branch {conv['branch']}, delta sign {conv['delta_sign']}, k = pi/{1 / conv['k_diag_over_pi']:.4g}")
    print(summary_table(manifest["comparisons"]), end="")
    for w in manifest.get("warnings", []):
        print(f"warning: {w}")
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    return 2 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jchlens", description="Polariton lattice lens experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default results/<config stem>)")
    common.add_argument("--tol", type=float, help="propagator tolerance override")
    common.add_argument("--threads", type=int, help="numba threads for run, worker processes for sweep")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--paper-scale", action="store_true", help="allow configs marked paper_scale")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", parents=[common], help="run every sweep point as a separate job")
    s.add_argument("config")
    s.set_defaults(func=cmd_sweep)
    rep = sub.add_parser("report", help="print the summary of a result directory")
    rep.add_argument("result_dir")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GuardBreach, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

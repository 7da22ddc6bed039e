"""Experiment results: datasets, predicted-vs-measured rows, manifest and report."""

from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .._kernels import backend

MANIFEST = "manifest.json"
SUMMARY = "summary.txt"


class GuardBreach(RuntimeError):
    """Population reached an open boundary during a run."""


@dataclass
class Comparison:
    quantity: str
    predicted: float | None
    measured: float | None
    tolerance: float | None = None
    note: str = ""
    passed: bool | None = None

    @property
    def discrepancy(self) -> float | None:
        if self.predicted is None or self.measured is None:
            return None
        return float(self.measured) - float(self.predicted)

    def evaluate(self) -> "Comparison":
        if self.passed is None and self.tolerance is not None and self.discrepancy is not None:
            self.passed = bool(abs(self.discrepancy) <= self.tolerance)
        return self

    def as_dict(self) -> dict:
        self.evaluate()
        return {
            "quantity": self.quantity,
            "predicted": _num(self.predicted),
            "measured": _num(self.measured),
            "discrepancy": _num(self.discrepancy),
            "tolerance": _num(self.tolerance),
            "pass": self.passed,
            "note": self.note,
        }


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class Dataset:
    columns: list[str]
    data: np.ndarray
    comment: str = ""


@dataclass
class ExperimentResult:
    experiment: str
    config: dict
    datasets: dict[str, Dataset] = field(default_factory=dict)
    comparisons: list[Comparison] = field(default_factory=list)
    info: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)  # name -> (times, pops (M, 2, N), nx, ny)
    timings: dict = field(default_factory=dict)

    def add_dataset(self, name, columns, data, comment=""):
        arr = np.asarray(data, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[1] != len(columns):
            raise ValueError(f"dataset {name}: {arr.shape[1]} columns but {len(columns)} names")
        self.datasets[name] = Dataset(list(columns), arr, comment)

    def compare(self, quantity, predicted, measured, tolerance=None, note="", passed=None) -> Comparison:
        c = Comparison(quantity, predicted, measured, tolerance, note, passed).evaluate()
        self.comparisons.append(c)
        return c

    def comparison(self, quantity: str) -> Comparison:
        for c in self.comparisons:
            if c.quantity == quantity:
                return c
        raise KeyError(quantity)


def format_columns(columns, data: np.ndarray, comment: str = "") -> str:
    """Whitespace-separated text with a ``#`` header; values in shortest round-trip form."""
    lines = []
    if comment:
        lines.extend(f"# {ln}" for ln in comment.splitlines())
    lines.append("# " + " ".join(columns))
    for row in np.asarray(data, dtype=float):
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def read_columns(path) -> tuple[list[str], np.ndarray]:
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            header = line[1:].split()
            continue
        if line.strip():
            rows.append([float(v) for v in line.split()])
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header or []))
    return header or [], data


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numba
    import scipy

    return {
        "jchlens": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "kernel_backend": backend(),
    }


def write_result(result: ExperimentResult, out_dir) -> Path:
    """Write datasets, snapshots, summary table and the manifest (last)."""
    from ..propagator import write_snapshot_series

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, ds in sorted(result.datasets.items()):
        path = out / f"{name}.dat"
        path.write_text(format_columns(ds.columns, ds.data, ds.comment))
        files[name] = {"file": path.name, "columns": ds.columns, "rows": int(ds.data.shape[0]), "sha256": sha256_file(path)}
    snaps = {}
    for name, (times, pops, nx, ny) in sorted(result.snapshots.items()):
        idx = write_snapshot_series(out / name, times, pops, nx, ny)
        snaps[name] = {"index": str(idx.relative_to(out)), "count": len(times), "sha256": sha256_file(idx)}
    (out / SUMMARY).write_text(summary_table(result.comparisons))
    digest = hashlib.sha256()
    for name in sorted(files):
        digest.update(f"{name}:{files[name]['sha256']}\n".encode())
    manifest = {
        "experiment": result.experiment,
        "config": result.config,
        "versions": versions(),
        "timings_s": result.timings,
        "info": result.info,
        "warnings": result.warnings,
        "datasets": files,
        "snapshots": snaps,
        "comparisons": [c.as_dict() for c in result.comparisons],
        "datasets_checksum": digest.hexdigest(),
        "written": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def summary_table(rows) -> str:
    head = f"{'quantity':<44} {'predicted':>14} {'measured':>14} {'discrepancy':>12} {'tol':>10}  pass"
    lines = [head, "-" * len(head)]
    for c in rows:
        d = c.as_dict() if isinstance(c, Comparison) else c
        lines.append(
            f"{d['quantity']:<44} {_fmt(d['predicted']):>14} {_fmt(d['measured']):>14} "
            f"{_fmt(d['discrepancy']):>12} {_fmt(d['tolerance']):>10}  {_flag(d['pass'])}"
        )
    return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{v:.6g}"


def _flag(p):
    return "-" if p is None else ("PASS" if p else "FAIL")


def load_report(result_dir) -> tuple[dict, list[str]]:
    """Read a manifest and re-verify dataset checksums; returns (manifest, problems)."""
    result_dir = Path(result_dir)
    manifest = json.loads((result_dir / MANIFEST).read_text())
    problems = []
    for name, meta in manifest.get("datasets", {}).items():
        path = result_dir / meta["file"]
        if not path.exists():
            problems.append(f"missing dataset {meta['file']}")
        elif sha256_file(path) != meta["sha256"]:
            problems.append(f"checksum mismatch for {meta['file']}")
    return manifest, problems

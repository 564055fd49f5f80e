"""Result rows, CSV output and the run manifest."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__

CSV_HEADER = ("experiment", "method", "h", "gamma", "metric", "value", "stderr", "n", "seed")
OUT_OF_REGIME_TAG = "+oor"


@dataclass(frozen=True)
class SweepResult:
    """One result row.  ``wall_time`` is kept out of the CSV so it stays reproducible."""

    experiment: str
    method: str
    h: float | None
    gamma: float | None
    metric: str
    value: float
    stderr: float
    n: int
    seed: int
    wall_time: float = 0.0

    def __post_init__(self):
        if not self.stderr >= 0 and not math.isnan(self.stderr):
            raise ValueError("standard error must be non-negative")

    @property
    def key(self):
        return (self.experiment, self.method, self.h, self.gamma, self.metric, self.seed)


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def format_rows(rows) -> str:
    """CSV text for ``rows``; the byte content depends only on the row values."""
    keys = [r.key for r in rows]
    if len(set(keys)) != len(keys):
        raise ValueError("result rows are not uniquely keyed")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.experiment, r.method, _num(r.h), _num(r.gamma), r.metric,
                    _num(r.value), _num(r.stderr), _num(r.n), _num(r.seed)])
    return buf.getvalue()


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_rows(rows))
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return list(reader)


def version_string() -> str:
    """``git describe``-style version, falling back to the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(config, out_dir, *, files, timings=None, extra=None) -> Path:
    """Write ``manifest.json`` with the resolved config, version and produced files."""
    from .. import kernels

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": version_string(),
        "config": config.to_dict(),
        "files": sorted(str(f) for f in files),
        "kernel_backend": config.backend or kernels.DEFAULT.NAME,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if timings is not None:
        manifest["wall_time_seconds"] = timings
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path

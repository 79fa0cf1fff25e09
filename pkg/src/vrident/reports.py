"""CSV/JSON report artifacts.

All numbers are written with fixed formats so reruns are byte-identical.
The run manifest carries wall-clock timestamps and is the one file that
differs between otherwise identical runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from vrident import __version__
from vrident.adversary import AccuracyReport, ScopedModel, ZeroDayCell
from vrident.classifier import feature_importance

ACCURACY_TABLE = "accuracy_table.csv"
SUBSESSION_CURVES = "subsession_curves.csv"
ZERO_DAY_MATRIX = "zero_day_matrix.csv"
TOP_FEATURES = "top_features.csv"
RUN_MANIFEST = "run_manifest.json"

ACCURACY_FIELDS = ["scope", "sensor", "app", "evaluation", "s", "subsession_seconds",
                   "n_users", "correct", "accuracy", "excluded"]
CURVE_FIELDS = ["scope", "sensor", "app", "s", "subsession_seconds", "n_users", "correct", "accuracy"]
ZERO_DAY_FIELDS = ["sensor", "train_group", "test_app", "test_group", "relation",
                   "n_users", "correct", "accuracy"]
TOP_FIELDS = ["scope", "sensor", "rank", "channel", "statistic", "importance"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fieldnames})
    return path


def write_accuracy_table(reports: Iterable[AccuracyReport], path: "str | Path") -> Path:
    return _write_csv(Path(path), ACCURACY_FIELDS, (r.row() for r in reports))


def write_subsession_curves(curves: Iterable[AccuracyReport], path: "str | Path") -> Path:
    rows = []
    for r in curves:
        row = r.row()
        rows.append({k: row[k] for k in CURVE_FIELDS})
    return _write_csv(Path(path), CURVE_FIELDS, rows)


def write_zero_day_matrix(cells: Iterable[ZeroDayCell], path: "str | Path") -> Path:
    rows = [{
        "sensor": c.sensor, "train_group": c.train_group, "test_app": f"a_{c.test_app}",
        "test_group": c.test_group, "relation": "within" if c.within else "cross",
        "n_users": c.report.n_users, "correct": c.report.correct, "accuracy": c.report.accuracy,
    } for c in cells]
    return _write_csv(Path(path), ZERO_DAY_FIELDS, rows)


def top_feature_rows(model: ScopedModel, top: int) -> list[dict]:
    return [
        {"scope": model.scope.label, "sensor": model.sensor.value, "rank": i + 1,
         "channel": col[0], "statistic": col[1], "importance": f"{imp:.8f}"}
        for i, (col, imp) in enumerate(feature_importance(model.model, top))
    ]


def write_top_features(rows: Iterable[dict], path: "str | Path") -> Path:
    return _write_csv(Path(path), TOP_FIELDS, rows)


def sha256_file(path: "str | Path") -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_run_manifest(out_dir: "str | Path", *, config_hash: str, seed: int, dataset: str,
                       command: str, started: str, artifacts: Sequence["str | Path"],
                       extra: "dict | None" = None) -> Path:
    out_dir = Path(out_dir)
    entries = []
    for a in sorted({Path(a) for a in artifacts}):
        entries.append({"path": str(a.relative_to(out_dir)) if a.is_relative_to(out_dir) else str(a),
                        "sha256": sha256_file(a)})
    manifest = {
        "tool": "vrident", "version": __version__, "python": platform.python_version(),
        "command": command, "config_hash": config_hash, "seed": seed, "dataset": dataset,
        "started": started, "finished": utc_now(), "artifacts": entries, **(extra or {}),
    }
    path = out_dir / RUN_MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path

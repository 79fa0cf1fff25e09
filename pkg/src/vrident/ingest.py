"""Dataset discovery, CSV loading and trace pre-processing.

On-disk layout::

    <root>/user_<i>/app_<j>/session_<1|2>/{bm,eg,hj,fe}.csv

Each CSV has a ``timestamp_ms`` column followed by the sensor group's channels.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from vrident.errors import IngestError, SchemaError
from vrident.schema import SensorGroup, SessionTrace

log = logging.getLogger(__name__)

TIMESTAMP_COLUMN = "timestamp_ms"
_USER_RE = re.compile(r"^user_(\d+)$")
_APP_RE = re.compile(r"^app_(\d+)$")
_SESSION_RE = re.compile(r"^session_([12])$")


@dataclass(frozen=True)
class TraceRef:
    user: int
    app: int
    session: int
    group: SensorGroup
    path: Path

    @property
    def key(self) -> tuple[int, int, int, SensorGroup]:
        return (self.user, self.app, self.session, self.group)


def trace_path(root: "str | Path", user: int, app: int, session: int, group) -> Path:
    group = SensorGroup.parse(group)
    return Path(root) / f"user_{user}" / f"app_{app}" / f"session_{session}" / f"{group.value}.csv"


@dataclass
class DatasetIndex:
    root: Path
    entries: dict = field(default_factory=dict)
    durations: dict = field(default_factory=dict)
    incomplete: set = field(default_factory=set)
    corrupt: set = field(default_factory=set)

    def __len__(self):
        return len(self.entries)

    @property
    def users(self) -> list[int]:
        return sorted({k[0] for k in self.entries})

    @property
    def apps(self) -> list[int]:
        return sorted({k[1] for k in self.entries})

    def duration_stats(self, app: int, group) -> tuple[float, float]:
        """(mean, variance) of session-1 durations across users."""
        group = SensorGroup.parse(group)
        d = [v for (u, a, s, g), v in self.durations.items() if a == app and g is group and s == 1]
        if not d:
            return (float("nan"), float("nan"))
        return (float(np.mean(d)), float(np.var(d)))

    def summary(self) -> dict:
        stats = {}
        for app in self.apps:
            for g in SensorGroup:
                mean, var = self.duration_stats(app, g)
                if not np.isnan(mean):
                    stats[f"app_{app}/{g.value}"] = {"mean_s": round(mean, 6), "var_s2": round(var, 6)}
        return {
            "root": str(self.root),
            "entries": len(self.entries),
            "users": self.users,
            "apps": self.apps,
            "incomplete": [
                {"user": u, "app": a, "group": g.value} for u, a, g in sorted(self.incomplete, key=_sort_key)
            ],
            "corrupt": [
                {"user": u, "app": a, "session": s, "group": g.value}
                for u, a, s, g in sorted(self.corrupt, key=_sort_key)
            ],
            "session1_duration_stats": stats,
        }


def _sort_key(key):
    return tuple(k.value if isinstance(k, SensorGroup) else k for k in key)


def _read_duration(path: Path) -> float:
    ts = pd.read_csv(path, usecols=[TIMESTAMP_COLUMN])[TIMESTAMP_COLUMN]
    ts = pd.to_numeric(ts, errors="coerce").dropna()
    if len(ts) < 2:
        return 0.0
    return float(ts.max() - ts.min()) / 1000.0


def _numbered_dirs(parent: Path, pattern: re.Pattern) -> Iterator[tuple[int, Path]]:
    for child in sorted(parent.iterdir()):
        m = pattern.match(child.name)
        if m and child.is_dir():
            yield int(m.group(1)), child


def scan_dataset(root: "str | Path", read_durations: bool = True) -> DatasetIndex:
    """Enumerate every trace file under ``root``.

    Pairs missing one session are flagged in ``incomplete`` (kept in the
    index); files whose timestamp column cannot be read go to ``corrupt``.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root {root} does not exist")
    index = DatasetIndex(root=root)
    for user, udir in _numbered_dirs(root, _USER_RE):
        for app, adir in _numbered_dirs(udir, _APP_RE):
            for session, sdir in _numbered_dirs(adir, _SESSION_RE):
                for group in SensorGroup:
                    path = sdir / f"{group.value}.csv"
                    if not path.is_file():
                        continue
                    ref = TraceRef(user, app, session, group, path)
                    index.entries[ref.key] = ref
                    if read_durations:
                        try:
                            index.durations[ref.key] = _read_duration(path)
                        except (OSError, ValueError, pd.errors.ParserError, KeyError) as exc:
                            log.warning("corrupt trace file %s: %s", path, exc)
                            index.corrupt.add(ref.key)
    for (user, app, session, group) in list(index.entries):
        other = 2 if session == 1 else 1
        if (user, app, other, group) not in index.entries:
            index.incomplete.add((user, app, group))
    return index


def load_session(ref: TraceRef, schema: "SensorGroup | None" = None) -> SessionTrace:
    """Parse one CSV into a raw trace, columns reordered to schema order.

    Non-numeric or empty cells become NaN and flag their row as corrupt.
    Rows whose timestamp itself is unreadable are discarded.
    """
    group = SensorGroup.parse(schema or ref.group)
    try:
        df = pd.read_csv(ref.path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestError(f"cannot parse {ref.path}: {exc}") from None
    header = list(df.columns)
    if not header or header[0] != TIMESTAMP_COLUMN:
        raise SchemaError(f"{ref.path}: first column must be {TIMESTAMP_COLUMN!r}")
    channels = header[1:]
    expected = group.channels
    if len(channels) != len(expected) or set(channels) != set(expected):
        raise SchemaError(
            f"{ref.path}: {group.name} needs {len(expected)} channels, found {len(channels)}"
            + ("" if len(channels) != len(expected) else " with unexpected names")
        )
    ts = pd.to_numeric(df[TIMESTAMP_COLUMN].str.strip(), errors="coerce")
    keep = ts.notna().to_numpy()
    if not keep.all():
        log.warning("%s: dropped %d row(s) with unreadable timestamps", ref.path, int((~keep).sum()))
    values = df.loc[keep, list(expected)].apply(
        lambda col: pd.to_numeric(col.str.strip(), errors="coerce")
    ).to_numpy(dtype=np.float64)
    return SessionTrace(
        user=ref.user, app=ref.app, session=ref.session, group=group,
        timestamps=ts[keep].to_numpy().astype(np.int64),
        values=values,
        channels=expected,
    )


def preprocess_with_log(trace: SessionTrace) -> tuple[SessionTrace, dict]:
    """De-duplicate timestamps, drop all-zero/invalid columns, repair corrupt cells."""
    ts = trace.timestamps
    vals = trace.values
    # np.unique returns the first index of each timestamp and sorts ascending
    _, first = np.unique(ts, return_index=True)
    n_dups = int(ts.size - first.size)
    ts = ts[first]
    vals = vals[first]

    valid_rows = ~np.isnan(vals).any(axis=1)
    if int(valid_rows.sum()) < 2:
        raise IngestError(
            f"trace too short: u{trace.user}/a{trace.app}/s{trace.session}/{trace.group.value} "
            f"has {int(valid_rows.sum())} valid sample(s)"
        )

    finite = ~np.isnan(vals)
    all_zero = np.array([
        bool(finite[:, j].any()) and bool((vals[finite[:, j], j] == 0.0).all())
        for j in range(vals.shape[1])
    ], dtype=bool)
    all_nan = ~finite.any(axis=0)
    drop = all_zero | all_nan
    keep_cols = np.flatnonzero(~drop)
    dropped = tuple(trace.channels[j] for j in np.flatnonzero(all_zero))
    invalid = tuple(trace.channels[j] for j in np.flatnonzero(all_nan))
    vals = vals[:, keep_cols].copy()
    channels = tuple(trace.channels[j] for j in keep_cols)

    repaired_rows = np.isnan(vals).any(axis=1)
    tsf = ts.astype(np.float64)
    for j in np.flatnonzero(np.isnan(vals).any(axis=0)):
        bad = np.isnan(vals[:, j])
        # linear between nearest valid neighbours, nearest-value copy at the edges
        vals[bad, j] = np.interp(tsf[bad], tsf[~bad], vals[~bad, j])

    out = trace.replace(
        timestamps=ts, values=vals, channels=channels,
        corrupt=np.zeros(ts.size, dtype=bool),
        dropped=tuple(trace.dropped) + dropped,
    )
    record = {
        "user": trace.user,
        "app": trace.app,
        "session": trace.session,
        "group": trace.group.value,
        "duplicate_timestamps_removed": n_dups,
        "dropped_all_zero_channels": list(dropped),
        "dropped_invalid_channels": list(invalid),
        "rows_repaired": int(repaired_rows.sum()),
        "repaired_timestamps_ms": [int(t) for t in ts[repaired_rows]],
        "samples_in": int(trace.n_samples),
        "samples_out": int(out.n_samples),
    }
    return out, record


def preprocess(trace: SessionTrace) -> SessionTrace:
    return preprocess_with_log(trace)[0]


def write_preprocess_log(record: dict, path: "str | Path") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def write_trace_csv(trace: SessionTrace, path: "str | Path", float_format: str = "%.6f") -> None:
    """Write a trace in the ingest CSV schema (full schema order, dropped channels as zeros)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    full = trace.project(trace.group.channels)
    df = pd.DataFrame(full.values, columns=full.channels)
    df.insert(0, TIMESTAMP_COLUMN, full.timestamps)
    df.to_csv(path, index=False, float_format=float_format, lineterminator="\n")


class DiskDataset:
    """Trace source backed by a scanned directory; returns preprocessed traces."""

    def __init__(self, index: DatasetIndex, cache: bool = True):
        self.index = index
        self._cache: dict | None = {} if cache else None

    @classmethod
    def open(cls, root: "str | Path") -> "DiskDataset":
        return cls(scan_dataset(root))

    @property
    def users(self) -> list[int]:
        return self.index.users

    @property
    def apps(self) -> list[int]:
        return self.index.apps

    def has(self, user, app, session, group) -> bool:
        key = (user, app, session, SensorGroup.parse(group))
        return key in self.index.entries and key not in self.index.corrupt

    def duration(self, user, app, session, group) -> "float | None":
        key = (user, app, session, SensorGroup.parse(group))
        if not self.has(*key):
            return None
        if key not in self.index.durations:
            self.index.durations[key] = _read_duration(self.index.entries[key].path)
        return self.index.durations[key]

    def trace(self, user, app, session, group) -> "SessionTrace | None":
        key = (user, app, session, SensorGroup.parse(group))
        if not self.has(*key):
            return None
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        t = preprocess(load_session(self.index.entries[key]))
        if self._cache is not None:
            self._cache[key] = t
        return t

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.index.entries, key=_sort_key):
            p = self.index.entries[key].path
            h.update(f"{p.relative_to(self.index.root)}:{p.stat().st_size}\n".encode())
        return h.hexdigest()[:16]

    def __getstate__(self):
        state = dict(self.__dict__)
        if state["_cache"] is not None:
            state["_cache"] = {}
        return state

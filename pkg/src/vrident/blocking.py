"""Block division (FBA / FBL), five-statistic summarization and table clean-up."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from vrident.errors import BlockingError
from vrident.schema import STATISTICS, SensorGroup, SessionTrace

LABELS = ("user", "app", "session", "block")


@dataclass(frozen=True)
class BlockPlan:
    """How every trace of one (app, sensor group) is cut into blocks.

    In FBA mode ``n_blocks`` is fixed and block length varies per user; in
    FBL mode ``length`` (seconds) is fixed and the count varies.
    """

    app: int
    group: SensorGroup
    mode: str
    n_base: int
    r: float = 1.0
    n_blocks: "int | None" = None
    length: "float | None" = None

    def to_dict(self) -> dict:
        return {
            "app": self.app, "group": SensorGroup.parse(self.group).value, "mode": self.mode,
            "n_base": self.n_base, "r": self.r, "n_blocks": self.n_blocks, "length": self.length,
        }


def _round_half_up(x: float) -> int:
    # guard against 0.1 * 25 = 2.5000000000000004 style representation error
    return int(math.floor(x + 0.5 + 1e-9))


def make_block_plan(durations: Sequence[float], r: float, app: int, group,
                    mode: str = "fba", fbl_length: "float | None" = None) -> BlockPlan:
    """Derive the block plan from per-user session durations (seconds).

    ``n_base`` is the floor of the mean duration; the FBA block amount is
    ``max(1, round_half_up(r * n_base))``.
    """
    durations = [float(d) for d in durations]
    if not durations:
        raise BlockingError(f"no sessions for app {app}")
    if any(not d > 0 for d in durations):
        raise BlockingError(f"app {app}: durations must be positive, got {min(durations)}")
    if not 0.0 < r <= 2.0:
        raise BlockingError(f"r must lie in (0, 2], got {r}")
    n_base = max(1, int(math.floor(float(np.mean(durations)))))
    group = SensorGroup.parse(group)
    if mode == "fba":
        return BlockPlan(app, group, "fba", n_base, r, n_blocks=max(1, _round_half_up(r * n_base)))
    if mode == "fbl":
        if fbl_length is None or fbl_length <= 0:
            raise BlockingError("FBL needs a positive block length")
        return BlockPlan(app, group, "fbl", n_base, r, length=float(fbl_length))
    raise BlockingError(f"unknown block mode {mode!r}")


@dataclass(frozen=True, eq=False)
class Block:
    user: int
    app: int
    session: int
    group: SensorGroup
    index: int
    start_ms: float
    end_ms: float
    timestamps: np.ndarray
    values: np.ndarray
    channels: tuple[str, ...]

    @property
    def n_samples(self) -> int:
        return int(self.values.shape[0])

    @property
    def zero_fraction(self) -> float:
        """Share of samples whose every channel is exactly zero."""
        if self.n_samples == 0:
            return 0.0
        return float((self.values == 0.0).all(axis=1).mean())


def block_edges(trace: SessionTrace, plan: BlockPlan) -> np.ndarray:
    """Interval boundaries in ms; the last interval is closed on the right."""
    t0 = float(trace.timestamps[0])
    t1 = float(trace.timestamps[-1])
    if plan.mode == "fba":
        return np.linspace(t0, t1, plan.n_blocks + 1)
    step = plan.length * 1000.0
    n = max(1, int(math.ceil((t1 - t0) / step - 1e-9)))
    edges = t0 + step * np.arange(n + 1)
    edges[-1] = t1
    return edges


def divide_blocks(trace: SessionTrace, plan: BlockPlan) -> list[Block]:
    if trace.app != plan.app or trace.group is not SensorGroup.parse(plan.group):
        raise BlockingError(
            f"plan for a{plan.app}/{plan.group} applied to a{trace.app}/{trace.group.value}"
        )
    if trace.n_samples < 2:
        raise BlockingError("undersampled trace: fewer than 2 samples")
    if plan.mode == "fba" and trace.n_samples < plan.n_blocks:
        raise BlockingError(
            f"undersampled trace u{trace.user}/a{trace.app}/s{trace.session}: "
            f"{trace.n_samples} samples for {plan.n_blocks} blocks"
        )
    edges = block_edges(trace, plan)
    n = len(edges) - 1
    ts = trace.timestamps
    span = int(ts[-1] - ts[0])
    if plan.mode == "fba":
        # exact integer arithmetic: samples on a boundary open the next block
        idx = (ts - ts[0]) * n // span if span > 0 else np.zeros(ts.size, np.int64)
    else:
        idx = np.floor((ts - ts[0]) / (plan.length * 1000.0) + 1e-9).astype(np.int64)
    idx = np.clip(idx, 0, n - 1)
    bounds = np.searchsorted(idx, np.arange(n + 1), side="left")
    blocks = []
    for k in range(n):
        lo, hi = bounds[k], bounds[k + 1]
        if plan.mode == "fbl" and k == n - 1 and k > 0 and hi - lo < 2:
            continue  # trailing partial FBL interval needs >= 2 samples
        blocks.append(Block(
            user=trace.user, app=trace.app, session=trace.session, group=trace.group,
            index=k, start_ms=float(edges[k]), end_ms=float(edges[k + 1]),
            timestamps=trace.timestamps[lo:hi], values=trace.values[lo:hi],
            channels=trace.channels,
        ))
    return blocks


@dataclass(frozen=True, eq=False)
class FeatureRow:
    labels: dict
    values: np.ndarray
    columns: tuple[tuple[str, str], ...]
    valid: bool = True


def feature_columns(channels: Iterable[str]) -> list[tuple[str, str]]:
    return [(c, s) for c in channels for s in STATISTICS]


def summarize_values(values: np.ndarray) -> np.ndarray:
    """(samples, channels) -> flat [c0_max, c0_min, c0_mean, c0_std, c0_median, c1_max, ...].

    Population standard deviation; even-length median is the mean of the
    middle pair. Sums accumulate in sample order (a prefix scan), so the
    floating-point result does not depend on numpy's summation strategy.
    """
    n = values.shape[0]
    if n == 0:
        return np.full(values.shape[1] * len(STATISTICS), np.nan)
    mean = np.cumsum(values, axis=0)[-1] / n
    dev = values - mean
    std = np.sqrt(np.cumsum(dev * dev, axis=0)[-1] / n)
    stats = np.stack([
        values.max(axis=0),
        values.min(axis=0),
        mean,
        std,
        np.median(values, axis=0),
    ], axis=1)
    return stats.reshape(-1)


def summarize_block(block: Block) -> FeatureRow:
    labels = {"user": block.user, "app": block.app, "session": block.session, "block": block.index}
    return FeatureRow(
        labels=labels,
        values=summarize_values(block.values),
        columns=tuple(feature_columns(block.channels)),
        valid=block.n_samples > 0,
    )


def column_name(col: tuple[str, str]) -> str:
    return f"{col[0]}__{col[1]}"


def parse_column_name(name: str) -> tuple[str, str]:
    ch, _, stat = name.rpartition("__")
    if not ch or stat not in STATISTICS:
        raise BlockingError(f"bad feature column {name!r}")
    return ch, stat


@dataclass(eq=False)
class BlockTable:
    """Blocks x summarized features, sharing one column manifest."""

    labels: pd.DataFrame
    X: np.ndarray
    columns: list
    zero_frac: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = self.labels.reset_index(drop=True)[list(LABELS)].astype(np.int64)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.labels), len(self.columns))
        self.columns = [tuple(c) for c in self.columns]
        if self.zero_frac is None:
            self.zero_frac = np.zeros(len(self.labels))
        self.zero_frac = np.asarray(self.zero_frac, dtype=np.float64)

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    @property
    def feature_names(self) -> list[str]:
        return [column_name(c) for c in self.columns]

    @property
    def users(self) -> np.ndarray:
        return self.labels["user"].to_numpy()

    def row(self, i: int) -> FeatureRow:
        return FeatureRow(
            labels={k: int(self.labels.at[i, k]) for k in LABELS},
            values=self.X[i].copy(), columns=tuple(self.columns),
        )

    def take(self, rows) -> "BlockTable":
        rows = np.asarray(rows)
        return BlockTable(self.labels.iloc[rows], self.X[rows], list(self.columns),
                          self.zero_frac[rows], dict(self.provenance))

    def project(self, columns: Sequence[tuple[str, str]]) -> "BlockTable":
        pos = {c: i for i, c in enumerate(self.columns)}
        idx = [pos[tuple(c)] for c in columns]
        return BlockTable(self.labels, self.X[:, idx], [tuple(c) for c in columns],
                          self.zero_frac, dict(self.provenance))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.feature_names)
        return pd.concat([self.labels, df], axis=1)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.labels.to_numpy()).tobytes())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(json.dumps(self.feature_names).encode())
        return h.hexdigest()[:16]

    @staticmethod
    def concat(tables: Sequence["BlockTable"]) -> "BlockTable":
        tables = list(tables)
        if not tables:
            raise BlockingError("nothing to concatenate")
        cols = tables[0].columns
        for t in tables[1:]:
            if t.columns != cols:
                raise BlockingError("cannot concatenate tables with different manifests")
        return BlockTable(
            pd.concat([t.labels for t in tables], ignore_index=True),
            np.vstack([t.X for t in tables]),
            list(cols),
            np.concatenate([t.zero_frac for t in tables]),
            dict(tables[0].provenance),
        )

    def save(self, path: "str | Path") -> None:
        """CSV with label columns plus a ``<name>.columns.json`` manifest sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
        sidecar = {
            "labels": list(LABELS),
            "columns": [{"channel": c, "statistic": s} for c, s in self.columns],
            "provenance": self.provenance,
        }
        manifest_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: "str | Path") -> "BlockTable":
        path = Path(path)
        df = pd.read_csv(path)
        side = manifest_path(path)
        if side.exists():
            meta = json.loads(side.read_text())
            columns = [(c["channel"], c["statistic"]) for c in meta["columns"]]
            provenance = meta.get("provenance", {})
        else:
            columns = [parse_column_name(n) for n in df.columns if n not in LABELS]
            provenance = {}
        names = [column_name(c) for c in columns]
        return cls(df[list(LABELS)], df[names].to_numpy(dtype=np.float64), columns, None, provenance)


def manifest_path(csv_path: "str | Path") -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".columns.json")


def summarize_trace(trace: SessionTrace, plan: BlockPlan) -> BlockTable:
    blocks = divide_blocks(trace, plan)
    n_ch = len(trace.channels)
    X = np.empty((len(blocks), n_ch * len(STATISTICS)))
    zf = np.empty(len(blocks))
    for i, b in enumerate(blocks):
        X[i] = summarize_values(b.values)
        zf[i] = b.zero_fraction
    labels = pd.DataFrame({
        "user": trace.user, "app": trace.app, "session": trace.session,
        "block": [b.index for b in blocks],
    })
    return BlockTable(labels, X, feature_columns(trace.channels), zf, {"plan": plan.to_dict()})


def common_channels(traces: Iterable[SessionTrace], order: Sequence[str]) -> tuple[str, ...]:
    """Channels that survived preprocessing in every trace, in ``order``."""
    keep = set(order)
    for t in traces:
        keep &= set(t.channels)
    return tuple(c for c in order if c in keep)


def build_block_table(traces: Sequence[SessionTrace], plan: BlockPlan,
                      channels: "Sequence[str] | None" = None) -> BlockTable:
    """Summarize several traces of one (app, group) onto a shared channel set."""
    traces = list(traces)
    if not traces:
        raise BlockingError(f"no traces for app {plan.app}")
    if channels is None:
        channels = common_channels(traces, traces[0].channels)
    tables = [summarize_trace(t.project(channels), plan) for t in traces]
    out = BlockTable.concat(tables)
    out.provenance = {"plan": plan.to_dict()}
    return out


def postprocess_blocks(table: BlockTable, zero_threshold: float = 0.8,
                       prune_columns: bool = True) -> BlockTable:
    """Remove invalid blocks, fill missing medians, drop constant features.

    A block is invalid when more than ``zero_threshold`` of its raw samples
    are all-zero, or when it still holds a missing value after median
    filling. Column pruning is skipped for evaluation tables, which must keep
    the training manifest.
    """
    X = table.X.copy()
    for j, (ch, stat) in enumerate(table.columns):
        if stat != "median":
            continue
        try:
            mean_j = table.columns.index((ch, "mean"))
        except ValueError:
            continue
        miss = np.isnan(X[:, j])
        X[miss, j] = X[miss, mean_j]

    keep = (table.zero_frac <= zero_threshold) & ~np.isnan(X).any(axis=1)
    out = BlockTable(table.labels[keep], X[keep], list(table.columns),
                     table.zero_frac[keep], dict(table.provenance))
    if len(out) == 0:
        raise BlockingError("no valid blocks")
    if prune_columns:
        varying = np.ptp(out.X, axis=0) > 0
        if not varying.any():
            raise BlockingError("no valid blocks: every feature is constant")
        out = out.project([c for c, v in zip(out.columns, varying) if v])
    return out

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrident.errors import IngestError, SchemaError
from vrident.ingest import (
    TIMESTAMP_COLUMN, DiskDataset, TraceRef, load_session, preprocess, preprocess_with_log,
    scan_dataset, trace_path, write_preprocess_log, write_trace_csv,
)
from vrident.schema import SensorGroup, SessionTrace

BM = SensorGroup.BM


def bm_trace(ts, values=None, user=1, app=1, session=1):
    n = len(ts)
    if values is None:
        values = np.arange(n * 33, dtype=float).reshape(n, 33) + 1.0
    return SessionTrace(user, app, session, BM, ts, values, BM.channels)


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")


def test_scan_full_layout(tmp_path):
    for u in (1, 2):
        for a in (1, 2, 3):
            for s in (1, 2):
                for g in SensorGroup:
                    write_trace_csv(bm_trace([0, 1000]).replace(group=g, channels=g.channels,
                                                                values=np.ones((2, g.n_channels))),
                                    trace_path(tmp_path, u, a, s, g))
    idx = scan_dataset(tmp_path)
    assert len(idx) == 2 * 3 * 2 * 4
    assert idx.users == [1, 2] and idx.apps == [1, 2, 3]
    assert not idx.incomplete and not idx.corrupt
    assert idx.duration_stats(1, "bm") == (1.0, 0.0)


def test_scan_incomplete_and_corrupt(tmp_path):
    write_trace_csv(bm_trace([0, 1000, 2000]), trace_path(tmp_path, 3, 7, 1, BM))
    write_trace_csv(bm_trace([0, 1000]), trace_path(tmp_path, 3, 8, 1, BM))
    write_trace_csv(bm_trace([0, 3000]), trace_path(tmp_path, 3, 8, 2, BM))
    trace_path(tmp_path, 4, 8, 1, BM).parent.mkdir(parents=True)
    trace_path(tmp_path, 4, 8, 1, BM).write_text("no,timestamp,here\n1,2,3\n")
    idx = scan_dataset(tmp_path)
    assert (3, 7, BM) in idx.incomplete
    assert (3, 8, BM) not in idx.incomplete
    assert (4, 8, 1, BM) in idx.corrupt
    # duration stats use session 1 only
    mean, var = idx.duration_stats(8, BM)
    assert mean == 1.0
    assert idx.summary()["incomplete"] == [{"user": 3, "app": 7, "group": "bm"}, {"user": 4, "app": 8, "group": "bm"}]


def test_scan_empty_and_missing(tmp_path):
    assert len(scan_dataset(tmp_path)) == 0
    with pytest.raises(IngestError):
        scan_dataset(tmp_path / "nope")


def test_load_session_five_rows(tmp_path):
    path = tmp_path / "bm.csv"
    write_trace_csv(bm_trace([0, 10, 20, 30, 40]), path)
    t = load_session(TraceRef(1, 1, 1, BM, path))
    assert t.n_samples == 5 and t.channels == BM.channels
    assert t.values[0, 0] == 1.0


def test_load_session_reorders_columns(tmp_path):
    path = tmp_path / "bm.csv"
    header = [TIMESTAMP_COLUMN] + list(reversed(BM.channels))
    write_csv(path, header, [[0] + list(range(33)), [10] + list(range(33))])
    t = load_session(TraceRef(1, 1, 1, BM, path))
    assert t.channels == BM.channels
    assert t.column(BM.channels[0])[0] == 32.0


def test_load_session_schema_mismatch(tmp_path):
    path = tmp_path / "bm.csv"
    write_csv(path, [TIMESTAMP_COLUMN] + list(BM.channels[:32]), [[0] + [1] * 32])
    with pytest.raises(SchemaError, match="32"):
        load_session(TraceRef(1, 1, 1, BM, path))
    write_csv(path, ["t"] + list(BM.channels), [[0] + [1] * 33])
    with pytest.raises(SchemaError):
        load_session(TraceRef(1, 1, 1, BM, path))


def test_load_session_err_token_flags_row(tmp_path):
    path = tmp_path / "bm.csv"
    rows = [[0] + [1.0] * 33, [10] + ["ERR"] + [2.0] * 32, [20] + [3.0] * 33]
    write_csv(path, [TIMESTAMP_COLUMN] + list(BM.channels), rows)
    t = load_session(TraceRef(1, 1, 1, BM, path))
    assert t.corrupt.tolist() == [False, True, False]


def test_dedupe_keeps_first():
    vals = np.ones((3, 33))
    vals[0] = 5.0
    vals[1] = 7.0
    out = preprocess(bm_trace([10, 10, 20], vals))
    assert out.timestamps.tolist() == [10, 20]
    assert out.values[0, 0] == 5.0


def test_repair_linear_interpolation():
    vals = np.ones((3, 33))
    vals[:, 0] = [1.0, np.nan, 3.0]
    out, rec = preprocess_with_log(bm_trace([10, 20, 30], vals))
    assert out.values[1, 0] == 2.0
    assert rec["rows_repaired"] == 1 and rec["repaired_timestamps_ms"] == [20]


def test_repair_edges_copy_nearest():
    vals = np.ones((4, 33))
    vals[:, 0] = [np.nan, 4.0, 6.0, 7.0]
    vals[:, 1] = [2.0, 5.0, 8.0, np.nan]
    out = preprocess(bm_trace([0, 10, 20, 30], vals))
    assert out.values[0, 0] == 4.0 and out.values[3, 1] == 8.0


def test_all_zero_column_dropped_and_logged(tmp_path):
    vals = np.ones((4, 33))
    vals[:, 5] = 0.0
    out, rec = preprocess_with_log(bm_trace([0, 10, 20, 30], vals))
    assert BM.channels[5] not in out.channels
    assert out.dropped == (BM.channels[5],)
    assert rec["dropped_all_zero_channels"] == [BM.channels[5]]
    write_preprocess_log(rec, tmp_path / "log.json")
    assert json.loads((tmp_path / "log.json").read_text())["samples_out"] == 4


def test_too_short():
    vals = np.ones((3, 33))
    vals[1:, 0] = np.nan
    with pytest.raises(IngestError, match="trace too short"):
        preprocess(bm_trace([0, 10, 20], vals))


def test_unsorted_timestamps_become_increasing():
    out = preprocess(bm_trace([30, 10, 20]))
    assert out.timestamps.tolist() == [10, 20, 30]


@st.composite
def raw_traces(draw):
    n = draw(st.integers(3, 25))
    ts = draw(st.lists(st.integers(0, 60), min_size=n, max_size=n))
    vals = np.array(draw(st.lists(
        st.lists(st.sampled_from([0.0, 1.0, -2.5, 3.25, np.nan]), min_size=4, max_size=4),
        min_size=n, max_size=n)))
    return SessionTrace(1, 1, 1, BM, ts, np.hstack([vals, np.full((n, 29), 0.5)]), BM.channels)


@settings(max_examples=150, deadline=None)
@given(raw_traces())
def test_preprocess_properties(trace):
    try:
        out = preprocess(trace)
    except IngestError:
        return
    assert np.all(np.diff(out.timestamps) > 0)
    assert out.n_samples <= trace.n_samples
    assert len(out.channels) <= len(trace.channels)
    assert not np.isnan(out.values).any()
    again = preprocess(out)
    assert again.timestamps.tolist() == out.timestamps.tolist()
    assert again.channels == out.channels
    assert np.array_equal(again.values, out.values)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.integers(1, 9))
def test_repair_within_neighbours(ends, k):
    n = k + 2
    vals = np.ones((n, 33))
    vals[:, 0] = np.nan
    vals[0, 0], vals[-1, 0] = ends
    out = preprocess(bm_trace(np.arange(n) * 10, vals))
    if BM.channels[0] in out.dropped:  # both neighbours zero: the column is all-zero
        assert ends == [0.0, 0.0]
        return
    lo, hi = min(ends), max(ends)
    col = out.column(BM.channels[0])
    assert np.all((col >= lo - 1e-9) & (col <= hi + 1e-9))


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    t = bm_trace([0, 13, 27, 40], rng.normal(size=(4, 33)))
    write_trace_csv(t, tmp_path / "x.csv")
    back = load_session(TraceRef(1, 1, 1, BM, tmp_path / "x.csv"))
    assert np.allclose(back.values, t.values, atol=1e-6)


def test_disk_dataset(tmp_path):
    write_trace_csv(bm_trace([0, 1500]), trace_path(tmp_path, 1, 2, 1, BM))
    ds = DiskDataset.open(tmp_path)
    assert ds.has(1, 2, 1, "bm") and not ds.has(1, 2, 2, "bm")
    assert ds.duration(1, 2, 1, BM) == 1.5
    assert ds.trace(1, 2, 2, BM) is None
    assert ds.trace(1, 2, 1, BM) is ds.trace(1, 2, 1, BM)
    assert len(ds.fingerprint()) == 16

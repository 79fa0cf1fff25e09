import json

import numpy as np
import pytest

from vrident.errors import SynthError
from vrident.features import augment_eye_gaze
from vrident.ingest import DiskDataset, scan_dataset
from vrident.schema import SensorGroup, validate_trace
from vrident.synth import (
    ARCHETYPES, PROFILE_FIELDS, SyntheticDataset, archetype_groups, generate_cohort, generate_trace,
    sample_times,
)


def test_cohort_is_seeded():
    a = generate_cohort(4, seed=3)
    b = generate_cohort(4, seed=3)
    assert [p.to_dict() for p in a] == [p.to_dict() for p in b]
    assert [p.to_dict() for p in a] != [p.to_dict() for p in generate_cohort(4, seed=4)]


def test_clone_and_single_field_cohorts():
    clones = generate_cohort(3, 0, vary="clone")
    d = [p.to_dict() for p in clones]
    for x in d[1:]:
        assert {k: v for k, v in x.items() if k != "user"} == {k: v for k, v in d[0].items() if k != "user"}
    tall = generate_cohort(3, 0, vary=("height",))
    assert len({p.height for p in tall}) == 3
    assert len({p.ipd for p in tall}) == 1
    assert len(PROFILE_FIELDS) == 15


def test_cohort_errors():
    with pytest.raises(SynthError):
        generate_cohort(1, 0)
    with pytest.raises(SynthError):
        generate_cohort(3, 0, vary=("weight",))


def test_archetypes_cover_four_groups():
    groups = archetype_groups()
    assert len(ARCHETYPES) == 8 and len(groups.groups) == 4
    assert all(len(members) == 2 for members in groups.groups.values())


@pytest.mark.parametrize("group", list(SensorGroup))
def test_traces_are_schema_valid_and_deterministic(group):
    p = generate_cohort(2, 0)[0]
    t = generate_trace(p, ARCHETYPES[2], 1, group, seed=5)
    assert t.values.shape == (t.n_samples, group.n_channels)
    assert not np.isnan(t.values).any()
    assert validate_trace(t) == []
    again = generate_trace(p, ARCHETYPES[2], 1, group, seed=5)
    assert np.array_equal(t.values, again.values) and np.array_equal(t.timestamps, again.timestamps)
    other = generate_trace(p, ARCHETYPES[2], 2, group, seed=5)
    assert not np.array_equal(t.values[:10], other.values[:10])


def test_face_weights_in_unit_interval():
    p = generate_cohort(2, 0)[1]
    t = generate_trace(p, ARCHETYPES[0], 1, "fe", seed=0)
    assert t.values.min() >= 0.0 and t.values.max() <= 1.0


def test_eye_separation_is_profile_ipd():
    p = generate_cohort(2, 1)[0]
    t = augment_eye_gaze(generate_trace(p, ARCHETYPES[4], 1, "eg", seed=0))
    assert np.median(t.column("eye_lr_pos_y")) == pytest.approx(p.ipd, abs=5e-4)


def test_sample_times_are_increasing():
    ts = sample_times(2.0, 72)
    assert ts[0] == 0 and ts[-1] == 2000 and np.all(np.diff(ts) > 0)


def test_dataset_interface():
    ds = SyntheticDataset(generate_cohort(3, 0), ARCHETYPES[:2], seed=1)
    assert ds.users == [1, 2, 3] and ds.apps == [1, 2]
    assert ds.has(1, 1, 2, "bm") and not ds.has(1, 3, 1, "bm") and not ds.has(1, 1, 3, "bm")
    t = ds.trace(2, 1, 1, "bm")
    assert t is ds.trace(2, 1, 1, "bm")
    assert ds.duration(2, 1, 1, "bm") == pytest.approx(t.duration)
    assert ds.trace(9, 1, 1, "bm") is None and ds.duration(9, 1, 1, "bm") is None
    assert ds.fingerprint() == SyntheticDataset(generate_cohort(3, 0), ARCHETYPES[:2], seed=1).fingerprint()


def test_write_matches_disk_layout(tmp_path):
    ds = SyntheticDataset(generate_cohort(2, 0), ARCHETYPES[:2], seed=0, duration_scale=0.3)
    ds.write(tmp_path, groups=("bm", "eg"))
    idx = scan_dataset(tmp_path)
    assert len(idx) == 2 * 2 * 2 * 2 and not idx.corrupt
    disk = DiskDataset.open(tmp_path)
    a, b = disk.trace(1, 2, 1, "bm"), ds.trace(1, 2, 1, "bm")
    assert np.array_equal(a.timestamps, b.timestamps)
    assert np.allclose(a.values, b.values, atol=1e-6)
    meta = json.loads((tmp_path / "profiles.json").read_text())
    assert len(meta["profiles"]) == 2
    assert (tmp_path / "app_groups.yaml").exists()


def test_bad_session():
    with pytest.raises(SynthError):
        generate_trace(generate_cohort(2, 0)[0], ARCHETYPES[0], 3, "bm", seed=0)

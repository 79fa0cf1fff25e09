import numpy as np
import pytest

from vrident.errors import SchemaError
from vrident.schema import (
    EG_AUGMENTED_CHANNELS, EMOTIONS, AppGroups, ElementMap, SensorGroup, SessionTrace,
    face_element_index, parse_app, quaternion_groups, validate_trace,
)


def make_trace(group=SensorGroup.BM, n=10, values=None, timestamps=None, **kw):
    group = SensorGroup.parse(group)
    if values is None:
        values = np.random.default_rng(0).uniform(0.1, 0.9, (n, group.n_channels))
        for quad in quaternion_groups(group.channels):
            idx = [group.channels.index(c) for c in quad]
            values[:, idx] /= np.linalg.norm(values[:, idx], axis=1, keepdims=True)
    if timestamps is None:
        timestamps = np.arange(len(values)) * 10
    return SessionTrace(kw.pop("user", 1), kw.pop("app", 1), kw.pop("session", 1), group,
                        timestamps, values, group.channels, **kw)


@pytest.mark.parametrize("group,count", [("bm", 33), ("eg", 14), ("hj", 364), ("fe", 63)])
def test_channel_counts(group, count):
    g = SensorGroup.parse(group)
    assert g.n_channels == count
    assert len(set(g.channels)) == count


def test_bm_layout():
    ch = SensorGroup.BM.channels
    assert ch[:7] == ("headset_pos_x", "headset_pos_y", "headset_pos_z",
                      "headset_quat_x", "headset_quat_y", "headset_quat_z", "headset_quat_w")
    assert sum(c.startswith("left_ctrl_") for c in ch) == 13
    assert sum(c.startswith("right_ctrl_") for c in ch) == 13


def test_hj_per_hand():
    ch = SensorGroup.HJ.channels
    assert sum(c.startswith("left_hand_") for c in ch) == 182


def test_sensor_parse():
    assert SensorGroup.parse("BM") is SensorGroup.BM
    with pytest.raises(SchemaError):
        SensorGroup.parse("xx")


def test_eg_augmented_names():
    assert len(EG_AUGMENTED_CHANNELS) == 7
    assert "eye_lr_pos_y" in EG_AUGMENTED_CHANNELS


def test_quaternion_groups():
    quads = quaternion_groups(SensorGroup.BM.channels)
    assert len(quads) == 3
    assert quads[0] == ("headset_quat_x", "headset_quat_y", "headset_quat_z", "headset_quat_w")
    assert len(quaternion_groups(SensorGroup.HJ.channels)) == 52


@pytest.mark.parametrize("value", [7, "7", "a_7", "app_7", "A_7"])
def test_parse_app(value):
    assert parse_app(value) == 7


def test_parse_app_bad():
    with pytest.raises(SchemaError):
        parse_app("seven")


def test_face_element_index():
    assert face_element_index("element_05") == 5
    with pytest.raises(SchemaError):
        face_element_index("headset_pos_x")


def test_default_app_groups_partition_twenty_apps():
    g = AppGroups.load()
    assert g.apps == list(range(1, 21))
    assert len(g.groups) == 8
    assert g.members("social") == (12, 15, 18)
    assert g.group_of(6) == "golfing"
    assert str(g.app_id(18)) == "a_18"


def test_app_groups_reject_overlap():
    with pytest.raises(SchemaError):
        AppGroups.from_mapping({"a": [1, 2], "b": [2, 3]})
    with pytest.raises(SchemaError):
        AppGroups.from_mapping({"a": []})


def test_app_groups_roundtrip(tmp_path):
    g = AppGroups.from_mapping({"x": ["a_1", 2], "y": [3]})
    g.dump(tmp_path / "g.yaml")
    assert AppGroups.load(tmp_path / "g.yaml") == g


def test_element_map_defaults():
    m = ElementMap.load()
    assert tuple(m.emotions) == EMOTIONS
    assert m.elements_for("happiness") == (5, 6, 33, 34)
    assert len(m.all_emotion_elements) == 25
    assert len(set(m.au.values())) == 31
    assert len(m.au) == 63
    assert len(m.elements_for("all")) == 63
    with pytest.raises(SchemaError):
        m.elements_for("boredom")


def test_trace_is_immutable():
    t = make_trace()
    with pytest.raises(ValueError):
        t.values[0, 0] = 5.0
    with pytest.raises(Exception):
        t.user = 3


def test_trace_duration_and_shape_checks():
    t = make_trace(n=5)
    assert t.duration == pytest.approx(0.04)
    with pytest.raises(SchemaError):
        SessionTrace(1, 1, 1, "bm", [0, 1], np.zeros((2, 32)), SensorGroup.BM.channels)
    with pytest.raises(SchemaError):
        SessionTrace(1, 1, 1, "bm", [0, 1, 2], np.zeros((2, 33)), SensorGroup.BM.channels)


def test_project_restores_dropped_as_zero():
    t = make_trace(SensorGroup.FE, n=4)
    sub = t.replace(values=t.values[:, 1:], channels=t.channels[1:], dropped=("element_01",))
    back = sub.project(SensorGroup.FE.channels)
    assert np.all(back.column("element_01") == 0.0)
    with pytest.raises(SchemaError):
        t.replace(values=t.values[:, 1:], channels=t.channels[1:]).project(["element_01"])


def test_validate_clean_bm():
    assert validate_trace(make_trace()) == []


def test_validate_duplicate_timestamp():
    v = validate_trace(make_trace(n=3, timestamps=[10, 10, 20]))
    assert [(x.rule, x.severity) for x in v] == [("duplicate timestamp", "warn")]


def test_validate_non_monotone():
    v = validate_trace(make_trace(n=3, timestamps=[10, 30, 20]))
    assert ("non-monotone timestamp", "error") in [(x.rule, x.severity) for x in v]


def test_validate_fe_out_of_range():
    vals = np.full((4, 63), 0.5)
    vals[2, 11] = 1.3
    v = validate_trace(make_trace("fe", values=vals))
    assert len(v) == 1
    assert v[0].rule == "FE out of [0,1]" and v[0].severity == "warn"
    assert "element 12" in v[0].message


def test_validate_quaternion_tolerance():
    t = make_trace()
    vals = np.array(t.values)
    vals[0, 3:7] *= 1.04
    assert validate_trace(make_trace(values=vals)) == []
    vals[0, 3:7] *= 1.1
    v = validate_trace(make_trace(values=vals))
    assert [x.rule for x in v] == ["non-unit quaternion"]


def test_validate_schema_and_corrupt():
    t = make_trace()
    short = t.replace(values=t.values[:, :-1], channels=t.channels[:-1])
    assert validate_trace(short)[0].rule == "schema"
    vals = np.array(t.values)
    vals[3, 0] = np.nan
    assert [x.rule for x in validate_trace(make_trace(values=vals))] == ["corrupt row"]

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrident.blocking import BlockTable, feature_columns, make_block_plan, summarize_trace
from vrident.errors import FeatureError
from vrident.features import (
    FeatureSelection, all_columns, apply_selection, augment_eye_gaze, select_emotion_features,
    select_hand_features,
)
from vrident.schema import EG_AUGMENTED_CHANNELS, ElementMap, SensorGroup, SessionTrace

EG, FE, HJ = SensorGroup.EG, SensorGroup.FE, SensorGroup.HJ


def eg_trace(n=20, seed=0):
    vals = np.random.default_rng(seed).normal(size=(n, EG.n_channels))
    return SessionTrace(1, 1, 1, EG, np.arange(n) * 10, vals, EG.channels)


def table(group, channels=None, n=6, seed=0):
    cols = feature_columns(channels or group.channels)
    labels = pd.DataFrame({"user": np.arange(n) % 2 + 1, "app": 1, "session": 1, "block": np.arange(n)})
    return BlockTable(labels, np.random.default_rng(seed).normal(size=(n, len(cols))), cols)


def test_eye_gaze_augmentation_adds_seven_abs_differences():
    t = eg_trace()
    out = augment_eye_gaze(t)
    assert out.channels[-7:] == EG_AUGMENTED_CHANNELS and len(out.channels) == 21
    ipd = out.column("eye_lr_pos_y")
    assert np.array_equal(ipd, np.abs(t.column("left_eye_pos_y") - t.column("right_eye_pos_y")))
    assert (out.values[:, -7:] >= 0).all()
    assert augment_eye_gaze(out) is out


def test_eye_gaze_summary_width():
    out = augment_eye_gaze(eg_trace(50))
    tab = summarize_trace(out, make_block_plan([0.49], 1, 1, EG))
    assert len(tab.columns) == 105


def test_eye_gaze_rejects_other_groups():
    t = SessionTrace(1, 1, 1, FE, [0, 10], np.zeros((2, 63)), FE.channels)
    with pytest.raises(FeatureError):
        augment_eye_gaze(t)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(-5, 5), st.floats(0.01, 0.2))
def test_ipd_channel_equals_separation(seed, centre, ipd):
    t = eg_trace(8, seed)
    vals = t.values.copy()
    vals[:, EG.channels.index("left_eye_pos_y")] = centre + ipd / 2
    vals[:, EG.channels.index("right_eye_pos_y")] = centre - ipd / 2
    out = augment_eye_gaze(t.replace(values=vals))
    assert np.allclose(out.column("eye_lr_pos_y"), ipd, atol=1e-12)


def test_hand_top_k_keeps_manifest_order_and_breaks_ties_early():
    tab = table(SensorGroup.BM)
    imp = np.zeros(len(tab.columns))
    imp[[10, 3, 7]] = [0.5, 0.2, 0.2]
    imp[100] = 0.2
    sel = select_hand_features(tab, imp, 3)
    assert sel.columns == (tab.columns[3], tab.columns[7], tab.columns[10])
    assert sel.method == "hj-top-3" and sel.group is HJ


def test_hand_top_500_of_1820():
    tab = table(HJ, n=4)
    imp = np.random.default_rng(1).random(1820)
    sel = select_hand_features(tab, imp, 500)
    assert len(sel.columns) == 500
    assert apply_selection(tab, sel).shape == (4, 500)
    threshold = np.sort(imp)[-500]
    assert all(imp[tab.columns.index(c)] >= threshold for c in sel.columns)


def test_hand_errors():
    tab = table(SensorGroup.BM)
    with pytest.raises(FeatureError):
        select_hand_features(tab, np.ones(3), 2)
    with pytest.raises(FeatureError):
        select_hand_features(tab, np.ones(len(tab.columns)), 0)


def test_emotion_widths():
    em = ElementMap.load()
    tab = table(FE)
    assert len(tab.columns) == 315
    assert len(select_emotion_features(tab, "happiness", em).columns) == 20
    assert len(select_emotion_features(tab, "all-emotions", em).columns) == 125
    assert len(select_emotion_features(tab, "all", em).columns) == 315
    with pytest.raises(FeatureError):
        select_emotion_features(tab, "boredom", em)


def test_emotion_subsets_nest_in_union():
    em = ElementMap.load()
    tab = table(FE)
    union = set(select_emotion_features(tab, "all-emotions", em).columns)
    for emotion in em.emotions:
        assert set(select_emotion_features(tab, emotion, em).columns) <= union


def test_apply_selection_skips_missing_columns(caplog):
    tab = table(SensorGroup.BM)
    sel = all_columns(tab, "bm")
    smaller = tab.project(tab.columns[5:])
    out = apply_selection(smaller, sel)
    assert out.columns == tab.columns[5:]
    assert "no longer present" in caplog.text


def test_selection_dict_roundtrip():
    tab = table(SensorGroup.BM)
    sel = all_columns(tab, "bm")
    assert FeatureSelection.from_dict(sel.to_dict()) == sel

"""Per-sensor-group feature engineering.

* eye gaze: |left - right| channels appended before summarization
* hand joints: top-k columns by importance of a preliminary forest
* facial expression: element subsets for emotions
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from vrident.blocking import BlockTable
from vrident.errors import FeatureError
from vrident.schema import (
    EG_AUGMENTED_CHANNELS, ElementMap, SensorGroup, SessionTrace, face_element_index,
)

log = logging.getLogger(__name__)

_EYE_SUFFIXES = tuple(c[len("eye_lr_"):] for c in EG_AUGMENTED_CHANNELS)


@dataclass(frozen=True)
class FeatureSelection:
    group: SensorGroup
    columns: tuple[tuple[str, str], ...]
    method: str
    fitted_on: str

    def to_dict(self) -> dict:
        return {
            "group": self.group.value,
            "method": self.method,
            "fitted_on": self.fitted_on,
            "columns": [list(c) for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSelection":
        return cls(SensorGroup.parse(d["group"]), tuple(tuple(c) for c in d["columns"]),
                   d["method"], d["fitted_on"])


def augment_eye_gaze(trace: SessionTrace) -> SessionTrace:
    """Append seven per-sample |left - right| channels (eye_lr_pos_y is the IPD)."""
    if trace.group is not SensorGroup.EG:
        raise FeatureError(f"eye-gaze augmentation needs an EG trace, got {trace.group.name}")
    if any(c in trace.channels for c in EG_AUGMENTED_CHANNELS):
        return trace
    full = trace.project(SensorGroup.EG.channels)
    left = np.column_stack([full.column(f"left_eye_{s}") for s in _EYE_SUFFIXES])
    right = np.column_stack([full.column(f"right_eye_{s}") for s in _EYE_SUFFIXES])
    values = np.hstack([trace.values, np.abs(left - right)])
    return trace.replace(values=values, channels=trace.channels + EG_AUGMENTED_CHANNELS,
                         corrupt=trace.corrupt)


def all_columns(table: BlockTable, group, method: str = "all") -> FeatureSelection:
    return FeatureSelection(SensorGroup.parse(group), tuple(table.columns), method, table.fingerprint())


def select_hand_features(train: BlockTable, importances: Sequence[float], k: int) -> FeatureSelection:
    """Keep the ``k`` most important columns; ties go to the earlier manifest column.

    Kept columns stay in manifest order.
    """
    if k <= 0:
        raise FeatureError(f"k must be positive, got {k}")
    imp = np.asarray(importances, dtype=np.float64)
    if imp.shape != (len(train.columns),):
        raise FeatureError(f"{imp.size} importances for {len(train.columns)} columns")
    k = min(k, imp.size)
    top = np.sort(np.argsort(-imp, kind="stable")[:k])
    cols = tuple(train.columns[i] for i in top)
    return FeatureSelection(SensorGroup.HJ, cols, f"hj-top-{k}", train.fingerprint())


def select_emotion_features(table: BlockTable, emotion: str, element_map: ElementMap) -> FeatureSelection:
    """Columns whose facial element belongs to ``emotion``.

    ``emotion`` may also be ``"all-emotions"`` (union of every emotion) or
    ``"all"`` (every facial column).
    """
    if emotion not in ("all", "all-emotions") and emotion not in element_map.emotions:
        raise FeatureError(f"unknown emotion {emotion!r}")
    elements = set(element_map.elements_for(emotion))
    if not elements:
        raise FeatureError(f"emotion {emotion!r} has no elements")
    cols = tuple(c for c in table.columns if face_element_index(c[0]) in elements)
    method = {"all": "fe-all", "all-emotions": "fe-all-emotions"}.get(emotion, f"fe-emotion({emotion})")
    return FeatureSelection(SensorGroup.FE, cols, method, table.fingerprint())


def apply_selection(table: BlockTable, sel: FeatureSelection) -> BlockTable:
    """Project ``table`` onto the selection; columns it lacks are skipped with a warning."""
    present = set(table.columns)
    missing = [c for c in sel.columns if c not in present]
    if missing:
        log.warning("selection %s: %d column(s) no longer present, e.g. %s",
                    sel.method, len(missing), missing[0])
    return table.project([c for c in sel.columns if c in present])

"""Sensor-group channel layouts, app groups, element maps and the trace type."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import yaml

from vrident.errors import SchemaError

XYZ = ("x", "y", "z")
XYZW = ("x", "y", "z", "w")
SIDES = ("left", "right")
N_HAND_JOINTS = 26
N_FACE_ELEMENTS = 63
STATISTICS = ("max", "min", "mean", "std", "median")

# Unit-norm deviation above which a quaternion is reported.
QUAT_TOLERANCE = 0.05


def _pose(prefix: str) -> list[str]:
    return [f"{prefix}_pos_{a}" for a in XYZ] + [f"{prefix}_quat_{a}" for a in XYZW]


def _bm_channels() -> tuple[str, ...]:
    names = _pose("headset")
    for side in SIDES:
        names += _pose(f"{side}_ctrl")
        names += [f"{side}_ctrl_linvel_{a}" for a in XYZ]
        names += [f"{side}_ctrl_angvel_{a}" for a in XYZ]
    return tuple(names)


def _eg_channels() -> tuple[str, ...]:
    return tuple(_pose("left_eye") + _pose("right_eye"))


def _hj_channels() -> tuple[str, ...]:
    names: list[str] = []
    for side in SIDES:
        for j in range(1, N_HAND_JOINTS + 1):
            names += _pose(f"{side}_hand_j{j:02d}")
    return tuple(names)


def _fe_channels() -> tuple[str, ...]:
    return tuple(f"element_{e:02d}" for e in range(1, N_FACE_ELEMENTS + 1))


class SensorGroup(str, enum.Enum):
    BM = "bm"
    EG = "eg"
    HJ = "hj"
    FE = "fe"

    @property
    def channels(self) -> tuple[str, ...]:
        return _CHANNELS[self]

    @property
    def n_channels(self) -> int:
        return len(_CHANNELS[self])

    @classmethod
    def parse(cls, value: "str | SensorGroup") -> "SensorGroup":
        if isinstance(value, SensorGroup):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise SchemaError(f"unknown sensor group {value!r}") from None


_CHANNELS = {
    SensorGroup.BM: _bm_channels(),
    SensorGroup.EG: _eg_channels(),
    SensorGroup.HJ: _hj_channels(),
    SensorGroup.FE: _fe_channels(),
}

# |left - right| channels appended to eye-gaze traces; eye_lr_pos_y is the IPD.
EG_AUGMENTED_CHANNELS = tuple(f"eye_lr_{c[len('left_eye_'):]}" for c in _pose("left_eye"))


def quaternion_groups(channels: Iterable[str]) -> list[tuple[str, ...]]:
    """Return the (x, y, z, w) channel quadruples present in ``channels``."""
    chans = list(channels)
    present = set(chans)
    groups = []
    for c in chans:
        if c.endswith("_quat_x") and not c.startswith("eye_lr_"):
            stem = c[: -len("x")]
            quad = tuple(stem + a for a in XYZW)
            if all(q in present for q in quad):
                groups.append(quad)
    return groups


def face_element_index(channel: str) -> int:
    if not channel.startswith("element_"):
        raise SchemaError(f"{channel!r} is not a facial element channel")
    return int(channel[len("element_"):])


@dataclass(frozen=True)
class AppId:
    index: int
    title: str = ""
    group: str = ""

    def __str__(self):
        return f"a_{self.index}"


def parse_app(value) -> int:
    """Accept ``7``, ``"7"``, ``"a_7"`` or ``"app_7"``."""
    s = str(value).strip().lower()
    for prefix in ("app_", "a_", "a"):
        if s.startswith(prefix) and s[len(prefix):].isdigit():
            s = s[len(prefix):]
            break
    if not s.isdigit():
        raise SchemaError(f"cannot parse app id {value!r}")
    return int(s)


@dataclass(frozen=True)
class AppGroups:
    """Partition of app ids into named groups (insertion order is kept)."""

    groups: Mapping[str, tuple[int, ...]]

    def __post_init__(self):
        seen: dict[int, str] = {}
        for name, members in self.groups.items():
            if not members:
                raise SchemaError(f"app group {name!r} is empty")
            for a in members:
                if a in seen:
                    raise SchemaError(f"app {a} is in both {seen[a]!r} and {name!r}")
                seen[a] = name

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "AppGroups":
        if not isinstance(mapping, Mapping):
            raise SchemaError("app-group file must map group names to app-id lists")
        groups = {}
        for name, members in mapping.items():
            if not isinstance(members, (list, tuple)):
                raise SchemaError(f"app group {name!r} must be a list of app ids")
            groups[str(name)] = tuple(parse_app(m) for m in members)
        return cls(groups)

    @classmethod
    def load(cls, path: "str | Path | None" = None) -> "AppGroups":
        if path is None:
            text = resources.files("vrident.data").joinpath("app_groups.yaml").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_mapping(yaml.safe_load(text) or {})

    def dump(self, path: "str | Path") -> None:
        Path(path).write_text(
            yaml.safe_dump({k: list(v) for k, v in self.groups.items()}, sort_keys=False)
        )

    @property
    def apps(self) -> list[int]:
        return sorted(a for members in self.groups.values() for a in members)

    def group_of(self, app: int) -> str:
        for name, members in self.groups.items():
            if app in members:
                return name
        raise SchemaError(f"app {app} belongs to no group")

    def members(self, name: str) -> tuple[int, ...]:
        try:
            return self.groups[name]
        except KeyError:
            raise SchemaError(f"unknown app group {name!r}") from None

    def app_id(self, app: int) -> AppId:
        return AppId(app, f"a_{app}", self.group_of(app))


EMOTIONS = ("happiness", "surprise", "anger", "disgust", "fear", "sadness")


@dataclass(frozen=True)
class ElementMap:
    au: Mapping[int, str]
    emotions: Mapping[str, tuple[int, ...]]

    def __post_init__(self):
        bad = [e for e in self.au if not 1 <= e <= N_FACE_ELEMENTS]
        if bad:
            raise SchemaError(f"element indices out of range: {bad}")
        for name, elements in self.emotions.items():
            if not elements:
                raise SchemaError(f"emotion {name!r} has no elements")
            if any(not 1 <= e <= N_FACE_ELEMENTS for e in elements):
                raise SchemaError(f"emotion {name!r} references an unknown element")

    @classmethod
    def load(cls, path: "str | Path | None" = None) -> "ElementMap":
        if path is None:
            text = resources.files("vrident.data").joinpath("element_map.yaml").read_text()
        else:
            text = Path(path).read_text()
        raw = yaml.safe_load(text) or {}
        try:
            au = {int(k): str(v) for k, v in raw["au"].items()}
            emotions = {str(k): tuple(int(e) for e in v) for k, v in raw["emotions"].items()}
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(f"malformed element map: {exc}") from None
        return cls(au, emotions)

    @property
    def all_emotion_elements(self) -> tuple[int, ...]:
        return tuple(sorted(set().union(*map(set, self.emotions.values()))))

    def elements_for(self, emotion: str) -> tuple[int, ...]:
        if emotion == "all":
            return tuple(range(1, N_FACE_ELEMENTS + 1))
        if emotion == "all-emotions":
            return self.all_emotion_elements
        try:
            return tuple(sorted(set(self.emotions[emotion])))
        except KeyError:
            raise SchemaError(f"unknown emotion {emotion!r}") from None


@dataclass(frozen=True, eq=False)
class SessionTrace:
    """One user x app x session recording of one sensor group.

    ``values`` is (samples, channels); NaN marks a corrupt cell. ``dropped``
    lists schema channels removed by preprocessing (they were all zero).
    """

    user: int
    app: int
    session: int
    group: SensorGroup
    timestamps: np.ndarray
    values: np.ndarray
    channels: tuple[str, ...]
    corrupt: np.ndarray = field(default=None)
    dropped: tuple[str, ...] = ()

    def __post_init__(self):
        # private copies, so freezing them never touches the caller's arrays
        ts = np.array(self.timestamps, dtype=np.int64)
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] != ts.shape[0]:
            raise SchemaError(
                f"values shape {vals.shape} does not match {ts.shape[0]} timestamps"
            )
        if vals.shape[1] != len(self.channels):
            raise SchemaError(
                f"{vals.shape[1]} value columns but {len(self.channels)} channel names"
            )
        corrupt = (
            np.isnan(vals).any(axis=1)
            if self.corrupt is None
            else np.array(self.corrupt, dtype=bool)
        )
        for arr in (ts, vals, corrupt):
            arr.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "corrupt", corrupt)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "group", SensorGroup.parse(self.group))

    @property
    def n_samples(self) -> int:
        return int(self.timestamps.shape[0])

    @property
    def duration(self) -> float:
        """Seconds between first and last sample."""
        if self.n_samples < 2:
            return 0.0
        return float(self.timestamps[-1] - self.timestamps[0]) / 1000.0

    def column(self, channel: str) -> np.ndarray:
        return self.values[:, self.channels.index(channel)]

    def replace(self, **changes) -> "SessionTrace":
        kwargs = dict(
            user=self.user, app=self.app, session=self.session, group=self.group,
            timestamps=self.timestamps, values=self.values, channels=self.channels,
            corrupt=self.corrupt, dropped=self.dropped,
        )
        kwargs.update(changes)
        if "values" in changes and "corrupt" not in changes:
            kwargs["corrupt"] = None
        return SessionTrace(**kwargs)

    def project(self, channels: Iterable[str]) -> "SessionTrace":
        """Reorder/subset columns. Channels dropped as all-zero are restored as zeros."""
        channels = tuple(channels)
        cols = []
        for c in channels:
            if c in self.channels:
                cols.append(self.values[:, self.channels.index(c)])
            elif c in self.dropped:
                cols.append(np.zeros(self.n_samples))
            else:
                raise SchemaError(f"trace u{self.user}/a{self.app} has no channel {c!r}")
        values = np.column_stack(cols) if cols else np.empty((self.n_samples, 0))
        return self.replace(values=values, channels=channels, corrupt=self.corrupt)


@dataclass(frozen=True)
class Violation:
    rule: str
    severity: str  # "error" | "warn"
    message: str


def validate_trace(trace: SessionTrace, quat_tolerance: float = QUAT_TOLERANCE) -> list[Violation]:
    """Diagnose a trace. Returns an empty list for a clean trace; never raises."""
    out: list[Violation] = []
    schema = trace.group.channels
    allowed = set(schema) | set(trace.dropped)
    if trace.group is SensorGroup.EG:
        allowed |= set(EG_AUGMENTED_CHANNELS)
    unknown = [c for c in trace.channels if c not in allowed]
    missing = [c for c in schema if c not in trace.channels and c not in trace.dropped]
    if unknown or missing:
        out.append(Violation(
            "schema", "error",
            f"{trace.group.name} expects {len(schema)} channels; "
            f"unknown={unknown[:5]} missing={missing[:5]}",
        ))

    ts = trace.timestamps
    if ts.size > 1:
        diffs = np.diff(ts)
        n_dup = int((diffs == 0).sum())
        n_back = int((diffs < 0).sum())
        if n_dup:
            out.append(Violation("duplicate timestamp", "warn", f"{n_dup} duplicate timestamp(s)"))
        if n_back:
            out.append(Violation("non-monotone timestamp", "error", f"{n_back} backward step(s)"))

    n_corrupt = int(trace.corrupt.sum())
    if n_corrupt:
        out.append(Violation("corrupt row", "warn", f"{n_corrupt} row(s) with invalid cells"))

    vals = trace.values
    if trace.group is SensorGroup.FE:
        with np.errstate(invalid="ignore"):
            oob = (vals < 0.0) | (vals > 1.0)
        for j in np.flatnonzero(oob.any(axis=0)):
            ch = trace.channels[j]
            out.append(Violation(
                "FE out of [0,1]", "warn",
                f"{ch} (element {face_element_index(ch)}): {int(oob[:, j].sum())} value(s) outside [0, 1]",
            ))

    for quad in quaternion_groups(trace.channels):
        idx = [trace.channels.index(c) for c in quad]
        norms = np.linalg.norm(vals[:, idx], axis=1)
        with np.errstate(invalid="ignore"):
            bad = np.abs(norms - 1.0) > quat_tolerance
        if bad.any():
            out.append(Violation(
                "non-unit quaternion", "warn",
                f"{quad[0][:-2]}: {int(bad.sum())} sample(s) with |norm - 1| > {quat_tolerance}",
            ))
    return out

"""Deterministic synthetic VR sensor traces.

A cohort of user profiles (height, IPD, arm/hand geometry, resting face, ...)
is played through app archetypes. Archetypes in one synthetic app group share
a posture/expression template, so a user's signature transfers between apps
of a group but shifts between groups. Motion follows normalized session time,
so a slower user performs the same program stretched over a longer session.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from vrident.errors import SynthError
from vrident.ingest import preprocess, trace_path, write_trace_csv
from vrident.schema import (
    EMOTIONS, N_FACE_ELEMENTS, N_HAND_JOINTS, AppGroups, ElementMap, SensorGroup, SessionTrace,
)

DEFAULT_RATES = {SensorGroup.BM: 72.0, SensorGroup.EG: 72.0, SensorGroup.FE: 72.0, SensorGroup.HJ: 30.0}

# per-sample Gaussian sigma at noise multiplier 1.0
BASE_SIGMA = {
    "pos": 0.003, "quat": 0.004, "linvel": 0.02, "angvel": 0.05,
    "eye_pos": 0.0005, "eye_quat": 0.002, "joint_pos": 0.002, "joint_quat": 0.004, "face": 0.015,
}

_GROUP_CODE = {SensorGroup.BM: 0, SensorGroup.EG: 1, SensorGroup.HJ: 2, SensorGroup.FE: 3}


@dataclass(frozen=True, eq=False)
class UserProfile:
    user: int
    height: float
    ipd: float
    head_range: float
    pace: float
    tempo: float
    noise: float
    hand_scale: float
    arm: np.ndarray           # (2, 3) controller rest offsets, left/right
    grip: np.ndarray          # (2, 3) controller grip angles (rad)
    head_tilt: np.ndarray     # (2,) pitch, roll bias (rad)
    gaze_bias: np.ndarray     # (2,) yaw, pitch bias (rad)
    finger_curl: np.ndarray   # (2,) resting curl per hand (rad)
    joint_offsets: np.ndarray  # (2, 26, 3)
    face_baseline: np.ndarray  # (63,) resting blend-shape weights
    emotion_gain: np.ndarray   # (6,) per-emotion expressiveness

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass(frozen=True)
class ProfileRanges:
    height: tuple[float, float] = (1.55, 1.95)
    ipd: tuple[float, float] = (0.056, 0.072)
    head_range: tuple[float, float] = (0.08, 0.30)
    pace: tuple[float, float] = (0.85, 1.15)
    tempo: tuple[float, float] = (0.3, 1.2)
    hand_scale: tuple[float, float] = (0.9, 1.1)
    arm: float = 0.06
    grip: float = 0.25
    head_tilt: float = 0.08
    gaze_bias: float = 0.05
    finger_curl: tuple[float, float] = (0.1, 0.5)
    joint_offset: float = 0.004
    face_baseline: tuple[float, float] = (0.02, 0.35)
    emotion_gain: tuple[float, float] = (0.3, 1.0)


PROFILE_FIELDS = tuple(f.name for f in fields(UserProfile) if f.name != "user")


def _draw_profile(user: int, rng: np.random.Generator, ranges: ProfileRanges, noise: float) -> UserProfile:
    u = lambda lo_hi, size=None: rng.uniform(lo_hi[0], lo_hi[1], size)  # noqa: E731
    return UserProfile(
        user=user,
        height=float(u(ranges.height)),
        ipd=float(u(ranges.ipd)),
        head_range=float(u(ranges.head_range)),
        pace=float(u(ranges.pace)),
        tempo=float(u(ranges.tempo)),
        noise=float(noise),
        hand_scale=float(u(ranges.hand_scale)),
        arm=rng.normal(0.0, ranges.arm, (2, 3)),
        grip=rng.normal(0.0, ranges.grip, (2, 3)),
        head_tilt=rng.normal(0.0, ranges.head_tilt, 2),
        gaze_bias=rng.normal(0.0, ranges.gaze_bias, 2),
        finger_curl=u(ranges.finger_curl, 2),
        joint_offsets=rng.normal(0.0, ranges.joint_offset, (2, N_HAND_JOINTS, 3)),
        face_baseline=u(ranges.face_baseline, N_FACE_ELEMENTS),
        emotion_gain=u(ranges.emotion_gain, len(EMOTIONS)),
    )


def generate_cohort(n: int, seed: int, vary: "Iterable[str] | str | None" = None,
                    noise: float = 1.0, ranges: ProfileRanges = ProfileRanges()) -> list[UserProfile]:
    """Draw ``n`` user profiles.

    ``vary=None`` draws every parameter independently. ``vary="clone"`` (or an
    empty tuple) gives identical profiles apart from the id; a tuple of field
    names such as ``("height",)`` varies only those fields.
    """
    if n < 2:
        raise SynthError(f"a cohort needs at least 2 users, got {n}")
    if isinstance(vary, str):
        vary = () if vary == "clone" else (vary,)
    if vary is not None:
        vary = tuple(vary)
        unknown = [v for v in vary if v not in PROFILE_FIELDS]
        if unknown:
            raise SynthError(f"unknown profile field(s) {unknown}")
    base = _draw_profile(0, np.random.default_rng([seed, 0]), ranges, noise)
    cohort = []
    for user in range(1, n + 1):
        drawn = _draw_profile(user, np.random.default_rng([seed, 1, user]), ranges, noise)
        if vary is None:
            cohort.append(drawn)
        else:
            cohort.append(replace(base, user=user, **{k: getattr(drawn, k) for k in vary}))
    return cohort


@dataclass(frozen=True, eq=False)
class GroupTemplate:
    name: str
    posture_scale: float
    posture_offset: float
    head_bias: np.ndarray      # (2,) x, z
    pitch: float
    ctrl_anchor: np.ndarray    # (2, 3)
    ctrl_gain: float
    hand_anchor: np.ndarray    # (2, 3)
    curl_bias: float
    gaze: np.ndarray           # (2,) yaw, pitch
    phases: np.ndarray         # (K, 4): dx, dy, yaw, controller raise
    fe_offset: np.ndarray      # (63,)
    fe_gain: np.ndarray        # (63,) how strongly each resting element shows in this context
    emotion_weights: np.ndarray  # (6,) arousal/valence mix
    trait_mix: np.ndarray      # (3, 3) rotation of the user's grip/arm/tilt traits

    def arm(self, p: "UserProfile") -> np.ndarray:
        return p.arm @ self.trait_mix.T

    def grip(self, p: "UserProfile") -> np.ndarray:
        return p.grip @ self.trait_mix.T

    def tilt(self, p: "UserProfile") -> np.ndarray:
        return self.trait_mix[:2, :2] @ p.head_tilt


@dataclass(frozen=True)
class AppArchetype:
    app: int
    name: str
    group: str
    duration: float      # nominal seconds at pace 1
    motion_amp: float
    cycles: float        # motion cycles per session
    emotion_cycles: float
    saccade_cycles: float


def _group_template(name: str, index: int, posture_scale: float, posture_offset: float,
                    seated: bool) -> GroupTemplate:
    rng = np.random.default_rng([20240, index])
    side = np.array([-1.0, 1.0])[:, None]
    anchor = np.column_stack([0.25 * np.ones(2), -0.35 * np.ones(2), -0.3 * np.ones(2)])
    anchor = anchor * np.hstack([side, np.ones((2, 2))]) + rng.normal(0.0, 0.12, (2, 3))
    hand = anchor + rng.normal(0.0, 0.1, (2, 3))
    weights = rng.uniform(0.1, 1.0, len(EMOTIONS))
    return GroupTemplate(
        name=name,
        posture_scale=posture_scale,
        posture_offset=posture_offset,
        head_bias=rng.normal(0.0, 0.25, 2),
        pitch=float(rng.normal(0.0, 0.2)) + (0.25 if seated else 0.0),
        ctrl_anchor=anchor,
        ctrl_gain=float(rng.uniform(0.6, 1.4)),
        hand_anchor=hand,
        curl_bias=float(rng.uniform(-0.3, 0.6)),
        gaze=rng.normal(0.0, 0.3, 2),
        phases=np.column_stack([
            rng.normal(0.0, 0.08, 5), rng.normal(0.0, 0.05, 5),
            rng.normal(0.0, 0.3, 5), rng.normal(0.0, 0.12, 5),
        ]),
        fe_offset=rng.uniform(-0.12, 0.18, N_FACE_ELEMENTS),
        emotion_weights=weights,
        fe_gain=rng.uniform(0.5, 1.5, N_FACE_ELEMENTS),
        # how a user holds controllers and head depends on the kind of app
        trait_mix=np.linalg.qr(rng.normal(size=(3, 3)))[0],
    )


GROUP_TEMPLATES = OrderedDict(
    (t.name, t) for t in [
        _group_template("standing-social", 0, 1.00, 0.00, seated=False),
        _group_template("seated-cockpit", 1, 0.62, 0.05, seated=True),
        _group_template("aiming", 2, 0.95, -0.06, seated=False),
        _group_template("teleport-explore", 3, 1.00, 0.12, seated=False),
    ]
)

ARCHETYPES = (
    AppArchetype(1, "social-hub", "standing-social", 9.0, 1.0, 7.0, 3.0, 12.0),
    AppArchetype(2, "social-mirror", "standing-social", 8.0, 0.8, 5.0, 4.0, 10.0),
    AppArchetype(3, "jet-cockpit", "seated-cockpit", 10.0, 0.6, 6.0, 2.0, 14.0),
    AppArchetype(4, "heli-cockpit", "seated-cockpit", 9.0, 0.7, 8.0, 3.0, 12.0),
    AppArchetype(5, "archery-range", "aiming", 8.0, 1.1, 6.0, 5.0, 13.0),
    AppArchetype(6, "shooting-gallery", "aiming", 9.0, 1.2, 9.0, 4.0, 16.0),
    AppArchetype(7, "planetarium", "teleport-explore", 8.0, 0.5, 4.0, 2.0, 8.0),
    AppArchetype(8, "train-station", "teleport-explore", 10.0, 0.6, 6.0, 3.0, 10.0),
)


def archetype_groups(archetypes: Sequence[AppArchetype] = ARCHETYPES) -> AppGroups:
    groups: dict[str, list[int]] = OrderedDict()
    for a in archetypes:
        groups.setdefault(a.group, []).append(a.app)
    return AppGroups({k: tuple(v) for k, v in groups.items()})


def _euler_to_quat(yaw, pitch, roll) -> np.ndarray:
    """(n, 4) x, y, z, w for yaw about y, pitch about x, roll about z."""
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    w = cy * cp * cr + sy * sp * sr
    x = cy * sp * cr + sy * cp * sr
    y = sy * cp * cr - cy * sp * sr
    z = cy * cp * sr - sy * sp * cr
    return np.column_stack([x, y, z, w])


def _noisy_quat(q: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma > 0:
        q = q + rng.normal(0.0, sigma, q.shape)
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _noisy(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return x + rng.normal(0.0, sigma, x.shape) if sigma > 0 else x


def _bcast(v, n):
    return np.broadcast_to(np.asarray(v, dtype=np.float64), (n,))


_CANON = np.random.default_rng(777).uniform(-0.09, 0.09, (N_HAND_JOINTS, 3))
_CANON[:2] = 0.0  # palm and wrist sit at the hand origin
_CURL_DIR = np.random.default_rng(778).normal(0.0, 0.02, (N_HAND_JOINTS, 3))
_CURL_W = np.linspace(0.0, 1.0, N_HAND_JOINTS)


def session_duration(profile: UserProfile, archetype: AppArchetype, session: int, seed: int,
                     jitter: float = 0.1) -> float:
    """Nominal session length in seconds before snapping to the sample clock."""
    rng = np.random.default_rng([seed, 2, profile.user, archetype.app, session])
    return archetype.duration * profile.pace * float(rng.uniform(1.0 - jitter, 1.0 + jitter))


def sample_times(duration: float, rate: float) -> np.ndarray:
    n = int(math.floor(duration * rate)) + 1
    return np.round(np.arange(n) * (1000.0 / rate)).astype(np.int64)


class _Signal:
    """Shared time bases for one (profile, archetype, session)."""

    def __init__(self, profile, archetype, duration, rate):
        self.ts = sample_times(duration, rate)
        self.t = self.ts / 1000.0
        self.T = float(self.t[-1])
        self.tau = self.t / self.T
        self.n = self.ts.size
        self.p = profile
        self.a = archetype
        self.g = GROUP_TEMPLATES[archetype.group]
        k = self.g.phases.shape[0]
        self.phase = np.minimum((self.tau * k).astype(int), k - 1)

    # Motion runs on wall-clock time: ``cycles`` per nominal archetype duration.
    # Tying it to the jittered session length would make speeds encode that length.
    def wave(self, cycles, offset=0.0):
        return np.sin(2 * np.pi * cycles / self.a.duration * self.t + offset)

    def dwave(self, cycles, offset=0.0):
        """d/dt of ``wave`` in 1/s."""
        w = 2 * np.pi * cycles / self.a.duration
        return w * np.cos(w * self.t + offset)

    def torso(self):
        g, p = self.g, self.p
        ph = g.phases[self.phase]
        y0 = g.posture_scale * (p.height - 0.11) + g.posture_offset
        return np.column_stack([g.head_bias[0] + ph[:, 0], y0 + ph[:, 1], _bcast(g.head_bias[1], self.n)])


def _gen_bm(s: _Signal, rng, noise) -> np.ndarray:
    p, a, g = s.p, s.a, s.g
    ph = g.phases[s.phase]
    torso = s.torso()
    amp = a.motion_amp
    w1, w2 = s.wave(a.cycles), s.wave(a.cycles, 1.3)
    head = torso + np.column_stack([
        p.head_range * amp * w1,
        0.01 * np.sin(2 * np.pi * p.tempo * s.t),
        0.5 * p.head_range * amp * w2,
    ])
    yaw = ph[:, 2] + 0.35 * amp * w1
    tilt, arm, grip = g.tilt(p), g.arm(p), g.grip(p)
    pitch = g.pitch + tilt[0] + 0.1 * amp * w2
    hq = _euler_to_quat(yaw, pitch, _bcast(tilt[1], s.n))
    cols = [_noisy(head, BASE_SIGMA["pos"] * noise, rng), _noisy_quat(hq, BASE_SIGMA["quat"] * noise, rng)]
    for side, phase_off in ((0, 0.0), (1, 2.1)):
        c = 1.5 * a.cycles
        direction = np.array([0.3, 1.0, 0.5])
        pos = (torso + g.ctrl_anchor[side] + g.ctrl_gain * arm[side]
               + np.outer(ph[:, 3], [0.0, 1.0, 0.0])
               + np.outer(0.12 * amp * s.wave(c, phase_off), direction))
        vel = np.outer(0.12 * amp * s.dwave(c, phase_off), direction)
        cyaw = grip[side, 0] + 0.5 * amp * s.wave(c, phase_off + 0.7)
        q = _euler_to_quat(cyaw, _bcast(grip[side, 1], s.n), _bcast(grip[side, 2], s.n))
        ang = np.column_stack([np.zeros(s.n), 0.5 * amp * s.dwave(c, phase_off + 0.7), np.zeros(s.n)])
        cols += [
            _noisy(pos, BASE_SIGMA["pos"] * noise, rng),
            _noisy_quat(q, BASE_SIGMA["quat"] * noise, rng),
            _noisy(vel, BASE_SIGMA["linvel"] * noise, rng),
            _noisy(ang, BASE_SIGMA["angvel"] * noise, rng),
        ]
    return np.hstack(cols)


def _gen_eg(s: _Signal, rng, noise) -> np.ndarray:
    p, a, g = s.p, s.a, s.g
    sc = a.saccade_cycles
    gaze_yaw = g.gaze[0] + p.gaze_bias[0] + 0.25 * s.wave(sc)
    gaze_pitch = g.gaze[1] + p.gaze_bias[1] + 0.1 * s.wave(0.7 * sc, 0.4)
    focus = 0.6 + 1.2 * (0.5 + 0.5 * s.wave(0.5 * sc, 1.1))
    verg = np.arctan(p.ipd / 2.0 / focus)
    common = np.column_stack([0.002 * s.wave(1.3 * sc), 0.002 * s.wave(1.1 * sc, 0.5), np.full(s.n, -0.01)])
    half = np.array([0.0, p.ipd / 2.0, 0.0])
    cols = []
    for sign, v in ((1.0, -verg), (-1.0, verg)):
        pos = common + sign * half
        q = _euler_to_quat(gaze_yaw + v, gaze_pitch, np.zeros(s.n))
        cols += [_noisy(pos, BASE_SIGMA["eye_pos"] * noise, rng), _noisy_quat(q, BASE_SIGMA["eye_quat"] * noise, rng)]
    return np.hstack(cols)


def _gen_hj(s: _Signal, rng, noise) -> np.ndarray:
    p, a, g = s.p, s.a, s.g
    torso = s.torso()
    arm, grip = g.arm(p), g.grip(p)
    amp = a.motion_amp
    cols = []
    for side, phase_off in ((0, 0.3), (1, 1.9)):
        mirror = np.array([-1.0, 1.0, 1.0]) if side == 0 else np.ones(3)
        wrist = (torso + g.hand_anchor[side] + g.ctrl_gain * arm[side]
                 + np.outer(0.08 * amp * s.wave(1.2 * a.cycles, phase_off), [0.4, 1.0, 0.3]))
        curl = g.curl_bias + p.finger_curl[side] + 0.3 * amp * (0.5 + 0.5 * s.wave(0.8 * a.cycles, phase_off))
        for j in range(N_HAND_JOINTS):
            pos = (wrist + p.hand_scale * _CANON[j] * mirror + p.joint_offsets[side, j]
                   + np.outer(curl, _CURL_DIR[j] * mirror))
            q = _euler_to_quat(_bcast(grip[side, 0], s.n), curl * _CURL_W[j], _bcast(0.0, s.n))
            cols += [_noisy(pos, BASE_SIGMA["joint_pos"] * noise, rng),
                     _noisy_quat(q, BASE_SIGMA["joint_quat"] * noise, rng)]
    return np.hstack(cols)


def _gen_fe(s: _Signal, rng, noise, element_map: ElementMap) -> np.ndarray:
    p, a, g = s.p, s.a, s.g
    face = np.tile(p.face_baseline * g.fe_gain + g.fe_offset, (s.n, 1))
    for e, emotion in enumerate(EMOTIONS):
        members = [m - 1 for m in element_map.emotions.get(emotion, ())]
        if not members:
            continue
        intensity = g.emotion_weights[e] * (0.5 + 0.5 * s.wave(a.emotion_cycles, 1.1 * e))
        face[:, members] += 0.4 * p.emotion_gain[e] * intensity[:, None]
    blink = (np.sin(2 * np.pi * 0.3 * s.t + p.tempo) > 0.97).astype(float)
    face[:, 12:14] += 0.6 * blink[:, None]  # eyes-closed elements 13, 14
    face = np.clip(face, 0.0, 1.0)
    return np.clip(_noisy(face, BASE_SIGMA["face"] * noise, rng), 0.0, 1.0)


_ELEMENT_MAP = None


def _default_element_map() -> ElementMap:
    global _ELEMENT_MAP
    if _ELEMENT_MAP is None:
        _ELEMENT_MAP = ElementMap.load()
    return _ELEMENT_MAP


def generate_trace(profile: UserProfile, archetype: AppArchetype, session: int, group, seed: int,
                   rate: "float | None" = None, jitter: float = 0.1,
                   element_map: "ElementMap | None" = None) -> SessionTrace:
    group = SensorGroup.parse(group)
    if session not in (1, 2):
        raise SynthError(f"session must be 1 or 2, got {session}")
    rate = rate or DEFAULT_RATES[group]
    duration = session_duration(profile, archetype, session, seed, jitter)
    sig = _Signal(profile, archetype, duration, rate)
    rng = np.random.default_rng([seed, 3, profile.user, archetype.app, session, _GROUP_CODE[group]])
    noise = profile.noise
    if group is SensorGroup.BM:
        values = _gen_bm(sig, rng, noise)
    elif group is SensorGroup.EG:
        values = _gen_eg(sig, rng, noise)
    elif group is SensorGroup.HJ:
        values = _gen_hj(sig, rng, noise)
    else:
        values = _gen_fe(sig, rng, noise, element_map or _default_element_map())
    return SessionTrace(profile.user, archetype.app, session, group, sig.ts, values, group.channels)


def generate_session(profile: UserProfile, archetype: AppArchetype, session: int, seed: int,
                     **kwargs) -> dict[SensorGroup, SessionTrace]:
    """All four sensor-group traces of one session."""
    return {g: generate_trace(profile, archetype, session, g, seed, **kwargs) for g in SensorGroup}


class SyntheticDataset:
    """Lazily generated corpus with the same interface as ``ingest.DiskDataset``."""

    def __init__(self, cohort: Sequence[UserProfile], archetypes: Sequence[AppArchetype] = ARCHETYPES,
                 seed: int = 0, jitter: float = 0.1, rates: "dict | None" = None,
                 duration_scale: float = 1.0, cache_size: int = 64):
        self.cohort = {p.user: p for p in cohort}
        if duration_scale != 1.0:
            archetypes = [replace(a, duration=a.duration * duration_scale) for a in archetypes]
        self.archetypes = {a.app: a for a in archetypes}
        self.seed = seed
        self.jitter = jitter
        self.rates = {**DEFAULT_RATES, **(rates or {})}
        self.cache_size = cache_size
        self._cache: OrderedDict = OrderedDict()

    @property
    def users(self) -> list[int]:
        return sorted(self.cohort)

    @property
    def apps(self) -> list[int]:
        return sorted(self.archetypes)

    @property
    def app_groups(self) -> AppGroups:
        return archetype_groups(self.archetypes.values())

    def has(self, user, app, session, group) -> bool:
        return user in self.cohort and app in self.archetypes and session in (1, 2)

    def duration(self, user, app, session, group) -> "float | None":
        if not self.has(user, app, session, group):
            return None
        d = session_duration(self.cohort[user], self.archetypes[app], session, self.seed, self.jitter)
        ts = sample_times(d, self.rates[SensorGroup.parse(group)])
        return float(ts[-1] - ts[0]) / 1000.0

    def raw_trace(self, user, app, session, group) -> SessionTrace:
        group = SensorGroup.parse(group)
        return generate_trace(self.cohort[user], self.archetypes[app], session, group, self.seed,
                              rate=self.rates[group], jitter=self.jitter)

    def trace(self, user, app, session, group) -> "SessionTrace | None":
        if not self.has(user, app, session, group):
            return None
        key = (user, app, session, SensorGroup.parse(group))
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        t = preprocess(self.raw_trace(*key))
        self._cache[key] = t
        while len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return t

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([p.to_dict() for p in self.cohort.values()], sort_keys=True).encode())
        h.update(json.dumps([asdict(a) for a in self.archetypes.values()], sort_keys=True).encode())
        h.update(f"{self.seed}:{self.jitter}:{sorted((k.value, v) for k, v in self.rates.items())}".encode())
        return h.hexdigest()[:16]

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_cache"] = OrderedDict()
        return state

    def write(self, root: "str | Path", groups: Iterable = tuple(SensorGroup)) -> Path:
        """Emit the corpus in the on-disk dataset layout, plus app_groups.yaml and profiles.json."""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for user in self.users:
            for app in self.apps:
                for session in (1, 2):
                    for g in groups:
                        g = SensorGroup.parse(g)
                        write_trace_csv(self.raw_trace(user, app, session, g),
                                        trace_path(root, user, app, session, g))
        self.app_groups.dump(root / "app_groups.yaml")
        (root / "profiles.json").write_text(json.dumps(
            {"seed": self.seed, "jitter": self.jitter,
             "archetypes": [asdict(a) for a in self.archetypes.values()],
             "profiles": [p.to_dict() for p in self.cohort.values()]},
            indent=1, sort_keys=True) + "\n")
        return root

"""App and device adversaries, max-vote identification and the evaluation protocols.

A model is always trained on session-1 blocks of its scoped apps and
evaluated on session-2 blocks. Each user's block predictions are reduced to
one label by majority vote.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from vrident import classifier
from vrident.blocking import (
    BlockPlan, BlockTable, _round_half_up, build_block_table, common_channels,
    make_block_plan, postprocess_blocks,
)
from vrident.config import PipelineConfig
from vrident.errors import BlockingError, EvaluationError, SchemaError
from vrident.features import (
    FeatureSelection, all_columns, apply_selection, augment_eye_gaze,
    select_emotion_features, select_hand_features,
)
from vrident.schema import (
    EG_AUGMENTED_CHANNELS, AppGroups, ElementMap, SensorGroup, SessionTrace, parse_app,
)

log = logging.getLogger(__name__)

SCOPED_MODEL_FORMAT = "vrident-scoped-model/1"


class Dataset(Protocol):
    users: list
    apps: list

    def has(self, user, app, session, group) -> bool: ...
    def duration(self, user, app, session, group) -> "float | None": ...
    def trace(self, user, app, session, group) -> "SessionTrace | None": ...


@dataclass(frozen=True)
class Scope:
    kind: str  # "app" | "group" | "universal"
    apps: tuple[int, ...]
    name: str = ""

    @property
    def label(self) -> str:
        if self.kind == "app":
            return f"app:a_{self.apps[0]}"
        if self.kind == "group":
            return f"group:{self.name}"
        return "universal"


def parse_scope(text: str, groups: AppGroups, apps: Sequence[int]) -> Scope:
    """``app:a_1``, ``group:<name>`` or ``universal``."""
    text = text.strip()
    if text == "universal":
        return Scope("universal", tuple(sorted(apps)), "universal")
    kind, _, value = text.partition(":")
    if kind == "app" and value:
        try:
            app = parse_app(value)
        except SchemaError:
            raise EvaluationError(f"bad app in scope {text!r}") from None
        return Scope("app", (app,), f"a_{app}")
    if kind == "group" and value:
        try:
            members = groups.members(value)
        except SchemaError as exc:
            raise EvaluationError(str(exc.args[0])) from None
        return Scope("group", tuple(members), value)
    raise EvaluationError(f"bad scope {text!r}; expected app:a_<j>, group:<name> or universal")


def sensor_channels(group: SensorGroup) -> tuple[str, ...]:
    if group is SensorGroup.EG:
        return group.channels + EG_AUGMENTED_CHANNELS
    return group.channels


def _prepare(trace: SessionTrace) -> SessionTrace:
    return augment_eye_gaze(trace) if trace.group is SensorGroup.EG else trace


@dataclass(eq=False)
class ScopedModel:
    scope: Scope
    sensor: SensorGroup
    model: classifier.TrainedModel
    plans: dict
    channels: tuple[str, ...]
    selection: FeatureSelection
    train_keys: frozenset
    blocking: dict
    meta: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"{self.scope.label}/{self.sensor.value}"


def app_plan(dataset: Dataset, app: int, sensor: SensorGroup, cfg: PipelineConfig) -> BlockPlan:
    """Block plan from session-1 durations of every user who has the app."""
    durations = [dataset.duration(u, app, 1, sensor) for u in dataset.users if dataset.has(u, app, 1, sensor)]
    durations = [d for d in durations if d is not None and d > 0]
    if not durations:
        raise BlockingError(f"no sessions for app {app}")
    b = cfg.blocking
    return make_block_plan(durations, b.r, app, sensor, mode=b.mode, fbl_length=b.fbl_length)


def _select(table: BlockTable, sensor: SensorGroup, cfg: PipelineConfig,
            element_map: "ElementMap | None", n_jobs: int) -> FeatureSelection:
    if sensor is SensorGroup.HJ:
        imp = classifier.fit_importances(table, cfg.seed, n_jobs=n_jobs)
        return select_hand_features(table, imp, cfg.features.hj_top_k)
    if sensor is SensorGroup.FE and cfg.features.fe_selection != "all":
        emap = element_map or ElementMap.load(cfg.features.element_map)
        return select_emotion_features(table, cfg.features.fe_selection, emap)
    method = "eg-augmented" if sensor is SensorGroup.EG else "all"
    return all_columns(table, sensor, method)


def build_model(dataset: Dataset, scope: Scope, sensor, cfg: PipelineConfig,
                element_map: "ElementMap | None" = None, n_jobs: int = 1) -> ScopedModel:
    """Block, select and train on pooled session-1 data of the scoped apps."""
    sensor = SensorGroup.parse(sensor)
    plans, traces = {}, {}
    for app in scope.apps:
        plans[app] = app_plan(dataset, app, sensor, cfg)
        traces[app] = [_prepare(dataset.trace(u, app, 1, sensor))
                       for u in dataset.users if dataset.has(u, app, 1, sensor)]
    pooled = [t for app in scope.apps for t in traces[app]]
    channels = common_channels(pooled, sensor_channels(sensor))
    if not channels:
        raise BlockingError(f"{scope.label}/{sensor.value}: no channel survives in every trace")
    table = BlockTable.concat([build_block_table(traces[a], plans[a], channels) for a in scope.apps])
    table = postprocess_blocks(table, cfg.blocking.zero_block_threshold)
    sel = _select(table, sensor, cfg, element_map, n_jobs)
    train_table = apply_selection(table, sel)
    c = cfg.classifier
    model = classifier.train(
        train_table,
        classifier.SplitSpec(c.train_fraction, c.folds, cfg.seed),
        classifier.Grid(tuple(c.n_estimators), tuple(c.max_depth)),
        iterations=c.iterations, seed=cfg.seed, n_jobs=n_jobs,
    )
    keys = frozenset(zip(*(train_table.labels[k].to_numpy().tolist() for k in ("user", "app", "session"))))
    return ScopedModel(
        scope=scope, sensor=sensor, model=model, plans=plans, channels=channels, selection=sel,
        train_keys=keys,
        blocking={"mode": cfg.blocking.mode, "r": cfg.blocking.r, "fbl_length": cfg.blocking.fbl_length,
                  "zero_block_threshold": cfg.blocking.zero_block_threshold},
        meta={"config_hash": cfg.config_hash(), "n_rows": len(train_table),
              "n_features": len(train_table.columns)},
    )


def majority_vote(labels: Iterable[int]) -> int:
    """Most frequent label; ties go to the lowest user id."""
    counts = Counter(int(x) for x in labels)
    if not counts:
        raise EvaluationError("majority vote over an empty list")
    best = max(counts.values())
    return min(k for k, v in counts.items() if v == best)


@dataclass
class AppPredictions:
    """Per-user block predictions on one app's evaluation session."""

    app: int
    plan: BlockPlan
    predictions: dict          # user -> predicted labels in block order
    block_seconds: dict        # user -> block length in seconds
    excluded: dict             # user -> reason

    @property
    def n_max(self) -> int:
        if self.plan.mode == "fba":
            return self.plan.n_blocks
        return max((len(p) for p in self.predictions.values()), default=0)

    def mean_block_seconds(self) -> float:
        return float(np.mean(list(self.block_seconds.values()))) if self.block_seconds else 0.0


def predict_app(model: ScopedModel, dataset: Dataset, app: int, session: int = 2,
                cfg: "PipelineConfig | None" = None) -> AppPredictions:
    if session == 1:
        raise EvaluationError("evaluation uses session 2; session 1 is training data")
    sensor = model.sensor
    plan = model.plans.get(app)
    if plan is None:
        if cfg is None:
            raise EvaluationError(f"{model.name} has no block plan for app {app}; pass a config")
        plan = app_plan(dataset, app, sensor, cfg.with_overrides(**{
            "blocking." + k: v for k, v in model.blocking.items()}))
    excluded, tables, seconds = {}, [], {}
    for u in dataset.users:
        if (u, app, session) in model.train_keys:
            raise EvaluationError(f"leakage: u{u}/a{app}/s{session} was used for training")
        if not dataset.has(u, app, session, sensor):
            excluded[u] = f"missing session {session}"
            continue
        try:
            trace = _prepare(dataset.trace(u, app, session, sensor)).project(model.channels)
            raw = build_block_table([trace], plan, model.channels)
            table = postprocess_blocks(raw, model.blocking["zero_block_threshold"], prune_columns=False)
        except (BlockingError, SchemaError) as exc:
            excluded[u] = str(exc.args[0]) if exc.args else type(exc).__name__
            continue
        tables.append(table)
        seconds[u] = trace.duration / plan.n_blocks if plan.mode == "fba" else plan.length
    predictions = {}
    if tables:
        table = apply_selection(BlockTable.concat(tables), model.selection).project(model.model.columns)
        order = np.lexsort([table.labels["block"].to_numpy(), table.users])
        table = table.take(order)
        pred = model.model.predict(table.X)
        for u in np.unique(table.users):
            predictions[int(u)] = [int(p) for p in pred[table.users == u]]
    return AppPredictions(app, plan, predictions, {u: seconds[u] for u in predictions}, excluded)


@dataclass
class AccuracyReport:
    scope: str
    sensor: str
    apps: tuple
    evaluation: str      # "full", "subsession", "avg", "zero-day", "cross-group"
    s: int
    subsession_seconds: float
    n_users: int
    correct: int
    tallies: dict        # user -> {label: count}
    predicted: dict      # user -> voted label
    excluded: dict

    @property
    def accuracy(self) -> float:
        return self.correct / self.n_users

    def row(self) -> dict:
        return {
            "scope": self.scope, "sensor": self.sensor,
            "app": "+".join(f"a_{a}" for a in self.apps),
            "evaluation": self.evaluation, "s": self.s,
            "subsession_seconds": self.subsession_seconds,
            "n_users": self.n_users, "correct": self.correct, "accuracy": self.accuracy,
            "excluded": ";".join(f"{u}:{r}" for u, r in sorted(self.excluded.items())),
        }


def _vote_report(model: ScopedModel, apps, evaluation, s, seconds, per_user: dict, excluded: dict) -> AccuracyReport:
    tallies, predicted = {}, {}
    excluded = dict(excluded)
    for u, labels in sorted(per_user.items()):
        if not labels:
            excluded.setdefault(u, "no valid blocks")
            continue
        tallies[u] = dict(sorted(Counter(labels).items()))
        predicted[u] = majority_vote(labels)
    if not predicted:
        raise EvaluationError(f"{model.name}: no users left to evaluate on {apps}")
    correct = sum(int(v == u) for u, v in predicted.items())
    return AccuracyReport(model.scope.label, model.sensor.value, tuple(apps), evaluation, int(s),
                          float(seconds), len(predicted), correct, tallies, predicted, excluded)


def report_at(model: ScopedModel, preds: AppPredictions, s: "int | None" = None,
              evaluation: "str | None" = None) -> AccuracyReport:
    """Vote over each user's first ``s`` valid evaluation blocks (all blocks when ``s`` is None)."""
    n_max = preds.n_max
    if s is None:
        s = n_max
    if not 1 <= s <= max(n_max, 1):
        raise EvaluationError(f"s must lie in [1, {n_max}] for app {preds.app}, got {s}")
    per_user = {u: p[:s] for u, p in preds.predictions.items()}
    seconds = s * preds.mean_block_seconds()
    if evaluation is None:
        evaluation = "full" if s == n_max else "subsession"
    return _vote_report(model, (preds.app,), evaluation, s, seconds, per_user, preds.excluded)


def evaluate(model: ScopedModel, dataset: Dataset, app: int, s: "int | None" = None,
             cfg: "PipelineConfig | None" = None) -> AccuracyReport:
    return report_at(model, predict_app(model, dataset, app, cfg=cfg), s)


def subsession_curve(model: ScopedModel, dataset: Dataset, app: int,
                     preds: "AppPredictions | None" = None) -> list[AccuracyReport]:
    """One report per s = 1 .. N_FBA, all from the same block predictions."""
    preds = preds or predict_app(model, dataset, app)
    return [report_at(model, preds, s) for s in range(1, preds.n_max + 1)]


def avg_budget(n_blocks: Sequence[int]) -> list[int]:
    """Blocks taken from each app for the a_avg protocol.

    The total is round(mean N_j); each app gets total // n_g and the
    remainder goes one block each to the first apps in group order.
    """
    n_g = len(n_blocks)
    total = max(n_g, _round_half_up(float(np.mean(n_blocks))))
    base, extra = divmod(total, n_g)
    return [base + (1 if i < extra else 0) for i in range(n_g)]


def evaluate_avg(model: ScopedModel, dataset: Dataset, apps: "Sequence[int] | None" = None,
                 preds: "dict | None" = None) -> AccuracyReport:
    """Vote over equal shares of evaluation blocks from every app of the scope."""
    apps = tuple(apps or model.scope.apps)
    preds = preds or {}
    preds = {a: preds.get(a) or predict_app(model, dataset, a) for a in apps}
    budget = avg_budget([preds[a].n_max for a in apps])
    users = sorted({u for a in apps for u in preds[a].predictions})
    per_user, excluded = {}, {}
    for u in users:
        missing = [a for a in apps if u not in preds[a].predictions]
        if missing:
            excluded[u] = "no evaluation blocks for " + ",".join(f"a_{a}" for a in missing)
            continue
        per_user[u] = [lab for a, k in zip(apps, budget) for lab in preds[a].predictions[u][:k]]
    for a in apps:
        for u, reason in preds[a].excluded.items():
            excluded.setdefault(u, f"a_{a}: {reason}")
    seconds = sum(k * preds[a].mean_block_seconds() for a, k in zip(apps, budget))
    return _vote_report(model, apps, "avg", sum(budget), seconds, per_user, excluded)


def zero_day_scope(groups: AppGroups, group: str, held_out: int) -> Scope:
    members = groups.members(group)
    if len(members) < 2:
        raise EvaluationError(f"zero-day undefined: group {group!r} has a single app")
    if held_out not in members:
        raise EvaluationError(f"app {held_out} is not in group {group!r}")
    return Scope("group", tuple(a for a in members if a != held_out), f"{group}-minus-a_{held_out}")


def zero_day_eval(dataset: Dataset, groups: AppGroups, group: str, held_out: int, sensor,
                  cfg: PipelineConfig, n_jobs: int = 1) -> AccuracyReport:
    """Train on the group minus ``held_out``; identify users on ``held_out``."""
    model = build_model(dataset, zero_day_scope(groups, group, held_out), sensor, cfg, n_jobs=n_jobs)
    return report_at(model, predict_app(model, dataset, held_out, cfg=cfg), evaluation="zero-day")


def cross_group_eval(model: ScopedModel, dataset: Dataset, app: int, cfg: PipelineConfig) -> AccuracyReport:
    if app in model.scope.apps:
        raise EvaluationError(f"app {app} is inside {model.scope.label}")
    return report_at(model, predict_app(model, dataset, app, cfg=cfg), evaluation="cross-group")


@dataclass(frozen=True)
class ZeroDayCell:
    sensor: str
    train_group: str
    test_app: int
    test_group: str
    report: AccuracyReport

    @property
    def within(self) -> bool:
        return self.train_group == self.test_group


def zero_day_matrix(dataset: Dataset, groups: AppGroups, sensor, cfg: PipelineConfig,
                    train_groups: "Sequence[str] | None" = None, test_apps: "Sequence[int] | None" = None,
                    n_jobs: int = 1) -> list[ZeroDayCell]:
    """Group x app grid: held-out models on the diagonal, full group models elsewhere.

    Singleton groups have no diagonal cell and are skipped there.
    """
    sensor = SensorGroup.parse(sensor)
    train_groups = list(train_groups or groups.groups)
    test_apps = [a for a in (test_apps or groups.apps) if a in dataset.apps]
    cells = []
    for g in train_groups:
        members = groups.members(g)
        outside = [a for a in test_apps if a not in members]
        if outside:
            full = build_model(dataset, Scope("group", tuple(members), g), sensor, cfg, n_jobs=n_jobs)
            for a in outside:
                cells.append(ZeroDayCell(sensor.value, g, a, groups.group_of(a),
                                         cross_group_eval(full, dataset, a, cfg)))
        if len(members) >= 2:
            for a in [a for a in test_apps if a in members]:
                cells.append(ZeroDayCell(sensor.value, g, a, g,
                                         zero_day_eval(dataset, groups, g, a, sensor, cfg, n_jobs)))
    return sorted(cells, key=lambda c: (train_groups.index(c.train_group), c.test_app))


def save_scoped_model(model: ScopedModel, path: "str | Path") -> None:
    classifier.dump_canonical({"format": SCOPED_MODEL_FORMAT, "model": model}, path)


def load_scoped_model(path: "str | Path") -> ScopedModel:
    try:
        payload = classifier.load_pickle(path)
    except Exception as exc:  # unpickling junk raises almost anything
        raise EvaluationError(f"cannot read model {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != SCOPED_MODEL_FORMAT:
        raise EvaluationError(f"{path}: not a {SCOPED_MODEL_FORMAT} file")
    return payload["model"]


def model_filename(scope: Scope, sensor) -> str:
    return f"{scope.label.replace(':', '_')}__{SensorGroup.parse(sensor).value}.pkl"


__all__ = [
    "AccuracyReport", "AppPredictions", "Dataset", "Scope", "ScopedModel", "ZeroDayCell",
    "app_plan", "avg_budget", "build_model", "cross_group_eval", "evaluate", "evaluate_avg",
    "load_scoped_model", "majority_vote", "model_filename", "parse_scope", "predict_app",
    "report_at", "save_scoped_model", "sensor_channels", "subsession_curve", "zero_day_eval",
    "zero_day_matrix", "zero_day_scope",
]

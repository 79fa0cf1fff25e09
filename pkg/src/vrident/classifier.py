"""Seeded random-forest user identifier.

Hyperparameters are tuned by sampling (n_estimators, max_depth) pairs from
the grid and scoring each with stratified k-fold CV on the training split.
Predictions use hard tree votes, so the vote distribution is the share of
trees naming each user.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import pickle
import sys

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from vrident.blocking import LABELS, BlockTable, FeatureRow
from vrident.errors import ClassifierError

MODEL_FORMAT = "vrident-model/1"


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    folds: int = 5
    seed: int = 0


@dataclass(frozen=True)
class Grid:
    n_estimators: tuple[int, int] = (50, 200)
    max_depth: tuple[int, int] = (1, 20)


@dataclass(eq=False)
class TrainedModel:
    forest: RandomForestClassifier
    classes: tuple[int, ...]
    columns: tuple[tuple[str, str], ...]
    importances: np.ndarray
    tuning: list
    chosen: dict
    seed: int
    val_accuracy: float
    fitted_on: str
    meta: dict = field(default_factory=dict)

    def vote_matrix(self, X: np.ndarray) -> np.ndarray:
        return tree_votes(self.forest, np.asarray(X, dtype=np.float64))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.classes)[vote_argmax(self.vote_matrix(X))]


def _derive(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def tree_votes(forest: RandomForestClassifier, X: np.ndarray) -> np.ndarray:
    """(rows, classes) share of trees voting for each class."""
    n_classes = len(forest.classes_)
    votes = np.zeros((X.shape[0], n_classes))
    rows = np.arange(X.shape[0])
    for tree in forest.estimators_:
        # argmax takes the first maximum, i.e. the lowest class, on leaf ties
        votes[rows, np.argmax(tree.predict_proba(X), axis=1)] += 1.0
    return votes / len(forest.estimators_)


def vote_argmax(votes: np.ndarray) -> np.ndarray:
    """Index of the most-voted class per row; ties go to the lowest class."""
    return np.argmax(votes, axis=1)


def _make_forest(n_estimators: int, max_depth: int, seed: int, n_jobs: int) -> RandomForestClassifier:
    return RandomForestClassifier(
        n_estimators=n_estimators, max_depth=max_depth, criterion="entropy",
        random_state=seed, n_jobs=n_jobs,
    )


def zero_node_padding(forest: RandomForestClassifier) -> RandomForestClassifier:
    """Rewrite each tree's node array field by field into zeroed memory.

    The node struct has padding bytes that the fit leaves uninitialised, so
    without this two identical fits pickle to different bytes.
    """
    for est in forest.estimators_:
        state = est.tree_.__getstate__()
        nodes = state["nodes"]
        clean = np.zeros(nodes.shape, dtype=nodes.dtype)
        for name in nodes.dtype.names:
            clean[name] = nodes[name]
        state["nodes"] = clean
        est.tree_.__setstate__(state)
    return forest


def _sorted_by_key(table: BlockTable) -> np.ndarray:
    lab = table.labels
    keys = [lab[k].to_numpy() for k in reversed(LABELS)]
    return np.lexsort(keys)


def split_rows(y: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified train/validation split and fold ids over key-sorted rows.

    Returns (train_idx, val_idx, fold_of_train_row).
    """
    rng_split = np.random.default_rng([spec.seed, 1])
    rng_fold = np.random.default_rng([spec.seed, 2])
    train, val, folds = [], [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng_split.permutation(idx.size)]
        # round half up; rounding to 9 places first strips noise like 15 * 0.1 = 1.4999...
        n_val = int(np.floor(round(idx.size * (1.0 - spec.train_fraction), 9) + 0.5))
        if idx.size - n_val < 1:
            n_val = idx.size - 1
        tr = np.sort(idx[n_val:])
        val.append(np.sort(idx[:n_val]))
        perm = tr[rng_fold.permutation(tr.size)]
        f = np.empty(tr.size, dtype=np.int64)
        f[np.searchsorted(tr, perm)] = np.arange(tr.size) % spec.folds
        train.append(tr)
        folds.append(f)
    train_idx = np.concatenate(train)
    order = np.argsort(train_idx, kind="stable")
    return train_idx[order], np.sort(np.concatenate(val)), np.concatenate(folds)[order]


def sample_configs(grid: Grid, iterations: int, seed: int) -> list[dict]:
    rng = np.random.default_rng([seed, 3])
    out = []
    for _ in range(iterations):
        out.append({
            "n_estimators": int(rng.integers(grid.n_estimators[0], grid.n_estimators[1] + 1)),
            "max_depth": int(rng.integers(grid.max_depth[0], grid.max_depth[1] + 1)),
        })
    return out


def train(table: BlockTable, spec: SplitSpec = SplitSpec(), grid: Grid = Grid(),
          iterations: int = 5, seed: int = 0, n_jobs: int = 1) -> TrainedModel:
    """Tune, refit and score a forest on one block table.

    Rows are put in label-key order first, so the input row order never
    changes fold membership or the fitted model.
    """
    order = _sorted_by_key(table)
    X = table.X[order]
    y = table.users[order]
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ClassifierError("need at least two users to train an identifier")
    if X.shape[1] == 0 or not (np.ptp(X, axis=0) > 0).any():
        raise ClassifierError("degenerate table: no feature varies across rows")

    spec = SplitSpec(spec.train_fraction, spec.folds, seed)
    tr, va, fold = split_rows(y, spec)
    tr_counts = {c: int((y[tr] == c).sum()) for c in classes}
    for c in classes:
        if tr_counts[c] < spec.folds:
            raise ClassifierError(
                f"user {c} has {tr_counts[c]} training block(s); {spec.folds}-fold CV needs {spec.folds}"
            )

    Xtr, ytr = X[tr], y[tr]
    tuning = []
    for i, cfg in enumerate(sample_configs(grid, iterations, seed)):
        rf_seed = _derive(seed, 4, i)
        scores = []
        for k in range(spec.folds):
            fit_rows = fold != k
            forest = _make_forest(cfg["n_estimators"], cfg["max_depth"], rf_seed, n_jobs)
            forest.fit(Xtr[fit_rows], ytr[fit_rows])
            pred = forest.classes_[vote_argmax(tree_votes(forest, Xtr[~fit_rows]))]
            scores.append(float((pred == ytr[~fit_rows]).mean()))
        tuning.append({**cfg, "seed": rf_seed, "cv_scores": scores, "cv_mean": float(np.mean(scores))})

    best = max(range(len(tuning)), key=lambda i: (tuning[i]["cv_mean"], -i))
    chosen = tuning[best]
    forest = _make_forest(chosen["n_estimators"], chosen["max_depth"], chosen["seed"], n_jobs)
    forest.fit(Xtr, ytr)
    zero_node_padding(forest)
    if va.size:
        pred = forest.classes_[vote_argmax(tree_votes(forest, X[va]))]
        val_acc = float((pred == y[va]).mean())
    else:
        val_acc = float("nan")
    imp = np.asarray(forest.feature_importances_, dtype=np.float64)
    return TrainedModel(
        forest=forest,
        classes=tuple(int(c) for c in forest.classes_),
        columns=tuple(table.columns),
        importances=imp,
        tuning=tuning,
        chosen={"n_estimators": chosen["n_estimators"], "max_depth": chosen["max_depth"],
                "cv_mean": chosen["cv_mean"]},
        seed=seed,
        val_accuracy=val_acc,
        fitted_on=table.fingerprint(),
        meta={"n_train": int(tr.size), "n_val": int(va.size)},
    )


def fit_importances(table: BlockTable, seed: int, n_estimators: int = 200,
                    n_jobs: int = 1) -> np.ndarray:
    """Importances from one untuned forest, used to pre-select wide feature sets."""
    order = _sorted_by_key(table)
    forest = _make_forest(n_estimators, None, _derive(seed, 5), n_jobs)
    forest.fit(table.X[order], table.users[order])
    return np.asarray(forest.feature_importances_, dtype=np.float64)


def predict_block(model: TrainedModel, row: FeatureRow) -> tuple[int, dict[int, float]]:
    if tuple(row.columns) != tuple(model.columns):
        raise ClassifierError("feature row manifest does not match the model")
    votes = model.vote_matrix(np.asarray(row.values, dtype=np.float64)[None, :])[0]
    label = model.classes[int(vote_argmax(votes[None, :])[0])]
    return label, {c: float(v) for c, v in zip(model.classes, votes)}


def predict_table(model: TrainedModel, table: BlockTable) -> np.ndarray:
    if tuple(table.columns) != tuple(model.columns):
        raise ClassifierError("table manifest does not match the model")
    return model.predict(table.X)


def feature_importance(model: TrainedModel, top: "int | None" = None) -> list[tuple[tuple[str, str], float]]:
    """Columns by descending importance; ties keep manifest order."""
    order = np.argsort(-model.importances, kind="stable")
    if top is not None:
        order = order[:top]
    return [(model.columns[i], float(model.importances[i])) for i in order]


class _CanonicalPickler(pickle._Pickler):
    """Pickler whose output depends only on values, not on object identity.

    The stock pickler shares equal strings only when they are the same
    object, so a model built in a worker process (where its inputs arrived
    unpickled) would serialize differently from one built in-process.
    Interning every string first makes the sharing value-based.
    """

    def save(self, obj, save_persistent_id=True):
        if type(obj) is str:
            obj = sys.intern(obj)
        super().save(obj, save_persistent_id)


def dump_canonical(obj, path: "str | Path") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        _CanonicalPickler(fh, protocol=4).dump(obj)


def load_pickle(path: "str | Path"):
    with open(path, "rb") as fh:
        return pickle.load(fh)


def save_model(model: TrainedModel, path: "str | Path", extra: "dict | None" = None) -> None:
    dump_canonical({"format": MODEL_FORMAT, "model": model, "extra": extra or {}}, path)


def load_model(path: "str | Path") -> tuple[TrainedModel, dict]:
    try:
        payload = load_pickle(path)
    except Exception as exc:  # unpickling junk raises almost anything
        raise ClassifierError(f"cannot read model {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise ClassifierError(f"{path}: not a {MODEL_FORMAT} file")
    return payload["model"], payload["extra"]

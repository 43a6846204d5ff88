"""Regression surrogates mapping the 6-gene COP vector to mean SINR (dB).

Three model families are fitted here (least squares, k-nearest neighbours,
gradient-boosted regression trees); a fourth, :class:`ExternalTable`, wraps
predictions produced elsewhere so any outside model can drive the optimiser.
Features are the raw dB values, no scaling.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datagen import SweepDataset, read_table, subsample
from .scenario import CIO_RANGE, HOM_RANGE, MobilityConfig

LOWER = np.array([CIO_RANGE[0]] * 3 + [HOM_RANGE[0]] * 3)
UPPER = np.array([CIO_RANGE[1]] * 3 + [HOM_RANGE[1]] * 3)
N_FEATURES = 6


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureRow:
    x: Tuple[float, ...]
    y: float


def rows_from_dataset(dataset: SweepDataset) -> Tuple[np.ndarray, np.ndarray]:
    """(X, y) of the dataset, skipping full-outage (NaN) records."""
    X, y = dataset.features(), dataset.targets()
    keep = ~np.isnan(y)
    return X[keep], y[keep]


def split(dataset: SweepDataset, test_fraction: float, seed: int) -> Tuple[SweepDataset, SweepDataset]:
    """Seeded random train/test partition; each side keeps the original order."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction {test_fraction} outside (0, 1)")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"split of {n} rows at {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])

    def side(idx):
        return SweepDataset([dataset.records[i] for i in idx], dataset.scenario_seed, dataset.grid)

    return side(train_idx), side(test_idx)


# ---------------------------------------------------------------------------
# Models


@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    family = "linear"

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.w + self.b

    def to_dict(self) -> dict:
        return {"w": [float(v) for v in self.w], "b": float(self.b)}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(np.array(d["w"], dtype=float), float(d["b"]))


def fit_linear(X: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> LinearModel:
    """Least squares with an intercept, solved through the normal equations."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p + 1:
        raise FitError(f"linear fit needs at least {p + 1} rows, got {n}")
    A = np.hstack([X, np.ones((n, 1))])
    if np.linalg.matrix_rank(A) < p + 1:
        raise FitError("design matrix is rank deficient")
    gram = A.T @ A + ridge * np.eye(p + 1)
    coef = np.linalg.solve(gram, A.T @ y)
    if not np.all(np.isfinite(coef)):
        raise FitError("non-finite linear coefficients")
    return LinearModel(coef[:p], float(coef[p]))


@dataclass
class KnnModel:
    k: int
    X: np.ndarray
    y: np.ndarray
    metric: str = "euclidean"
    family = "knn"
    chunk: int = 1024

    def predict_many(self, Q: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        out = np.empty(len(Q))
        for start in range(0, len(Q), self.chunk):
            q = Q[start:start + self.chunk]
            d2 = ((q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=-1)
            # stable sort: equal distances keep training-row order
            nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            out[start:start + len(q)] = self.y[nearest].mean(axis=1)
        return out

    def to_dict(self) -> dict:
        return {"k": self.k, "X": self.X.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(int(d["k"]), np.array(d["X"], dtype=float).reshape(-1, N_FEATURES), np.array(d["y"], dtype=float))


def fit_knn(X: np.ndarray, y: np.ndarray, k: int = 5) -> KnnModel:
    X = np.asarray(X, dtype=float)
    if not 1 <= k <= len(X):
        raise FitError(f"k={k} must be in [1, {len(X)}]")
    return KnnModel(int(k), X.copy(), np.asarray(y, dtype=float).copy())


@dataclass
class RegressionTree:
    """Axis-aligned binary tree stored as flat arrays.

    ``feature[i] == -1`` marks a leaf. Rows with ``x[feature] <= threshold``
    go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        rows = np.arange(len(X))
        node = np.zeros(len(X), dtype=int)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return self.value[node]
            xv = X[rows, np.where(internal, f, 0)]
            nxt = np.where(xv <= self.threshold[node], self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.array(d["feature"], dtype=int),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=int),
            np.array(d["right"], dtype=int),
            np.array(d["value"], dtype=float),
        )


def _best_split(X: np.ndarray, r: np.ndarray, l2: float):
    """Best (gain, feature, threshold) for residuals ``r``; None if no split helps."""
    n = len(r)
    total = r.sum()
    parent = total * total / (n + l2)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cs = np.cumsum(r[order])[:-1]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        n_left = np.arange(1, n)
        gain = cs**2 / (n_left + l2) + (total - cs) ** 2 / (n - n_left + l2) - parent
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[0]:
            best = (float(gain[i]), j, 0.5 * (xs[i] + xs[i + 1]))
    if best is None or not best[0] > 1e-12:
        return None
    return best


def build_tree(X: np.ndarray, r: np.ndarray, max_depth: int, l2: float) -> RegressionTree:
    """Greedy exact-split tree on squared loss; leaf = sum(r) / (count + l2)."""
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(r[idx].sum() / (len(idx) + l2)))
        if depth >= max_depth or len(idx) < 2:
            return node
        found = _best_split(X[idx], r[idx], l2)
        if found is None:
            return node
        _, j, thr = found
        mask = X[idx, j] <= thr
        feature[node] = j
        threshold[node] = thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(r)), 0)
    return RegressionTree(
        np.array(feature, dtype=int),
        np.array(threshold, dtype=float),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(value, dtype=float),
    )


@dataclass
class GbrtModel:
    base_prediction: float
    learning_rate: float
    l2_lambda: float
    max_depth: int
    trees: List[RegressionTree] = field(default_factory=list)
    family = "gbrt"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(len(X), self.base_prediction)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def staged_predict(self, X: np.ndarray):
        """Predictions after 0, 1, ..., n_trees trees."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(len(X), self.base_prediction)
        yield out.copy()
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
            yield out.copy()

    def to_dict(self) -> dict:
        return {
            "base_prediction": self.base_prediction,
            "learning_rate": self.learning_rate,
            "l2_lambda": self.l2_lambda,
            "max_depth": self.max_depth,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbrtModel":
        return cls(
            float(d["base_prediction"]),
            float(d["learning_rate"]),
            float(d["l2_lambda"]),
            int(d["max_depth"]),
            [RegressionTree.from_dict(t) for t in d["trees"]],
        )


def fit_gbrt(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 200,
    max_depth: int = 4,
    learning_rate: float = 0.1,
    l2_lambda: float = 1.0,
    seed: int = 0,
    subsample_rows: float = 1.0,
) -> GbrtModel:
    """Stagewise boosting of squared-loss residuals.

    Each tree minimises squared loss plus ``l2_lambda`` times the squared
    leaf weights. With ``subsample_rows < 1`` every tree sees a seeded row
    sample; the default uses all rows and ``seed`` has no effect.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 10:
        raise FitError(f"gbrt needs at least 10 rows, got {len(y)}")
    if not 0 < learning_rate <= 1:
        raise FitError("learning_rate must be in (0, 1]")
    if l2_lambda < 0 or max_depth < 1 or n_trees < 0:
        raise FitError("invalid gbrt hyperparameters")
    rng = np.random.default_rng(seed)
    model = GbrtModel(float(y.mean()), float(learning_rate), float(l2_lambda), int(max_depth))
    pred = np.full(len(y), model.base_prediction)
    for _ in range(n_trees):
        if subsample_rows < 1.0:
            m = max(2, int(subsample_rows * len(y)))
            idx = np.sort(rng.choice(len(y), size=m, replace=False))
        else:
            idx = slice(None)
        tree = build_tree(X[idx], (y - pred)[idx], max_depth, l2_lambda)
        model.trees.append(tree)
        pred = pred + learning_rate * tree.predict(X)
    return model


@dataclass
class ExternalTable:
    """Prediction lookup imported from an external model's output.

    Queries snap to the nearest stored config; when the table is a full
    Cartesian lattice this is done per axis, otherwise by brute force.
    """

    X: np.ndarray
    values: np.ndarray
    family = "external"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, N_FEATURES)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.X) == 0:
            raise FitError("empty prediction table")
        self._lookup = {tuple(row): i for i, row in reversed(list(enumerate(self.X)))}
        axes = [np.unique(self.X[:, j]) for j in range(N_FEATURES)]
        full = int(np.prod([len(a) for a in axes])) == len(self._lookup)
        self._axes = axes if full else None

    def predict_many(self, Q: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if self._axes is not None:
            snapped = np.empty_like(Q)
            for j, ax in enumerate(self._axes):
                snapped[:, j] = ax[np.argmin(np.abs(Q[:, j, None] - ax), axis=1)]
            return self.values[[self._lookup[tuple(row)] for row in snapped]]
        nn = KnnModel(1, self.X, self.values)
        return nn.predict_many(Q)

    def to_dict(self) -> dict:
        return {"X": self.X.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExternalTable":
        return cls(np.array(d["X"], dtype=float), np.array(d["values"], dtype=float))


def read_external_table(path, value_column: str = "mean_sinr_db") -> ExternalTable:
    """Load a ``cio1..hom3,<value_column>`` CSV of external predictions."""
    _, genes, values, _ = read_table(path, value_column=value_column, with_outage=False)
    return ExternalTable(genes, values)


MODEL_TYPES = {cls.family: cls for cls in (LinearModel, KnnModel, GbrtModel, ExternalTable)}


# ---------------------------------------------------------------------------
# Prediction and evaluation


def predict(model, config) -> float:
    """Predict one config. Out-of-box vectors are clamped with a warning."""
    if isinstance(config, MobilityConfig):
        x = config.as_vector()
    else:
        x = np.asarray(config, dtype=float)
        clamped = np.clip(x, LOWER, UPPER)
        if not np.array_equal(clamped, x):
            warnings.warn(f"config {x.tolist()} outside the COP box; clamped", RuntimeWarning)
        x = clamped
    return float(model.predict_many(x[None, :])[0])


def rmse(model, X: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("rmse of no rows")
    resid = model.predict_many(X) - y
    return float(np.sqrt(np.mean(resid**2)))


@dataclass
class FitReport:
    model_name: str
    rmse_train: float
    rmse_test: float
    train_fraction: float
    n_train: int
    n_test: int
    seed: int
    error: Optional[str] = None


@dataclass
class TrainedModel:
    model: object
    report: Optional[FitReport] = None

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_many(X)

    @property
    def family(self) -> str:
        return self.model.family


def default_families(k: int = 5, gbrt_kwargs: Optional[dict] = None) -> Dict[str, Callable]:
    gbrt_kwargs = dict(gbrt_kwargs or {})
    return {
        "linear": lambda X, y, seed: fit_linear(X, y),
        f"knn(k={k})": lambda X, y, seed: fit_knn(X, y, k),
        "gbrt": lambda X, y, seed: fit_gbrt(X, y, seed=seed, **gbrt_kwargs),
    }


def evaluate_models(
    dataset: SweepDataset,
    fractions: Sequence[float] = (1.0, 0.1),
    seed: int = 42,
    families: Optional[Dict[str, Callable]] = None,
    test_fraction: float = 0.2,
) -> List[FitReport]:
    """RMSE of each model family at each training fraction.

    One held-out test split is fixed up front; the fractions subsample the
    training side only. A failing fit is reported with ``error`` set and
    NaN RMSEs, and the remaining cells still run.
    """
    families = families or default_families()
    train, test = split(dataset, test_fraction, seed)
    X_test, y_test = rows_from_dataset(test)
    reports = []
    for frac in fractions:
        sub = subsample(train, frac, seed + 1)
        X_tr, y_tr = rows_from_dataset(sub)
        for name, fit in families.items():
            try:
                model = fit(X_tr, y_tr, seed)
                reports.append(
                    FitReport(name, rmse(model, X_tr, y_tr), rmse(model, X_test, y_test), frac, len(y_tr), len(y_test), seed)
                )
            except (FitError, ValueError, np.linalg.LinAlgError) as exc:
                reports.append(FitReport(name, math.nan, math.nan, frac, len(y_tr), len(y_test), seed, str(exc)))
    return reports


FAMILIES = ("linear", "knn", "gbrt", "external")


def train_model(
    dataset: SweepDataset,
    family: str,
    fraction: float = 1.0,
    seed: int = 42,
    test_fraction: float = 0.2,
    k: int = 5,
    gbrt_kwargs: Optional[dict] = None,
    table: Optional[ExternalTable] = None,
) -> TrainedModel:
    """Fit one model family on a seeded training subsample and score it.

    The test side of ``split(dataset, test_fraction, seed)`` is held out;
    ``fraction`` subsamples the training side. For ``external`` the given
    prediction ``table`` is scored instead of fitted.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; choose from {FAMILIES}")
    train, test = split(dataset, test_fraction, seed)
    sub = subsample(train, fraction, seed + 1)
    X_tr, y_tr = rows_from_dataset(sub)
    X_te, y_te = rows_from_dataset(test)
    if family == "linear":
        model = fit_linear(X_tr, y_tr)
    elif family == "knn":
        model = fit_knn(X_tr, y_tr, k)
    elif family == "gbrt":
        model = fit_gbrt(X_tr, y_tr, seed=seed, **(gbrt_kwargs or {}))
    else:
        if table is None:
            raise ValueError("external family needs a prediction table")
        model = table
    name = f"knn(k={k})" if family == "knn" else family
    report = FitReport(name, rmse(model, X_tr, y_tr), rmse(model, X_te, y_te), fraction, len(y_tr), len(y_te), seed)
    return TrainedModel(model, report)


REPORT_COLUMNS = ["model_name", "train_fraction", "n_train", "n_test", "rmse_train", "rmse_test", "seed", "error"]


def ranking(reports: Sequence[FitReport]) -> List[FitReport]:
    """Reports ordered by training fraction (descending) then test RMSE."""
    return sorted(reports, key=lambda r: (-r.train_fraction, math.inf if math.isnan(r.rmse_test) else r.rmse_test))


def write_reports(reports: Sequence[FitReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([
                r.model_name, f"{r.train_fraction:g}", r.n_train, r.n_test,
                f"{r.rmse_train:.6f}", f"{r.rmse_test:.6f}", r.seed, r.error or "",
            ])


# ---------------------------------------------------------------------------
# Persistence


def save_model(trained: TrainedModel, path) -> None:
    """Write a self-describing JSON model file (family tag + parameters)."""
    doc = {
        "format": "copkit-model",
        "version": 1,
        "family": trained.family,
        "params": trained.model.to_dict(),
        "report": asdict(trained.report) if trained.report else None,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_model(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "copkit-model":
        raise ValueError(f"{path}: not a copkit model file")
    family = doc["family"]
    if family not in MODEL_TYPES:
        raise ValueError(f"{path}: unknown model family {family!r}")
    model = MODEL_TYPES[family].from_dict(doc["params"])
    report = FitReport(**doc["report"]) if doc.get("report") else None
    return TrainedModel(model, report)

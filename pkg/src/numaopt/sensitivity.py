"""Offline NUMA sensitivity model.

Gradient-boosted regression trees (squared-error loss, exact greedy splits
over the four features), plus bagged-forest and ordinary-least-squares
baselines, k-fold grid search, evaluation (MAE / R2) and split-gain feature
importances.  Everything is deterministic under a fixed seed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .metrics import FEATURE_NAMES, FeatureVector
from .randomness import substream

R2_SENTINEL = -1e18
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TrainingSample:
    features: FeatureVector
    label: float
    source_id: str = ""

    def __post_init__(self):
        if not np.isfinite(self.label):
            raise ValueError(f"{self.source_id}: label must be finite")


@dataclass(frozen=True)
class HyperParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    subsample: float = 1.0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")


DEFAULT_GRID = {
    "n_trees": (50, 100, 200),
    "max_depth": (2, 3, 4),
    "learning_rate": (0.05, 0.1, 0.3),
    "min_samples_leaf": (5, 20),
    "subsample": (1.0,),
}

FOREST_DEFAULTS = HyperParams(
    n_trees=100, max_depth=14, learning_rate=1.0, min_samples_leaf=2, subsample=1.0
)


@dataclass
class TreeNode:
    feature_index: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_value: float | None = None
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.leaf_value is not None

    def predict_one(self, x) -> float:
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature_index] <= node.threshold else node.right
        return node.leaf_value

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {
                "feature_index": None,
                "threshold": None,
                "left": None,
                "right": None,
                "leaf_value": self.leaf_value,
            }
        return {
            "feature_index": self.feature_index,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
            "leaf_value": None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if d["leaf_value"] is not None:
            return cls(leaf_value=d["leaf_value"])
        return cls(
            feature_index=d["feature_index"],
            threshold=d["threshold"],
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


def _predict_batch(node: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, idx = stack.pop()
        if nd.is_leaf:
            out[idx] = nd.leaf_value
            continue
        mask = X[idx, nd.feature_index] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out


def _build_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int,
    min_samples_leaf: int,
    importance: np.ndarray | None,
) -> TreeNode:
    """Exact greedy variance-reduction tree on presorted feature columns.

    Best split per node maximizes the sum-of-squares gain; gain ties keep the
    lowest feature index and lowest threshold (features scanned in order,
    thresholds ascending, strictly-better comparisons).
    """
    n_features = X.shape[1]
    root_sorted = [np.argsort(X[:, f], kind="stable") for f in range(n_features)]

    def build(sorted_idx, depth) -> TreeNode:
        rows = sorted_idx[0]
        n = len(rows)
        node_y_sum = float(y[rows].sum())
        if depth >= max_depth or n < 2 * min_samples_leaf:
            return TreeNode(leaf_value=node_y_sum / n)
        best_gain = _MIN_GAIN
        best = None
        for f in range(n_features):
            idx = sorted_idx[f]
            vals = X[idx, f]
            prefix = np.cumsum(y[idx])[:-1]
            n_left = np.arange(1, n)
            n_right = n - n_left
            valid = (vals[:-1] < vals[1:]) & (n_left >= min_samples_leaf) & (
                n_right >= min_samples_leaf
            )
            if not valid.any():
                continue
            gains = (
                prefix**2 / n_left
                + (node_y_sum - prefix) ** 2 / n_right
                - node_y_sum**2 / n
            )
            gains[~valid] = -np.inf
            j = int(np.argmax(gains))
            if gains[j] > best_gain:
                best_gain = float(gains[j])
                best = (f, (float(vals[j]) + float(vals[j + 1])) / 2.0)
        if best is None:
            return TreeNode(leaf_value=node_y_sum / n)
        f, threshold = best
        go_left = np.zeros(len(X), dtype=bool)
        go_left[rows[X[rows, f] <= threshold]] = True
        left_idx = [idx[go_left[idx]] for idx in sorted_idx]
        right_idx = [idx[~go_left[idx]] for idx in sorted_idx]
        if importance is not None:
            importance[f] += best_gain
        return TreeNode(
            feature_index=f,
            threshold=threshold,
            left=build(left_idx, depth + 1),
            right=build(right_idx, depth + 1),
            gain=best_gain,
        )

    return build(root_sorted, 0)


def _to_xy(samples) -> tuple[np.ndarray, np.ndarray]:
    samples = list(samples)
    if not samples:
        raise ValueError("training set must be nonempty")
    X = np.array([s.features.as_tuple() for s in samples], dtype=float)
    y = np.array([s.label for s in samples], dtype=float)
    return X, y


@dataclass
class GbtModel:
    trees: list[TreeNode]
    base_prediction: float
    hyperparams: HyperParams
    importances: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    importance_degenerate: bool = False
    train_sse_per_stage: list[float] = field(default_factory=list)

    def predict_one(self, features: FeatureVector) -> float:
        x = features.as_tuple()
        lr = self.hyperparams.learning_rate
        return self.base_prediction + lr * sum(t.predict_one(x) for t in self.trees)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        pred = np.full(len(X), self.base_prediction)
        lr = self.hyperparams.learning_rate
        for tree in self.trees:
            pred += lr * _predict_batch(tree, X)
        return pred


@dataclass
class ForestModel:
    trees: list[TreeNode]
    hyperparams: HyperParams

    def predict_one(self, features: FeatureVector) -> float:
        x = features.as_tuple()
        return sum(t.predict_one(x) for t in self.trees) / len(self.trees)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        pred = np.zeros(len(X))
        for tree in self.trees:
            pred += _predict_batch(tree, X)
        return pred / len(self.trees)


@dataclass
class LinearModel:
    coef: tuple[float, float, float, float]
    intercept: float
    ridge_fallback: bool = False

    def predict_one(self, features: FeatureVector) -> float:
        x = features.as_tuple()
        return self.intercept + sum(c * v for c, v in zip(self.coef, x))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + X @ np.array(self.coef)


@dataclass
class EvalReport:
    mae: float
    r2: float
    per_sample_errors: list[float]
    model_name: str

    def __post_init__(self):
        if self.mae < 0:
            raise ValueError("mae must be >= 0")
        if self.r2 > 1 + 1e-12:
            raise ValueError("r2 must be <= 1")

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "mae": self.mae,
            "r2": self.r2,
            "per_sample_errors": self.per_sample_errors,
        }


def split_dataset(samples, train_fraction: float, seed: int):
    """Deterministic shuffled split into disjoint, exhaustive train/test."""
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    perm = substream(seed, "split").permutation(len(samples))
    n_train = min(len(samples) - 1, max(1, int(round(len(samples) * train_fraction))))
    train = [samples[i] for i in perm[:n_train]]
    test = [samples[i] for i in perm[n_train:]]
    return train, test


def _fit_boosted(
    X: np.ndarray,
    y: np.ndarray,
    hp: HyperParams,
    seed: int,
    checkpoints: tuple[int, ...] | None = None,
    X_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
):
    """Stage-wise least-squares boosting; optionally record validation MAE
    at given tree-count checkpoints (training a prefix of a longer ensemble
    is identical to training it directly)."""
    rng = substream(seed, "gbt") if hp.subsample < 1.0 else None
    n = len(y)
    base = float(y.mean())
    preds = np.full(n, base)
    val_preds = np.full(len(X_val), base) if X_val is not None else None
    importance = np.zeros(X.shape[1])
    trees: list[TreeNode] = []
    sse_per_stage: list[float] = []
    checkpoint_mae: dict[int, float] = {}
    for t in range(hp.n_trees):
        residual = y - preds
        if rng is not None:
            k = max(1, int(round(hp.subsample * n)))
            rows = np.sort(rng.permutation(n)[:k])
        else:
            rows = np.arange(n)
        tree = _build_tree(
            X[rows], residual[rows], hp.max_depth, hp.min_samples_leaf, importance
        )
        trees.append(tree)
        preds = preds + hp.learning_rate * _predict_batch(tree, X)
        sse_per_stage.append(float(((y - preds) ** 2).sum()))
        if val_preds is not None:
            val_preds = val_preds + hp.learning_rate * _predict_batch(tree, X_val)
            if checkpoints and (t + 1) in checkpoints:
                checkpoint_mae[t + 1] = float(np.abs(val_preds - y_val).mean())
    total = importance.sum()
    if total > 0:
        importances = tuple(importance / total)
        degenerate = False
    else:
        importances = (0.25, 0.25, 0.25, 0.25)
        degenerate = True
    model = GbtModel(
        trees=trees,
        base_prediction=base,
        hyperparams=hp,
        importances=importances,
        importance_degenerate=degenerate,
        train_sse_per_stage=sse_per_stage,
    )
    return model, checkpoint_mae


def train_gbt(train, hp: HyperParams, seed: int) -> GbtModel:
    """Fit the boosted ensemble; tree ``t`` fits residuals of stages < t."""
    X, y = _to_xy(train)
    model, _ = _fit_boosted(X, y, hp, seed)
    return model


def train_forest(train, hp: HyperParams | None = None, seed: int = 0) -> ForestModel:
    """Bootstrap-aggregated variance-split trees (averaged, no shrinkage)."""
    hp = hp or FOREST_DEFAULTS
    X, y = _to_xy(train)
    rng = substream(seed, "forest")
    n = len(y)
    trees = []
    for _ in range(hp.n_trees):
        rows = np.sort(rng.integers(0, n, n))
        trees.append(_build_tree(X[rows], y[rows], hp.max_depth, hp.min_samples_leaf, None))
    return ForestModel(trees=trees, hyperparams=hp)


def train_linear(train) -> LinearModel:
    """Ordinary least squares on the 4 features plus intercept.

    A singular design matrix falls back to ridge with penalty 1e-6; the
    fallback is flagged on the model.
    """
    train = list(train)
    if len(train) < 5:
        raise ValueError("linear fit needs at least 5 samples")
    X, y = _to_xy(train)
    A = np.hstack([X, np.ones((len(X), 1))])
    solution, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    ridge_fallback = rank < A.shape[1]
    if ridge_fallback:
        gram = A.T @ A + 1e-6 * np.eye(A.shape[1])
        solution = np.linalg.solve(gram, A.T @ y)
    return LinearModel(
        coef=tuple(float(c) for c in solution[:4]),
        intercept=float(solution[4]),
        ridge_fallback=ridge_fallback,
    )


def predict(model, features: FeatureVector) -> float:
    """Predicted latency improvement for one feature vector."""
    value = float(model.predict_one(features))
    if not np.isfinite(value):
        raise ValueError("model produced a non-finite prediction")
    return value


def evaluate(model, test, model_name: str | None = None) -> EvalReport:
    """MAE and coefficient of determination on a held-out set."""
    test = list(test)
    if not test:
        raise ValueError("test set must be nonempty")
    X, y = _to_xy(test)
    preds = model.predict_batch(X) if hasattr(model, "predict_batch") else np.array(
        [model.predict_one(s.features) for s in test]
    )
    errors = preds - y
    mae = float(np.abs(errors).mean())
    ss_res = float((errors**2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 0.0 if ss_res <= 1e-18 else R2_SENTINEL
    else:
        r2 = 1.0 - ss_res / ss_tot
    if model_name is None:
        model_name = type(model).__name__.replace("Model", "").lower()
    return EvalReport(
        mae=mae, r2=r2, per_sample_errors=[float(e) for e in errors], model_name=model_name
    )


def feature_importance(model: GbtModel) -> tuple[float, float, float, float]:
    """Per-feature share of total squared-error reduction, summing to one.

    A model with no splits reports the degenerate uniform attribution.
    """
    return model.importances


def grid_search(train, grid: dict | None, folds: int, seed: int) -> HyperParams:
    """Exhaustive hyperparameter search by k-fold cross-validated MAE.

    Ties are broken toward fewer trees, then shallower depth, then lower
    learning rate.  Tree-count values are evaluated as prefixes of one
    ensemble per remaining combination, which is exact for stage-wise
    boosting.
    """
    grid = dict(grid) if grid else dict(DEFAULT_GRID)
    for key in grid:
        if key not in DEFAULT_GRID:
            raise ValueError(f"unknown grid key '{key}'")
        if not grid[key]:
            raise ValueError(f"empty grid axis '{key}'")
    defaults = HyperParams()
    for key in DEFAULT_GRID:
        grid.setdefault(key, (getattr(defaults, key),))
    if folds < 2:
        raise ValueError("folds must be >= 2")
    train = list(train)
    if len(train) < folds:
        raise ValueError("fold size < 1: fewer samples than folds")
    X, y = _to_xy(train)
    perm = substream(seed, "cv").permutation(len(train))
    fold_indices = np.array_split(perm, folds)

    tree_counts = tuple(sorted(set(int(v) for v in grid["n_trees"])))
    max_trees = tree_counts[-1]
    combos = sorted(
        itertools.product(
            sorted(grid["max_depth"]),
            sorted(grid["learning_rate"]),
            sorted(grid["min_samples_leaf"]),
            sorted(grid["subsample"]),
        )
    )
    results = []
    for depth, lr, leaf, sub in combos:
        hp_full = HyperParams(
            n_trees=max_trees,
            max_depth=int(depth),
            learning_rate=float(lr),
            min_samples_leaf=int(leaf),
            subsample=float(sub),
        )
        fold_maes = {k: [] for k in tree_counts}
        for i, val_idx in enumerate(fold_indices):
            train_idx = np.concatenate(
                [fold_indices[j] for j in range(folds) if j != i]
            )
            _, checkpoint_mae = _fit_boosted(
                X[train_idx],
                y[train_idx],
                hp_full,
                seed,
                checkpoints=tree_counts,
                X_val=X[val_idx],
                y_val=y[val_idx],
            )
            for k in tree_counts:
                fold_maes[k].append(checkpoint_mae[k])
        for k in tree_counts:
            mean_mae = sum(fold_maes[k]) / folds
            results.append(
                (mean_mae, k, int(depth), float(lr), int(leaf), float(sub))
            )
    best = min(results)
    return HyperParams(
        n_trees=best[1],
        max_depth=best[2],
        learning_rate=best[3],
        min_samples_leaf=best[4],
        subsample=best[5],
    )


# --- persistence -------------------------------------------------------------


def model_to_dict(model) -> dict:
    if isinstance(model, GbtModel):
        return {
            "model_type": "gbt",
            "base_prediction": model.base_prediction,
            "learning_rate": model.hyperparams.learning_rate,
            "trees": [t.to_dict() for t in model.trees],
            "hyperparams": {
                k: getattr(model.hyperparams, k)
                for k in model.hyperparams.__dataclass_fields__
            },
            "importances": list(model.importances),
            "importance_degenerate": model.importance_degenerate,
            "feature_names": list(FEATURE_NAMES),
        }
    if isinstance(model, ForestModel):
        return {
            "model_type": "forest",
            "trees": [t.to_dict() for t in model.trees],
            "hyperparams": {
                k: getattr(model.hyperparams, k)
                for k in model.hyperparams.__dataclass_fields__
            },
            "feature_names": list(FEATURE_NAMES),
        }
    if isinstance(model, LinearModel):
        return {
            "model_type": "linear",
            "coef": list(model.coef),
            "intercept": model.intercept,
            "ridge_fallback": model.ridge_fallback,
            "feature_names": list(FEATURE_NAMES),
        }
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def model_from_dict(data: dict):
    kind = data.get("model_type")
    if kind == "gbt":
        hp = HyperParams(**data["hyperparams"])
        return GbtModel(
            trees=[TreeNode.from_dict(t) for t in data["trees"]],
            base_prediction=data["base_prediction"],
            hyperparams=hp,
            importances=tuple(data["importances"]),
            importance_degenerate=data.get("importance_degenerate", False),
        )
    if kind == "forest":
        return ForestModel(
            trees=[TreeNode.from_dict(t) for t in data["trees"]],
            hyperparams=HyperParams(**data["hyperparams"]),
        )
    if kind == "linear":
        return LinearModel(
            coef=tuple(data["coef"]),
            intercept=data["intercept"],
            ridge_fallback=data.get("ridge_fallback", False),
        )
    raise ValueError(f"unknown model_type {kind!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as f:
        return model_from_dict(json.load(f))

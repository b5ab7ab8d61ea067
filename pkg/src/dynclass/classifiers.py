"""Interval classifiers trained on pseudo-labels, and confusion-matrix scoring.

Tree growth is delegated to scikit-learn's CART splitter; fitted trees are
copied into plain arrays (:class:`Tree`) so that prediction, persistence and
the boosting logic live here.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

KINDS = ("decision_tree", "random_forest", "gradient_boosted_trees")

DEFAULT_PARAMS = {
    "decision_tree": {"max_depth": 12, "min_samples_leaf": 5},
    "random_forest": {"n_trees": 100, "max_depth": 12, "min_samples_leaf": 5,
                      "max_features": "sqrt", "bootstrap": True},
    "gradient_boosted_trees": {"n_rounds": 100, "max_depth": 6, "learning_rate": 0.1,
                               "min_samples_leaf": 5},
}


class ClassifierError(ValueError):
    pass


@dataclass
class Tree:
    """Binary tree in array form; ``left[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs)

    @classmethod
    def from_sklearn(cls, est, n_classes: int | None = None) -> "Tree":
        t = est.tree_
        if n_classes is None:
            value = t.value[:, 0, :1].astype(float).copy()
        else:
            raw = t.value[:, 0, :].astype(float)
            raw = raw / raw.sum(axis=1, keepdims=True)
            value = np.zeros((t.node_count, n_classes))
            value[:, est.classes_.astype(int)] = raw
        return cls(
            t.feature.astype(np.int64).copy(),
            t.threshold.astype(float).copy(),
            t.children_left.astype(np.int64).copy(),
            t.children_right.astype(np.int64).copy(),
            value,
        )

    def apply(self, X: np.ndarray) -> np.ndarray:
        # sklearn compares float32-cast inputs against float64 thresholds
        X32 = np.asarray(X, dtype=np.float32)
        node = np.zeros(X32.shape[0], dtype=np.int64)
        rows = np.arange(X32.shape[0])
        active = self.left[node] != -1
        while active.any():
            idx = rows[active]
            cur = node[idx]
            go_left = X32[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.left[node[idx]] != -1
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1),
        )


@dataclass
class ClassifierModel:
    kind: str
    n_classes: int
    seed: int
    trees: list[Tree]
    tree_class: list[int] = field(default_factory=list)
    base_score: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "constant":
            out = np.zeros((X.shape[0], self.n_classes))
            out[:, 0] = 1.0
            return out
        if self.kind == "gradient_boosted_trees":
            scores = np.tile(self.base_score, (X.shape[0], 1))
            for tree, c in zip(self.trees, self.tree_class):
                scores[:, c] += tree.predict_value(X)[:, 0]
            return scores
        return np.mean([t.predict_value(X) for t in self.trees], axis=0)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "params": self.params,
            "trees": [t.to_dict() for t in self.trees],
            "tree_class": list(self.tree_class),
            "base_score": None if self.base_score is None else self.base_score.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        base = d.get("base_score")
        return cls(
            kind=d["kind"],
            n_classes=int(d["n_classes"]),
            seed=int(d["seed"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            tree_class=[int(c) for c in d.get("tree_class", [])],
            base_score=None if base is None else np.asarray(base, dtype=float),
            params=d.get("params", {}),
        )


def constant_model(n_classes: int = 1) -> ClassifierModel:
    """Routes every sample to interval 0; used when there is a single interval."""
    return ClassifierModel("constant", n_classes, 0, [])


def pseudo_labels(targets, seg) -> np.ndarray:
    return seg.labels(targets)


def kind_seed(seed: int, kind: str) -> int:
    """Independent stream per (seed, kind); adding a kind never shifts another's stream."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(kind.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _fit_tree(X, y, w, n_classes, seed, max_depth, min_samples_leaf, max_features=None):
    est = DecisionTreeClassifier(
        criterion="gini",
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        max_features=max_features,
        random_state=seed,
    )
    est.fit(X, y, sample_weight=w)
    return Tree.from_sklearn(est, n_classes)


def fit_decision_tree(X, y, w, n_classes, seed, max_depth=12, min_samples_leaf=5):
    tree = _fit_tree(X, y, w, n_classes, seed, max_depth, min_samples_leaf)
    params = {"max_depth": max_depth, "min_samples_leaf": min_samples_leaf}
    return ClassifierModel("decision_tree", n_classes, seed, [tree], params=params)


def fit_random_forest(X, y, w, n_classes, seed, n_trees=100, max_depth=12,
                      min_samples_leaf=5, max_features="sqrt", bootstrap=True):
    rng = np.random.default_rng(seed)
    tree_seeds = rng.integers(0, 2**31 - 1, size=n_trees)
    trees = []
    n = len(y)
    for ts in tree_seeds:
        if bootstrap:
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
            rows = np.flatnonzero(counts)
            tw = w[rows] * counts[rows]
        else:
            rows, tw = np.arange(n), w
        trees.append(_fit_tree(X[rows], y[rows], tw, n_classes, int(ts),
                               max_depth, min_samples_leaf, max_features))
    params = {"n_trees": n_trees, "max_depth": max_depth, "min_samples_leaf": min_samples_leaf,
              "max_features": max_features, "bootstrap": bootstrap}
    return ClassifierModel("random_forest", n_classes, seed, trees, params=params)


def _logloss(w, target, score) -> float:
    # stable -[t*log(p) + (1-t)*log(1-p)] with p = sigmoid(score)
    return float(np.sum(w * (np.logaddexp(0.0, score) - target * score)))


def fit_boosted_trees(X, y, w, n_classes, seed, n_rounds=100, max_depth=6,
                      learning_rate=0.1, min_samples_leaf=5):
    """One-vs-rest logistic boosting with Newton leaf values.

    Each round adds one regression tree per class.  The step along a new tree
    is halved until that class's weighted log-loss does not increase, so the
    training loss is non-increasing round over round.
    """
    onehot = (y[:, None] == np.arange(n_classes)[None, :]).astype(float)
    prior = np.clip((w[:, None] * onehot).sum(axis=0) / w.sum(), 1e-6, 1 - 1e-6)
    base = np.log(prior / (1 - prior))
    scores = np.tile(base, (len(y), 1))
    rng = np.random.default_rng(seed)
    trees, tree_class = [], []
    losses = [sum(_logloss(w, onehot[:, c], scores[:, c]) for c in range(n_classes))]
    for _ in range(n_rounds):
        for c in range(n_classes):
            p = 1.0 / (1.0 + np.exp(-scores[:, c]))
            grad = p - onehot[:, c]
            hess = np.maximum(p * (1 - p), 1e-12)
            est = DecisionTreeRegressor(max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                                        random_state=int(rng.integers(0, 2**31 - 1)))
            est.fit(X, -grad, sample_weight=w)
            tree = Tree.from_sklearn(est)
            leaf = tree.apply(X)
            num = np.bincount(leaf, weights=-w * grad, minlength=len(tree.feature))
            den = np.bincount(leaf, weights=w * hess, minlength=len(tree.feature))
            newton = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
            before = _logloss(w, onehot[:, c], scores[:, c])
            step = learning_rate
            for _ in range(30):
                trial = scores[:, c] + step * newton[leaf]
                if _logloss(w, onehot[:, c], trial) <= before:
                    break
                step *= 0.5
            else:
                step = 0.0
            if step == 0.0:
                continue
            tree.value = (step * newton)[:, None]
            scores[:, c] += tree.value[leaf, 0]
            trees.append(tree)
            tree_class.append(c)
        losses.append(sum(_logloss(w, onehot[:, c], scores[:, c]) for c in range(n_classes)))
    params = {"n_rounds": n_rounds, "max_depth": max_depth, "learning_rate": learning_rate,
              "min_samples_leaf": min_samples_leaf}
    return ClassifierModel("gradient_boosted_trees", n_classes, seed, trees, tree_class,
                           base, params=params, train_loss=losses)


FITTERS = {
    "decision_tree": fit_decision_tree,
    "random_forest": fit_random_forest,
    "gradient_boosted_trees": fit_boosted_trees,
}


def _canonical_order(X, y, w) -> np.ndarray:
    keys = [w, y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def train_candidates(features, labels, sample_weights=None, seed: int = 0,
                     kinds=KINDS, n_classes: int | None = None, params=None,
                     max_workers: int = 1) -> list[ClassifierModel]:
    """Fit one model per kind on the same pseudo-labelled data.

    Rows are put in a canonical order first, so the fitted models do not
    depend on the order in which samples were supplied.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=int)
    w = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if not (len(X) == len(y) == len(w)):
        raise ClassifierError("features, labels and weights differ in length")
    if np.any(w <= 0):
        raise ClassifierError("sample weights must be positive")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    if len(y) < n_classes:
        raise ClassifierError("fewer samples than classes")
    missing = np.setdiff1d(np.arange(n_classes), y)
    if len(missing):
        raise ClassifierError(f"classes {missing.tolist()} have no training samples")
    order = _canonical_order(X, y, w)
    X, y, w = X[order], y[order], w[order]
    params = params or {}
    for kind in kinds:
        if kind not in FITTERS:
            raise ClassifierError(f"unknown classifier kind {kind!r}")

    def fit(kind):
        kw = {**DEFAULT_PARAMS[kind], **params.get(kind, {})}
        return FITTERS[kind](X, y, w, n_classes, kind_seed(seed, kind), **kw)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            return list(pool.map(fit, kinds))
    return [fit(k) for k in kinds]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true intervals, columns predicted intervals."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_from_labels(true_labels, pred_labels, n_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=int)
    p = np.asarray(pred_labels, dtype=int)
    counts = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


def confusion(model: ClassifierModel, features, labels) -> ConfusionMatrix:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return confusion_from_labels(labels, model.predict(X), model.n_classes)


def classification_loss(cm: ConfusionMatrix) -> float:
    """Off-diagonal share of the confusion matrix."""
    total = cm.total
    if total == 0:
        raise ClassifierError("confusion matrix is empty")
    return (total - int(np.trace(cm.counts))) / total

"""procuraudit - decision-tree surrogate for flagged contracts

CART with Gini impurity, exhaustive midpoint search, no pruning.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from errors import DimensionError, SingleClassError


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 5
    min_samples_split: int = 2

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ValueError(f"min_samples_split must be >= 2, got {self.min_samples_split}")


@dataclass(frozen=True)
class SplitNode:
    feature: int
    threshold: float
    left: int
    right: int
    n_samples: int
    gini: float


@dataclass(frozen=True)
class LeafNode:
    label: int
    n_samples: int
    class_counts: tuple[int, int]
    gini: float


def _gini(n_neg: float, n_pos: float) -> float:
    total = n_neg + n_pos
    if total == 0:
        return 0.0
    p = n_pos / total
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


@dataclass
class DecisionTree:
    nodes: list[SplitNode | LeafNode]
    params: TreeParams
    n_features: int
    column_names: list[str] | None = None

    def name(self, feature: int) -> str:
        return self.column_names[feature] if self.column_names else f"x{feature}"

    @property
    def n_splits(self) -> int:
        return sum(isinstance(n, SplitNode) for n in self.nodes)

    def depth(self) -> int:
        def walk(i: int) -> int:
            node = self.nodes[i]
            if isinstance(node, LeafNode):
                return 0
            return 1 + max(walk(node.left), walk(node.right))
        return walk(0)

    def to_text(self) -> str:
        lines: list[str] = []

        def walk(i: int, indent: int) -> None:
            node = self.nodes[i]
            pad = "  " * indent
            if isinstance(node, LeafNode):
                lines.append(f"{pad}leaf label={node.label} n={node.n_samples} counts={list(node.class_counts)}")
                return
            lines.append(f"{pad}{self.name(node.feature)} < {node.threshold:.6g}  (n={node.n_samples}, gini={node.gini:.4f})")
            walk(node.left, indent + 1)
            lines.append(f"{pad}{self.name(node.feature)} >= {node.threshold:.6g}")
            walk(node.right, indent + 1)

        walk(0, 0)
        return "\n".join(lines)

    def to_json(self) -> str:
        nodes = []
        for node in self.nodes:
            entry = asdict(node)
            if isinstance(node, LeafNode):
                entry["class_counts"] = list(node.class_counts)
            else:
                entry["feature_name"] = self.name(node.feature)
            nodes.append(entry)
        return json.dumps({"params": asdict(self.params), "n_features": self.n_features, "nodes": nodes}, ensure_ascii=False)


# ========== fitting ==========

def _as_array(matrix) -> tuple[np.ndarray, list[str] | None]:
    if hasattr(matrix, "column_names"):
        return np.asarray(matrix.rows, dtype=np.float64), list(matrix.column_names)
    return np.asarray(matrix, dtype=np.float64), None


def _best_split(X: np.ndarray, y: np.ndarray) -> tuple[int, float] | None:
    """Largest Gini decrease; ties keep the lower feature index, then the lower threshold."""
    n, d = X.shape
    n_pos = int(y.sum())
    parent = _gini(n - n_pos, n_pos)
    best: tuple[float, int, float] | None = None

    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        cut = np.flatnonzero(xs[1:] > xs[:-1])  # left side is xs[:cut+1]
        if cut.size == 0:
            continue
        left_n = (cut + 1).astype(np.float64)
        left_pos = np.cumsum(ys)[cut].astype(np.float64)
        right_n = n - left_n
        right_pos = n_pos - left_pos
        p_left = left_pos / left_n
        p_right = right_pos / right_n
        g_left = 1.0 - p_left ** 2 - (1.0 - p_left) ** 2
        g_right = 1.0 - p_right ** 2 - (1.0 - p_right) ** 2
        decrease = parent - (left_n * g_left + right_n * g_right) / n

        j = int(np.argmax(decrease))
        # a zero decrease still splits an impure node; XOR-like labels need it
        if best is None or decrease[j] > best[0]:
            lo, hi = xs[cut[j]], xs[cut[j] + 1]
            threshold = (lo + hi) / 2.0
            if not lo < threshold:
                threshold = hi
            best = (float(decrease[j]), f, float(threshold))

    if best is None:
        return None
    return best[1], best[2]


def _grow(X, y, idx, depth, params, nodes) -> int:
    counts = np.bincount(y[idx], minlength=2)
    gini = _gini(counts[0], counts[1])
    node_id = len(nodes)
    nodes.append(None)

    split = None
    if depth < params.max_depth and len(idx) >= params.min_samples_split and gini > 0.0:
        split = _best_split(X[idx], y[idx])
    if split is None:
        nodes[node_id] = LeafNode(
            label=int(counts[1] > counts[0]),
            n_samples=len(idx),
            class_counts=(int(counts[0]), int(counts[1])),
            gini=gini,
        )
        return node_id

    feature, threshold = split
    go_left = X[idx, feature] < threshold
    left = _grow(X, y, idx[go_left], depth + 1, params, nodes)
    right = _grow(X, y, idx[~go_left], depth + 1, params, nodes)
    nodes[node_id] = SplitNode(feature, threshold, left, right, len(idx), gini)
    return node_id


def fit_tree(matrix, labels, params: TreeParams | None = None) -> DecisionTree:
    """Fit a CART classifier on 0/1 labels. Both classes must be present."""
    params = params or TreeParams()
    X, names = _as_array(matrix)
    y = np.asarray(labels).astype(np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionError(f"matrix {X.shape} does not match labels {y.shape}")
    classes = set(np.unique(y).tolist())
    if not classes <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got {sorted(classes)}")
    if len(classes) < 2:
        raise SingleClassError(f"labels contain only class {classes.pop() if classes else 'none'}")

    nodes: list = []
    _grow(X, y, np.arange(X.shape[0]), 0, params, nodes)
    tree = DecisionTree(nodes=nodes, params=params, n_features=X.shape[1], column_names=names)
    logger.info(f"[explain] tree with {tree.n_splits} splits, depth {tree.depth()}")
    return tree


# ========== use ==========

def _check_row(tree: DecisionTree, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.n_features,):
        raise DimensionError(f"row has shape {x.shape}, tree was trained on {tree.n_features} features")
    return x


def predict(tree: DecisionTree, x) -> int:
    """feature < threshold goes left, anything else right."""
    x = _check_row(tree, x)
    node = tree.nodes[0]
    while isinstance(node, SplitNode):
        node = tree.nodes[node.left] if x[node.feature] < node.threshold else tree.nodes[node.right]
    return node.label


def decision_path(tree: DecisionTree, x) -> list[str]:
    """Split conditions a row satisfies, root first."""
    x = _check_row(tree, x)
    conditions = []
    node = tree.nodes[0]
    while isinstance(node, SplitNode):
        if x[node.feature] < node.threshold:
            conditions.append(f"{tree.name(node.feature)} < {node.threshold:.6g}")
            node = tree.nodes[node.left]
        else:
            conditions.append(f"{tree.name(node.feature)} >= {node.threshold:.6g}")
            node = tree.nodes[node.right]
    return conditions


@dataclass
class ImportanceReport:
    entries: list[tuple[str, float]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.entries, columns=["feature", "importance"])

    def save(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def feature_importance(tree: DecisionTree, column_names=None) -> ImportanceReport:
    """Weighted Gini decrease per feature, normalized to 1. Zero entries are omitted."""
    names = list(column_names) if column_names is not None else [tree.name(i) for i in range(tree.n_features)]
    n_total = tree.nodes[0].n_samples
    raw = np.zeros(tree.n_features)
    for node in tree.nodes:
        if not isinstance(node, SplitNode):
            continue
        left, right = tree.nodes[node.left], tree.nodes[node.right]
        child = (left.n_samples * left.gini + right.n_samples * right.gini) / node.n_samples
        raw[node.feature] += node.n_samples / n_total * max(0.0, node.gini - child)

    total = raw.sum()
    if total <= 0.0:
        return ImportanceReport([])
    shares = raw / total
    order = sorted((f for f in range(tree.n_features) if shares[f] > 0), key=lambda f: (-shares[f], f))
    return ImportanceReport([(names[f], float(shares[f])) for f in order])

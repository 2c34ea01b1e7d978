"""procuraudit - isolation forest (random axis splits, path lengths, anomaly scores)

Trees are stored as parallel arrays in preorder so a whole matrix can be
routed through a tree at once. A node with feature == -1 is external.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from errors import DimensionError, InsufficientDataError

EULER_GAMMA = 0.5772156649
FORMAT_VERSION = 1
_MASK64 = (1 << 64) - 1


def avg_path_length_c(n: int) -> float:
    """Average path length of an unsuccessful BST search among n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def derive_seed(seed: int, tree_index: int) -> int:
    """splitmix64 finalizer over seed ^ tree_index."""
    z = ((seed ^ tree_index) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


# ========== types ==========

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    subsample_size: int = 256
    max_depth: int | None = None  # None -> ceil(log2(subsample))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.subsample_size < 2:
            raise ValueError(f"subsample_size must be >= 2, got {self.subsample_size}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def depth_limit(self, psi: int) -> int:
        if self.max_depth is not None:
            return self.max_depth
        return max(1, math.ceil(math.log2(psi)))


@dataclass
class IsolationTree:
    feature: np.ndarray    # int, -1 for external nodes
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray       # training points that reached the node
    n_features: int

    @classmethod
    def from_rows(cls, rows: list[list], n_features: int) -> IsolationTree:
        feature, threshold, left, right, size = zip(*rows)
        return cls(
            feature=np.asarray(feature, dtype=np.int64),
            threshold=np.asarray(threshold, dtype=np.float64),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            size=np.asarray(size, dtype=np.int64),
            n_features=n_features,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_external(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaf_correction(self) -> np.ndarray:
        """c(size) at external nodes, 0 at internal ones."""
        return np.array([
            avg_path_length_c(int(s)) if f < 0 else 0.0
            for f, s in zip(self.feature, self.size)
        ])

    def to_nodes(self) -> list[dict]:
        nodes = []
        for i in range(self.n_nodes):
            if self.is_external(i):
                nodes.append({"size": int(self.size[i])})
            else:
                nodes.append({
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "size": int(self.size[i]),
                })
        return nodes

    @classmethod
    def from_nodes(cls, nodes: list[dict], n_features: int) -> IsolationTree:
        rows = [
            [n.get("feature", -1), n.get("threshold", 0.0), n.get("left", -1), n.get("right", -1), n["size"]]
            for n in nodes
        ]
        return cls.from_rows(rows, n_features)


@dataclass
class IsolationForest:
    params: ForestParams
    psi_effective: int
    n_features: int
    trees: list[IsolationTree]

    def to_json(self) -> str:
        return json.dumps({
            "format_version": FORMAT_VERSION,
            "params": asdict(self.params),
            "psi_effective": self.psi_effective,
            "n_features": self.n_features,
            "trees": [t.to_nodes() for t in self.trees],
        })

    @classmethod
    def from_json(cls, payload: str) -> IsolationForest:
        data = json.loads(payload)
        if data.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format {data.get('format_version')}")
        d = data["n_features"]
        return cls(
            params=ForestParams(**data["params"]),
            psi_effective=data["psi_effective"],
            n_features=d,
            trees=[IsolationTree.from_nodes(nodes, d) for nodes in data["trees"]],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> IsolationForest:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class ScoreVector:
    expected_path: np.ndarray
    score: np.ndarray
    row_keys: list[int]

    def __len__(self) -> int:
        return len(self.score)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"row_key": self.row_keys, "expected_path": self.expected_path, "score": self.score})

    def save(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _as_array(matrix) -> tuple[np.ndarray, list[int]]:
    """ndarray or FeatureMatrix -> (rows, integer row keys)."""
    if hasattr(matrix, "row_keys"):
        return np.asarray(matrix.rows, dtype=np.float64), [int(k[1]) for k in matrix.row_keys]
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {X.shape}")
    return X, list(range(X.shape[0]))


# ========== building ==========

def _grow(X: np.ndarray, idx: np.ndarray, depth: int, max_depth: int, rng: np.random.Generator, nodes: list[list]) -> int:
    node_id = len(nodes)
    nodes.append([-1, 0.0, -1, -1, len(idx)])
    if len(idx) <= 1 or depth >= max_depth:
        return node_id

    part = X[idx]
    lo = part.min(axis=0)
    hi = part.max(axis=0)
    candidates = np.flatnonzero(hi > lo)
    if candidates.size == 0:
        return node_id

    feature = int(candidates[rng.integers(candidates.size)])
    a, b = float(lo[feature]), float(hi[feature])
    threshold = float(rng.uniform(a, b))
    if not a < threshold < b:
        # uniform() may return a; with adjacent floats there is nothing strictly inside
        mid = (a + b) / 2.0
        threshold = mid if a < mid < b else b

    go_left = part[:, feature] < threshold
    nodes[node_id][0] = feature
    nodes[node_id][1] = threshold
    nodes[node_id][2] = _grow(X, idx[go_left], depth + 1, max_depth, rng, nodes)
    nodes[node_id][3] = _grow(X, idx[~go_left], depth + 1, max_depth, rng, nodes)
    return node_id


def build_tree(X, sample, max_depth: int, rng: np.random.Generator, depth: int = 0) -> IsolationTree:
    """Grow one isolation tree on the rows of X listed in sample."""
    X = np.asarray(X, dtype=np.float64)
    nodes: list[list] = []
    _grow(X, np.asarray(sample, dtype=np.int64), depth, max_depth, rng, nodes)
    return IsolationTree.from_rows(nodes, n_features=X.shape[1])


def build_forest(matrix, params: ForestParams | None = None, workers: int = 1) -> IsolationForest:
    """t trees, each on a uniform subsample of min(psi, n) rows without replacement.

    Tree k draws from its own generator seeded with derive_seed(seed, k), so
    the forest does not depend on build order or worker count.
    """
    params = params or ForestParams()
    X, _ = _as_array(matrix)
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError(f"isolation forest needs at least 2 rows, got {n}")
    psi = min(params.subsample_size, n)
    max_depth = params.depth_limit(psi)

    def one_tree(k: int) -> IsolationTree:
        rng = np.random.default_rng(derive_seed(params.seed, k))
        sample = rng.choice(n, size=psi, replace=False)
        return build_tree(X, sample, max_depth, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(one_tree, range(params.n_trees)))
    else:
        trees = [one_tree(k) for k in range(params.n_trees)]
    logger.info(f"[iforest] built {len(trees)} trees, psi={psi}, max_depth={max_depth}, workers={workers}")
    return IsolationForest(params=params, psi_effective=psi, n_features=X.shape[1], trees=trees)


# ========== scoring ==========

def path_length(tree: IsolationTree, x) -> float:
    """Edges from the root to the external node x reaches, plus c(size) there."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.n_features,):
        raise DimensionError(f"row has shape {x.shape}, tree was trained on {tree.n_features} features")
    node, depth = 0, 0
    while not tree.is_external(node):
        node = tree.left[node] if x[tree.feature[node]] < tree.threshold[node] else tree.right[node]
        depth += 1
    return depth + avg_path_length_c(int(tree.size[node]))


def _path_lengths(tree: IsolationTree, X: np.ndarray) -> np.ndarray:
    """path_length for every row of X, routed level by level."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    depth = np.zeros(n, dtype=np.float64)
    active = np.flatnonzero(tree.feature[node] >= 0)
    while active.size:
        cur = node[active]
        go_left = X[active, tree.feature[cur]] < tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
        depth[active] += 1.0
        active = active[tree.feature[node[active]] >= 0]
    return depth + tree.leaf_correction()[node]


def score(forest: IsolationForest, matrix, workers: int = 1) -> ScoreVector:
    """s(x) = 2^(-E(h(x)) / c(psi_effective)); higher is more anomalous."""
    X, keys = _as_array(matrix)
    if X.shape[1] != forest.n_features:
        raise DimensionError(f"matrix has {X.shape[1]} columns, forest was trained on {forest.n_features}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_tree = list(pool.map(lambda t: _path_lengths(t, X), forest.trees))
    else:
        per_tree = [_path_lengths(t, X) for t in forest.trees]

    total = np.zeros(X.shape[0], dtype=np.float64)
    for lengths in per_tree:  # fixed order keeps the sum bit-identical
        total += lengths
    expected = total / len(forest.trees)
    s = np.power(2.0, -expected / avg_path_length_c(forest.psi_effective))
    return ScoreVector(expected_path=expected, score=s, row_keys=keys)


def rank_anomalies(scores: ScoreVector, k: int) -> list[tuple[int, float]]:
    """Top-k (row_key, score) by score descending, ties by row_key ascending."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order = sorted(range(len(scores)), key=lambda i: (-scores.score[i], scores.row_keys[i]))
    return [(scores.row_keys[i], float(scores.score[i])) for i in order[:k]]

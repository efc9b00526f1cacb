"""Random-forest regressor built from variance-reduction regression trees.

Trees are stored as flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``); a leaf has ``feature == -1``. Samples with
``x[feature] <= threshold`` go left.

Randomness comes from a counter-based generator so the same seed gives the
same trees in any language::

    mix(z)          = SplitMix64 finalizer of (z + 0x9E3779B97F4A7C15)
    draw(key, i)    = mix(key ^ mix(i))
    uniform(key, i) = (draw(key, i) >> 11) * 2**-53
    tree key        = mix(seed ^ mix(tree_index))
    bootstrap row i = floor(uniform(mix(tree_key ^ 1), i) * n_rows)
    node features   = partial Fisher-Yates over 0..p-1 with
                      j-th swap target j + floor(uniform(mix(tree_key ^ 2),
                      node_id * p + j) * (p - j)), then sorted ascending
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba as nb
import numpy as np

from .errors import ArityMismatch, ShapeMismatch, TooFewRows

MODEL_FORMAT = "aeforce-forest"
MODEL_VERSION = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@nb.njit(cache=True)
def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def _uniform(key, counter):
    r = _mix(key ^ _mix(counter))
    return np.float64(r >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def _tree_key(seed, tree_index):
    return _mix(seed ^ _mix(tree_index))


@nb.njit(cache=True)
def _bootstrap(key, n):
    bkey = _mix(key ^ np.uint64(1))
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = np.int64(_uniform(bkey, np.uint64(i)) * n)
    return out


@nb.njit(cache=True)
def _node_features(fkey, node_id, p, n_sub):
    perm = np.arange(p)
    if n_sub >= p:
        return perm
    base = np.uint64(node_id) * np.uint64(p)
    for j in range(n_sub):
        r = j + np.int64(_uniform(fkey, base + np.uint64(j)) * (p - j))
        tmp = perm[j]
        perm[j] = perm[r]
        perm[r] = tmp
    return np.sort(perm[:n_sub])


@nb.njit(cache=True, nogil=True)
def _build(X, y, rows, max_depth, min_leaf, n_sub, key):
    """Grow one tree on ``rows`` (indices into X, repeats allowed)."""
    n, p = rows.shape[0], X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    idx = rows.copy()
    buf = np.empty(n, dtype=np.int64)
    fkey = _mix(key ^ np.uint64(2))

    # stack of (node, start, end, depth); children are pushed right first so
    # the left subtree is numbered first (preorder)
    stack = np.empty((cap, 4), dtype=np.int64)
    stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3] = 0, 0, n, 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node, start, end, depth = stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3]
        m = end - start
        total = 0.0
        for i in range(start, end):
            total += y[idx[i]]
        mean = total / m
        value[node] = mean
        sse = 0.0
        for i in range(start, end):
            d = y[idx[i]] - mean
            sse += d * d
        if (max_depth >= 0 and depth >= max_depth) or m < 2 * min_leaf or sse <= 0.0:
            continue

        tol = 1e-12 * sse
        best_score = sse
        best_f = -1
        best_thr = 0.0
        feats = _node_features(fkey, node, p, n_sub)
        yc = np.empty(m)
        for f in feats:
            vals = np.empty(m)
            for i in range(m):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals, kind="mergesort")
            sv = vals[order]
            for i in range(m):
                yc[i] = y[idx[start + order[i]]] - mean
            s_tot = 0.0
            q_tot = 0.0
            for i in range(m):
                s_tot += yc[i]
                q_tot += yc[i] * yc[i]
            s = 0.0
            q = 0.0
            for i in range(m - 1):
                s += yc[i]
                q += yc[i] * yc[i]
                nl = i + 1
                nr = m - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                if not sv[i] < sv[i + 1]:
                    continue
                score = (q - s * s / nl) + ((q_tot - q) - (s_tot - s) ** 2 / nr)
                if score < best_score - tol:
                    best_score = score
                    best_f = f
                    thr = 0.5 * (sv[i] + sv[i + 1])
                    if not thr < sv[i + 1]:
                        thr = sv[i]
                    best_thr = thr
        if best_f < 0:
            continue

        # stable partition of idx[start:end]
        nl = 0
        for i in range(start, end):
            if X[idx[i], best_f] <= best_thr:
                buf[nl] = idx[i]
                nl += 1
        k = nl
        for i in range(start, end):
            if not X[idx[i], best_f] <= best_thr:
                buf[k] = idx[i]
                k += 1
        for i in range(m):
            idx[start + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = rnode, start + nl, end, depth + 1
        top += 1
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = lnode, start, start + nl, depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@nb.njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, value, out):
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        _predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value, out)
        return out

    def to_nested(self, node: int = 0):
        """Nested ``("leaf", value)`` / ``("split", f, thr, left, right)`` tuples."""
        if self.feature[node] < 0:
            return ("leaf", float(self.value[node]))
        return (
            "split",
            int(self.feature[node]),
            float(self.threshold[node]),
            self.to_nested(int(self.left[node])),
            self.to_nested(int(self.right[node])),
        )

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: float | str = 1.0  # fraction in (0, 1] or "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if isinstance(self.max_features, str):
            if self.max_features != "sqrt":
                raise ValueError(f"unknown max_features rule {self.max_features!r}")
        elif not 0 < self.max_features <= 1:
            raise ValueError("fractional max_features must lie in (0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def n_features_per_split(self, p: int) -> int:
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(p)))
        return min(p, max(1, math.ceil(self.max_features * p - 1e-12)))

    def replace(self, **kw) -> "ForestConfig":
        return ForestConfig(**{**asdict(self), **kw})


def default_grid(seed: int = 0) -> list[ForestConfig]:
    return [
        ForestConfig(n, d, leaf, mf, True, seed)
        for n in (100, 300)
        for d in (None, 12)
        for leaf in (1, 2, 5, 10)
        for mf in (1 / 3, "sqrt", 1.0)
    ]


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are incompatible")
    return X, y


def fit_tree(X, y, cfg: ForestConfig = ForestConfig(), tree_index: int = 0, rows=None) -> Tree:
    """Single CART regression tree on ``rows`` (all rows by default, no bootstrap)."""
    X, y = _check_xy(X, y)
    if rows is None:
        rows = np.arange(X.shape[0], dtype=np.int64)
    key = np.uint64(_tree_key(np.uint64(cfg.seed), np.uint64(tree_index)))
    depth = -1 if cfg.max_depth is None else int(cfg.max_depth)
    arrays = _build(
        X, y, np.asarray(rows, dtype=np.int64), depth, int(cfg.min_samples_leaf),
        cfg.n_features_per_split(X.shape[1]), key,
    )
    return Tree(*arrays)


@dataclass
class ForestModel:
    trees: list[Tree]
    config: ForestConfig
    feature_keys: list[str]
    oob_score: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_keys)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ArityMismatch(
                f"model expects {self.n_features} features, got shape {X.shape}"
            )
        X = np.ascontiguousarray(X)
        acc = np.zeros(X.shape[0])
        buf = np.empty(X.shape[0])
        for t in self.trees:
            _predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value, buf)
            acc += buf
        out = acc / len(self.trees)
        return float(out[0]) if single else out

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": MODEL_FORMAT,
                "version": MODEL_VERSION,
                "config": asdict(self.config),
                "feature_keys": list(self.feature_keys),
                "oob_score": self.oob_score,
                "meta": self.meta,
                "trees": [t.to_dict() for t in self.trees],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        d = json.loads(text)
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError("not a supported forest model file")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            config=ForestConfig(**d["config"]),
            feature_keys=list(d["feature_keys"]),
            oob_score=d.get("oob_score"),
            meta=d.get("meta", {}),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ForestModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def fit_forest(
    X, y, cfg: ForestConfig = ForestConfig(), feature_keys=None, jobs: int = 1,
    oob: bool = False,
) -> ForestModel:
    X, y = _check_xy(X, y)
    n, p = X.shape
    if feature_keys is None:
        feature_keys = [f"x{j}" for j in range(p)]
    if len(feature_keys) != p:
        raise ShapeMismatch("feature_keys length differs from the number of columns")
    depth = -1 if cfg.max_depth is None else int(cfg.max_depth)
    n_sub = cfg.n_features_per_split(p)
    seed = np.uint64(cfg.seed)

    def grow(t):
        key = np.uint64(_tree_key(seed, np.uint64(t)))
        rows = _bootstrap(key, n) if cfg.bootstrap else np.arange(n, dtype=np.int64)
        return Tree(*_build(X, y, rows, depth, int(cfg.min_samples_leaf), n_sub, key)), rows

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            grown = list(ex.map(grow, range(cfg.n_trees)))
    else:
        grown = [grow(t) for t in range(cfg.n_trees)]

    model = ForestModel([g[0] for g in grown], cfg, [str(k) for k in feature_keys])
    if oob and cfg.bootstrap:
        model.oob_score = _oob_r2(X, y, grown)
    return model


def _oob_r2(X, y, grown) -> float | None:
    n = X.shape[0]
    acc = np.zeros(n)
    cnt = np.zeros(n)
    buf = np.empty(n)
    for tree, rows in grown:
        out = np.ones(n, dtype=bool)
        out[rows] = False
        tree_pred = tree.predict(X)
        acc[out] += tree_pred[out]
        cnt[out] += 1
    ok = cnt > 0
    if ok.sum() < 2:
        return None
    yt, yp = y[ok], acc[ok] / cnt[ok]
    den = np.sum((yt - yt.mean()) ** 2)
    if den == 0:
        return None
    return float(1 - np.sum((yt - yp) ** 2) / den)


def predict(model: ForestModel, X):
    return model.predict(X)


def fold_slices(n: int, folds: int) -> list[slice]:
    """Contiguous blocks partitioning ``range(n)``; sizes differ by at most one."""
    if n < folds:
        raise TooFewRows(f"{n} rows cannot be split into {folds} folds")
    base, extra = divmod(n, folds)
    out, start = [], 0
    for i in range(folds):
        size = base + (1 if i < extra else 0)
        out.append(slice(start, start + size))
        start += size
    return out


def _r2(y, yp) -> float:
    den = np.sum((y - y.mean()) ** 2)
    if den == 0:
        return math.nan
    return float(1 - np.sum((y - yp) ** 2) / den)


def grid_search_cv(
    X, y, grid: list[ForestConfig], folds: int = 5, jobs: int = 1
) -> tuple[ForestConfig, list[float]]:
    """Pick the config with the best mean validation R² over contiguous folds.

    Ties go to fewer trees, then to the shallower depth limit. A one-member
    grid is returned without cross-validation (its score is reported as nan).
    """
    X, y = _check_xy(X, y)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    slices = fold_slices(X.shape[0], folds)
    if len(grid) == 1:
        return grid[0], [math.nan]

    def score(cfg):
        vals = []
        for sl in slices:
            mask = np.ones(X.shape[0], dtype=bool)
            mask[sl] = False
            m = fit_forest(X[mask], y[mask], cfg)
            vals.append(_r2(y[sl], m.predict(X[sl])))
        vals = np.array(vals)
        return float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else -math.inf

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            scores = list(ex.map(score, grid))
    else:
        scores = [score(c) for c in grid]

    def rank(i):
        c = grid[i]
        depth = math.inf if c.max_depth is None else c.max_depth
        return (-scores[i], c.n_trees, depth, i)

    best = min(range(len(grid)), key=rank)
    return grid[best], scores

"""Feature importance: per-feature correlation and leave-one-experiment-out scores."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import CombinatorialLimit, DegenerateInput, InsufficientExperiments
from ..forest import ForestConfig, fit_forest
from .metrics import pearson, r2
from .scales import FeatureMatrix


def loo_score(mats: list[FeatureMatrix], columns, cfg: ForestConfig) -> float:
    """Mean held-out R² over experiments, using only ``columns``."""
    if len(mats) < 2:
        raise InsufficientExperiments("leave-one-out needs at least two experiments")
    cols = list(columns)
    scores = []
    for i, test in enumerate(mats):
        train = mats[:i] + mats[i + 1 :]
        X = np.vstack([m.X[:, cols] for m in train])
        y = np.concatenate([m.y for m in train])
        model = fit_forest(X, y, cfg)
        scores.append(r2(test.y, model.predict(test.X[:, cols])))
    return float(np.mean(scores))


def importance_single(mats: list[FeatureMatrix], cfg: ForestConfig, jobs: int = 1) -> list[dict]:
    """Pearson correlation with the target and single-feature R² for each column."""
    keys = mats[0].keys
    X = np.vstack([m.X for m in mats])
    y = np.concatenate([m.y for m in mats])

    def one(j):
        try:
            c = pearson(X[:, j], y)
        except DegenerateInput:
            c = math.nan
        return {"feature": keys[j], "pearson": c, "r2": loo_score(mats, [j], cfg)}

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(one, range(len(keys))))
    return [one(j) for j in range(len(keys))]


def feature_correlations(mats: list[FeatureMatrix]) -> np.ndarray:
    """Pairwise Pearson matrix of the feature columns over all windows."""
    X = np.vstack([m.X for m in mats])
    p = X.shape[1]
    C = np.full((p, p), math.nan)
    for i in range(p):
        for j in range(i, p):
            try:
                C[i, j] = C[j, i] = pearson(X[:, i], X[:, j])
            except DegenerateInput:
                pass
    return C


def importance_subsets(
    mats: list[FeatureMatrix], n_max: int, cfg: ForestConfig, cap: int = 5000,
    jobs: int = 1,
) -> dict:
    """Exhaustive search over feature subsets of size ``1..n_max``.

    Every subset is scored with the same forest config. Returns the full
    table and, per size, the best subset.
    """
    keys = mats[0].keys
    p = len(keys)
    if p > 20:
        raise CombinatorialLimit(f"{p} features is too many for exhaustive search")
    n_max = min(n_max, p)
    sizes = range(1, n_max + 1)
    total = sum(math.comb(p, n) for n in sizes)
    if total > cap:
        raise CombinatorialLimit(f"{total} subsets exceed the cap of {cap}")
    combos = [c for n in sizes for c in itertools.combinations(range(p), n)]

    def score(c):
        return loo_score(mats, c, cfg)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            scores = list(ex.map(score, combos))
    else:
        scores = [score(c) for c in combos]

    table = [
        {"n": len(c), "features": [keys[i] for i in c], "r2": s}
        for c, s in zip(combos, scores)
    ]
    best = {}
    for row in table:
        cur = best.get(row["n"])
        if cur is None or row["r2"] > cur["r2"]:
            best[row["n"]] = row
    return {"table": table, "best": [best[n] for n in sizes]}

"""Transferability across pillar sizes.

Each cell trains on a four-experiment composition and tests on one held-out
experiment. Training uses the last ``n_w`` fine windows of every training
experiment, ``n_w`` being the window count of the shortest experiment, and
the test experiment contributes its last ``n_w`` windows too (80:20 split).
"""

from __future__ import annotations

import itertools
from dataclasses import replace

from ..errors import InsufficientExperiments
from ..features import FIG_F_SET
from ..signal import ExperimentRecord
from .metrics import r2
from .scales import FineScaleConfig, fine_matrix, train_fine_from_matrices

TRANSFER_F_SET = FIG_F_SET


def default_compositions(ids: list[str], test: str, size: int = 4, limit: int | None = None):
    others = [i for i in ids if i != test]
    combos = [list(c) for c in itertools.combinations(others, size)]
    return combos if limit is None else combos[:limit]


def transfer_matrix(
    experiments: list[ExperimentRecord],
    cfg: FineScaleConfig = FineScaleConfig(),
    compositions: dict[str, list[list[str]]] | None = None,
    size: int = 4,
    limit: int | None = None,
    modes=("freq_independent", "freq_dependent"),
    f_set=TRANSFER_F_SET,
) -> list[dict]:
    """One row per (composition, test experiment) with R² for each feature mode.

    ``compositions`` maps a test id to its training id lists; by default every
    ``size``-subset of the other experiments is used (first ``limit`` only).
    The frequency-dependent mode uses ``f_set`` (100, 250, 500 kHz by default).
    """
    if len(experiments) < size + 1:
        raise InsufficientExperiments(
            f"transfer needs at least {size + 1} experiments, got {len(experiments)}"
        )
    by_id = {r.id: r for r in experiments}
    if len(by_id) != len(experiments):
        raise InsufficientExperiments("experiment ids must be unique")
    ids = list(by_id)

    normed = {i: by_id[i].normalized() for i in ids}
    mats = {}
    for mode in modes:
        mcfg = replace(cfg, feature_mode=mode)
        if mode == "freq_dependent":
            mcfg = replace(mcfg, f_set=tuple(f_set))
        mats[mode] = (mcfg, {i: fine_matrix(normed[i], mcfg, normalized=True) for i in ids})

    n_w = min(len(m) for m in next(iter(mats.values()))[1].values())
    rows = []
    for test in ids:
        combos = (compositions or {}).get(test) or default_compositions(ids, test, size, limit)
        for combo in combos:
            if test in combo:
                raise InsufficientExperiments(f"test experiment {test} is in its own training set")
            train_d = sorted({by_id[i].diameter for i in combo})
            row = {
                "test": test,
                "test_diameter_um": by_id[test].diameter,
                "train": "+".join(combo),
                "train_diameters_um": "+".join(f"{by_id[i].diameter:g}" for i in combo),
                "category": "same" if by_id[test].diameter in train_d else "disjoint",
                "n_w": n_w,
            }
            for mode, (mcfg, m) in mats.items():
                model = train_fine_from_matrices([m[i].tail(n_w) for i in combo], mcfg)
                t = m[test].tail(n_w)
                row[f"r2_{mode}"] = r2(t.y, model.predict(t.X))
            rows.append(row)
    return rows


def summarize(rows: list[dict], mode: str = "freq_independent") -> dict:
    out = {}
    for cat in ("same", "disjoint"):
        vals = [r[f"r2_{mode}"] for r in rows if r["category"] == cat]
        out[cat] = sum(vals) / len(vals) if vals else None
    return out

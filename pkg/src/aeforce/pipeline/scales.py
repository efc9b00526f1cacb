"""Fine-scale (force increments) and coarse-scale (force values) models."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigInvalid, InsufficientExperiments, SpanTooShort
from ..features import (
    DEFAULT_K_GRID,
    FIG_F_SET,
    FIG_K_SET,
    INF,
    ThresholdConfig,
    coarse_keys,
    detect_ae_events,
    freq_dependent_keys,
    freq_independent_keys,
    moments,
    parse_k,
)
from ..forest import ForestConfig, ForestModel, default_grid, fit_forest, grid_search_cv
from ..signal import (
    ExperimentRecord,
    TimeWindow,
    force_increments,
    partition_windows,
    sliding_windows,
)
from ..wavelet import ScaleGrid, Spectrogram, cwt, read_spectrogram, slice_rows, write_spectrogram
from .combine import combine
from .metrics import r2

log = logging.getLogger(__name__)

FEATURE_MODES = ("freq_independent", "freq_dependent")


def _k_out(ks):
    return ["inf" if k == INF else int(k) for k in ks]


@dataclass(frozen=True)
class FineScaleConfig:
    dt: float = 0.3
    feature_mode: str = "freq_independent"
    k_grid: tuple = DEFAULT_K_GRID
    f_set: tuple = FIG_F_SET
    k_set: tuple = FIG_K_SET
    n_scales: int = 64
    f_min: float = 50e3
    f_max: float = 800e3
    use_power: bool = True
    forest_grid: tuple = field(default_factory=lambda: tuple(default_grid()))
    folds: int = 5
    jobs: int = 1
    cache_dir: str | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigInvalid("fine window width must be positive")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigInvalid(f"unknown feature mode {self.feature_mode!r}")
        if not self.forest_grid:
            raise ConfigInvalid("empty forest grid")

    def scale_grid(self, sampling_rate: float) -> ScaleGrid:
        return ScaleGrid.logspaced(self.f_min, self.f_max, self.n_scales, sampling_rate)

    def to_meta(self) -> dict:
        return {
            "scale": "fine",
            "dt_s": self.dt,
            "feature_mode": self.feature_mode,
            "k_grid": _k_out(self.k_grid),
            "f_set_hz": list(self.f_set),
            "k_set": _k_out(self.k_set),
            "n_scales": self.n_scales,
            "f_min_hz": self.f_min,
            "f_max_hz": self.f_max,
            "use_power": self.use_power,
        }

    @classmethod
    def from_meta(cls, meta: dict, **kw) -> "FineScaleConfig":
        return cls(
            dt=float(meta["dt_s"]),
            feature_mode=meta["feature_mode"],
            k_grid=tuple(parse_k(k) for k in meta["k_grid"]),
            f_set=tuple(float(f) for f in meta["f_set_hz"]),
            k_set=tuple(parse_k(k) for k in meta["k_set"]),
            n_scales=int(meta["n_scales"]),
            f_min=float(meta["f_min_hz"]),
            f_max=float(meta["f_max_hz"]),
            use_power=bool(meta["use_power"]),
            **kw,
        )


@dataclass(frozen=True)
class CoarseScaleConfig:
    width: float = 50.0
    stride: float = 5.0
    k_grid: tuple = DEFAULT_K_GRID
    threshold: ThresholdConfig = ThresholdConfig()
    forest_grid: tuple = field(default_factory=lambda: tuple(default_grid()))
    folds: int = 5
    jobs: int = 1

    def __post_init__(self):
        if not 0 < self.stride <= self.width:
            raise ConfigInvalid("coarse stride must satisfy 0 < stride <= width")

    def to_meta(self) -> dict:
        return {
            "scale": "coarse",
            "width_s": self.width,
            "stride_s": self.stride,
            "k_grid": _k_out(self.k_grid),
            "threshold": {
                "c_thr": self.threshold.c_thr,
                "hang_time_s": self.threshold.hang_time,
                "merge_gap_s": self.threshold.merge_gap,
            },
        }

    @classmethod
    def from_meta(cls, meta: dict, **kw) -> "CoarseScaleConfig":
        th = meta["threshold"]
        return cls(
            width=float(meta["width_s"]),
            stride=float(meta["stride_s"]),
            k_grid=tuple(parse_k(k) for k in meta["k_grid"]),
            threshold=ThresholdConfig(
                float(th["c_thr"]), float(th["hang_time_s"]), float(th["merge_gap_s"])
            ),
            **kw,
        )


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    keys: list[str]
    t_start: np.ndarray
    t_end: np.ndarray
    experiment: str = ""

    def __len__(self):
        return len(self.y)

    def tail(self, n: int) -> "FeatureMatrix":
        """The last ``n`` rows."""
        return FeatureMatrix(
            self.X[-n:], self.y[-n:], self.keys, self.t_start[-n:], self.t_end[-n:],
            self.experiment,
        )

    def columns(self, idx) -> "FeatureMatrix":
        idx = list(idx)
        return FeatureMatrix(
            self.X[:, idx], self.y, [self.keys[i] for i in idx], self.t_start,
            self.t_end, self.experiment,
        )


def stack(mats: list[FeatureMatrix]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    keys = mats[0].keys
    for m in mats[1:]:
        if m.keys != keys:
            raise ConfigInvalid("feature matrices have different columns")
    return np.vstack([m.X for m in mats]), np.concatenate([m.y for m in mats]), keys


# --- fine scale -------------------------------------------------------------


def fine_keys(cfg: FineScaleConfig, sampling_rate: float) -> list[str]:
    if cfg.feature_mode == "freq_independent":
        return [k.name for k in freq_independent_keys(cfg.k_grid)]
    grid = cfg.scale_grid(sampling_rate)
    return [k.name for k in freq_dependent_keys(cfg.f_set, cfg.k_set, grid)]


def _fd_window(x, cfg: FineScaleConfig, grid: ScaleGrid, cache: Path | None):
    if cache is not None:
        if cache.exists():
            spec = read_spectrogram(cache)
        else:
            spec = cwt(x, grid)
            write_spectrogram(spec, cache)
            # use what the cache holds so cold and warm runs agree bit for bit
            spec = Spectrogram(spec.power.astype(np.float32).astype(np.float64), grid)
        rows = np.stack([spec.power[spec.grid.nearest(f)] for f in cfg.f_set])
    else:
        rows, _ = slice_rows(x, grid, cfg.f_set)
    if not cfg.use_power:
        rows = np.sqrt(rows)
    return np.concatenate([moments(r, cfg.k_set) for r in rows])


def fine_matrix(rec: ExperimentRecord, cfg: FineScaleConfig, normalized: bool = False) -> FeatureMatrix:
    """Features and force increments for every fine window of one experiment."""
    if not normalized:
        rec = rec.normalized()
    windows = partition_windows(rec.span, cfg.dt)
    y = force_increments(rec.force, windows)
    keys = fine_keys(cfg, rec.ae.sampling_rate)
    X = np.empty((len(windows), len(keys)))
    grid = cfg.scale_grid(rec.ae.sampling_rate)
    cache_root = Path(cfg.cache_dir) if cfg.cache_dir else None
    if cache_root is not None:
        cache_root.mkdir(parents=True, exist_ok=True)
    for i, w in enumerate(windows):
        x = rec.ae.segment(w.t_start, w.t_end)
        if cfg.feature_mode == "freq_independent":
            X[i] = moments(x, cfg.k_grid)
        else:
            cache = None
            if cache_root is not None:
                cache = cache_root / (
                    f"{rec.id}_dt{cfg.dt:g}_n{cfg.n_scales}_{cfg.f_min:g}-{cfg.f_max:g}_w{i:06d}.spec"
                )
            X[i] = _fd_window(x, cfg, grid, cache)
    return FeatureMatrix(
        X, y, keys,
        np.array([w.t_start for w in windows]),
        np.array([w.t_end for w in windows]),
        rec.id,
    )


def _fit(X, y, keys, grid, folds, jobs, meta):
    best, scores = grid_search_cv(X, y, list(grid), folds=folds, jobs=jobs)
    model = fit_forest(X, y, best, feature_keys=keys, jobs=jobs)
    model.meta = {**meta, "cv_scores": [None if math.isnan(s) else s for s in scores]}
    return model


def train_fine_from_matrices(mats: list[FeatureMatrix], cfg: FineScaleConfig) -> ForestModel:
    if not mats:
        raise InsufficientExperiments("fine-scale training needs at least one experiment")
    X, y, keys = stack(mats)
    meta = {**cfg.to_meta(), "train_experiments": [m.experiment for m in mats]}
    return _fit(X, y, keys, cfg.forest_grid, cfg.folds, cfg.jobs, meta)


def train_fine(experiments: list[ExperimentRecord], cfg: FineScaleConfig = FineScaleConfig()) -> ForestModel:
    """Grid-search a forest on the fine windows of all training experiments, then refit."""
    return train_fine_from_matrices([fine_matrix(r, cfg) for r in experiments], cfg)


@dataclass
class FinePrediction:
    edges: np.ndarray  # window edges, len n + 1
    increments: np.ndarray
    increments_true: np.ndarray
    curve: np.ndarray  # integrated prediction at the edges, anchored at F(t0)


def predict_fine_matrix(model: ForestModel, mat: FeatureMatrix, F0: float) -> FinePrediction:
    inc = model.predict(mat.X)
    edges = np.concatenate([mat.t_start, mat.t_end[-1:]])
    curve = F0 + np.concatenate([[0.0], np.cumsum(inc)])
    return FinePrediction(edges, inc, mat.y, curve)


def predict_fine(model: ForestModel, rec: ExperimentRecord, cfg: FineScaleConfig | None = None) -> FinePrediction:
    """Per-window increments and the integrated curve ``f(t) = F(t0) + cumsum``."""
    if cfg is None:
        cfg = FineScaleConfig.from_meta(model.meta)
    mat = fine_matrix(rec, cfg)
    F0 = float(rec.force.at(rec.span[0]))
    return predict_fine_matrix(model, mat, F0)


# --- coarse scale -----------------------------------------------------------


def _window_moments(x: np.ndarray, i0: np.ndarray, length: int, k_grid) -> np.ndarray:
    """Moments over equal-length windows ``x[i0 : i0 + length]``.

    When the window starts share a common block size, power sums are built
    per block once and reused across overlapping windows.
    """
    starts = np.asarray(i0, dtype=np.int64)
    g = math.gcd(length, *[int(s - starts[0]) for s in starts[1:]]) if len(starts) > 1 else length
    if g < 256 or starts[0] < 0 or starts[-1] + length > len(x):
        return np.array([moments(x[s : s + length], k_grid) for s in starts])
    a = np.abs(x[starts[0] : starts[-1] + length])
    nb = len(a) // g
    a = a[: nb * g].reshape(nb, g)
    peak = a.max()
    out = np.zeros((len(starts), len(k_grid)))
    if peak == 0:
        return out
    r = a / peak
    block_max = r.max(axis=1)
    finite = sorted({int(k) for k in k_grid if k != INF})
    sums = {}
    p = r.copy()
    for k in range(1, (finite[-1] if finite else 0) + 1):
        if k in finite:
            sums[k] = np.concatenate([[0.0], np.cumsum(p.sum(axis=1))])
        if k < finite[-1]:
            p *= r
    per = length // g
    b0 = (starts - starts[0]) // g
    for j, b in enumerate(b0):
        for c, k in enumerate(k_grid):
            if k == INF:
                out[j, c] = peak * block_max[b : b + per].max()
            else:
                s = (sums[int(k)][b + per] - sums[int(k)][b]) / length
                out[j, c] = peak * max(s, 0.0) ** (1.0 / int(k))
    return out


def coarse_rows(rec: ExperimentRecord, windows: list[TimeWindow], cfg: CoarseScaleConfig, events=None) -> np.ndarray:
    fs = rec.ae.sampling_rate
    if events is None:
        events = detect_ae_events(rec.ae, cfg.threshold)
    length = int(round(cfg.width * fs))
    i0 = np.array([rec.ae.index(w.t_start) for w in windows])
    M = _window_moments(rec.ae.samples, i0, length, cfg.k_grid)
    extras = np.array(
        [[*events.in_window(w.t_start, w.t_end), rec.diameter] for w in windows]
    )
    return np.hstack([M, extras])


def coarse_matrix(rec: ExperimentRecord, cfg: CoarseScaleConfig, anchors_only: bool = False,
                  normalized: bool = False) -> FeatureMatrix:
    """Coarse features with target F at each window end.

    Training uses overlapping windows at ``cfg.stride``; ``anchors_only``
    gives the non-overlapping windows ending at multiples of the width.
    """
    if not normalized:
        rec = rec.normalized()
    if anchors_only:
        windows = partition_windows(rec.span, cfg.width)
    else:
        windows = sliding_windows(rec.span, cfg.width, cfg.stride)
    X = coarse_rows(rec, windows, cfg)
    t_end = np.array([w.t_end for w in windows])
    y = np.asarray(rec.force.at(t_end), dtype=np.float64)
    return FeatureMatrix(
        X, y, [k.name for k in coarse_keys(cfg.k_grid)],
        np.array([w.t_start for w in windows]), t_end, rec.id,
    )


def train_coarse_from_matrices(mats: list[FeatureMatrix], cfg: CoarseScaleConfig) -> ForestModel:
    if not mats:
        raise SpanTooShort("no experiment is longer than the coarse window")
    X, y, keys = stack(mats)
    meta = {**cfg.to_meta(), "train_experiments": [m.experiment for m in mats]}
    return _fit(X, y, keys, cfg.forest_grid, cfg.folds, cfg.jobs, meta)


def train_coarse(experiments: list[ExperimentRecord], cfg: CoarseScaleConfig = CoarseScaleConfig()) -> ForestModel:
    """Forest on overlapping coarse windows of every experiment longer than the width."""
    mats = []
    for rec in experiments:
        t0, t1 = rec.span
        if t1 - t0 < cfg.width:
            log.warning("%s: %.1f s is shorter than the coarse window, skipped", rec.id, t1 - t0)
            continue
        mats.append(coarse_matrix(rec, cfg))
    return train_coarse_from_matrices(mats, cfg)


def predict_coarse(model: ForestModel, rec: ExperimentRecord, cfg: CoarseScaleConfig | None = None):
    """Force predicted at ``t0 + n * width`` for ``n = 1..N_c``; returns ``(times, F)``."""
    if cfg is None:
        cfg = CoarseScaleConfig.from_meta(model.meta)
    mat = coarse_matrix(rec, cfg, anchors_only=True)
    return mat.t_end, model.predict(mat.X)


# --- both scales ------------------------------------------------------------


@dataclass
class PredictionSeries:
    fine: FinePrediction
    anchor_times: np.ndarray
    anchors: np.ndarray
    t: np.ndarray  # combined curve sample times
    combined: np.ndarray
    ground: np.ndarray
    deltas: np.ndarray

    @property
    def r2_fine(self) -> float:
        return r2(self.fine.increments_true, self.fine.increments)

    @property
    def r2_combined(self) -> float:
        return r2(self.ground, self.combined)


def combine_predictions(fine: FinePrediction, anchor_times, anchors, width: float,
                        rec: ExperimentRecord) -> PredictionSeries:
    anchor_times = np.asarray(anchor_times)
    anchors = np.asarray(anchors)
    keep = anchor_times <= fine.edges[-1] + 1e-9
    anchor_times, anchors = anchor_times[keep], anchors[keep]
    t, comb, deltas = combine(fine.edges, fine.curve, anchors, width, t0=float(fine.edges[0]))
    ground = np.asarray(rec.force.at(t), dtype=np.float64)
    return PredictionSeries(fine, anchor_times, anchors, t, comb, ground, deltas)


def predict_experiment(fine_model: ForestModel, coarse_model: ForestModel | None,
                       rec: ExperimentRecord, fine_cfg: FineScaleConfig | None = None,
                       coarse_cfg: CoarseScaleConfig | None = None) -> PredictionSeries:
    """Fine prediction, coarse anchors (when a coarse model is given) and their combination."""
    fine = predict_fine(fine_model, rec, fine_cfg)
    if coarse_model is None:
        return PredictionSeries(fine, np.zeros(0), np.zeros(0), fine.edges, fine.curve,
                                np.asarray(rec.force.at(fine.edges), dtype=np.float64), np.zeros(0))
    if coarse_cfg is None:
        coarse_cfg = CoarseScaleConfig.from_meta(coarse_model.meta)
    t_a, F_a = predict_coarse(coarse_model, rec, coarse_cfg)
    return combine_predictions(fine, t_a, F_a, coarse_cfg.width, rec)


def leave_one_out_fine(mats: list[FeatureMatrix], cfg: FineScaleConfig) -> list[dict]:
    """Train on all experiments but one, score R² of increments on the held-out one."""
    if len(mats) < 2:
        raise InsufficientExperiments("leave-one-out needs at least two experiments")
    out = []
    for i, test in enumerate(mats):
        model = train_fine_from_matrices(mats[:i] + mats[i + 1 :], cfg)
        pred = model.predict(test.X)
        out.append({
            "experiment": test.experiment,
            "r2": r2(test.y, pred),
            "n_windows": len(test),
            "config": {
                "n_trees": model.config.n_trees,
                "max_depth": model.config.max_depth,
                "min_samples_leaf": model.config.min_samples_leaf,
                "max_features": model.config.max_features,
            },
        })
    return out


def with_forest(cfg, grid) -> "FineScaleConfig | CoarseScaleConfig":
    return replace(cfg, forest_grid=tuple(grid))

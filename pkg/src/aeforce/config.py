"""Flat, dotted-key run configuration.

Resolution order: built-in defaults, then a JSON file (flat dotted keys or
nested objects), then command-line overrides. The resolved mapping is what
gets written to ``run_config.json``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, fields

from .errors import UsageError
from .features import ThresholdConfig, parse_k
from .forest import ForestConfig
from .pipeline.scales import CoarseScaleConfig, FineScaleConfig
from .synth import SynthConfig

_SYNTH_FIELDS = {f.name: f.default for f in fields(SynthConfig) if f.name not in ("seed", "id", "diameter_um")}

DEFAULTS: dict = {
    "seed": 0,
    "jobs": 1,
    "fine.dt_s": 0.3,
    "fine.feature_mode": "freq_independent",
    "fine.k_grid": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, "inf"],
    "fine.f_set_hz": [100e3, 250e3, 500e3],
    "fine.k_set": [1, 2, 4, "inf"],
    "fine.use_power": True,
    "fine.folds": 5,
    "wavelet.n_scales": 64,
    "wavelet.f_min_hz": 50e3,
    "wavelet.f_max_hz": 800e3,
    "coarse.width_s": 50.0,
    "coarse.stride_s": 5.0,
    "coarse.folds": 5,
    "events.c_thr": 5.0,
    "events.hang_time_s": 50e-6,
    "events.merge_gap_s": 100e-6,
    "forest.n_trees": [100, 300],
    "forest.max_depth": [None, 12],
    "forest.min_samples_leaf": [1, 2, 5, 10],
    "forest.max_features": [1 / 3, "sqrt", 1.0],
    "forest.bootstrap": True,
    "importance.n_max": 4,
    "importance.cap": 5000,
    "importance.n_trees": 100,
    "importance.max_depth": None,
    "importance.min_samples_leaf": 5,
    "importance.max_features": 1.0,
    "stats.eps_mN": None,
    "stats.bins": 20,
    "stats.spectrum_window_s": 160e-6,
    "stats.taper": "rect",
    "transfer.size": 4,
    "transfer.limit": None,
    "evaluate.modes": ["freq_independent"],
    "evaluate.dt_sweep_s": [],
    "synth.n": 5,
    "synth.diameters_um": [8.0],
    "synth.time_scale": 1.0,
    **{f"synth.{k}": v for k, v in _SYNTH_FIELDS.items()},
}


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in DEFAULTS:
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_value(text: str):
    """JSON if it parses, otherwise the raw string (``inf`` stays a string)."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _num(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def resolve(cls, file_values: dict | None = None, overrides: dict | None = None) -> "RunConfig":
        values = dict(DEFAULTS)
        for src in (flatten(file_values or {}), overrides or {}):
            for k, v in src.items():
                if k not in DEFAULTS:
                    raise UsageError(f"unknown config key {k!r}")
                values[k] = v
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        file_values = None
        if path:
            try:
                with open(path) as fh:
                    file_values = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {path}: {exc}") from exc
        return cls.resolve(file_values, overrides)

    def __getitem__(self, key):
        return self.values[key]

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True) + "\n"

    def validate(self) -> None:
        try:
            self.forest_grid()
            self.fine()
            self.coarse()
            self.importance_forest()
            self.synth(0)
        except (ValueError, TypeError, KeyError) as exc:
            raise UsageError(f"invalid configuration: {exc}") from exc

    @property
    def seed(self) -> int:
        return int(self["seed"])

    @property
    def jobs(self) -> int:
        return max(1, int(self["jobs"]))

    def forest_grid(self) -> list[ForestConfig]:
        depths = [None if d is None else int(d) for d in _as_list(self["forest.max_depth"])]
        mfs = [m if isinstance(m, str) else float(m) for m in _as_list(self["forest.max_features"])]
        return [
            ForestConfig(int(n), d, int(leaf), mf, bool(self["forest.bootstrap"]), self.seed)
            for n, d, leaf, mf in itertools.product(
                _as_list(self["forest.n_trees"]), depths,
                _as_list(self["forest.min_samples_leaf"]), mfs,
            )
        ]

    def importance_forest(self) -> ForestConfig:
        d = self["importance.max_depth"]
        mf = self["importance.max_features"]
        return ForestConfig(
            int(self["importance.n_trees"]), None if d is None else int(d),
            int(self["importance.min_samples_leaf"]),
            mf if isinstance(mf, str) else float(mf), bool(self["forest.bootstrap"]),
            self.seed,
        )

    def fine(self, cache_dir: str | None = None, **kw) -> FineScaleConfig:
        return FineScaleConfig(
            dt=float(self["fine.dt_s"]),
            feature_mode=self["fine.feature_mode"],
            k_grid=tuple(parse_k(k) for k in self["fine.k_grid"]),
            f_set=tuple(float(f) for f in self["fine.f_set_hz"]),
            k_set=tuple(parse_k(k) for k in self["fine.k_set"]),
            n_scales=int(self["wavelet.n_scales"]),
            f_min=float(self["wavelet.f_min_hz"]),
            f_max=float(self["wavelet.f_max_hz"]),
            use_power=bool(self["fine.use_power"]),
            forest_grid=tuple(self.forest_grid()),
            folds=int(self["fine.folds"]),
            jobs=self.jobs,
            cache_dir=cache_dir,
            **kw,
        )

    def threshold(self) -> ThresholdConfig:
        return ThresholdConfig(
            float(self["events.c_thr"]),
            float(self["events.hang_time_s"]),
            float(self["events.merge_gap_s"]),
        )

    def coarse(self) -> CoarseScaleConfig:
        return CoarseScaleConfig(
            width=float(self["coarse.width_s"]),
            stride=float(self["coarse.stride_s"]),
            k_grid=tuple(parse_k(k) for k in self["fine.k_grid"]),
            threshold=self.threshold(),
            forest_grid=tuple(self.forest_grid()),
            folds=int(self["coarse.folds"]),
            jobs=self.jobs,
        )

    def synth(self, i: int) -> SynthConfig:
        kw = {}
        for k, default in _SYNTH_FIELDS.items():
            v = self[f"synth.{k}"]
            if isinstance(default, float):
                v = _num(v)
            kw[k] = v
        diameters = _as_list(self["synth.diameters_um"])
        cfg = SynthConfig(
            id=f"synth_{i:03d}",
            diameter_um=float(diameters[i % len(diameters)]),
            seed=(self.seed + i) % 2**64,
            **kw,
        )
        scale = float(self["synth.time_scale"])
        if scale <= 0:
            raise ValueError("synth.time_scale must be positive")
        return cfg if scale == 1.0 else cfg.time_scaled(scale)

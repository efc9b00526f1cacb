"""Per-window AE descriptors.

Feature names follow a compact scheme used in CSV headers and model files:

* ``fi_k2``, ``fi_kinf``          frequency-independent moment of order k
* ``fd_f100000_k2``               moment of the spectrogram row nearest 100 kHz
* ``event_count``, ``event_duration_s``, ``diameter_um``   coarse extras
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput
from .signal import AeTrace
from .wavelet import ScaleGrid, slice_rows

INF = math.inf
DEFAULT_K_GRID = tuple(range(1, 11)) + (INF,)
FIG_K_SET = (1, 2, 4, INF)
FIG_F_SET = (100e3, 250e3, 500e3)


def _k_label(k) -> str:
    return "inf" if k == INF else str(int(k))


def parse_k(k):
    if isinstance(k, str) and k.strip().lower() in ("inf", "infinity", "max"):
        return INF
    k = float(k)
    if k == INF:
        return INF
    if k < 1 or k != int(k):
        raise ValueError(f"moment order must be a positive integer or inf, got {k}")
    return int(k)


@dataclass(frozen=True)
class FeatureKey:
    kind: str
    k: float | None = None
    f: float | None = None

    @property
    def name(self) -> str:
        if self.kind == "freq_independent":
            return f"fi_k{_k_label(self.k)}"
        if self.kind == "freq_dependent":
            return f"fd_f{int(round(self.f))}_k{_k_label(self.k)}"
        return {
            "event_count": "event_count",
            "event_duration": "event_duration_s",
            "diameter": "diameter_um",
        }[self.kind]

    @classmethod
    def parse(cls, name: str) -> "FeatureKey":
        if name.startswith("fi_k"):
            return cls("freq_independent", k=parse_k(name[4:]))
        if name.startswith("fd_f"):
            f, k = name[4:].split("_k")
            return cls("freq_dependent", k=parse_k(k), f=float(f))
        kind = {
            "event_count": "event_count",
            "event_duration_s": "event_duration",
            "diameter_um": "diameter",
        }.get(name)
        if kind is None:
            raise ValueError(f"unknown feature name {name!r}")
        return cls(kind)

    def __str__(self):
        return self.name


def moment(x, k) -> float:
    """Normalized moment ``mean(|x|^k)^(1/k)``; ``k = inf`` gives ``max|x|``."""
    return float(moments(x, (k,))[0])


def moments(x, k_grid: Sequence) -> np.ndarray:
    """``moment(x, k)`` for every k, sharing one pass of running powers."""
    a = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    if a.size == 0:
        raise EmptyInput("moment of an empty sequence")
    peak = a.max()
    out = np.zeros(len(k_grid))
    if peak == 0:
        return out
    # scaled by the peak so high orders cannot overflow
    r = a / peak
    finite = sorted({int(k) for k in k_grid if k != INF})
    means = {}
    p = r.copy()
    for k in range(1, (finite[-1] if finite else 0) + 1):
        if k in finite:
            means[k] = p.mean()
        if k < finite[-1]:
            p *= r
    for i, k in enumerate(k_grid):
        out[i] = peak if k == INF else peak * means[int(k)] ** (1.0 / int(k))
    return out


def freq_independent_keys(k_grid=DEFAULT_K_GRID) -> list[FeatureKey]:
    return [FeatureKey("freq_independent", k=k) for k in k_grid]


def freq_independent_features(window, k_grid=DEFAULT_K_GRID) -> np.ndarray:
    return moments(window, k_grid)


def freq_dependent_keys(f_set, k_set=FIG_K_SET, grid: ScaleGrid | None = None):
    """Keys for every (f, k); with a grid, f is snapped to the nearest grid row."""
    if grid is not None:
        f_set = [float(grid.frequencies[grid.nearest(f)]) for f in f_set]
    return [FeatureKey("freq_dependent", k=k, f=f) for f in f_set for k in k_set]


def freq_dependent_features(
    window, f_set=FIG_F_SET, k_set=FIG_K_SET, grid: ScaleGrid | None = None,
    use_power: bool = True,
) -> np.ndarray:
    """Moments of spectrogram rows, ordered f-major then k.

    ``use_power`` selects moments of ``|W|^2`` (default) or of ``|W|``.
    """
    x = np.asarray(window, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("empty window")
    if grid is None:
        grid = ScaleGrid.logspaced()
    rows, _ = slice_rows(x, grid, f_set)
    if not use_power:
        rows = np.sqrt(rows)
    return np.concatenate([moments(r, k_set) for r in rows])


# --- AE events ---------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdConfig:
    c_thr: float = 5.0
    hang_time: float = 50e-6
    merge_gap: float = 100e-6
    noise_scale: float | None = None  # override the robust estimate


@dataclass(frozen=True)
class EventList:
    onsets: np.ndarray  # s
    durations: np.ndarray  # s
    threshold_used: float

    def __len__(self):
        return len(self.onsets)

    def in_window(self, t_start: float, t_end: float) -> tuple[int, float]:
        """Count of events with onset in ``[t_start, t_end)`` and their duration clipped to the window."""
        sel = (self.onsets >= t_start) & (self.onsets < t_end)
        ends = np.minimum(self.onsets[sel] + self.durations[sel], t_end)
        return int(sel.sum()), float(np.sum(ends - self.onsets[sel]))


def robust_noise_scale(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(1.4826 * np.median(np.abs(x - np.median(x))))


def detect_ae_events(ae: AeTrace, cfg: ThresholdConfig = ThresholdConfig()) -> EventList:
    """Threshold crossings of ``|V|`` extended by the hang time and merged across short gaps."""
    x = np.asarray(ae.samples, dtype=np.float64)
    fs = ae.sampling_rate
    sigma = cfg.noise_scale if cfg.noise_scale is not None else robust_noise_scale(x)
    thr = cfg.c_thr * sigma
    above = np.abs(x) > thr
    if not above.any():
        return EventList(np.zeros(0), np.zeros(0), thr)
    edges = np.diff(above.astype(np.int8), prepend=0, append=0)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)  # one past the last exceeding sample
    t_on = ae.t0 + starts / fs
    t_off = ae.t0 + stops / fs + cfg.hang_time

    onsets, offsets = [t_on[0]], [t_off[0]]
    for on, off in zip(t_on[1:], t_off[1:]):
        if on - offsets[-1] < cfg.merge_gap:
            offsets[-1] = max(offsets[-1], off)
        else:
            onsets.append(on)
            offsets.append(off)
    onsets, offsets = np.array(onsets), np.array(offsets)
    return EventList(onsets, offsets - onsets, thr)


def coarse_keys(k_grid=DEFAULT_K_GRID) -> list[FeatureKey]:
    return freq_independent_keys(k_grid) + [
        FeatureKey("event_count"),
        FeatureKey("event_duration"),
        FeatureKey("diameter"),
    ]


def coarse_features(
    window, event_count: int, event_duration: float, diameter: float,
    k_grid=DEFAULT_K_GRID,
) -> np.ndarray:
    return np.concatenate(
        [moments(window, k_grid), [float(event_count), float(event_duration), float(diameter)]]
    )

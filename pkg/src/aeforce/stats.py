"""Force-drop statistics and mean AE power spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, EmptyInput, LengthMismatch, NoEvents
from .features import EventList
from .pipeline.metrics import pearson
from .signal import AeTrace, ExperimentRecord, ForceTrace


@dataclass(frozen=True)
class ForceDrop:
    t_start: float
    t_end: float
    magnitude: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


def default_drop_threshold(force: ForceTrace) -> float:
    """Three times the median absolute successive difference (zero steps ignored)."""
    d = np.abs(np.diff(force.F))
    d = d[d > 0]
    if d.size == 0:
        return math.inf
    return 3.0 * float(np.median(d))


def detect_force_drops(force: ForceTrace, eps: float | None = None) -> list[ForceDrop]:
    """Strictly decreasing runs, bridged over single upticks smaller than ``eps``.

    A run is kept when its net decrease is at least ``eps``.
    """
    if eps is None:
        eps = default_drop_threshold(force)
    if not eps > 0:
        raise ValueError("drop threshold must be positive")
    F, t = np.asarray(force.F), np.asarray(force.t)
    d = np.diff(F)
    neg = d < 0
    if not neg.any():
        return []
    edges = np.diff(neg.astype(np.int8), prepend=0, append=0)
    starts = np.flatnonzero(edges == 1)  # first sample of the run
    stops = np.flatnonzero(edges == -1)  # last sample of the run

    runs = [[int(starts[0]), int(stops[0])]]
    for a, b in zip(starts[1:], stops[1:]):
        prev_end = runs[-1][1]
        if a == prev_end + 1 and d[prev_end] < eps:
            runs[-1][1] = int(b)
        else:
            runs.append([int(a), int(b)])

    drops = []
    for a, b in runs:
        mag = float(F[a] - F[b])
        if mag >= eps:
            drops.append(ForceDrop(float(t[a]), float(t[b]), mag))
    return drops


def waiting_times(drops: list[ForceDrop]) -> np.ndarray:
    """Gaps from the end of each drop to the start of the next."""
    if len(drops) < 2:
        return np.zeros(0)
    return np.array([b.t_start - a.t_end for a, b in zip(drops[:-1], drops[1:])])


def pdf(values, bins: int = 20, log: bool = False):
    """Histogram density normalised so ``sum(density * width) == 1``.

    Returns ``(centers, density, edges)``; log bins use geometric centers.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("pdf of an empty sample")
    lo, hi = v.min(), v.max()
    if log:
        if lo <= 0:
            raise ValueError("log-spaced bins need positive values")
        if lo == hi:
            lo, hi = lo / math.sqrt(2), hi * math.sqrt(2)
        edges = np.geomspace(lo, hi, bins + 1)
        centers = np.sqrt(edges[:-1] * edges[1:])
    else:
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
    counts, _ = np.histogram(v, edges)
    density = counts / (v.size * np.diff(edges))
    return centers, density, edges


def mean_power_spectrum(
    ae: AeTrace, events: EventList, window: float = 160e-6, taper: str = "rect"
):
    """Average ``|FFT|`` of fixed-length segments centred on event onsets.

    Segments that do not fit inside the trace are skipped. Returns
    ``(frequencies_hz, magnitude)``.
    """
    n = int(round(window * ae.sampling_rate))
    if n < 2:
        raise ValueError("spectrum window shorter than two samples")
    if taper == "rect":
        w = np.ones(n)
    elif taper == "hann":
        w = np.hanning(n)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    x = np.asarray(ae.samples, dtype=np.float64)
    acc = np.zeros(n // 2 + 1)
    used = 0
    for onset in events.onsets:
        i0 = ae.index(onset) - n // 2
        if i0 < 0 or i0 + n > len(x):
            continue
        acc += np.abs(np.fft.rfft(x[i0 : i0 + n] * w))
        used += 1
    if used == 0:
        raise NoEvents("no event segment fits inside the trace")
    return np.fft.rfftfreq(n, 1.0 / ae.sampling_rate), acc / used


def _pearson_or_nan(a, b) -> float:
    try:
        return pearson(a, b)
    except (DegenerateInput, LengthMismatch):
        return math.nan


def drop_stats_summary(
    experiments: list[ExperimentRecord], eps: float | None = None, dt: float = 0.3,
    bins: int = 20,
) -> dict:
    """Per-size and pooled drop statistics.

    Returns a dict with ``drops`` (rows), ``stress`` (rows) and ``groups``
    (one entry per diameter plus ``"all"``) holding counts, correlations,
    the fraction of drops shorter than ``dt`` and magnitude/duration/waiting
    PDFs.
    """
    if not experiments:
        raise EmptyInput("no experiments")
    drop_rows, stress_rows = [], []
    per = {}
    for rec in experiments:
        drops = detect_force_drops(rec.force, eps)
        tw = waiting_times(drops)
        for dr in drops:
            drop_rows.append({
                "experiment": rec.id, "t_start": dr.t_start,
                "t_d_s": dr.duration, "dF_mN": dr.magnitude,
            })
        sigma = rec.force.F / rec.diameter**2  # mN/um^2 == GPa
        stress_rows.extend(
            {"experiment": rec.id, "t_s": float(t), "F_mN": float(f), "sigma_GPa": float(s)}
            for t, f, s in zip(rec.force.t, rec.force.F, sigma)
        )
        g = per.setdefault(f"{rec.diameter:g}", {"mag": [], "dur": [], "wait": []})
        g["mag"] += [d.magnitude for d in drops]
        g["dur"] += [d.duration for d in drops]
        g["wait"] += list(tw)

    groups = {}
    pooled = {"mag": [], "dur": [], "wait": []}
    for name, g in sorted(per.items(), key=lambda kv: float(kv[0])):
        groups[name] = _group(g, dt, bins)
        for k in pooled:
            pooled[k] += g[k]
    groups["all"] = _group(pooled, dt, bins)
    return {"drops": drop_rows, "stress": stress_rows, "groups": groups}


def _group(g: dict, dt: float, bins: int) -> dict:
    mag, dur, wait = (np.asarray(g[k], dtype=np.float64) for k in ("mag", "dur", "wait"))
    out = {
        "n_drops": int(mag.size),
        "pearson_magnitude_duration": _pearson_or_nan(mag, dur),
        "fraction_shorter_than_dt": float(np.mean(dur < dt)) if dur.size else math.nan,
        "pdf": {},
    }
    for name, v, log in (("magnitude", mag, True), ("duration", dur, True), ("waiting", wait, False)):
        if log:
            v = v[v > 0]
        if v.size:
            c, dens, _ = pdf(v, bins, log)
            out["pdf"][name] = {"centers": c.tolist(), "density": dens.tolist()}
    return out

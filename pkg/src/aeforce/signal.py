"""Paired AE / force traces: types, normalization, windowing and disk I/O.

Canonical experiment directory layout::

    meta.json   id, diameter_um, ae_sampling_rate_hz, force_sampling_rate_hz,
                t0_ae_s, t0_force_s, platen_velocity_nm_s, spring_constant_mN_um
    ae.f32      little-endian float32 raw AE samples
    force.csv   header ``t_s,F_mN``, one row per force sample
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AllZeroTrace, DataError, SpanTooShort, WindowOutOfRange

DIAMETERS_UM = (8.0, 16.0, 32.0)
AE_RATE_HZ = 2.5e6
FORCE_RATE_HZ = 200.0


@dataclass(frozen=True)
class AeTrace:
    samples: np.ndarray
    sampling_rate: float = AE_RATE_HZ
    t0: float = 0.0

    def __post_init__(self):
        if not self.sampling_rate > 0:
            raise DataError("AE sampling rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sampling_rate

    @property
    def t1(self) -> float:
        return self.t0 + self.duration

    def index(self, t: float) -> int:
        """Sample index of time ``t`` (rounded to the nearest sample)."""
        return int(round((t - self.t0) * self.sampling_rate))

    def segment(self, t_start: float, t_end: float) -> np.ndarray:
        i0 = max(self.index(t_start), 0)
        i1 = min(self.index(t_end), len(self.samples))
        return self.samples[i0:i1]


@dataclass(frozen=True)
class ForceTrace:
    t: np.ndarray
    F: np.ndarray
    sampling_rate: float = FORCE_RATE_HZ

    def __post_init__(self):
        if not self.sampling_rate > 0:
            raise DataError("force sampling rate must be positive")
        if len(self.t) != len(self.F):
            raise DataError("force time and value columns differ in length")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise DataError("force timestamps must be strictly increasing")

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t1(self) -> float:
        return float(self.t[-1])

    def at(self, t):
        """Zero-order hold: value of the last sample at or before ``t``."""
        # tolerate float noise on boundaries that coincide with samples
        i = np.searchsorted(self.t, np.asarray(t) + 1e-9, side="right") - 1
        if np.any(i < 0):
            raise WindowOutOfRange(f"time {t} precedes the force trace")
        return self.F[i]


@dataclass(frozen=True)
class ExperimentRecord:
    id: str
    diameter: float
    ae: AeTrace
    force: ForceTrace
    platen_velocity: float = 10.0
    spring_constant: float = 10.0
    unseen_size: bool = False

    def __post_init__(self):
        if self.diameter not in DIAMETERS_UM and not self.unseen_size:
            raise DataError(
                f"{self.id}: diameter {self.diameter} um is not one of {DIAMETERS_UM}"
            )
        if self.span[1] <= self.span[0]:
            raise DataError(f"{self.id}: AE and force traces do not overlap in time")

    @property
    def span(self) -> tuple[float, float]:
        """Time interval covered by both traces."""
        return max(self.ae.t0, self.force.t0), min(self.ae.t1, self.force.t1)

    def normalized(self) -> "ExperimentRecord":
        return replace(self, ae=normalize_trace(self.ae))


@dataclass(frozen=True)
class TimeWindow:
    index: int
    t_start: float
    t_end: float

    @property
    def width(self) -> float:
        return self.t_end - self.t_start


def normalize_trace(ae: AeTrace) -> AeTrace:
    """Divide the trace by the mean of its absolute values."""
    x = np.asarray(ae.samples, dtype=np.float64)
    scale = np.mean(np.abs(x)) if len(x) else 0.0
    if not scale > 0:
        raise AllZeroTrace("cannot normalize a trace whose mean |V| is zero")
    return replace(ae, samples=x / scale)


def partition_windows(span: tuple[float, float], width: float) -> list[TimeWindow]:
    """Contiguous non-overlapping windows from ``span[0]``; the remainder is dropped."""
    t0, t1 = span
    if not width > 0:
        raise ValueError("window width must be positive")
    if t1 - t0 < width * (1 - 1e-9):
        raise SpanTooShort(f"span of {t1 - t0:g} s is shorter than window {width:g} s")
    n = int(math.floor((t1 - t0) / width + 1e-9))
    return [TimeWindow(i, t0 + i * width, t0 + (i + 1) * width) for i in range(n)]


def sliding_windows(
    span: tuple[float, float], width: float, stride: float
) -> list[TimeWindow]:
    """Windows of ``width`` whose starts advance by ``stride`` (may overlap)."""
    t0, t1 = span
    if t1 - t0 < width * (1 - 1e-9):
        raise SpanTooShort(f"span of {t1 - t0:g} s is shorter than window {width:g} s")
    n = int(math.floor((t1 - t0 - width) / stride + 1e-9)) + 1
    return [TimeWindow(j, t0 + j * stride, t0 + j * stride + width) for j in range(n)]


def force_increment(force: ForceTrace, w: TimeWindow) -> float:
    """F(t_end) - F(t_start) using zero-order hold at both edges."""
    tol = 1e-9
    if w.t_start < force.t0 - tol or w.t_end > force.t1 + tol:
        raise WindowOutOfRange(
            f"window [{w.t_start:g}, {w.t_end:g}] outside force span "
            f"[{force.t0:g}, {force.t1:g}]"
        )
    return float(force.at(w.t_end) - force.at(w.t_start))


def force_increments(force: ForceTrace, windows: list[TimeWindow]) -> np.ndarray:
    if not windows:
        return np.zeros(0)
    edges = np.array([w.t_start for w in windows] + [windows[-1].t_end])
    if edges[0] < force.t0 - 1e-9 or edges[-1] > force.t1 + 1e-9:
        raise WindowOutOfRange("windows extend beyond the force trace")
    return np.diff(force.at(edges))


# --- disk format -----------------------------------------------------------


def write_experiment(rec: ExperimentRecord, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "id": rec.id,
        "diameter_um": rec.diameter,
        "ae_sampling_rate_hz": rec.ae.sampling_rate,
        "force_sampling_rate_hz": rec.force.sampling_rate,
        "t0_ae_s": rec.ae.t0,
        "t0_force_s": rec.force.t0,
        "platen_velocity_nm_s": rec.platen_velocity,
        "spring_constant_mN_um": rec.spring_constant,
    }
    if rec.unseen_size:
        meta["unseen_size"] = True
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.asarray(rec.ae.samples, dtype="<f4").tofile(d / "ae.f32")
    with open(d / "force.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "F_mN"])
        for t, f in zip(rec.force.t, rec.force.F):
            w.writerow([repr(float(t)), repr(float(f))])
    return d


def read_experiment(directory) -> ExperimentRecord:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
        ae = np.fromfile(d / "ae.f32", dtype="<f4").astype(np.float64)
        tf = np.loadtxt(d / "force.csv", delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{d}: cannot read experiment ({exc})") from exc
    if ae.size == 0:
        raise DataError(f"{d}: empty AE trace")
    if tf.shape[0] == 0:
        raise DataError(f"{d}: empty force trace")
    try:
        return ExperimentRecord(
            id=str(meta["id"]),
            diameter=float(meta["diameter_um"]),
            ae=AeTrace(ae, float(meta["ae_sampling_rate_hz"]), float(meta["t0_ae_s"])),
            force=ForceTrace(
                tf[:, 0], tf[:, 1], float(meta.get("force_sampling_rate_hz", FORCE_RATE_HZ))
            ),
            platen_velocity=float(meta.get("platen_velocity_nm_s", 10.0)),
            spring_constant=float(meta.get("spring_constant_mN_um", 10.0)),
            unseen_size=bool(meta.get("unseen_size", False)),
        )
    except KeyError as exc:
        raise DataError(f"{d}: meta.json lacks {exc}") from exc


def manifest_entry(rec: ExperimentRecord) -> dict:
    t0, t1 = rec.span
    return {
        "id": rec.id,
        "diameter_um": rec.diameter,
        "ae_samples": int(len(rec.ae.samples)),
        "ae_sampling_rate_hz": rec.ae.sampling_rate,
        "force_samples": int(len(rec.force.t)),
        "span_s": [t0, t1],
        "duration_s": t1 - t0,
        "mean_abs_ae": float(np.mean(np.abs(rec.ae.samples))),
    }


def import_raw(
    ae_path,
    force_path,
    *,
    id: str,
    diameter: float,
    ae_rate: float = AE_RATE_HZ,
    ae_dtype: str = "<f4",
    force_time_col: int = 0,
    force_value_col: int = 1,
    force_skiprows: int = 1,
    force_delimiter: str | None = ",",
    t0_ae: float = 0.0,
    unseen_size: bool = False,
) -> ExperimentRecord:
    """Build a record from loose files (the layout of published deposits varies).

    The AE file may be ``.npy``, a text column (``.txt``/``.csv``/``.dat``) or a
    raw binary blob of ``ae_dtype``. The force file is delimited text with time
    and force columns at the given positions.
    """
    ae_path, force_path = Path(ae_path), Path(force_path)
    suffix = ae_path.suffix.lower()
    if suffix == ".npy":
        ae = np.load(ae_path).astype(np.float64).ravel()
    elif suffix in (".txt", ".csv", ".dat"):
        ae = np.loadtxt(ae_path, ndmin=1).astype(np.float64).ravel()
    else:
        ae = np.fromfile(ae_path, dtype=ae_dtype).astype(np.float64)
    tf = np.loadtxt(
        force_path, delimiter=force_delimiter, skiprows=force_skiprows, ndmin=2
    )
    t, f = tf[:, force_time_col], tf[:, force_value_col]
    rate = 1.0 / np.median(np.diff(t)) if len(t) > 1 else FORCE_RATE_HZ
    return ExperimentRecord(
        id=id,
        diameter=float(diameter),
        ae=AeTrace(ae, ae_rate, t0_ae),
        force=ForceTrace(t, f, float(rate)),
        unseen_size=unseen_size,
    )

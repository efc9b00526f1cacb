"""Synthetic compression experiments with known force drops and AE bursts.

Force is a linear loading ramp minus instantaneous drops; every drop emits
one AE burst (a 250 kHz segment followed by a damped 100 kHz tail) whose
amplitude scales as ``magnitude**gamma``, on top of band-limited Gaussian
noise centred at 500 kHz. The noise standard deviation is the peak amplitude
of a burst from a median-magnitude drop divided by ``snr``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import ConfigInvalid
from .features import EventList
from .signal import (
    AeTrace,
    ExperimentRecord,
    ForceTrace,
    force_increments,
    partition_windows,
    write_experiment,
)


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 600.0
    ae_rate_hz: float = 2.5e6
    force_rate_hz: float = 200.0
    diameter_um: float = 8.0
    id: str = "synth"
    initial_force_mN: float = 1.0
    loading_slope_mN_s: float = 0.01
    drop_rate_hz: float = 0.2
    schedule: str = "poisson"  # or "periodic"
    magnitude_exponent: float = 1.5
    magnitude_min_mN: float = 0.005
    magnitude_max_mN: float = 0.5
    carrier_hz: float = 250e3
    carrier_duration_s: float = 40e-6
    tail_hz: float = 100e3
    tail_decay_s: float = 150e-6
    burst_amplitude: float = 1.0
    gamma: float = 1.0
    noise_center_hz: float = 500e3
    noise_bandwidth_hz: float = 200e3
    snr: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        nyq = self.ae_rate_hz / 2
        checks = [
            (self.duration_s > 0, "duration must be positive"),
            (self.ae_rate_hz > 0 and self.force_rate_hz > 0, "rates must be positive"),
            (self.drop_rate_hz >= 0, "drop rate must be non-negative"),
            (self.snr > 0, "snr must be positive"),
            (self.schedule in ("poisson", "periodic"), f"unknown schedule {self.schedule!r}"),
            (0 < self.magnitude_min_mN <= self.magnitude_max_mN, "bad magnitude range"),
            (self.carrier_duration_s > 0 and self.tail_decay_s > 0, "burst times must be positive"),
            (max(self.carrier_hz, self.tail_hz) < nyq, "burst carriers exceed Nyquist"),
            (
                0 < self.noise_center_hz - self.noise_bandwidth_hz / 2
                and self.noise_center_hz + self.noise_bandwidth_hz / 2 < nyq,
                "noise band must lie inside (0, Nyquist)",
            ),
            (0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigInvalid(msg)

    def time_scaled(self, factor: float) -> "SynthConfig":
        """Slow every AE time scale by ``factor`` (rate, carriers, durations).

        Keeps burst anatomy in samples while making long experiments cheap.
        """
        return replace(
            self,
            ae_rate_hz=self.ae_rate_hz / factor,
            carrier_hz=self.carrier_hz / factor,
            tail_hz=self.tail_hz / factor,
            noise_center_hz=self.noise_center_hz / factor,
            noise_bandwidth_hz=self.noise_bandwidth_hz / factor,
            carrier_duration_s=self.carrier_duration_s * factor,
            tail_decay_s=self.tail_decay_s * factor,
        )


@dataclass
class SynthTruth:
    drop_times: np.ndarray
    magnitudes: np.ndarray
    events: EventList
    window_dt: float
    window_starts: np.ndarray
    window_dF: np.ndarray


def sample_magnitudes(cfg: SynthConfig, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of the truncated power law ``p(m) ~ m**-exponent``."""
    lo, hi, tau = cfg.magnitude_min_mN, cfg.magnitude_max_mN, cfg.magnitude_exponent
    if lo == hi:
        return np.full_like(u, lo)
    if abs(tau - 1) < 1e-12:
        return lo * (hi / lo) ** u
    e = 1 - tau
    return (lo**e + u * (hi**e - lo**e)) ** (1 / e)


def magnitude_cdf(cfg: SynthConfig, m) -> np.ndarray:
    lo, hi, tau = cfg.magnitude_min_mN, cfg.magnitude_max_mN, cfg.magnitude_exponent
    m = np.clip(np.asarray(m, dtype=np.float64), lo, hi)
    if abs(tau - 1) < 1e-12:
        return np.log(m / lo) / np.log(hi / lo)
    e = 1 - tau
    return (m**e - lo**e) / (hi**e - lo**e)


def _streams(seed: int):
    schedule, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(schedule), np.random.default_rng(noise)


def _schedule(cfg: SynthConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    if cfg.drop_rate_hz == 0:
        return np.zeros(0), np.zeros(0)
    if cfg.schedule == "periodic":
        period = 1.0 / cfg.drop_rate_hz
        times = np.arange(period / 2, cfg.duration_s, period)
    else:
        n_max = int(cfg.duration_s * cfg.drop_rate_hz * 2 + 50)
        times = np.cumsum(rng.exponential(1.0 / cfg.drop_rate_hz, n_max))
        while times[-1] < cfg.duration_s:
            more = np.cumsum(rng.exponential(1.0 / cfg.drop_rate_hz, n_max)) + times[-1]
            times = np.concatenate([times, more])
        times = times[times < cfg.duration_s]
    mags = sample_magnitudes(cfg, rng.random(len(times)))
    return times, mags


def burst_waveform(cfg: SynthConfig, amplitude: float) -> np.ndarray:
    fs = cfg.ae_rate_hz
    n1 = max(1, int(round(cfg.carrier_duration_s * fs)))
    n2 = max(1, int(round(4 * cfg.tail_decay_s * fs)))
    t1 = np.arange(n1) / fs
    t2 = np.arange(n2) / fs
    head = np.sin(2 * np.pi * cfg.carrier_hz * t1)
    tail = np.exp(-t2 / cfg.tail_decay_s) * np.sin(2 * np.pi * cfg.tail_hz * t2)
    return amplitude * np.concatenate([head, tail])


def burst_amplitude(cfg: SynthConfig, magnitude) -> np.ndarray:
    return cfg.burst_amplitude * (np.asarray(magnitude) / cfg.magnitude_min_mN) ** cfg.gamma


def _noise(cfg: SynthConfig, n: int, rng) -> np.ndarray:
    white = rng.standard_normal(n)
    if not math.isfinite(cfg.snr):
        return np.zeros(n)
    lo = cfg.noise_center_hz - cfg.noise_bandwidth_hz / 2
    hi = cfg.noise_center_hz + cfg.noise_bandwidth_hz / 2
    sos = sps.butter(4, [lo, hi], btype="bandpass", fs=cfg.ae_rate_hz, output="sos")
    band = sps.sosfilt(sos, white)
    median = sample_magnitudes(cfg, np.array([0.5]))[0]
    band *= (float(burst_amplitude(cfg, median)) / cfg.snr) / band.std()
    return band


def generate_experiment(
    cfg: SynthConfig = SynthConfig(), window_dt: float = 0.3
) -> tuple[ExperimentRecord, SynthTruth]:
    cfg.validate()
    sched_rng, noise_rng = _streams(cfg.seed)
    times, mags = _schedule(cfg, sched_rng)

    n_force = int(math.floor(cfg.duration_s * cfg.force_rate_hz + 1e-9)) + 1
    tf = np.arange(n_force) / cfg.force_rate_hz
    dropped = np.concatenate([[0.0], np.cumsum(mags)])
    # drops at t_i show from the first force sample at or after t_i
    n_before = np.searchsorted(times, tf, side="right")
    F = cfg.initial_force_mN + cfg.loading_slope_mN_s * tf - dropped[n_before]

    n_ae = int(round(cfg.duration_s * cfg.ae_rate_hz))
    ae = _noise(cfg, n_ae, noise_rng)
    durations = np.empty(len(times))
    for i, (t, m) in enumerate(zip(times, mags)):
        wave = burst_waveform(cfg, float(burst_amplitude(cfg, m)))
        i0 = int(round(t * cfg.ae_rate_hz))
        i1 = min(i0 + len(wave), n_ae)
        ae[i0:i1] += wave[: i1 - i0]
        durations[i] = len(wave) / cfg.ae_rate_hz

    rec = ExperimentRecord(
        id=cfg.id,
        diameter=cfg.diameter_um,
        ae=AeTrace(ae.astype(np.float32).astype(np.float64), cfg.ae_rate_hz, 0.0),
        force=ForceTrace(tf, F, cfg.force_rate_hz),
        unseen_size=cfg.diameter_um not in (8.0, 16.0, 32.0),
    )
    windows = partition_windows(rec.span, window_dt)
    truth = SynthTruth(
        drop_times=times,
        magnitudes=mags,
        events=EventList(times, durations, math.nan),
        window_dt=window_dt,
        window_starts=np.array([w.t_start for w in windows]),
        window_dF=force_increments(rec.force, windows),
    )
    return rec, truth


def snr_sweep(base: SynthConfig, snrs) -> list[tuple[ExperimentRecord, SynthTruth]]:
    """Same drop schedule (shared seed) at each noise level in ``snrs``."""
    snrs = list(snrs)
    if not snrs:
        raise ConfigInvalid("empty snr list")
    return [generate_experiment(replace(base, snr=float(s))) for s in snrs]


def write_truth(truth: SynthTruth, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "t_s", "value_mN"])
        for t, m in zip(truth.drop_times, truth.magnitudes):
            w.writerow(["drop", repr(float(t)), repr(float(m))])
        for t, d in zip(truth.window_starts, truth.window_dF):
            w.writerow(["window_dF", repr(float(t)), repr(float(d))])


def write_synthetic(cfg: SynthConfig, directory, window_dt: float = 0.3) -> Path:
    rec, truth = generate_experiment(cfg, window_dt)
    d = write_experiment(rec, directory)
    write_truth(truth, d / "truth.csv")
    (d / "synth_config.json").write_text(
        json.dumps(asdict(cfg), indent=2, default=str) + "\n"
    )
    return d

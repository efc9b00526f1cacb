"""Continuous wavelet transform with the third-order Gaussian (gaus3) wavelet.

Times, positions and scales are measured in samples, so the Riemann sum of
the transform uses a unit step::

    W(a, b) = a**-0.5 * sum_n x[n] * psi((n - b) / a)

and a scale ``a`` maps to ``f = f_c * fs / a`` Hz.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, signal as sps

from .errors import EmptySignal, FrequencyOutOfBand

SUPPORT = 8.0  # psi truncated to [-8, 8]; |psi| < 1e-12 beyond


def _energy_constant() -> float:
    # int t^(2n) exp(-2 t^2) dt = Gamma(n + 1/2) / 2^(n + 1/2)
    moment = lambda n: math.gamma(n + 0.5) / 2 ** (n + 0.5)
    # |psi|^2 = 16 C^2 (4 t^6 - 12 t^4 + 9 t^2) exp(-2 t^2)
    unit = 16 * (4 * moment(3) - 12 * moment(2) + 9 * moment(1))
    return 1.0 / math.sqrt(unit)


C_GAUS3 = _energy_constant()


def gaus3(t):
    """Third derivative of ``C exp(-t^2)``, normalized to unit energy."""
    t = np.asarray(t, dtype=np.float64)
    return -4.0 * C_GAUS3 * t * (2.0 * t * t - 3.0) * np.exp(-t * t)


def _dft_magnitude(f: float, t: np.ndarray, psi: np.ndarray, dt: float) -> float:
    return abs(np.sum(psi * np.exp(-2j * np.pi * f * t)) * dt)


def _spectral_peak(weight_power: float) -> float:
    """Maximize ``f**weight_power * |FT psi(f)|**2`` over f.

    The FFT of densely sampled psi gives the starting bracket, a bounded scalar
    search on the direct DFT refines it.
    """
    dt = 1.0 / 64
    t = np.arange(-SUPPORT, SUPPORT + dt / 2, dt)
    psi = gaus3(t)
    nfft = 1 << 18
    spec = np.abs(np.fft.rfft(psi, nfft)) * dt
    freqs = np.fft.rfftfreq(nfft, dt)
    score = freqs**weight_power * spec**2
    i = int(np.argmax(score))
    lo, hi = freqs[max(i - 1, 1)], freqs[i + 1]
    res = optimize.minimize_scalar(
        lambda f: -(f**weight_power) * _dft_magnitude(f, t, psi, dt) ** 2,
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x)


@functools.lru_cache(maxsize=None)
def fourier_peak_frequency() -> float:
    """Frequency (cycles per unit t) where ``|FT psi|`` peaks; sqrt(6)/2pi analytically."""
    return _spectral_peak(0.0)


@functools.lru_cache(maxsize=None)
def central_frequency() -> float:
    """Characteristic frequency used to map scales to frequencies.

    With the ``a**-0.5`` weighting the power of a pure tone of frequency f0
    across scales is ``a |FT psi(a f0)|^2``, which peaks where
    ``u |FT psi(u)|^2`` does (sqrt(7)/2pi analytically). Using that peak keeps
    tone energy in the grid row labelled with the tone's frequency.
    """
    return _spectral_peak(1.0)


@dataclass(frozen=True)
class ScaleGrid:
    frequencies: np.ndarray  # Hz, strictly decreasing
    sampling_rate: float

    @property
    def scales(self) -> np.ndarray:
        return central_frequency() * self.sampling_rate / self.frequencies

    @property
    def count(self) -> int:
        return len(self.frequencies)

    @property
    def f_min(self) -> float:
        return float(self.frequencies[-1])

    @property
    def f_max(self) -> float:
        return float(self.frequencies[0])

    @classmethod
    def logspaced(
        cls,
        f_min: float = 50e3,
        f_max: float = 800e3,
        n: int = 64,
        sampling_rate: float = 2.5e6,
    ) -> "ScaleGrid":
        return cls(np.geomspace(f_max, f_min, n), float(sampling_rate))

    def nearest(self, f: float) -> int:
        """Row index of the grid frequency nearest ``f``; ties go to the lower frequency."""
        rtol = 1e-9
        if f < self.f_min * (1 - rtol) or f > self.f_max * (1 + rtol):
            raise FrequencyOutOfBand(
                f"{f:g} Hz outside grid band [{self.f_min:g}, {self.f_max:g}] Hz"
            )
        d = np.abs(self.frequencies - f)
        best = np.flatnonzero(d == d.min())
        # frequencies decrease with index, so the last tied row is the lowest
        return int(best[-1])

    def subgrid(self, rows) -> "ScaleGrid":
        return ScaleGrid(self.frequencies[np.asarray(rows)], self.sampling_rate)


@dataclass(frozen=True)
class Spectrogram:
    power: np.ndarray  # [n_scales, n_times], |W|^2
    grid: ScaleGrid

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.power.shape[1]) / self.grid.sampling_rate


def kernel(scale: float) -> np.ndarray:
    """Sampled, weighted wavelet ``psi(m / a) / sqrt(a)`` for |m| <= 8a."""
    m_max = int(math.ceil(SUPPORT * scale))
    m = np.arange(-m_max, m_max + 1, dtype=np.float64)
    return gaus3(m / scale) / math.sqrt(scale)


def _transform_row(x: np.ndarray, scale: float, method: str) -> np.ndarray:
    k = kernel(scale)
    half = len(k) // 2
    if method == "direct":
        return np.correlate(np.pad(x, half), k, mode="valid")
    # correlation == convolution with the reversed kernel
    return sps.oaconvolve(x, k[::-1], mode="same")


def cwt_coefficients(x, grid: ScaleGrid, method: str = "fft") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("cannot transform an empty signal")
    if method not in ("fft", "direct"):
        raise ValueError(f"unknown method {method!r}")
    return np.stack([_transform_row(x, a, method) for a in grid.scales])


def cwt(x, grid: ScaleGrid, method: str = "fft") -> Spectrogram:
    """Power spectrogram ``|W(a, b)|^2`` on every grid scale and sample position.

    ``method="fft"`` uses overlap-add convolution, ``"direct"`` the explicit sum.
    Edges are zero-padded by half the kernel support.
    """
    W = cwt_coefficients(x, grid, method)
    return Spectrogram(W * W, grid)


def spectrogram_slice(spec: Spectrogram, f: float) -> tuple[np.ndarray, float]:
    """Power row nearest ``f`` together with the actual grid frequency."""
    row = spec.grid.nearest(f)
    return spec.power[row], float(spec.grid.frequencies[row])


def slice_rows(x, grid: ScaleGrid, freqs) -> tuple[np.ndarray, np.ndarray]:
    """Power rows for ``freqs`` without transforming the whole grid.

    Returns ``(power[len(freqs), n], actual_frequencies)``.
    """
    rows = [grid.nearest(f) for f in freqs]
    sub = grid.subgrid(rows)
    return cwt(x, sub).power, sub.frequencies


# --- spectrogram cache file ------------------------------------------------

_HEADER = struct.Struct("<iiddd")  # n_scales, n_times, f_min, f_max, dt


def write_spectrogram(spec: Spectrogram, path) -> None:
    n_scales, n_times = spec.power.shape
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                n_scales, n_times, spec.grid.f_min, spec.grid.f_max,
                1.0 / spec.grid.sampling_rate,
            )
        )
        fh.write(np.ascontiguousarray(spec.power, dtype="<f4").tobytes())


def read_spectrogram(path) -> Spectrogram:
    """Inverse of :func:`write_spectrogram`; the grid is rebuilt as log-spaced."""
    raw = Path(path).read_bytes()
    n_scales, n_times, f_min, f_max, dt = _HEADER.unpack_from(raw)
    power = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=n_scales * n_times)
    grid = ScaleGrid.logspaced(f_min, f_max, n_scales, 1.0 / dt)
    return Spectrogram(power.reshape(n_scales, n_times).astype(np.float64), grid)

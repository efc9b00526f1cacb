import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from aeforce.errors import EmptySignal, FrequencyOutOfBand
from aeforce.wavelet import (
    ScaleGrid,
    Spectrogram,
    central_frequency,
    cwt,
    cwt_coefficients,
    fourier_peak_frequency,
    gaus3,
    kernel,
    read_spectrogram,
    slice_rows,
    spectrogram_slice,
    write_spectrogram,
)

FS = 2.5e6


def _tone(f0, n=400, phase=0.3):
    return np.sin(2 * np.pi * f0 * np.arange(n) / FS + phase)


class TestGaus3:
    def test_roots_and_oddness(self):
        assert gaus3(0.0) == 0.0
        assert abs(gaus3(math.sqrt(1.5))) < 1e-15
        assert abs(gaus3(-math.sqrt(1.5))) < 1e-15
        for t in (0.5, 1.0, 2.0):
            assert gaus3(-t) == -gaus3(t)

    def test_unit_energy_and_zero_mean(self):
        energy, _ = integrate.quad(lambda t: gaus3(t) ** 2, -np.inf, np.inf, epsabs=1e-14)
        assert energy == pytest.approx(1.0, abs=1e-9)
        # odd integrand: the two halves cancel
        right, _ = integrate.quad(gaus3, 0, np.inf, epsabs=1e-14)
        left, _ = integrate.quad(gaus3, -np.inf, 0, epsabs=1e-14)
        assert abs(left + right) < 1e-9

    def test_negligible_outside_support(self):
        assert np.max(np.abs(gaus3(np.linspace(8, 20, 100)))) < 1e-12

    def test_matches_third_derivative(self):
        # d^3/dt^3 exp(-t^2) = -4 t (2 t^2 - 3) exp(-t^2)
        t = np.linspace(-3, 3, 13)
        h = 1e-3
        g = lambda s: np.exp(-s * s)
        d3 = (g(t + 2 * h) - 2 * g(t + h) + 2 * g(t - h) - g(t - 2 * h)) / (2 * h**3)
        from aeforce.wavelet import C_GAUS3
        np.testing.assert_allclose(gaus3(t), C_GAUS3 * d3, atol=1e-5)


class TestCentralFrequency:
    def test_fourier_peak(self):
        assert fourier_peak_frequency() == pytest.approx(math.sqrt(6) / (2 * math.pi), rel=1e-8)

    def test_scale_response_peak(self):
        assert central_frequency() == pytest.approx(math.sqrt(7) / (2 * math.pi), rel=1e-8)

    def test_tone_peaks_at_predicted_scale(self):
        # scan many scales around the prediction a = f_c * fs / f0
        f0 = 250e3
        freqs = np.geomspace(400e3, 150e3, 401)
        grid = ScaleGrid(freqs, FS)
        p = cwt(_tone(f0, 4000), grid).power[:, 1000:3000].mean(axis=1)
        assert freqs[np.argmax(p)] == pytest.approx(f0, rel=0.005)


class TestGrid:
    def test_logspaced(self):
        g = ScaleGrid.logspaced()
        assert g.count == 64
        assert g.frequencies[0] == pytest.approx(800e3) and g.frequencies[-1] == pytest.approx(50e3)
        assert np.all(np.diff(g.frequencies) < 0)
        assert np.all(np.diff(g.scales) > 0)
        ratio = g.frequencies[:-1] / g.frequencies[1:]
        np.testing.assert_allclose(ratio, ratio[0])

    def test_nearest_exact_and_between(self):
        g = ScaleGrid(np.array([400e3, 200e3, 100e3]), FS)
        assert g.nearest(200e3) == 1
        assert g.nearest(160e3) == 1
        assert g.nearest(140e3) == 2
        assert g.nearest(150e3) == 2  # equidistant: lower frequency wins

    def test_out_of_band(self):
        g = ScaleGrid.logspaced()
        with pytest.raises(FrequencyOutOfBand):
            g.nearest(1e6)
        with pytest.raises(FrequencyOutOfBand):
            g.nearest(10e3)


class TestCwt:
    grid = ScaleGrid.logspaced()

    def test_empty(self):
        with pytest.raises(EmptySignal):
            cwt(np.zeros(0), self.grid)

    def test_zero_signal(self):
        spec = cwt(np.zeros(300), self.grid)
        assert spec.power.shape == (64, 300)
        assert not spec.power.any()

    def test_linearity(self, rng):
        x = rng.normal(size=500)
        np.testing.assert_allclose(
            cwt_coefficients(3 * x, self.grid), 3 * cwt_coefficients(x, self.grid), rtol=1e-12, atol=1e-12
        )

    def test_direct_sum_oracle(self, rng):
        # explicit sum W(a,b) = a^-1/2 sum_n x[n] psi((n-b)/a) at 5 scales
        x = rng.normal(size=300)
        rows = [0, 15, 31, 47, 63]
        sub = self.grid.subgrid(rows)
        W = cwt_coefficients(x, sub, method="fft")
        n = np.arange(x.size)
        for r, a in enumerate(sub.scales):
            for b in (0, 57, 150, 299):
                ref = np.sum(x * gaus3((n - b) / a)) / math.sqrt(a)
                assert W[r, b] == pytest.approx(ref, rel=1e-9, abs=1e-9)

    def test_fft_matches_direct(self, rng):
        for _ in range(10):
            x = rng.normal(size=int(rng.integers(50, 800)))
            a = cwt_coefficients(x, self.grid, "fft")
            b = cwt_coefficients(x, self.grid, "direct")
            assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(b))

    @pytest.mark.parametrize("f0", [100e3, 250e3, 500e3])
    def test_localization(self, f0):
        p = cwt(_tone(f0), self.grid).power.mean(axis=1)
        assert abs(int(np.argmax(p)) - self.grid.nearest(f0)) <= 1

    @given(st.integers(0, 2**32 - 1), st.integers(1, 200))
    def test_shift_covariance(self, seed, shift):
        x = np.random.default_rng(seed).normal(size=2048)
        g = ScaleGrid.logspaced(200e3, 800e3, 8, FS)
        a = cwt(x, g).power
        b = cwt(np.roll(x, shift), g).power
        edge = len(kernel(g.scales.max())) // 2 + 1
        inner = slice(edge + shift, 2048 - edge)
        np.testing.assert_allclose(b[:, inner], a[:, edge:2048 - edge - shift], rtol=1e-6, atol=1e-12)


class TestSlices:
    grid = ScaleGrid.logspaced()

    def test_slice_is_row(self, rng):
        spec = cwt(rng.normal(size=200), self.grid)
        f = float(self.grid.frequencies[10])
        row, actual = spectrogram_slice(spec, f)
        assert actual == f
        np.testing.assert_array_equal(row, spec.power[10])

    def test_slice_rows_match_full(self, rng):
        x = rng.normal(size=400)
        full = cwt(x, self.grid)
        rows, freqs = slice_rows(x, self.grid, [100e3, 250e3, 500e3])
        for r, f in zip(rows, freqs):
            np.testing.assert_allclose(r, spectrogram_slice(full, f)[0], rtol=1e-12)

    def test_cache_roundtrip(self, tmp_path, rng):
        spec = cwt(rng.normal(size=100), self.grid)
        write_spectrogram(spec, tmp_path / "s.bin")
        raw = (tmp_path / "s.bin").read_bytes()
        assert len(raw) == 4 + 4 + 3 * 8 + 64 * 100 * 4
        back = read_spectrogram(tmp_path / "s.bin")
        np.testing.assert_allclose(back.power, spec.power, rtol=1e-6)
        np.testing.assert_allclose(back.grid.frequencies, self.grid.frequencies, rtol=1e-12)

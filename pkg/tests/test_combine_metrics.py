import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeforce.errors import DegenerateInput, DegenerateTarget, LengthMismatch
from aeforce.pipeline.combine import combine
from aeforce.pipeline.metrics import pearson, r2


class TestR2:
    def test_examples(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r2(y, y) == 1.0
        assert r2(y, np.full(3, 2.0)) == 0.0
        assert r2(y, [1.0, 2.0, 4.0]) == 0.5

    def test_degenerate(self):
        with pytest.raises(DegenerateTarget):
            r2([2.0, 2.0], [1.0, 3.0])
        with pytest.raises(LengthMismatch):
            r2([1.0, 2.0], [1.0])

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariance(self, seed, a, b):
        r = np.random.default_rng(seed)
        y, yp = r.normal(size=30), r.normal(size=30)
        assert r2(a * y + b, a * yp + b) == pytest.approx(r2(y, yp), rel=1e-9, abs=1e-9)


class TestPearson:
    def test_examples(self):
        x = np.array([1.0, 2.0, 3.0])
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)
        assert pearson(x, [1.0, 3.0, 2.0]) == pytest.approx(0.5, abs=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateInput):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    @given(st.integers(0, 2**32 - 1))
    def test_bounded(self, seed):
        r = np.random.default_rng(seed)
        assert -1.0 <= pearson(r.normal(size=5), r.normal(size=5)) <= 1.0


class TestCombine:
    def test_fixed_point(self):
        t = np.linspace(0, 100, 1001)
        f = np.sin(t / 7)
        anchors = np.sin(np.array([50.0, 100.0]) / 7)
        _, out, deltas = combine(t, f, anchors, 50.0)
        np.testing.assert_allclose(deltas, 0, atol=1e-15)
        np.testing.assert_allclose(out, f, atol=1e-12)

    def test_single_window(self):
        t = np.linspace(0, 50, 101)
        f = np.cos(t)
        f -= f[-1]  # f(dT) = 0
        _, out, deltas = combine(t, f, [1.0], 50.0)
        np.testing.assert_allclose(out, f + t / 50.0, atol=1e-12)
        assert deltas[0] == pytest.approx(1 / 50)

    def test_two_windows_hand_recurrence(self):
        dT = 10.0
        t = np.linspace(0, 20, 41)
        _, out, deltas = combine(t, np.zeros_like(t), [1.0, 1.0], dT)
        # delta_1 = 1/dT; f_1(2dT) = 2; delta_2 = (1 - 2)/dT
        assert deltas[0] == pytest.approx(0.1) and deltas[1] == pytest.approx(-0.1)
        first = t <= dT
        np.testing.assert_allclose(out[first], t[first] / dT, atol=1e-15)
        np.testing.assert_allclose(out[~first], 1.0, atol=1e-12)
        assert out[-1] == pytest.approx(1.0, abs=1e-15)

    def test_anchor_times_inserted(self):
        t = np.array([0.0, 0.3, 0.6, 0.9, 1.2])
        t_out, out, _ = combine(t, t.copy(), [2.0], 1.0)
        assert 1.0 in t_out
        assert out[list(t_out).index(1.0)] == pytest.approx(2.0, abs=1e-12)

    def test_length_mismatch(self):
        t = np.linspace(0, 60, 10)
        with pytest.raises(LengthMismatch):
            combine(t, np.zeros(10), [1.0, 2.0], 50.0)
        with pytest.raises(LengthMismatch):
            combine(t, np.zeros(9), [1.0], 50.0)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 20))
    def test_exact_and_affine_per_window(self, seed, n_c):
        r = np.random.default_rng(seed)
        dT = 50.0
        t = np.arange(int(n_c * dT / 0.3) + 2) * 0.3
        f = np.cumsum(r.normal(size=t.size))
        F = r.normal(scale=20, size=n_c)
        t_out, out, _ = combine(t, f, F, dT)
        for n in range(1, n_c + 1):
            i = np.flatnonzero(t_out == n * dT)
            assert i.size == 1
            assert abs(out[i[0]] - F[n - 1]) <= 1e-9 * max(1.0, abs(F[n - 1]))
        f_at = np.interp(t_out, t, f)
        for n in range(n_c):
            sel = (t_out > n * dT) & (t_out <= (n + 1) * dT)
            d_before = np.diff(f_at[sel], 2)
            d_after = np.diff(out[sel], 2)
            # equal spacing within a window except around inserted anchors
            tt = t_out[sel]
            even = np.isclose(np.diff(tt, 2), 0, atol=1e-9)
            np.testing.assert_allclose(d_after[even], d_before[even], atol=1e-9)

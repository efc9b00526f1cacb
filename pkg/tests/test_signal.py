import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeforce.errors import AllZeroTrace, DataError, SpanTooShort, WindowOutOfRange
from aeforce.signal import (
    AeTrace,
    ExperimentRecord,
    ForceTrace,
    force_increment,
    force_increments,
    import_raw,
    normalize_trace,
    partition_windows,
    read_experiment,
    sliding_windows,
    write_experiment,
)


def _ae(x, fs=2.5e6, t0=0.0):
    return AeTrace(np.asarray(x, dtype=np.float64), fs, t0)


class TestNormalize:
    def test_constant(self):
        np.testing.assert_allclose(normalize_trace(_ae([3.0, 3.0, 3.0])).samples, [1, 1, 1])

    def test_already_unit(self):
        x = [1.0, -1.0, 1.0, -1.0]
        np.testing.assert_array_equal(normalize_trace(_ae(x)).samples, x)

    def test_arithmetic(self):
        out = normalize_trace(_ae([2.0, -4.0, 6.0, -8.0]))
        np.testing.assert_allclose(out.samples, [0.4, -0.8, 1.2, -1.6], rtol=1e-15)

    def test_all_zero(self):
        with pytest.raises(AllZeroTrace):
            normalize_trace(_ae(np.zeros(5)))

    def test_keeps_rate_and_origin(self):
        out = normalize_trace(_ae([1.0, 2.0], fs=1e3, t0=4.0))
        assert out.sampling_rate == 1e3 and out.t0 == 4.0

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=200))
    def test_unit_mean_and_idempotent(self, xs):
        x = np.array(xs)
        if np.mean(np.abs(x)) < 1e-300:
            return
        once = normalize_trace(_ae(x))
        assert np.mean(np.abs(once.samples)) == pytest.approx(1.0, rel=1e-9)
        twice = normalize_trace(once)
        np.testing.assert_allclose(twice.samples, once.samples, rtol=1e-12)


class TestWindows:
    def test_exact_division(self):
        w = partition_windows((0.0, 3.0), 0.3)
        assert len(w) == 10
        assert w[-1].t_end == pytest.approx(3.0)

    def test_remainder_dropped(self):
        w = partition_windows((0.0, 3.05), 0.3)
        assert len(w) == 10
        assert w[-1].t_end == pytest.approx(3.0)

    def test_too_short(self):
        with pytest.raises(SpanTooShort):
            partition_windows((0.0, 0.2), 0.3)

    @given(st.floats(0, 100), st.floats(0.01, 10), st.floats(1, 50))
    def test_tiling(self, t0, width, ratio):
        w = partition_windows((t0, t0 + width * ratio), width)
        assert len(w) >= 1
        assert w[0].t_start == t0
        for a, b in zip(w[:-1], w[1:]):
            assert a.t_end == b.t_start
            assert b.index == a.index + 1
        for win in w:
            assert win.t_end - win.t_start == pytest.approx(width, rel=1e-9)
        assert w[-1].t_end <= t0 + width * ratio + 1e-9 * max(1.0, t0 + width * ratio)

    def test_sliding_count(self):
        w = sliding_windows((0.0, 1000.0), 50.0, 5.0)
        assert len(w) == 191
        assert w[-1].t_end == pytest.approx(1000.0)
        assert w[1].t_start == pytest.approx(5.0)


class TestForceIncrement:
    def _ramp(self, slope=2.0, T=5.0):
        t = np.arange(0, T + 1e-9, 0.005)
        return ForceTrace(t, slope * t)

    def test_constant(self):
        t = np.arange(0, 3.0001, 0.005)
        f = ForceTrace(t, np.full_like(t, 4.0))
        assert all(v == 0 for v in force_increments(f, partition_windows((0, 3), 0.3)))

    def test_ramp(self):
        f = self._ramp()
        w = partition_windows((0.0, 3.0), 0.3)
        np.testing.assert_allclose(force_increments(f, w), 0.6, rtol=1e-9)

    def test_zero_order_hold(self):
        f = ForceTrace(np.array([0.0, 1.0, 2.0]), np.array([0.0, 10.0, 20.0]))
        w = partition_windows((0.5, 1.7), 1.2)[0]
        # F(1.7) holds the value at t=1, F(0.5) holds the value at t=0
        assert force_increment(f, w) == 10.0

    def test_out_of_range(self):
        f = self._ramp(T=1.0)
        w = partition_windows((0.9, 1.5), 0.6)[0]
        with pytest.raises(WindowOutOfRange):
            force_increment(f, w)

    @given(st.integers(0, 2**32 - 1))
    def test_telescoping(self, seed):
        r = np.random.default_rng(seed)
        t = np.cumsum(r.uniform(0.001, 0.01, 2000))
        f = ForceTrace(t, np.cumsum(r.normal(size=t.size)))
        w = partition_windows((t[0], t[-1]), 0.3)
        total = f.at(w[-1].t_end) - f.at(w[0].t_start)
        assert np.sum(force_increments(f, w)) == pytest.approx(total, abs=1e-9 * max(1, abs(total)) + 1e-9)


class TestRecord:
    def _rec(self, **kw):
        ae = _ae(np.sin(np.arange(2500) * 0.3), fs=2500.0)
        t = np.arange(0, 1.0001, 0.005)
        return ExperimentRecord(id="e1", diameter=8.0, ae=ae, force=ForceTrace(t, t), **kw)

    def test_diameter_checked(self):
        with pytest.raises(DataError):
            self._rec().__class__(id="x", diameter=12.0, ae=self._rec().ae, force=self._rec().force)
        rec = ExperimentRecord(id="x", diameter=12.0, ae=self._rec().ae, force=self._rec().force, unseen_size=True)
        assert rec.diameter == 12.0

    def test_non_increasing_force_time(self):
        with pytest.raises(DataError):
            ForceTrace(np.array([0.0, 1.0, 1.0]), np.zeros(3))

    def test_roundtrip(self, tmp_path):
        rec = self._rec()
        write_experiment(rec, tmp_path / "e1")
        meta = json.loads((tmp_path / "e1" / "meta.json").read_text())
        for key in ("id", "diameter_um", "ae_sampling_rate_hz", "force_sampling_rate_hz",
                    "t0_ae_s", "t0_force_s", "platen_velocity_nm_s", "spring_constant_mN_um"):
            assert key in meta
        assert (tmp_path / "e1" / "force.csv").read_text().startswith("t_s,F_mN\n")
        back = read_experiment(tmp_path / "e1")
        np.testing.assert_array_equal(back.ae.samples, rec.ae.samples.astype("<f4"))
        np.testing.assert_array_equal(back.force.t, rec.force.t)
        np.testing.assert_array_equal(back.force.F, rec.force.F)
        assert back.id == "e1" and back.diameter == 8.0

    def test_import_raw(self, tmp_path):
        x = np.arange(1, 101, dtype="<f4")
        x.tofile(tmp_path / "ae.bin")
        np.savetxt(tmp_path / "f.csv", np.c_[np.linspace(0, 1e-3 * 99 / 100, 5), np.arange(5.0)],
                   delimiter=",", header="t,F", comments="")
        rec = import_raw(tmp_path / "ae.bin", tmp_path / "f.csv", id="r", diameter=16, ae_rate=1e5)
        assert rec.ae.samples.size == 100 and rec.force.F[-1] == 4.0

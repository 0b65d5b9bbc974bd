import numpy as np
import pytest

from wearid.errors import InsufficientData, InvalidConfig, ShapeMismatch, TooShort
from wearid.preprocess import prepare, resample, resample_recording, segment, standard_scale
from wearid.sensors import SensorKind, TARGET_RATE

from conftest import make_channel, make_recording


class TestResample:
    def test_constant_signal_preserved_exactly(self):
        c = make_channel(np.full(260, 5.0), rate=52.0)
        out = resample(c)
        assert out.native_rate == 100.0
        assert np.all(out.values == 5.0)

    def test_ramp_is_exact(self):
        rate = 32.0
        t = np.arange(320) / rate
        c = make_channel(t, rate=rate)  # f(t) = t
        out = resample(c)
        assert np.max(np.abs(out.values - out.timestamps)) < 1e-9

    def test_sine_against_analytic(self):
        rate = 52.0
        t = np.arange(int(rate * 10)) / rate
        c = make_channel(np.sin(2 * np.pi * t), rate=rate)
        out = resample(c)
        assert np.max(np.abs(out.values - np.sin(2 * np.pi * out.timestamps))) < 0.01

    def test_idempotent_at_target_rate(self):
        rng = np.random.default_rng(0)
        c = make_channel(rng.normal(size=500), rate=52.0)
        once = resample(c)
        twice = resample(once)
        assert len(once) == len(twice)
        assert np.max(np.abs(once.values - twice.values)) < 1e-9

    def test_grid_anchored_at_first_timestamp(self):
        c = make_channel(np.arange(100.0), rate=50.0, t0=3.25)
        out = resample(c)
        assert out.timestamps[0] == 3.25
        assert out.timestamps[-1] <= c.timestamps[-1] + 1e-12

    def test_too_short(self):
        with pytest.raises(TooShort):
            resample(make_channel([1.0]))


class TestStandardScale:
    def test_basic_moments(self):
        rec = make_recording([make_channel([1, 2, 3, 4, 5])])
        out = standard_scale(rec)
        assert abs(np.mean(out.channels[0].values)) < 1e-12
        assert abs(np.std(out.channels[0].values) - 1) < 1e-12

    def test_constant_channel_zeroed_and_flagged(self):
        rec = make_recording([make_channel([7.0, 7.0, 7.0])])
        out = standard_scale(rec)
        assert np.all(out.channels[0].values == 0.0)
        assert out.meta["zero_variance_channels"] == ["acc_x"]

    def test_synthetic_ppg_moments(self, tiny_recordings):
        rec = next(r for r in tiny_recordings if SensorKind.PPG in r.kinds())
        out = standard_scale(resample_recording(rec))
        ppg = out.channel(SensorKind.PPG)
        assert abs(np.mean(ppg.values)) < 1e-6
        assert abs(np.std(ppg.values) - 1) < 1e-6

    def test_too_short(self):
        with pytest.raises(TooShort):
            standard_scale(make_recording([make_channel([1.0])]))


class TestSegment:
    def _prepared(self, seconds, rate=100.0, kinds=(SensorKind.ACC,)):
        n = int(round(seconds * rate)) + 1
        rng = np.random.default_rng(1)
        channels = []
        for kind in kinds:
            for axis in range(kind.axes):
                channels.append(make_channel(rng.normal(size=n), rate=rate, kind=kind, axis=axis))
        return prepare(make_recording(channels))

    def test_65s_imu_gives_three_windows(self):
        rec = self._prepared(65.0)
        windows = segment(rec, frozenset({SensorKind.ACC}))
        assert len(windows) == 3
        assert all(w.n_samples == 2000 for w in windows)
        assert [w.start_time for w in windows] == [0.0, 20.0, 40.0]

    def test_30s_ppg_gives_one_window_of_3000(self):
        rec = self._prepared(30.0, kinds=(SensorKind.PPG,))
        windows = segment(rec, frozenset({SensorKind.PPG}))
        assert len(windows) == 1
        assert windows[0].n_samples == 3000

    def test_just_under_one_window(self):
        rec = self._prepared(19.99)
        with pytest.raises(InsufficientData):
            segment(rec, frozenset({SensorKind.ACC}))

    def test_duration_rule_enforced(self):
        rec = self._prepared(60.0)
        with pytest.raises(InvalidConfig):
            segment(rec, frozenset({SensorKind.ACC}), duration=30.0)

    def test_missing_kind(self):
        rec = self._prepared(40.0)
        with pytest.raises(ShapeMismatch):
            segment(rec, frozenset({SensorKind.ACC, SensorKind.PPG}))

    def test_requires_target_rate(self):
        n = int(round(40 * 52.0)) + 1
        rec = standard_scale(make_recording([make_channel(np.random.default_rng(0).normal(size=n), rate=52.0)]))
        with pytest.raises(ShapeMismatch):
            segment(rec, frozenset({SensorKind.ACC}))


class TestWindowInvariants:
    def test_every_window_full_and_finite(self, tiny_recordings):
        for rec in tiny_recordings[:4]:
            prepared = prepare(rec)
            for sensor_set in ({SensorKind.ACC}, rec.kinds()):
                windows = segment(prepared, frozenset(sensor_set))
                for w in windows:
                    assert w.n_samples == int(w.duration * TARGET_RATE)
                    assert np.isfinite(w.data).all()
                    assert w.n_channels == sum(k.axes for k in w.sensor_set)

    def test_same_user_aligned_start_times(self, tiny_recordings):
        recs = [r for r in tiny_recordings if r.user_id == "u00"]
        acc = frozenset({SensorKind.ACC})
        starts = [
            {w.start_time for w in segment(prepare(r), acc)} for r in recs
        ]
        assert all(s == starts[0] for s in starts)

    def test_activity_labels_follow_schedule(self, tiny_recordings):
        rec = tiny_recordings[0]
        windows = segment(prepare(rec), frozenset({SensorKind.ACC}))
        for w in windows:
            mid = w.start_time + w.duration / 2
            expected = next(p.name for p in rec.schedule if p.start_s <= mid < p.end_s)
            assert w.activity == expected

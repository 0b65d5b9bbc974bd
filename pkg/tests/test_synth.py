import numpy as np
import pytest

from wearid.errors import InvalidConfig
from wearid.sensors import Placement, SensorKind
from wearid.synth import (
    DeviceSpec,
    SynthConfig,
    config_from_dict,
    default_proximity,
    generate,
    small_config,
)


def test_seed_determinism_byte_identical():
    cfg = small_config(2, 60.0)
    a = generate(cfg, seed=1)
    b = generate(cfg, seed=1)
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.user_id == rb.user_id and ra.device_id == rb.device_id
        for ca, cb in zip(ra.channels, rb.channels):
            assert ca.values.tobytes() == cb.values.tobytes()
            assert ca.timestamps.tobytes() == cb.timestamps.tobytes()


def test_different_seed_differs():
    cfg = small_config(1, 60.0)
    a = generate(cfg, seed=1)
    b = generate(cfg, seed=2)
    assert not np.array_equal(a[0].channels[0].values, b[0].channels[0].values)


def test_inventory_matches_config(tiny_recordings):
    users = {r.user_id for r in tiny_recordings}
    devices = {r.device_id for r in tiny_recordings}
    assert len(users) == 3 and len(devices) == 4
    by_device = {r.device_id: r for r in tiny_recordings if r.user_id == "u00"}
    assert by_device["ear_l"].kinds() == {SensorKind.ACC, SensorKind.GYRO, SensorKind.PPG}
    assert by_device["head"].kinds() == {SensorKind.ACC, SensorKind.GYRO}
    assert by_device["wrist"].kinds() == {SensorKind.ACC}
    assert by_device["head"].channels[0].native_rate == 52.0
    assert by_device["wrist"].channels[0].native_rate == 32.0


def test_recordings_cover_full_duration(tiny_recordings):
    for rec in tiny_recordings[:4]:
        c = rec.channels[0]
        assert c.timestamps[0] == 0.0
        assert abs(c.span - 120.0) < 1e-9


def _axis_corr(rec_a, rec_b):
    cs = []
    for axis in range(3):
        a = rec_a.channel(SensorKind.ACC, axis)
        b = rec_b.channel(SensorKind.ACC, axis)
        vb = np.interp(a.timestamps, b.timestamps, b.values)
        cs.append(abs(np.corrcoef(a.values, vb)[0, 1]))
    return float(np.mean(cs))


def test_proximity_orders_raw_correlation():
    proximity = default_proximity()
    proximity[frozenset({Placement.LEFT_EAR, Placement.RIGHT_EAR})] = 0.9
    proximity[frozenset({Placement.LEFT_EAR, Placement.WRIST})] = 0.3
    cfg = small_config(2, 120.0)
    cfg.proximity = proximity
    recs = generate(cfg, seed=5)
    by = {(r.user_id, r.device_id): r for r in recs}
    for user in ("u00", "u01"):
        ear_ear = _axis_corr(by[(user, "ear_l")], by[(user, "ear_r")])
        ear_wrist = _axis_corr(by[(user, "ear_l")], by[(user, "wrist")])
        assert ear_ear > ear_wrist


def test_heart_rate_stays_bounded():
    # PPG is driven by a 60-120 bpm walk; spectral peak must sit in band
    cfg = small_config(1, 120.0)
    rec = next(r for r in generate(cfg, seed=9) if SensorKind.PPG in r.kinds())
    ppg = rec.channel(SensorKind.PPG)
    spectrum = np.abs(np.fft.rfft(ppg.values - np.mean(ppg.values)))
    freqs = np.fft.rfftfreq(len(ppg), 1.0 / ppg.native_rate)
    band = (freqs >= 0.8) & (freqs <= 6.5)  # fundamentals plus harmonics
    assert spectrum[band].max() > 3 * spectrum[~band][1:].max()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: setattr(c, "n_users", 0),
        lambda c: setattr(c, "duration_s", -1.0),
        lambda c: setattr(c, "devices", ()),
        lambda c: setattr(
            c,
            "devices",
            (DeviceSpec("d", Placement.HEAD, -5.0, (SensorKind.ACC,)),),
        ),
        lambda c: c.proximity.update({frozenset({Placement.HEAD, Placement.WRIST}): 1.4}),
    ],
)
def test_invalid_configs_rejected(mutate):
    cfg = small_config(1, 30.0)
    mutate(cfg)
    with pytest.raises(InvalidConfig):
        generate(cfg, seed=0)


def test_config_from_dict():
    cfg = config_from_dict(
        {
            "n_users": 2,
            "duration_s": 45.0,
            "proximity": {"left_ear:right_ear": 0.8},
            "devices": [
                {"device_id": "a", "placement": "left_ear", "rate": 100.0, "sensors": ["acc"]},
                {"device_id": "b", "placement": "right_ear", "rate": 50.0, "sensors": ["acc"]},
            ],
        }
    )
    assert cfg.n_users == 2
    assert len(cfg.devices) == 2
    recs = generate(cfg, seed=0)
    assert len(recs) == 4


def test_config_from_dict_rejects_unknown():
    with pytest.raises(InvalidConfig):
        config_from_dict({"number_of_users": 3})

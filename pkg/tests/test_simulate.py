import numpy as np

from wearid.pairs import PairLabel
from wearid.sensors import SensorKind
from wearid.simulate import SimEvent, SimResult, splice_recording


def test_splice_switches_values(tiny_recordings):
    primary = next(r for r in tiny_recordings if (r.user_id, r.device_id) == ("u00", "ear_l"))
    donor = next(r for r in tiny_recordings if (r.user_id, r.device_id) == ("u01", "ear_l"))
    spliced = splice_recording(primary, donor, swap_time=60.0)

    for kind, axis in [(SensorKind.ACC, 0), (SensorKind.PPG, 0)]:
        orig = primary.channel(kind, axis)
        don = donor.channel(kind, axis)
        out = spliced.channel(kind, axis)
        before = orig.timestamps < 60.0
        assert np.array_equal(out.values[before], orig.values[before])
        assert np.array_equal(out.values[~before], don.values[~before])

    assert spliced.user_id == primary.user_id  # claimed identity
    assert spliced.meta["swap"]["donor_user"] == "u01"


def test_splice_preserves_grid(tiny_recordings):
    primary = next(r for r in tiny_recordings if r.device_id == "wrist")
    donor = next(
        r for r in tiny_recordings if r.device_id == "wrist" and r.user_id != primary.user_id
    )
    out = splice_recording(primary, donor, swap_time=30.0)
    assert np.array_equal(out.channels[0].timestamps, primary.channels[0].timestamps)


def _result(labels, times=None):
    times = times or [20.0 * i for i in range(len(labels))]
    events = [
        SimEvent(t, 0.9 if l is PairLabel.MATCHED else 0.1, l) for t, l in zip(times, labels)
    ]
    return SimResult("a", "b", "acc", 0.5, events)


def test_matched_fraction():
    m, u = PairLabel.MATCHED, PairLabel.UNMATCHED
    assert _result([m, m, u, m]).matched_fraction == 0.75
    assert _result([]).matched_fraction == 0.0


def test_first_unmatched_after():
    m, u = PairLabel.MATCHED, PairLabel.UNMATCHED
    r = _result([m, u, m, u])  # events at 0, 20, 40, 60
    assert r.first_unmatched_after(0.0) == 20.0
    assert r.first_unmatched_after(25.0) == 60.0
    assert r.first_unmatched_after(65.0) is None

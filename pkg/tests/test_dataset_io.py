import json

import numpy as np
import pytest

from wearid.dataset import (
    load_dataset,
    load_recording,
    recordings_fingerprint,
    tree_hash,
    write_dataset,
    write_recording,
)
from wearid.errors import EmptyChannel, MalformedFile, NonMonotonicTime
from wearid.sensors import SensorKind


def test_round_trip(tmp_path, tiny_recordings):
    rec = tiny_recordings[0]
    csv_path = write_recording(rec, tmp_path)
    back = load_recording(csv_path)
    assert back.user_id == rec.user_id
    assert back.device_id == rec.device_id
    assert back.placement == rec.placement
    assert back.kinds() == rec.kinds()
    assert len(back.schedule) == len(rec.schedule)
    orig = rec.channel(SensorKind.ACC, 0)
    loaded = back.channel(SensorKind.ACC, 0)
    assert loaded.native_rate == orig.native_rate
    # CSV stores 6 decimals for values, 8 for timestamps
    assert np.max(np.abs(loaded.values - orig.values)) < 1e-5
    assert np.max(np.abs(loaded.timestamps - orig.timestamps)) < 1e-7


def test_duplicate_timestamp_dropped(tmp_path):
    csv = tmp_path / "r.csv"
    rows = ["t,ppg"] + [f"{i * 0.01:.2f},{float(i)}" for i in range(10)]
    rows.insert(5, "0.03,99.0")  # duplicate of t=0.03 after the original; first wins
    csv.write_text("\n".join(rows) + "\n")
    (tmp_path / "r.meta.json").write_text(json.dumps({
        "user_id": "u0", "device_id": "d0", "placement": "head",
        "session_id": "s0", "rates": {"ppg": 100.0},
    }))
    rec = load_recording(csv)
    ppg = rec.channel(SensorKind.PPG)
    assert len(ppg) == 10
    assert ppg.values[3] == 3.0
    assert np.all(np.diff(ppg.timestamps) > 0)


def _write_meta(path, rates=None):
    path.write_text(json.dumps({
        "user_id": "u0", "device_id": "d0", "placement": "wrist",
        "session_id": "s0", "rates": rates or {"acc": 32.0},
    }))


def test_empty_file(tmp_path):
    csv = tmp_path / "r.csv"
    csv.write_text("t,acc_x,acc_y,acc_z\n")
    _write_meta(tmp_path / "r.meta.json")
    with pytest.raises(EmptyChannel):
        load_recording(csv)


def test_unknown_column(tmp_path):
    csv = tmp_path / "r.csv"
    csv.write_text("t,acc_w\n0.0,1.0\n")
    _write_meta(tmp_path / "r.meta.json")
    with pytest.raises(MalformedFile):
        load_recording(csv)


def test_non_numeric_values(tmp_path):
    csv = tmp_path / "r.csv"
    csv.write_text("t,acc_x\n0.0,1.0\n0.1,oops\n")
    _write_meta(tmp_path / "r.meta.json")
    with pytest.raises(MalformedFile):
        load_recording(csv)


def test_decreasing_time(tmp_path):
    csv = tmp_path / "r.csv"
    csv.write_text("t,acc_x\n0.0,1.0\n0.2,2.0\n0.1,3.0\n")
    _write_meta(tmp_path / "r.meta.json")
    with pytest.raises(NonMonotonicTime):
        load_recording(csv)


def test_missing_sidecar(tmp_path):
    csv = tmp_path / "r.csv"
    csv.write_text("t,acc_x\n0.0,1.0\n")
    with pytest.raises(MalformedFile):
        load_recording(csv)


def test_load_dataset_sorted(tmp_path, tiny_recordings):
    write_dataset(tiny_recordings[:4], tmp_path)
    back = load_dataset(tmp_path)
    assert len(back) == 4
    names = [(r.user_id, r.device_id) for r in back]
    assert names == sorted(names)


def test_load_dataset_empty_dir(tmp_path):
    with pytest.raises(MalformedFile):
        load_dataset(tmp_path)


def test_fingerprint_stable_and_sensitive(tiny_recordings):
    a = recordings_fingerprint(tiny_recordings[:2])
    b = recordings_fingerprint(tiny_recordings[:2])
    assert a == b
    mutated = recordings_fingerprint(tiny_recordings[1:3])
    assert mutated != a


def test_tree_hash(tmp_path, tiny_recordings):
    write_dataset(tiny_recordings[:2], tmp_path / "a")
    write_dataset(tiny_recordings[:2], tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")
    write_dataset(tiny_recordings[2:3], tmp_path / "b")
    assert tree_hash(tmp_path / "a") != tree_hash(tmp_path / "b")

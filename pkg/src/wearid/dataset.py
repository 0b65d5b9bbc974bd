"""On-disk dataset schema: CSV recordings with JSON sidecars.

One device-recording is a pair of files:

``<name>.csv``
    Header row, column ``t`` (seconds, float, shared by all channels in
    the file), then one column per channel named ``acc_x``, ``acc_y``,
    ``acc_z``, ``gyro_x``, ``gyro_y``, ``gyro_z``, ``ppg``. Rows in time
    order; all channels in a file share the device's native rate.

``<name>.meta.json``
    ``user_id``, ``device_id``, ``placement``, ``session_id``,
    ``rates`` (native Hz per kind, e.g. ``{"acc": 52.0}``), optional
    ``schedule`` (list of ``{"name", "start_s", "end_s"}`` activity
    phases) and optional ``units`` per kind.

Cross-device alignment relies on timestamps sharing one session clock;
datasets must provide synchronized ``t`` columns. The synthetic
generator writes this same schema.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import EmptyChannel, MalformedFile, NonMonotonicTime
from .sensors import (
    ActivityPhase,
    Placement,
    Recording,
    SensorChannel,
    SensorKind,
    parse_channel_name,
)

_T_FORMAT = "%.8f"
_V_FORMAT = "%.6f"


def recording_basename(recording: Recording) -> str:
    return f"{recording.session_id}_{recording.user_id}_{recording.device_id}"


def write_recording(recording: Recording, out_dir: Path) -> Path:
    """Write one recording as CSV + sidecar; returns the CSV path.

    All channels must share the file's time base (the schema has a
    single ``t`` column).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = recording.channels[0]
    cols = {"t": base.timestamps}
    for c in recording.channels:
        if len(c) != len(base) or c.timestamps[0] != base.timestamps[0]:
            raise MalformedFile(
                f"{recording.device_id}: channels must share one time base to be written"
            )
        cols[c.name] = c.values
    df = pd.DataFrame(cols)
    csv_path = out_dir / f"{recording_basename(recording)}.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(df.columns) + "\n")
        fmt = ",".join([_T_FORMAT] + [_V_FORMAT] * (len(df.columns) - 1))
        np.savetxt(fh, df.to_numpy(), fmt=fmt)

    rates = {}
    for c in recording.channels:
        rates[c.kind.value] = c.native_rate
    meta = {
        "user_id": recording.user_id,
        "device_id": recording.device_id,
        "placement": recording.placement.value,
        "session_id": recording.session_id,
        "rates": rates,
    }
    if recording.schedule:
        meta["schedule"] = [
            {"name": p.name, "start_s": p.start_s, "end_s": p.end_s}
            for p in recording.schedule
        ]
    if "units" in recording.meta:
        meta["units"] = recording.meta["units"]
    meta_path = csv_path.with_suffix("").with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path


def load_recording(csv_path: Path, meta_path: Path | None = None) -> Recording:
    """Load and validate one device-recording.

    Duplicate timestamps are collapsed keeping the first row; any
    remaining ordering violation is unfixable.

    Raises:
        MalformedFile: unknown columns, bad types, non-finite values,
            or missing/invalid sidecar.
        EmptyChannel: no data rows.
        NonMonotonicTime: timestamps decrease.
    """
    csv_path = Path(csv_path)
    if meta_path is None:
        meta_path = csv_path.with_suffix("").with_suffix(".meta.json")
    if not Path(meta_path).exists():
        raise MalformedFile(f"missing sidecar metadata: {meta_path}")
    try:
        meta = json.loads(Path(meta_path).read_text())
        placement = Placement(meta["placement"])
        rates = {SensorKind(k): float(v) for k, v in meta["rates"].items()}
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise MalformedFile(f"bad sidecar {meta_path}: {exc}") from exc
    for kind, rate in rates.items():
        if rate <= 0:
            raise MalformedFile(f"non-positive rate for {kind.value}: {rate}")

    try:
        df = pd.read_csv(csv_path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise EmptyChannel(f"{csv_path}: {exc}") from exc
    if "t" not in df.columns:
        raise MalformedFile(f"{csv_path}: missing 't' column")
    if len(df) == 0:
        raise EmptyChannel(f"{csv_path}: no samples")

    kinds_axes = []
    for col in df.columns:
        if col == "t":
            continue
        try:
            kinds_axes.append((col, *parse_channel_name(col)))
        except ValueError as exc:
            raise MalformedFile(f"{csv_path}: {exc}") from exc
    if not kinds_axes:
        raise MalformedFile(f"{csv_path}: no channel columns")

    try:
        arr = df.to_numpy(dtype=np.float64, copy=True)
    except (ValueError, TypeError) as exc:
        raise MalformedFile(f"{csv_path}: non-numeric values ({exc})") from exc
    if not np.isfinite(arr).all():
        raise MalformedFile(f"{csv_path}: non-finite values")

    t = arr[:, 0]
    dt = np.diff(t)
    if np.any(dt < 0):
        raise NonMonotonicTime(f"{csv_path}: timestamps decrease")
    keep = np.concatenate(([True], dt > 0))
    arr = arr[keep]
    t = arr[:, 0]

    schedule = None
    if "schedule" in meta:
        schedule = tuple(
            ActivityPhase(p["name"], float(p["start_s"]), float(p["end_s"]))
            for p in meta["schedule"]
        )

    channels = []
    col_index = {c: i for i, c in enumerate(df.columns)}
    for col, kind, axis in kinds_axes:
        if kind not in rates:
            raise MalformedFile(f"{csv_path}: sidecar lists no rate for {kind.value}")
        channels.append(
            SensorChannel(kind, axis, t.copy(), arr[:, col_index[col]].copy(), rates[kind])
        )

    return Recording(
        user_id=str(meta["user_id"]),
        device_id=str(meta["device_id"]),
        placement=placement,
        channels=channels,
        session_id=str(meta.get("session_id", "s0")),
        schedule=schedule,
    )


def load_dataset(data_dir: Path) -> list[Recording]:
    """Load every recording in a directory, sorted by file name."""
    data_dir = Path(data_dir)
    paths = sorted(data_dir.glob("*.csv"))
    if not paths:
        raise MalformedFile(f"no recordings under {data_dir}")
    return [load_recording(p) for p in paths]


def write_dataset(recordings: list[Recording], out_dir: Path) -> list[Path]:
    return [write_recording(r, out_dir) for r in recordings]


def recordings_fingerprint(recordings: list[Recording]) -> str:
    """Stable sha256 over recording contents, for training provenance."""
    h = hashlib.sha256()
    for rec in sorted(recordings, key=lambda r: (r.session_id, r.user_id, r.device_id)):
        h.update(f"{rec.session_id}|{rec.user_id}|{rec.device_id}|{rec.placement.value}".encode())
        for c in sorted(rec.channels, key=lambda c: c.name):
            h.update(c.name.encode())
            h.update(np.ascontiguousarray(c.timestamps, dtype=np.float64).tobytes())
            h.update(np.ascontiguousarray(c.values, dtype=np.float64).tobytes())
    return h.hexdigest()


def tree_hash(root: Path) -> str:
    """sha256 over every file under ``root`` (relative path + bytes)."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()

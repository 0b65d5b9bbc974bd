"""Resampling, scaling and windowing of raw recordings.

The preprocessing contract every model input satisfies:

1. all channels on a uniform 100 Hz grid (linear interpolation),
2. per-recording per-channel standard scaling,
3. non-overlapping windows of 20 s (IMU only) or 30 s (PPG present),
   trailing partial data discarded.
"""

from __future__ import annotations

import numpy as np

from .errors import InsufficientData, InvalidConfig, ShapeMismatch, TooShort
from .sensors import (
    TARGET_RATE,
    Recording,
    SensorChannel,
    SensorKind,
    Window,
    activity_at,
    window_duration_for,
)

# relative floor below which a channel counts as flat (carries no signal)
_ZERO_VAR_FLOOR = 1e-12


def resample(channel: SensorChannel, target_rate: float = TARGET_RATE) -> SensorChannel:
    """Resample a channel onto a uniform grid by linear interpolation.

    The grid is anchored at the channel's first timestamp and covers
    ``[t0, t_last]``. Exact on constant and linear signals.

    Raises:
        TooShort: fewer than two samples.
    """
    if len(channel) < 2:
        raise TooShort(f"{channel.name}: need >= 2 samples to resample, got {len(channel)}")
    t = channel.timestamps
    t0 = float(t[0])
    # 1e-9 guard keeps the endpoint when (t_last - t0) * rate rounds just
    # below an integer
    n = int(np.floor((float(t[-1]) - t0) * target_rate + 1e-9)) + 1
    grid = t0 + np.arange(n, dtype=np.float64) / target_rate
    values = np.interp(grid, t, channel.values)
    return SensorChannel(channel.kind, channel.axis, grid, values, float(target_rate))


def resample_recording(recording: Recording, target_rate: float = TARGET_RATE) -> Recording:
    channels = [resample(c, target_rate) for c in recording.channels]
    return Recording(
        user_id=recording.user_id,
        device_id=recording.device_id,
        placement=recording.placement,
        channels=channels,
        session_id=recording.session_id,
        schedule=recording.schedule,
        meta=dict(recording.meta),
    )


def standard_scale(recording: Recording) -> Recording:
    """Scale each channel to zero mean, unit variance over the recording.

    Statistics are computed per recording per channel, never across
    devices. A channel with numerically zero variance is replaced by
    zeros and listed in ``meta['zero_variance_channels']``.

    Raises:
        TooShort: a channel has fewer than two samples.
    """
    channels = []
    flagged = []
    scaler = {}
    for c in recording.channels:
        if len(c) < 2:
            raise TooShort(f"{c.name}: need >= 2 samples to scale, got {len(c)}")
        mean = float(np.mean(c.values))
        std = float(np.std(c.values))
        if std <= _ZERO_VAR_FLOOR * max(1.0, abs(mean)):
            values = np.zeros_like(c.values)
            flagged.append(c.name)
            scaler[c.name] = (mean, 0.0)
        else:
            values = (c.values - mean) / std
            scaler[c.name] = (mean, std)
        channels.append(SensorChannel(c.kind, c.axis, c.timestamps, values, c.native_rate))
    meta = dict(recording.meta)
    meta["scaler"] = scaler
    if flagged:
        meta["zero_variance_channels"] = flagged
    return Recording(
        user_id=recording.user_id,
        device_id=recording.device_id,
        placement=recording.placement,
        channels=channels,
        session_id=recording.session_id,
        schedule=recording.schedule,
        meta=meta,
    )


def prepare(recording: Recording) -> Recording:
    """Resample to the target grid, then standard-scale."""
    return standard_scale(resample_recording(recording))


def segment(
    recording: Recording,
    sensor_set: frozenset[SensorKind],
    duration: float | None = None,
) -> list[Window]:
    """Cut a prepared recording into consecutive non-overlapping windows.

    A window is emitted only when the recording spans its full closed
    interval; trailing partial data is discarded. Windows carry a
    ``start_time`` on the session clock so same-user windows from
    different devices align exactly when the devices share a clock.

    Args:
        recording: already resampled to 100 Hz and scaled.
        sensor_set: kinds to stack, in canonical order.
        duration: window length; defaults to the sensor-set rule
            (PPG present -> 30 s, else 20 s).

    Raises:
        ShapeMismatch: recording lacks a requested kind, or its channels
            are not on one shared 100 Hz grid.
        InvalidConfig: duration contradicts the sensor-set rule.
        InsufficientData: recording shorter than one window.
    """
    sensor_set = frozenset(sensor_set)
    rule = window_duration_for(sensor_set)
    if duration is None:
        duration = rule
    elif duration != rule:
        raise InvalidConfig(
            f"duration {duration} s contradicts the window rule ({rule} s) for "
            + "+".join(sorted(k.value for k in sensor_set))
        )

    missing = sensor_set - recording.kinds()
    if missing:
        raise ShapeMismatch(
            f"{recording.device_id} lacks {sorted(k.value for k in missing)}"
        )

    chans = recording.ordered_channels(sensor_set)
    t0 = float(chans[0].timestamps[0])
    n = len(chans[0])
    for c in chans:
        if c.native_rate != TARGET_RATE:
            raise ShapeMismatch(f"{c.name} not resampled to {TARGET_RATE:g} Hz")
        if len(c) != n or float(c.timestamps[0]) != t0:
            raise ShapeMismatch(f"{c.name} not on the shared grid of {recording.device_id}")

    span = chans[0].span
    n_windows = int(np.floor(span / duration + 1e-9))
    if n_windows < 1:
        raise InsufficientData(
            f"{recording.device_id}: {span:.2f} s < one {duration:g} s window"
        )

    win = int(round(duration * TARGET_RATE))
    stacked = np.stack([c.values for c in chans])
    windows = []
    for k in range(n_windows):
        start = t0 + k * duration
        data = np.ascontiguousarray(stacked[:, k * win : (k + 1) * win], dtype=np.float32)
        windows.append(
            Window(
                user_id=recording.user_id,
                device_id=recording.device_id,
                placement=recording.placement,
                sensor_set=sensor_set,
                start_time=start,
                duration=float(duration),
                data=data,
                sample_rate=TARGET_RATE,
                activity=activity_at(recording.schedule, start + duration / 2),
            )
        )
    return windows


def build_windows(
    recordings: list[Recording],
    sensor_set: frozenset[SensorKind],
    prepared: bool = False,
) -> list[Window]:
    """Windows for one sensor set across every device that carries it.

    Devices lacking part of ``sensor_set`` are skipped, mirroring how a
    deployment can only run a model on devices that have its sensors.
    """
    sensor_set = frozenset(sensor_set)
    windows: list[Window] = []
    for rec in recordings:
        if not sensor_set <= rec.kinds():
            continue
        if not prepared:
            rec = prepare(rec)
        windows.extend(segment(rec, sensor_set))
    return windows

"""Domain types for multi-device wearable recordings.

A :class:`Recording` is everything one device captured in one session:
a set of timestamped sensor channels plus identity metadata. After
preprocessing, recordings are cut into fixed-length :class:`Window`
objects, which are the unit every model in this package consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

TARGET_RATE = 100.0  # Hz; every window is resampled onto this grid

IMU_WINDOW_S = 20.0
PPG_WINDOW_S = 30.0

AXIS_NAMES = "xyz"


class SensorKind(str, Enum):
    ACC = "acc"
    GYRO = "gyro"
    PPG = "ppg"

    @property
    def axes(self) -> int:
        return 1 if self is SensorKind.PPG else 3


# canonical ordering of kinds inside a window's channel matrix
KIND_ORDER = (SensorKind.ACC, SensorKind.GYRO, SensorKind.PPG)


class Placement(str, Enum):
    LEFT_EAR = "left_ear"
    RIGHT_EAR = "right_ear"
    HEAD = "head"
    WRIST = "wrist"


def channel_name(kind: SensorKind, axis: int) -> str:
    """Column name for a channel, e.g. ``acc_x`` or ``ppg``."""
    if kind is SensorKind.PPG:
        return kind.value
    return f"{kind.value}_{AXIS_NAMES[axis]}"


def parse_channel_name(name: str) -> tuple[SensorKind, int]:
    if name == "ppg":
        return SensorKind.PPG, 0
    base, _, axis = name.partition("_")
    if axis in AXIS_NAMES and base in (SensorKind.ACC.value, SensorKind.GYRO.value):
        return SensorKind(base), AXIS_NAMES.index(axis)
    raise ValueError(f"unknown channel column: {name!r}")


def window_duration_for(sensor_set: frozenset[SensorKind]) -> float:
    """Window length rule: 30 s whenever PPG participates, else 20 s."""
    return PPG_WINDOW_S if SensorKind.PPG in sensor_set else IMU_WINDOW_S


def channel_count(sensor_set: frozenset[SensorKind]) -> int:
    return sum(k.axes for k in sensor_set)


@dataclass(eq=False)
class ActivityPhase:
    """One labeled span of a session (rest / physical / mental)."""

    name: str
    start_s: float
    end_s: float

    def contains(self, t: float) -> bool:
        return self.start_s <= t < self.end_s


def activity_at(schedule, t: float):
    """Phase name at time ``t``, or None when unlabeled."""
    if not schedule:
        return None
    for phase in schedule:
        if phase.contains(t):
            return phase.name
    return None


@dataclass(eq=False)
class SensorChannel:
    """One timestamped stream, e.g. the x axis of an accelerometer.

    Timestamps are seconds on the session clock and must be strictly
    increasing once a recording has passed ingest validation.
    """

    kind: SensorKind
    axis: int
    timestamps: np.ndarray
    values: np.ndarray
    native_rate: float

    @property
    def name(self) -> str:
        return channel_name(self.kind, self.axis)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def span(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


@dataclass(eq=False)
class Recording:
    """All channels one device captured during one session."""

    user_id: str
    device_id: str
    placement: Placement
    channels: list[SensorChannel]
    session_id: str = "s0"
    schedule: tuple[ActivityPhase, ...] | None = None
    meta: dict = field(default_factory=dict)

    def kinds(self) -> frozenset[SensorKind]:
        return frozenset(c.kind for c in self.channels)

    def channel(self, kind: SensorKind, axis: int = 0) -> SensorChannel:
        for c in self.channels:
            if c.kind is kind and c.axis == axis:
                return c
        raise KeyError(f"{self.device_id} has no {channel_name(kind, axis)} channel")

    def ordered_channels(self, sensor_set: frozenset[SensorKind]) -> list[SensorChannel]:
        """Channels of ``sensor_set`` in canonical (kind, axis) order."""
        out = []
        for kind in KIND_ORDER:
            if kind in sensor_set:
                for axis in range(kind.axes):
                    out.append(self.channel(kind, axis))
        return out


@dataclass(eq=False)
class Window:
    """Fixed-length, uniformly sampled, scaled multi-channel segment.

    ``data`` is a channels x samples float32 matrix with channels in
    canonical kind/axis order; ``samples == duration * sample_rate``.
    """

    user_id: str
    device_id: str
    placement: Placement
    sensor_set: frozenset[SensorKind]
    start_time: float
    duration: float
    data: np.ndarray
    sample_rate: float = TARGET_RATE
    activity: str | None = None

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def time_key(self) -> float:
        # float start times are exact on a shared session clock; round to
        # microseconds so equality keying survives serialization
        return round(self.start_time, 6)

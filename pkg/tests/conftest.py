import numpy as np
import pytest

from wearid.sensors import SensorChannel, SensorKind, Placement, Recording
from wearid.synth import SynthConfig, generate, small_config


@pytest.fixture(scope="session")
def tiny_recordings():
    """3 users x 4 devices x 120 s; shared across read-only tests."""
    return generate(small_config(3, 120.0), seed=7)


@pytest.fixture(scope="session")
def two_user_recordings():
    return generate(small_config(2, 90.0), seed=3)


def make_channel(values, rate=100.0, kind=SensorKind.ACC, axis=0, t0=0.0):
    values = np.asarray(values, dtype=np.float64)
    t = t0 + np.arange(len(values)) / rate
    return SensorChannel(kind, axis, t, values, rate)


def make_recording(channels, user="u00", device="dev_a", placement=Placement.LEFT_EAR):
    return Recording(user_id=user, device_id=device, placement=placement, channels=channels)

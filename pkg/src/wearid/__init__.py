"""wearid: cross-device wearer verification from wearable sensor streams.

Embeds fixed-length sensor windows so that windows captured at the same
time on different devices of one wearer land close together in a common
latent space, then matches embeddings across devices to decide "same
wearer, same time".
"""

__version__ = "0.1.0"

from .sensors import (  # noqa: F401
    Placement,
    Recording,
    SensorChannel,
    SensorKind,
    Window,
)

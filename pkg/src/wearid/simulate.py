"""Window-by-window replay of two device streams.

Mirrors live operation: for each aligned window the registry picks the
model both devices can run, each device computes its embedding, and the
matcher decides whether the streams still belong to one wearer. A
wearer-swap scenario splices another user's signal into one stream to
show the decision flipping.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import embed_window
from .matcher import match
from .pairs import PairLabel
from .preprocess import prepare, segment
from .registry import Registry, key_str, select_model
from .sensors import Recording, SensorChannel


@dataclass
class SimEvent:
    start_time: float
    probability: float
    label: PairLabel
    activity: str | None = None


@dataclass
class SimResult:
    device_a: str
    device_b: str
    model_key: str
    threshold: float
    events: list[SimEvent] = field(default_factory=list)

    @property
    def matched_fraction(self) -> float:
        if not self.events:
            return 0.0
        return sum(e.label is PairLabel.MATCHED for e in self.events) / len(self.events)

    def first_unmatched_after(self, t: float) -> float | None:
        for e in self.events:
            if e.start_time >= t and e.label is PairLabel.UNMATCHED:
                return e.start_time
        return None


def splice_recording(primary: Recording, donor: Recording, swap_time: float) -> Recording:
    """Replace ``primary``'s signal with ``donor``'s from ``swap_time`` on.

    Models the physical device moving to another wearer mid-session.
    Donor channels are interpolated onto the primary grid when the
    clocks differ. Identity metadata stays the primary's (the claimed
    wearer); the actual swap is recorded in ``meta['swap']``.
    """
    channels = []
    for c in primary.channels:
        d = donor.channel(c.kind, c.axis)
        donor_vals = (
            d.values
            if len(d) == len(c) and np.array_equal(d.timestamps, c.timestamps)
            else np.interp(c.timestamps, d.timestamps, d.values)
        )
        values = np.where(c.timestamps < swap_time, c.values, donor_vals)
        channels.append(SensorChannel(c.kind, c.axis, c.timestamps.copy(), values, c.native_rate))
    meta = dict(primary.meta)
    meta["swap"] = {"donor_user": donor.user_id, "swap_time_s": swap_time}
    return Recording(
        user_id=primary.user_id,
        device_id=primary.device_id,
        placement=primary.placement,
        channels=channels,
        session_id=primary.session_id,
        schedule=primary.schedule,
        meta=meta,
    )


def run_session(
    registry: Registry,
    recording_a: Recording,
    recording_b: Recording,
    threshold: float = 0.5,
    realtime: bool = False,
) -> SimResult:
    """Replay two streams and match every aligned window.

    Raises:
        NoOverlap / NoTrainedModel: propagated from model selection.
    """
    bundle = select_model(registry, recording_a.kinds(), recording_b.kinds())
    encoder = bundle.build_encoder()
    matcher = bundle.build_matcher()

    windows_a = {w.time_key(): w for w in segment(prepare(recording_a), bundle.key)}
    windows_b = {w.time_key(): w for w in segment(prepare(recording_b), bundle.key)}
    result = SimResult(
        device_a=recording_a.device_id,
        device_b=recording_b.device_id,
        model_key=key_str(bundle.key),
        threshold=threshold,
    )
    for t in sorted(set(windows_a) & set(windows_b)):
        tick = time.monotonic()
        wa, wb = windows_a[t], windows_b[t]
        decision = match(matcher, embed_window(encoder, wa), embed_window(encoder, wb), threshold)
        result.events.append(SimEvent(t, decision.probability, decision.label, wa.activity))
        if realtime:
            elapsed = time.monotonic() - tick
            time.sleep(max(0.0, wa.duration - elapsed))
    return result


def write_event_log(result: SimResult, path: Path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_time_s", "probability", "decision", "activity"])
        for e in result.events:
            writer.writerow(
                [f"{e.start_time:.6f}", f"{e.probability:.6f}", e.label.value, e.activity or ""]
            )

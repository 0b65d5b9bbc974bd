"""Deterministic synthetic multi-device wearable sessions.

Desk-scale stand-in for a real multi-device recording campaign. Each
user gets one latent physiology and one latent motion state per session;
every device observes those latents through its own placement, mounting
and hardware distortions:

* A bounded-random-walk heart rate (60-120 bpm, activity-dependent
  target) drives a quasi-periodic pulse train. Each PPG device applies
  its own morphology smoothing, gain, offset, baseline wander and noise,
  so two PPGs of one user share beat timing but not waveform detail.
* Motion is a sum of per-placement latent components: oscillators whose
  frequency band and amplitude follow the activity schedule, amplitude
  envelopes that random-walk on a few-second scale, and slow posture
  drift. A placement-proximity matrix is Cholesky-mixed into the
  components so near placements (left/right ear) share most of their
  motion while far ones (ear vs wrist) share little; a user-global
  intensity envelope keeps even far placements weakly coupled.
* Each IMU device sees its placement's latent through a fixed mounting
  rotation, gain and additive noise; gyroscopes observe the latent's
  time derivative.

Everything is keyed off ``(config, seed)`` through independent
per-user/per-device substreams, so output is byte-identical across runs
and call orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidConfig
from .sensors import ActivityPhase, Placement, Recording, SensorChannel, SensorKind

MASTER_RATE = 100.0

REST, PHYSICAL, MENTAL = "rest", "physical", "mental"

# relative motion amplitude and oscillation band (Hz) per activity
_ACTIVITY_AMP = {REST: 0.15, PHYSICAL: 1.0, MENTAL: 0.4}
_ACTIVITY_BAND = {REST: (0.15, 0.5), PHYSICAL: None, MENTAL: (0.4, 1.2)}  # physical: per-user stride
_HR_SHIFT = {REST: 0.0, PHYSICAL: 28.0, MENTAL: 8.0}


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    placement: Placement
    rate: float
    sensors: tuple[SensorKind, ...]


def default_devices() -> tuple[DeviceSpec, ...]:
    acc, gyro, ppg = SensorKind.ACC, SensorKind.GYRO, SensorKind.PPG
    return (
        DeviceSpec("ear_l", Placement.LEFT_EAR, 100.0, (acc, gyro, ppg)),
        DeviceSpec("ear_r", Placement.RIGHT_EAR, 100.0, (acc, gyro, ppg)),
        DeviceSpec("head", Placement.HEAD, 52.0, (acc, gyro)),
        DeviceSpec("wrist", Placement.WRIST, 32.0, (acc,)),
    )


def default_proximity() -> dict[frozenset[Placement], float]:
    L, R, H, W = Placement.LEFT_EAR, Placement.RIGHT_EAR, Placement.HEAD, Placement.WRIST
    return {
        frozenset({L, R}): 0.90,
        frozenset({L, H}): 0.75,
        frozenset({R, H}): 0.75,
        frozenset({L, W}): 0.48,
        frozenset({R, W}): 0.48,
        frozenset({H, W}): 0.52,
    }


def thirds_schedule(duration_s: float) -> tuple[ActivityPhase, ...]:
    third = duration_s / 3
    return (
        ActivityPhase(REST, 0.0, third),
        ActivityPhase(PHYSICAL, third, 2 * third),
        ActivityPhase(MENTAL, 2 * third, duration_s),
    )


@dataclass
class SynthConfig:
    n_users: int = 12
    duration_s: float = 600.0
    devices: tuple[DeviceSpec, ...] = field(default_factory=default_devices)
    schedule: tuple[ActivityPhase, ...] | None = None
    proximity: dict[frozenset[Placement], float] = field(default_factory=default_proximity)
    acc_noise: float = 0.12
    gyro_noise: float = 0.12
    ppg_noise: float = 0.12
    # weight of the user-global intensity envelope vs per-component envelopes;
    # keeps far placements weakly matchable
    shared_intensity_weight: float = 0.55
    device_tilt_deg: float = 25.0
    session_id: str = "s0"

    def resolved_schedule(self) -> tuple[ActivityPhase, ...]:
        return self.schedule if self.schedule is not None else thirds_schedule(self.duration_s)

    def validate(self) -> None:
        if self.n_users < 1:
            raise InvalidConfig(f"n_users must be >= 1, got {self.n_users}")
        if self.duration_s <= 0:
            raise InvalidConfig(f"duration_s must be > 0, got {self.duration_s}")
        if not self.devices:
            raise InvalidConfig("at least one device required")
        seen = set()
        for dev in self.devices:
            if dev.rate <= 0:
                raise InvalidConfig(f"{dev.device_id}: rate must be > 0, got {dev.rate}")
            if not dev.sensors:
                raise InvalidConfig(f"{dev.device_id}: empty sensor set")
            if dev.device_id in seen:
                raise InvalidConfig(f"duplicate device_id {dev.device_id!r}")
            seen.add(dev.device_id)
        for pair, rho in self.proximity.items():
            if not 0.0 <= rho <= 1.0:
                names = "/".join(sorted(p.value for p in pair))
                raise InvalidConfig(f"proximity({names})={rho} outside [0, 1]")
        for phase in self.resolved_schedule():
            if phase.start_s < 0 or phase.end_s > self.duration_s or phase.end_s <= phase.start_s:
                raise InvalidConfig(f"activity phase {phase.name!r} outside the session")


def small_config(n_users: int = 3, duration_s: float = 120.0) -> SynthConfig:
    """Reduced config for tests and quick experiments."""
    return replace(SynthConfig(), n_users=n_users, duration_s=duration_s)


def config_from_dict(d: dict) -> SynthConfig:
    """Build a generator config from flat/JSON config-file values.

    Unknown keys raise InvalidConfig. Proximity entries use
    ``"placement_a:placement_b"`` keys; devices and schedule are lists
    of objects mirroring DeviceSpec / ActivityPhase fields.
    """
    cfg = SynthConfig()
    simple = {
        "n_users": int,
        "duration_s": float,
        "acc_noise": float,
        "gyro_noise": float,
        "ppg_noise": float,
        "shared_intensity_weight": float,
        "device_tilt_deg": float,
        "session_id": str,
    }
    try:
        for name, value in d.items():
            if name in simple:
                setattr(cfg, name, simple[name](value))
            elif name == "devices":
                cfg.devices = tuple(
                    DeviceSpec(
                        device_id=str(dev["device_id"]),
                        placement=Placement(dev["placement"]),
                        rate=float(dev["rate"]),
                        sensors=tuple(SensorKind(s) for s in dev["sensors"]),
                    )
                    for dev in value
                )
            elif name == "schedule":
                cfg.schedule = tuple(
                    ActivityPhase(str(p["name"]), float(p["start_s"]), float(p["end_s"]))
                    for p in value
                )
            elif name == "proximity":
                prox = {}
                for pair, rho in value.items():
                    a, _, b = pair.partition(":")
                    prox[frozenset({Placement(a), Placement(b)})] = float(rho)
                cfg.proximity = prox
            else:
                raise InvalidConfig(f"unknown generator option {name!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad generator config: {exc}") from exc
    cfg.validate()
    return cfg


# --- internals -------------------------------------------------------------

def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def _knot_walk(rng, n_knots, start, step, lo, hi):
    vals = np.empty(n_knots)
    v = start
    for i in range(n_knots):
        vals[i] = v
        v = min(max(v + rng.normal(0.0, step), lo), hi)
    return vals


def _interp_knots(t, duration, knots):
    kt = np.linspace(0.0, duration, len(knots))
    return np.interp(t, kt, knots)


def _phase_profile(t, schedule, table, default):
    out = np.full(len(t), default, dtype=np.float64)
    for phase in schedule:
        sel = (t >= phase.start_s) & (t < phase.end_s)
        out[sel] = table.get(phase.name, default)
    return out


def _smooth(x, width):
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    return np.convolve(x, kernel, mode="same")


def _mixing_matrix(placements, proximity):
    n = len(placements)
    corr = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            pair = frozenset({placements[i], placements[j]})
            corr[i, j] = corr[j, i] = proximity.get(pair, 0.0)
    # clip eigenvalues so user-supplied matrices always factor
    w, v = np.linalg.eigh(corr)
    w = np.clip(w, 1e-6, None)
    corr = v @ np.diag(w) @ v.T
    d = np.sqrt(np.diag(corr))
    corr = corr / np.outer(d, d)
    return np.linalg.cholesky(corr)


def _rotation(rng, max_deg):
    """Random rotation with angle up to ``max_deg`` about a random axis."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(0.0, max_deg))
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def _drifting_rotate(sig, base_rot, rng, t, drift_deg=12.0, drift_period_s=45.0):
    """Apply a mounting rotation whose angle wanders slowly over time.

    Devices shift on the body, so the signal-to-sensor geometry is not a
    per-session constant; a wearer cannot be recognized by mounting
    geometry alone. Implemented as the base rotation composed with a
    Rodrigues rotation of knot-walked angle about a fixed random axis.
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    n_knots = max(3, int(t[-1] / drift_period_s) + 2)
    theta = np.radians(
        _interp_knots(t, t[-1], _knot_walk(rng, n_knots, 0.0, drift_deg / 2, -drift_deg, drift_deg))
    )
    v = base_rot @ sig
    cross = np.cross(axis, v.T).T
    dot = axis @ v
    return v * np.cos(theta) + cross * np.sin(theta) + np.outer(axis, dot * (1 - np.cos(theta)))


class _UserLatents:
    """Per-user latent motion (per placement) and pulse train."""

    def __init__(self, config: SynthConfig, seed: int, user_idx: int, placements):
        rng = _rng(seed, 0, user_idx)
        schedule = config.resolved_schedule()
        duration = config.duration_s
        n = int(round(duration * MASTER_RATE)) + 1
        self.t = np.arange(n, dtype=np.float64) / MASTER_RATE
        t = self.t

        amp_profile = _smooth(_phase_profile(t, schedule, _ACTIVITY_AMP, 0.4), 101)
        stride = rng.uniform(1.5, 2.2)  # user gait cadence, Hz
        band_lo = np.empty(n)
        band_hi = np.empty(n)
        band_lo.fill(0.3)
        band_hi.fill(1.5)
        for phase in schedule:
            sel = (t >= phase.start_s) & (t < phase.end_s)
            band = _ACTIVITY_BAND.get(phase.name)
            if band is None:
                band = (stride - 0.45, stride + 0.45)
            band_lo[sel], band_hi[sel] = band

        # user-global intensity: every placement shares this envelope
        n_knots = max(3, int(duration / 4) + 1)
        self.global_env = np.exp(
            _interp_knots(t, duration, _knot_walk(rng, n_knots, 0.0, 0.28, -0.8, 0.6))
        )

        # one cadence per user: every body segment oscillates at the same
        # instantaneous frequency (gait-like), so differentiating for the
        # gyroscope view rescales all components equally and cross-device
        # mixing survives
        frac = _interp_knots(
            t, duration, _knot_walk(rng, max(3, int(duration / 5) + 1), 0.5, 0.18, 0.0, 1.0)
        )
        freq = band_lo + frac * (band_hi - band_lo)
        theta = 2 * np.pi * np.cumsum(freq) / MASTER_RATE

        w_g = config.shared_intensity_weight
        k_comp = len(placements)
        components = np.empty((k_comp, 3, n))
        for k in range(k_comp):
            local_env = np.exp(
                _interp_knots(t, duration, _knot_walk(rng, n_knots, 0.0, 0.3, -0.9, 0.7))
            )
            amp = amp_profile * (w_g * self.global_env + (1 - w_g) * local_env)
            osc = amp * (
                np.sin(theta + rng.uniform(0, 2 * np.pi))
                + 0.35 * np.sin(2 * theta + rng.uniform(0, 2 * np.pi))
            )
            local_env2 = np.exp(
                _interp_knots(t, duration, _knot_walk(rng, n_knots, 0.0, 0.3, -0.9, 0.7))
            )
            amp2 = amp_profile * (w_g * self.global_env + (1 - w_g) * local_env2)
            osc2 = 0.5 * amp2 * np.sin(1.5 * theta + rng.uniform(0, 2 * np.pi))

            m1 = rng.normal(size=3)
            m1 /= np.linalg.norm(m1)
            m2 = rng.normal(size=3)
            m2 -= m1 * (m2 @ m1)
            m2 /= np.linalg.norm(m2)
            drift_knots = max(3, int(duration / 8) + 1)
            drift = np.stack(
                [
                    _interp_knots(t, duration, _knot_walk(rng, drift_knots, 0.0, 0.3, -0.9, 0.9))
                    for _ in range(3)
                ]
            )
            components[k] = np.outer(m1, osc) + np.outer(m2, osc2) + 0.4 * drift

        mix = _mixing_matrix(placements, config.proximity)
        # placement latent = proximity-weighted blend of the components
        self.motion = {
            p: np.tensordot(mix[i], components, axes=(0, 0)) for i, p in enumerate(placements)
        }
        self.motion_rate_of_change = {
            p: np.gradient(m, 1.0 / MASTER_RATE, axis=1) / (2 * np.pi * 1.5)
            for p, m in self.motion.items()
        }

        # heart rate walk pulled toward the activity target
        hr_base = rng.uniform(62.0, 80.0)
        hr_target = _phase_profile(t, schedule, {k: hr_base + v for k, v in _HR_SHIFT.items()}, hr_base)
        hr_knots = np.empty(int(duration) + 2)
        hr = hr_base
        for i in range(len(hr_knots)):
            hr_knots[i] = hr
            target = hr_target[min(int(i * MASTER_RATE), n - 1)]
            hr = min(max(hr + 0.06 * (target - hr) + rng.normal(0.0, 1.1), 60.0), 120.0)
        self.heart_rate = np.interp(t, np.linspace(0.0, duration, len(hr_knots)), hr_knots)

        beat_phase = 2 * np.pi * np.cumsum(self.heart_rate / 60.0) / MASTER_RATE
        h2, h3 = rng.uniform(0.35, 0.45), rng.uniform(0.12, 0.2)
        d2, d3 = rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)
        resp = 1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.18, 0.3) * t + rng.uniform(0, 2 * np.pi))
        self.pulse = resp * (
            np.sin(beat_phase) + h2 * np.sin(2 * beat_phase + d2) + h3 * np.sin(3 * beat_phase + d3)
        )


def _device_recording(config, seed, user_idx, user_id, dev: DeviceSpec, latents: _UserLatents):
    param_rng = _rng(seed, 1, user_idx, _stable_tag(dev.device_id))
    noise_rng = _rng(seed, 2, user_idx, _stable_tag(dev.device_id))
    n_dev = int(round(config.duration_s * dev.rate)) + 1
    t_dev = np.arange(n_dev, dtype=np.float64) / dev.rate

    rot_acc = _rotation(param_rng, config.device_tilt_deg)
    rot_gyro = _rotation(param_rng, config.device_tilt_deg)
    gain_acc = param_rng.uniform(0.8, 1.25)
    gain_gyro = param_rng.uniform(0.8, 1.25)
    ppg_alpha = param_rng.uniform(0.25, 0.4)
    ppg_gain = param_rng.uniform(0.85, 1.2)
    ppg_offset = param_rng.uniform(-0.5, 0.5)

    channels = []
    motion = latents.motion[dev.placement]
    spin = latents.motion_rate_of_change[dev.placement]
    for kind in dev.sensors:
        if kind is SensorKind.ACC:
            sig = 3.0 * gain_acc * _drifting_rotate(motion, rot_acc, param_rng, latents.t)
            for axis in range(3):
                vals = np.interp(t_dev, latents.t, sig[axis])
                vals += 3.0 * config.acc_noise * noise_rng.normal(size=n_dev)
                channels.append(SensorChannel(kind, axis, t_dev.copy(), vals, dev.rate))
        elif kind is SensorKind.GYRO:
            sig = 2.0 * gain_gyro * _drifting_rotate(spin, rot_gyro, param_rng, latents.t)
            for axis in range(3):
                vals = np.interp(t_dev, latents.t, sig[axis])
                vals += 2.0 * config.gyro_noise * noise_rng.normal(size=n_dev)
                channels.append(SensorChannel(kind, axis, t_dev.copy(), vals, dev.rate))
        elif kind is SensorKind.PPG:
            shaped = lfilter([ppg_alpha], [1.0, ppg_alpha - 1.0], latents.pulse)
            wander_knots = _knot_walk(
                noise_rng, max(3, int(config.duration_s / 15) + 1), 0.0, 0.12, -0.5, 0.5
            )
            wander = _interp_knots(t_dev, config.duration_s, wander_knots)
            vals = ppg_gain * np.interp(t_dev, latents.t, shaped) + ppg_offset + wander
            vals += config.ppg_noise * noise_rng.normal(size=n_dev)
            channels.append(SensorChannel(kind, 0, t_dev.copy(), vals, dev.rate))

    return Recording(
        user_id=user_id,
        device_id=dev.device_id,
        placement=dev.placement,
        channels=channels,
        session_id=config.session_id,
        schedule=config.resolved_schedule(),
        meta={"units": {"acc": "m/s^2", "gyro": "rad/s", "ppg": "a.u."}},
    )


def _stable_tag(device_id: str) -> int:
    # substream tag independent of interpreter hash randomization
    tag = 0
    for ch in device_id:
        tag = (tag * 31 + ord(ch)) % (2**31)
    return tag


def generate(config: SynthConfig, seed: int) -> list[Recording]:
    """Generate one session of recordings for every (user, device).

    Deterministic for a fixed ``(config, seed)``; per-user and
    per-device random substreams make the result independent of
    generation order.
    """
    config.validate()
    placements = tuple(dict.fromkeys(d.placement for d in config.devices))
    recordings = []
    for u in range(config.n_users):
        user_id = f"u{u:02d}"
        latents = _UserLatents(config, seed, u, placements)
        for dev in config.devices:
            recordings.append(_device_recording(config, seed, u, user_id, dev, latents))
    return recordings

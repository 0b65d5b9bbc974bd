"""Per-sensor-set model bundles: training, persistence, selection.

One bundle holds a trained encoder and matcher for one sensor-set key
(e.g. ``acc+gyro``) together with everything needed to reproduce its
inputs. At runtime the registry picks the bundle whose key is the
largest trained subset of the sensors two devices share.

Bundle file layout (little-endian, byte-exact):

    8 bytes   magic ``WIDBNDL\\0``
    u32       format version
    u32       metadata length, then that many bytes of UTF-8 JSON
              (key, architecture, preprocessing, hyperparams,
              provenance, ordered array manifest)
    per array u32 byte length, then raw float32 values
    u32       CRC-32 of every preceding byte

Weights are stored as float32 exactly as trained, so a round-trip is
bitwise lossless.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .dataset import recordings_fingerprint
from .encoder import (
    EncoderConfig,
    TrainConfig,
    TrainingLog,
    WindowEncoder,
    train_encoder,
)
from .errors import (
    CorruptBundle,
    NoOverlap,
    NoTrainedModel,
    UncoverableKey,
    VersionMismatch,
)
from .matcher import MatcherTrainConfig, PairMatcher, train_matcher
from .pairs import build_labeled_pairs, index_aligned_windows
from .preprocess import prepare, segment
from .sensors import KIND_ORDER, Recording, SensorKind, channel_count, window_duration_for

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"WIDBNDL\x00"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


def canonical_key(kinds) -> frozenset[SensorKind]:
    key = frozenset(SensorKind(k) for k in kinds)
    if not key:
        raise ValueError("sensor-set key must be nonempty")
    return key


def key_str(key: frozenset[SensorKind]) -> str:
    return "+".join(k.value for k in KIND_ORDER if k in key)


def key_from_str(text: str) -> frozenset[SensorKind]:
    return canonical_key(part.strip() for part in text.split("+"))


@dataclass(eq=False)
class ModelBundle:
    key: frozenset[SensorKind]
    encoder_config: EncoderConfig
    matcher_hidden: int
    window_duration: float
    sample_rate: float
    hyperparams: dict
    provenance: dict
    encoder_state: dict[str, np.ndarray]
    matcher_state: dict[str, np.ndarray]
    version: int = FORMAT_VERSION

    def build_encoder(self) -> WindowEncoder:
        model = WindowEncoder(self.encoder_config)
        _load_state(model, self.encoder_state)
        model.eval()
        return model

    def build_matcher(self) -> PairMatcher:
        model = PairMatcher(self.encoder_config.embedding_dim, self.matcher_hidden)
        _load_state(model, self.matcher_state)
        model.eval()
        return model


def _load_state(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = model.state_dict()
    tensors = {}
    for name, ref in state.items():
        arr = arrays[name]
        tensors[name] = torch.from_numpy(arr.reshape(ref.shape).copy()).to(ref.dtype)
    model.load_state_dict(tensors)


def _dump_state(model: torch.nn.Module) -> dict[str, np.ndarray]:
    # float32 is the trained precision; integer buffers (batch-norm
    # counters) are small enough to survive the float32 container
    return {
        name: tensor.detach().cpu().numpy().astype("<f4")
        for name, tensor in model.state_dict().items()
    }


def save_bundle(bundle: ModelBundle, path: Path) -> Path:
    path = Path(path)
    arrays = [("encoder", n, a) for n, a in bundle.encoder_state.items()]
    arrays += [("matcher", n, a) for n, a in bundle.matcher_state.items()]
    meta = {
        "format_version": bundle.version,
        "key": key_str(bundle.key),
        "encoder": asdict(bundle.encoder_config),
        "matcher": {"hidden": bundle.matcher_hidden},
        "preprocessing": {
            "window_duration_s": bundle.window_duration,
            "sample_rate_hz": bundle.sample_rate,
            "scaler": "per-recording-channel standard scaling",
        },
        "hyperparams": bundle.hyperparams,
        "provenance": bundle.provenance,
        "arrays": [
            {"section": sec, "name": name, "shape": list(arr.shape)}
            for sec, name, arr in arrays
        ],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [BUNDLE_MAGIC, _U32.pack(bundle.version), _U32.pack(len(blob)), blob]
    for _, _, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        parts += [_U32.pack(len(raw)), raw]
    body = b"".join(parts)
    path.write_bytes(body + _U32.pack(zlib.crc32(body)))
    return path


def load_bundle(path: Path) -> ModelBundle:
    """Read and verify a bundle file.

    Raises:
        CorruptBundle: bad magic, truncation, or checksum failure.
        VersionMismatch: format version unsupported.
    """
    data = Path(path).read_bytes()
    if len(data) < len(BUNDLE_MAGIC) + 12 or not data.startswith(BUNDLE_MAGIC):
        raise CorruptBundle(f"{path}: not a bundle file")
    body, crc_bytes = data[:-4], data[-4:]
    if _U32.pack(zlib.crc32(body)) != crc_bytes:
        raise CorruptBundle(f"{path}: checksum failure")
    off = len(BUNDLE_MAGIC)
    (version,) = _U32.unpack_from(body, off)
    off += 4
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: bundle format {version}, this build reads {FORMAT_VERSION}"
        )
    (meta_len,) = _U32.unpack_from(body, off)
    off += 4
    meta = json.loads(body[off : off + meta_len].decode())
    off += meta_len

    sections: dict[str, dict[str, np.ndarray]] = {"encoder": {}, "matcher": {}}
    for spec in meta["arrays"]:
        if off + 4 > len(body):
            raise CorruptBundle(f"{path}: truncated array table")
        (nbytes,) = _U32.unpack_from(body, off)
        off += 4
        raw = body[off : off + nbytes]
        if len(raw) != nbytes:
            raise CorruptBundle(f"{path}: truncated weights")
        off += nbytes
        arr = np.frombuffer(raw, dtype="<f4").reshape(spec["shape"]).copy()
        sections[spec["section"]][spec["name"]] = arr

    enc = meta["encoder"]
    enc_config = EncoderConfig(
        in_channels=enc["in_channels"],
        conv_filters=tuple(enc["conv_filters"]),
        conv_kernels=tuple(enc["conv_kernels"]),
        dropout=enc["dropout"],
        proj_dims=tuple(enc["proj_dims"]),
    )
    return ModelBundle(
        key=key_from_str(meta["key"]),
        encoder_config=enc_config,
        matcher_hidden=meta["matcher"]["hidden"],
        window_duration=meta["preprocessing"]["window_duration_s"],
        sample_rate=meta["preprocessing"]["sample_rate_hz"],
        hyperparams=meta["hyperparams"],
        provenance=meta["provenance"],
        encoder_state=sections["encoder"],
        matcher_state=sections["matcher"],
        version=version,
    )


def bundle_filename(key: frozenset[SensorKind]) -> str:
    return f"bundle_{key_str(key).replace('+', '_')}.widb"


class Registry:
    """Immutable map from sensor-set key to trained bundle."""

    def __init__(self, bundles: dict[frozenset[SensorKind], ModelBundle]):
        self._bundles = dict(bundles)

    def __contains__(self, key) -> bool:
        return frozenset(key) in self._bundles

    def __getitem__(self, key) -> ModelBundle:
        return self._bundles[frozenset(key)]

    def keys(self):
        return sorted(self._bundles, key=key_str)

    def __len__(self) -> int:
        return len(self._bundles)

    @classmethod
    def from_dir(cls, path: Path) -> "Registry":
        bundles = {}
        for file in sorted(Path(path).glob("*.widb")):
            bundle = load_bundle(file)
            bundles[bundle.key] = bundle
        if not bundles:
            raise NoTrainedModel(f"no bundles under {path}")
        return cls(bundles)

    def save(self, out_dir: Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return [
            save_bundle(self._bundles[key], out_dir / bundle_filename(key))
            for key in self.keys()
        ]


def select_model(registry: Registry, sensors_a, sensors_b) -> ModelBundle:
    """Pick the bundle for the largest trained subset of shared sensors.

    Preference among trained subsets of the overlap: larger sensor set
    first, then sets containing PPG, then lexicographic key order. The
    result depends only on the registry contents and the two sensor
    sets, so selection is deterministic.

    Raises:
        NoOverlap: the devices share no sensors.
        NoTrainedModel: overlap exists but no trained subset covers it.
    """
    overlap = frozenset(sensors_a) & frozenset(sensors_b)
    if not overlap:
        raise NoOverlap("devices share no sensors")
    candidates = [k for k in registry.keys() if k <= overlap]
    if not candidates:
        raise NoTrainedModel(f"no trained bundle inside overlap {key_str(overlap)}")
    best = min(
        candidates,
        key=lambda k: (-len(k), SensorKind.PPG not in k, key_str(k)),
    )
    if best != overlap:
        logger.warning(
            "exact overlap %s untrained; falling back to %s", key_str(overlap), key_str(best)
        )
    return registry[best]


@dataclass
class TrainedKey:
    bundle: ModelBundle
    encoder_log: TrainingLog
    matcher_log: dict


def train_all(
    recordings: list[Recording],
    keys: list[frozenset[SensorKind]],
    base_encoder: EncoderConfig | None,
    train_config: TrainConfig,
    matcher_config: MatcherTrainConfig | None = None,
    seed: int = 0,
    n_matcher_pairs: int = 3000,
    n_calibration_users: int = 2,
) -> tuple[Registry, dict[frozenset[SensorKind], TrainedKey]]:
    """Train one bundle per sensor-set key over the given recordings.

    ``base_encoder`` carries the architecture; ``in_channels`` is filled
    per key. Preprocessing runs once per recording and is shared.

    The last ``n_calibration_users`` users are excluded from encoder
    training but included in matcher training: their embedding pairs are
    as loosely aligned as a new wearer's will be, which keeps the
    matcher's decision boundary honest instead of calibrated to the
    near-perfect alignment the encoder reaches on its own training
    users.

    Raises:
        UncoverableKey: no two devices share a requested key.
    """
    matcher_config = matcher_config or MatcherTrainConfig(seed=seed)
    prepared = [prepare(r) for r in recordings]
    fingerprint = recordings_fingerprint(recordings)
    users = sorted({r.user_id for r in recordings})
    encoder_users = set(users[: len(users) - n_calibration_users]) if n_calibration_users else set(users)
    if len(encoder_users) < 2:
        encoder_users = set(users)

    bundles = {}
    details = {}
    for i, key in enumerate(keys):
        key = canonical_key(key)
        covering = [r for r in prepared if key <= r.kinds()]
        if len({r.device_id for r in covering}) < 2:
            raise UncoverableKey(f"no device pair shares {key_str(key)}")
        windows = []
        for rec in covering:
            windows.extend(segment(rec, key))

        if base_encoder is None:
            enc_config = EncoderConfig(in_channels=channel_count(key))
        else:
            enc_config = replace(base_encoder, in_channels=channel_count(key))
        key_seed = seed + 1000 * i
        tcfg = replace(train_config, seed=key_seed)
        rng = np.random.default_rng(key_seed)
        enc_windows = [w for w in windows if w.user_id in encoder_users]
        calib_windows = [w for w in windows if w.user_id not in encoder_users]
        index = index_aligned_windows(enc_windows, key)
        val_index = index_aligned_windows(calib_windows, key) or None
        logger.info("training %s on %d windows", key_str(key), len(enc_windows))
        encoder_model, enc_log = train_encoder(index, enc_config, tcfg, rng, val_index=val_index)

        # matcher supervision oversamples the calibration users so the
        # boundary reflects unseen-wearer alignment, not the encoder's
        # saturated alignment on its own training users
        pair_rng = np.random.default_rng(key_seed + 1)
        n_calib = int(round(0.5 * n_matcher_pairs)) if calib_windows else 0
        labeled = build_labeled_pairs(windows, key, n_matcher_pairs - n_calib, 0.5, pair_rng)
        if n_calib:
            labeled += build_labeled_pairs(calib_windows, key, n_calib, 0.5, pair_rng)
        mcfg = replace(matcher_config, seed=key_seed)
        matcher_model, matcher_log = train_matcher(labeled, encoder_model, mcfg, pair_rng)

        bundle = ModelBundle(
            key=key,
            encoder_config=enc_config,
            matcher_hidden=64,
            window_duration=window_duration_for(key),
            sample_rate=100.0,
            hyperparams={
                "initial_lr": tcfg.initial_lr,
                "momentum": tcfg.momentum,
                "batch_size": tcfg.batch_size,
                "temperature": tcfg.temperature,
                "max_epochs": tcfg.max_epochs,
                "convergence_window": tcfg.convergence_window,
                "convergence_tol": tcfg.convergence_tol,
                "matcher_lr": mcfg.lr,
                "matcher_epochs": mcfg.epochs,
            },
            provenance={
                "data_sha256": fingerprint,
                "seed": key_seed,
                "epochs_trained": len(enc_log.epochs),
                "best_epoch": enc_log.best_epoch,
                "best_val_loss": enc_log.best_val_loss,
                "matcher_val_accuracy": matcher_log["val_accuracy"],
                "train_users": users,
                "calibration_users": sorted(set(users) - encoder_users),
            },
            encoder_state=_dump_state(encoder_model),
            matcher_state=_dump_state(matcher_model),
        )
        bundles[key] = bundle
        details[key] = TrainedKey(bundle, enc_log, matcher_log)
    return Registry(bundles), details

"""Command-line entry point.

Verbs: gen-data, train, eval, match, embed, simulate. Exit codes:
0 success (or matched), 1 clean unmatched (match only), 2 usage/config
error, 3 data error, 4 missing/unusable model. Outputs land only under
--out-dir / --out; a --config file (JSON object or key=value lines)
supplies defaults that explicit flags override.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import errors
from .analysis import (
    activity_breakdown,
    evaluate_matcher,
    group_similarity,
    placement_sweep,
    write_group_stats,
    write_metrics_json,
    write_sweep_csv,
)
from .dataset import load_dataset, load_recording, write_dataset
from .encoder import EncoderConfig, TrainConfig, embed_array, embed_window, small_encoder_config
from .matcher import MatcherTrainConfig, match
from .pairs import PairLabel, build_labeled_pairs, split_users
from .preprocess import build_windows, prepare, segment
from .registry import Registry, bundle_filename, key_from_str, key_str, train_all
from .sensors import channel_count
from .simulate import run_session, splice_recording, write_event_log
from .synth import SynthConfig, config_from_dict, generate

USAGE_ERRORS = (errors.InvalidConfig, errors.ShapeMismatch, ValueError)
DATA_ERRORS = (
    errors.MalformedFile,
    errors.EmptyChannel,
    errors.NonMonotonicTime,
    errors.TooShort,
    errors.InsufficientData,
    errors.NotEnoughPairs,
    errors.SingleDevice,
    errors.NoOverlap,
    errors.InsufficientGroups,
    errors.EmptyTestSet,
    errors.SingleClassTestSet,
    errors.MissingActivityLabels,
    errors.DegenerateLabels,
    errors.UncoverableKey,
)
MODEL_ERRORS = (
    errors.MissingModel,
    errors.NoTrainedModel,
    errors.VersionMismatch,
    errors.CorruptBundle,
)

DEFAULT_KEYS = "acc,acc+gyro,acc+gyro+ppg"


def load_config_file(path: str | None) -> dict:
    """JSON object, or key=value lines with JSON-decoded values."""
    if not path:
        return {}
    text = Path(path).read_text()
    try:
        data = json.loads(text)
        if not isinstance(data, dict):
            raise errors.InvalidConfig(f"{path}: top-level config must be an object")
        return data
    except json.JSONDecodeError:
        pass
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise errors.InvalidConfig(f"{path}:{lineno}: expected key=value")
        value = value.strip()
        try:
            data[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            data[key.strip()] = value
    return data


def _merge(args: argparse.Namespace, file_config: dict, defaults: dict) -> argparse.Namespace:
    """defaults < config file < explicit flags (flags parse to None when unset)."""
    for name, fallback in defaults.items():
        if getattr(args, name, None) is None:
            setattr(args, name, file_config.get(name, fallback))
    return args


def _parse_keys(spec: str) -> list[frozenset]:
    return [key_from_str(part) for part in spec.split(",") if part.strip()]


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    file_config = load_config_file(args.config)
    _merge(args, file_config, {"seed": 0, "users": None, "duration": None})
    gen_keys = {
        k: v
        for k, v in file_config.items()
        if k not in {"seed", "users", "duration", "out_dir"}
    }
    config = config_from_dict(gen_keys) if gen_keys else SynthConfig()
    if args.users is not None:
        config.n_users = int(args.users)
    if args.duration is not None:
        config.duration_s = float(args.duration)
    config.validate()

    recordings = generate(config, int(args.seed))
    out_dir = Path(args.out_dir)
    write_dataset(recordings, out_dir)
    manifest = {
        "seed": int(args.seed),
        "n_users": config.n_users,
        "duration_s": config.duration_s,
        "devices": [
            {
                "device_id": d.device_id,
                "placement": d.placement.value,
                "rate": d.rate,
                "sensors": [s.value for s in d.sensors],
            }
            for d in config.devices
        ],
        "schedule": [
            {"name": p.name, "start_s": p.start_s, "end_s": p.end_s}
            for p in config.resolved_schedule()
        ],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    users = {r.user_id for r in recordings}
    devices = {r.device_id for r in recordings}
    print(
        f"wrote {len(recordings)} recordings ({len(users)} users x {len(devices)} devices, "
        f"{config.duration_s:g} s) to {out_dir}"
    )
    return 0


def cmd_train(args) -> int:
    file_config = load_config_file(args.config)
    _merge(
        args,
        file_config,
        {
            "seed": 0,
            "sensors": DEFAULT_KEYS,
            "epochs": 40,
            "batch_size": 64,
            "lr": 0.1,
            "temperature": 0.1,
            "momentum": 0.0,
            "oversample": 2.5,
            "test_users": 3,
            "calibration_users": 2,
            "arch": "default",
            "matcher_pairs": 3000,
            "matcher_epochs": 60,
        },
    )
    keys = _parse_keys(args.sensors)
    out_dir = Path(args.out_dir)
    existing = [out_dir / bundle_filename(k) for k in keys if (out_dir / bundle_filename(k)).exists()]
    if existing and not args.force:
        raise errors.InvalidConfig(
            f"bundle(s) already exist ({', '.join(p.name for p in existing)}); use --force to retrain"
        )

    recordings = load_dataset(args.data)
    users = sorted({r.user_id for r in recordings})
    n_test = int(args.test_users)
    if n_test > 0:
        train_users, held_out = split_users(users, n_test)
        recordings = [r for r in recordings if r.user_id in train_users]
    else:
        held_out = []

    if args.arch == "small":
        base = small_encoder_config(1)
    elif args.arch == "default":
        base = EncoderConfig(in_channels=1)
    else:
        raise errors.InvalidConfig(f"unknown --arch {args.arch!r} (default|small)")

    train_config = TrainConfig(
        initial_lr=float(args.lr),
        momentum=float(args.momentum),
        batch_size=int(args.batch_size),
        temperature=float(args.temperature),
        max_epochs=int(args.epochs),
        epoch_oversample=float(args.oversample),
        convergence_window=max(10, int(args.epochs)),
    )
    matcher_config = MatcherTrainConfig(epochs=int(args.matcher_epochs))
    registry, details = train_all(
        recordings,
        keys,
        base,
        train_config,
        matcher_config,
        seed=int(args.seed),
        n_matcher_pairs=int(args.matcher_pairs),
        n_calibration_users=int(args.calibration_users),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    registry.save(out_dir)

    summary = {"held_out_users": held_out, "keys": {}}
    for key, trained in details.items():
        name = key_str(key)
        loss_csv = out_dir / f"loss_{name.replace('+', '_')}.csv"
        with open(loss_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "train_loss", "val_loss"])
            for e in trained.encoder_log.epochs:
                writer.writerow([e.epoch, f"{e.lr:.8f}", f"{e.train_loss:.6f}", f"{e.val_loss:.6f}"])
        summary["keys"][name] = {
            "bundle": bundle_filename(key),
            "epochs_trained": len(trained.encoder_log.epochs),
            "best_epoch": trained.encoder_log.best_epoch,
            "best_val_loss": trained.encoder_log.best_val_loss,
            "matcher_val_accuracy": trained.matcher_log["val_accuracy"],
        }
        print(
            f"trained {name}: {summary['keys'][name]['epochs_trained']} epochs, "
            f"val loss {trained.encoder_log.best_val_loss:.4f}, "
            f"matcher acc {trained.matcher_log['val_accuracy']:.3f}"
        )
    (out_dir / "training_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return 0


def cmd_eval(args) -> int:
    file_config = load_config_file(args.config)
    _merge(
        args,
        file_config,
        {
            "seed": 0,
            "threshold": 0.5,
            "thresholds": None,
            "sensors": None,
            "pairs": 1000,
            "sweep_pairs": 400,
            "users": None,
        },
    )
    registry = Registry.from_dir(args.registry)
    keys = _parse_keys(args.sensors) if args.sensors else list(registry.keys())
    for key in keys:
        if key not in registry:
            raise errors.MissingModel(f"no trained bundle for {key_str(key)}")

    recordings = load_dataset(args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(args.seed))

    thresholds = (
        [float(t) for t in str(args.thresholds).split(",") if t.strip()]
        if args.thresholds
        else [float(args.threshold)]
    )

    prepared = [prepare(r) for r in recordings]
    reports = []
    windows_by_key = {}
    for key in keys:
        bundle = registry[key]
        windows = build_windows(prepared, key, prepared=True)
        eval_users = _eval_users(args.users, bundle, windows)
        eval_windows = [w for w in windows if w.user_id in eval_users]
        windows_by_key[key] = eval_windows
        encoder = bundle.build_encoder()
        matcher = bundle.build_matcher()
        pairs = build_labeled_pairs(eval_windows, key, int(args.pairs), 0.5, rng)
        for threshold in thresholds:
            report = evaluate_matcher(
                matcher,
                encoder,
                pairs,
                threshold,
                config={"sensors": key_str(key), "users": sorted(eval_users)},
            )
            reports.append(report)
            print(
                f"{key_str(key)} @ {threshold:.2f}: TPR {report.tpr:.3f} "
                f"FPR {report.fpr:.3f} FNR {report.fnr:.3f} (n={report.total})"
            )

        if not args.no_groups:
            stats = group_similarity(eval_windows, encoder, rng, n_pairs=int(args.pairs))
            tag = key_str(key).replace("+", "_")
            write_group_stats(
                stats, out_dir / f"groups_{tag}.json", out_dir / f"groups_hist_{tag}.csv"
            )
            print(
                f"{key_str(key)} groups: "
                + "  ".join(f"{g}: mu={s.mu:.3f} sd={s.sigma:.3f}" for g, s in sorted(stats.items()))
            )
        if not args.no_activities:
            try:
                per_phase = activity_breakdown(
                    eval_windows, matcher, encoder, rng, n_pairs=int(args.sweep_pairs)
                )
            except errors.MissingActivityLabels:
                per_phase = {}
            for phase, report in sorted(per_phase.items()):
                report.config["sensors"] = key_str(key)
                reports.append(report)

    if not args.no_placement_sweep:
        rows = placement_sweep(
            windows_by_key,
            registry,
            rng,
            n_pairs=int(args.sweep_pairs),
            threshold=float(args.threshold),
        )
        write_sweep_csv(rows, out_dir / "placement_sweep.csv")
        reports.extend(r.report for r in rows)

    write_metrics_json(reports, out_dir / "metrics.json")
    print(f"reports under {out_dir}")
    return 0


def _eval_users(users_arg, bundle, windows):
    all_users = sorted({w.user_id for w in windows})
    if users_arg:
        wanted = [u.strip() for u in str(users_arg).split(",") if u.strip()]
        missing = set(wanted) - set(all_users)
        if missing:
            raise errors.InvalidConfig(f"unknown users: {sorted(missing)}")
        return wanted
    trained_on = set(bundle.provenance.get("train_users", []))
    held_out = [u for u in all_users if u not in trained_on]
    return held_out or all_users


def cmd_match(args) -> int:
    from .registry import load_bundle

    bundle = load_bundle(args.bundle)
    encoder = bundle.build_encoder()
    matcher = bundle.build_matcher()

    embeddings = []
    for path in (args.window_a, args.window_b):
        recording = load_recording(path)
        missing = bundle.key - recording.kinds()
        if missing:
            raise errors.ShapeMismatch(
                f"{path} lacks {sorted(k.value for k in missing)} required by "
                f"the {key_str(bundle.key)} bundle"
            )
        windows = segment(prepare(recording), bundle.key)
        embeddings.append(embed_window(encoder, windows[0]))

    decision = match(matcher, embeddings[0], embeddings[1], float(args.threshold))
    print(f"{decision.label.value.upper()} probability={decision.probability:.4f} "
          f"threshold={decision.threshold:g}")
    return 0 if decision.label is PairLabel.MATCHED else 1


def cmd_embed(args) -> int:
    from .registry import load_bundle

    bundle = load_bundle(args.bundle)
    encoder = bundle.build_encoder()
    data_path = Path(args.data)
    recordings = (
        load_dataset(data_path) if data_path.is_dir() else [load_recording(data_path)]
    )
    windows = build_windows(recordings, bundle.key)
    if not windows:
        raise errors.InsufficientData(f"no {key_str(bundle.key)}-capable recordings in {data_path}")
    matrix = embed_array(encoder, windows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = matrix.shape[1]
        writer.writerow(
            ["user_id", "device_id", "placement", "start_time", "activity"]
            + [f"e{i}" for i in range(dim)]
        )
        for w, row in zip(windows, matrix):
            writer.writerow(
                [w.user_id, w.device_id, w.placement.value, f"{w.start_time:.6f}", w.activity or ""]
                + [f"{v:.6f}" for v in row]
            )
    print(f"wrote {len(windows)} embeddings (dim {matrix.shape[1]}) to {out}")
    return 0


def cmd_simulate(args) -> int:
    registry = Registry.from_dir(args.registry)
    recordings = load_dataset(args.data)
    by_user_device = {(r.user_id, r.device_id): r for r in recordings}

    user = args.user or sorted({r.user_id for r in recordings})[0]
    device_ids = sorted({r.device_id for r in recordings if r.user_id == user})
    device_a = args.device_a or (device_ids[0] if device_ids else None)
    device_b = args.device_b or (device_ids[1] if len(device_ids) > 1 else None)
    if not device_a or not device_b:
        raise errors.InvalidConfig(f"user {user} needs two devices to simulate")
    try:
        rec_a = by_user_device[(user, device_a)]
        rec_b = by_user_device[(user, device_b)]
    except KeyError as exc:
        raise errors.InvalidConfig(f"no recording for user {user}, device {exc}") from exc

    swap_time = None
    if args.swap_user:
        if args.swap_at is None:
            raise errors.InvalidConfig("--swap-user requires --swap-at seconds")
        swap_time = float(args.swap_at)
        donor = by_user_device.get((args.swap_user, device_b))
        if donor is None:
            raise errors.InvalidConfig(f"no recording for swap user {args.swap_user} on {device_b}")
        rec_b = splice_recording(rec_b, donor, swap_time)

    result = run_session(
        registry, rec_a, rec_b, threshold=float(args.threshold), realtime=not args.fast
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_event_log(result, out_dir / "events.csv")
    summary = {
        "user": user,
        "device_a": result.device_a,
        "device_b": result.device_b,
        "model_key": result.model_key,
        "threshold": result.threshold,
        "windows": len(result.events),
        "matched_fraction": result.matched_fraction,
    }
    if swap_time is not None:
        summary["swap_time_s"] = swap_time
        summary["swap_user"] = args.swap_user
        first = result.first_unmatched_after(swap_time)
        summary["first_unmatched_after_swap_s"] = first
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(
        f"model {result.model_key}: {len(result.events)} windows, "
        f"{100 * result.matched_fraction:.1f}% matched"
    )
    if swap_time is not None:
        print(f"first unmatched after swap at t={swap_time:g}s: {summary['first_unmatched_after_swap_s']}")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wearid",
        description="Train, evaluate and run cross-device wearer verification models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic multi-device dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--users", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one bundle per sensor-set key")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sensors", help=f"comma-separated keys (default {DEFAULT_KEYS})")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--oversample", type=float, help="batches per epoch multiplier")
    p.add_argument("--test-users", type=int, help="hold out N users from training (default 3)")
    p.add_argument(
        "--calibration-users",
        type=int,
        help="train users kept out of the encoder but used for matcher calibration (default 2)",
    )
    p.add_argument("--arch", choices=["default", "small"])
    p.add_argument("--matcher-pairs", type=int)
    p.add_argument("--matcher-epochs", type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained registry on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--thresholds", help="comma-separated threshold sweep")
    p.add_argument("--sensors", help="restrict to these keys")
    p.add_argument("--pairs", type=int)
    p.add_argument("--sweep-pairs", type=int)
    p.add_argument("--users", help="evaluate these users (default: ones unseen in training)")
    p.add_argument("--no-groups", action="store_true")
    p.add_argument("--no-placement-sweep", action="store_true")
    p.add_argument("--no-activities", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("match", help="match two recording files against one bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("window_a")
    p.add_argument("window_b")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("embed", help="dump window embeddings to CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("simulate", help="replay two device streams window by window")
    p.add_argument("--registry", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--user")
    p.add_argument("--device-a")
    p.add_argument("--device-b")
    p.add_argument("--swap-user", help="splice this user into device B")
    p.add_argument("--swap-at", type=float, help="swap time in seconds")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fast", action="store_true", help="run unthrottled instead of at data rate")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MODEL_ERRORS as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Pair construction for contrastive training and matcher supervision.

Two windows are a *matched* pair when they come from different devices
on the same wearer covering the same time span; everything else that we
emit as *unmatched* is either a different wearer or the same wearer at a
clearly different time (at least one window length apart, so adjacent
context never leaks into the negatives).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NotEnoughPairs, SingleDevice
from .sensors import Placement, SensorKind, Window


class PairLabel(str, Enum):
    MATCHED = "matched"
    UNMATCHED = "unmatched"


def is_matched(a: Window, b: Window) -> bool:
    return (
        a.user_id == b.user_id
        and a.device_id != b.device_id
        and a.time_key() == b.time_key()
        and a.duration == b.duration
        and a.sensor_set == b.sensor_set
    )


def is_unmatched(a: Window, b: Window) -> bool:
    return a.user_id != b.user_id or abs(a.start_time - b.start_time) >= a.duration


@dataclass(eq=False)
class AlignedPair:
    window_a: Window
    window_b: Window
    label: PairLabel

    def __post_init__(self):
        ok = is_matched(self.window_a, self.window_b) if self.label is PairLabel.MATCHED \
            else is_unmatched(self.window_a, self.window_b)
        assert ok, "pair violates its label predicate"


@dataclass(eq=False)
class ContrastiveBatch:
    """B anchor/positive rows; anchors[i] and positives[i] are matched,
    and no two rows share a (user, time) key, so every cross pairing is
    a true negative."""

    anchors: list[Window]
    positives: list[Window]
    keys: list[tuple[str, float]]

    def __len__(self) -> int:
        return len(self.anchors)


AlignmentIndex = dict[tuple[str, float], dict[str, Window]]


def index_aligned_windows(windows: list[Window], sensor_set: frozenset[SensorKind]) -> AlignmentIndex:
    """Map (user_id, start_time) -> {device_id: window} for one sensor set.

    Times covered by fewer than two devices are dropped; an empty index
    (fully disjoint recordings) is valid output.
    """
    sensor_set = frozenset(sensor_set)
    index: AlignmentIndex = {}
    for w in windows:
        if w.sensor_set != sensor_set:
            continue
        index.setdefault((w.user_id, w.time_key()), {})[w.device_id] = w
    return {key: entry for key, entry in index.items() if len(entry) >= 2}


def select_device_pair(entry: dict[str, Window], rng: np.random.Generator) -> tuple[str, str]:
    """Uniformly random unordered pair of distinct devices from an entry."""
    devices = sorted(entry)
    if len(devices) < 2:
        raise SingleDevice(f"only {devices} available at this (user, time)")
    i, j = rng.choice(len(devices), size=2, replace=False)
    a, b = devices[i], devices[j]
    return (a, b) if a < b else (b, a)


def build_contrastive_batch(
    index: AlignmentIndex,
    batch_size: int,
    rng: np.random.Generator,
    placements: tuple[Placement, Placement] | None = None,
) -> ContrastiveBatch:
    """Sample B matched pairs over distinct (user, time) keys.

    Keys are drawn without replacement; device pairs are re-randomized
    per key. ``placements`` optionally restricts which two placements
    the pair may come from.
    """
    valid = _valid_keys(index, placements)
    if len(valid) < batch_size:
        raise NotEnoughPairs(
            f"need {batch_size} aligned (user, time) keys with >= 2 devices, have {len(valid)}"
        )
    chosen = rng.choice(len(valid), size=batch_size, replace=False)
    anchors, positives, keys = [], [], []
    for idx in chosen:
        key = valid[idx]
        entry = index[key]
        if placements is not None:
            entry = _restrict(entry, placements)
        da, db = select_device_pair(entry, rng)
        if rng.random() < 0.5:
            da, db = db, da
        anchors.append(entry[da])
        positives.append(entry[db])
        keys.append(key)
    return ContrastiveBatch(anchors, positives, keys)


def _valid_keys(index: AlignmentIndex, placements):
    keys = []
    for key in sorted(index):
        entry = index[key] if placements is None else _restrict(index[key], placements)
        if len(entry) >= 2:
            keys.append(key)
    return keys


def _restrict(entry: dict[str, Window], placements) -> dict[str, Window]:
    wanted = set(placements)
    return {d: w for d, w in entry.items() if w.placement in wanted}


def build_labeled_pairs(
    windows: list[Window],
    sensor_set: frozenset[SensorKind],
    n_pairs: int,
    impostor_ratio: float,
    rng: np.random.Generator,
    placements: tuple[Placement, Placement] | None = None,
    anchor_users: set[str] | None = None,
) -> list[AlignedPair]:
    """Labeled matched/unmatched pairs for matcher training and evaluation.

    ``impostor_ratio`` is the unmatched fraction; unmatched pairs split
    evenly between different-user and same-user-different-time. With
    ``placements`` given, both windows of every pair come from those two
    placements (one each for matched/different-user pairs). With
    ``anchor_users`` given, matched and same-user pairs come from those
    users, and every different-user pair has one side there.

    Raises:
        NotEnoughPairs: a requested category cannot be built.
    """
    anchors = windows if anchor_users is None else [w for w in windows if w.user_id in anchor_users]
    index = index_aligned_windows(anchors, sensor_set)
    n_unmatched = int(round(n_pairs * impostor_ratio))
    n_matched = n_pairs - n_unmatched
    n_cross_user = (n_unmatched + 1) // 2
    n_time_shift = n_unmatched - n_cross_user

    pairs: list[AlignedPair] = []
    pairs.extend(_matched_pairs(index, n_matched, rng, placements))
    pairs.extend(
        _cross_user_pairs(windows, sensor_set, n_cross_user, rng, placements, anchor_users)
    )
    pairs.extend(_time_shift_pairs(anchors, sensor_set, n_time_shift, rng, placements))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def _pool(windows, sensor_set, placements):
    pool = [w for w in windows if w.sensor_set == sensor_set]
    if placements is not None:
        wanted = set(placements)
        pool = [w for w in pool if w.placement in wanted]
    return pool


def _matched_pairs(index, n, rng, placements):
    if n == 0:
        return []
    valid = _valid_keys(index, placements)
    if not valid:
        raise NotEnoughPairs("no aligned multi-device (user, time) keys")
    out = []
    picks = rng.choice(len(valid), size=n, replace=True)
    for idx in picks:
        entry = index[valid[idx]]
        if placements is not None:
            entry = _restrict(entry, placements)
        da, db = select_device_pair(entry, rng)
        out.append(AlignedPair(entry[da], entry[db], PairLabel.MATCHED))
    return out


def _cross_user_pairs(windows, sensor_set, n, rng, placements):
    if n == 0:
        return []
    pool = _pool(windows, sensor_set, placements)
    by_user: dict[str, list[Window]] = {}
    for w in pool:
        by_user.setdefault(w.user_id, []).append(w)
    users = sorted(by_user)
    if len(users) < 2:
        raise NotEnoughPairs("different-user pairs need >= 2 users")
    out = []
    for _ in range(n):
        ui, uj = rng.choice(len(users), size=2, replace=False)
        wa = by_user[users[ui]][rng.integers(len(by_user[users[ui]]))]
        wb = by_user[users[uj]][rng.integers(len(by_user[users[uj]]))]
        if placements is not None and wa.placement == wb.placement:
            other = [w for w in by_user[users[uj]] if w.placement != wa.placement]
            if other:
                wb = other[rng.integers(len(other))]
        out.append(AlignedPair(wa, wb, PairLabel.UNMATCHED))
    return out


def _time_shift_pairs(windows, sensor_set, n, rng, placements):
    if n == 0:
        return []
    pool = _pool(windows, sensor_set, placements)
    by_user: dict[str, list[Window]] = {}
    for w in pool:
        by_user.setdefault(w.user_id, []).append(w)
    candidates = []
    for user in sorted(by_user):
        ws = by_user[user]
        spread = max(w.start_time for w in ws) - min(w.start_time for w in ws)
        if len(ws) >= 2 and spread >= ws[0].duration:
            candidates.append(user)
    if not candidates:
        raise NotEnoughPairs("same-user different-time pairs need time-separated windows")
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 50 * n + 100:
            raise NotEnoughPairs("could not find enough time-separated same-user pairs")
        user = candidates[rng.integers(len(candidates))]
        ws = by_user[user]
        wa = ws[rng.integers(len(ws))]
        wb = ws[rng.integers(len(ws))]
        if abs(wa.start_time - wb.start_time) < wa.duration:
            continue
        out.append(AlignedPair(wa, wb, PairLabel.UNMATCHED))
    return out


def split_users(windows_or_users, n_test: int) -> tuple[list[str], list[str]]:
    """Deterministic leave-users-out split: sorted ids, last ``n_test`` held out."""
    if windows_or_users and isinstance(windows_or_users[0], str):
        users = sorted(set(windows_or_users))
    else:
        users = sorted({w.user_id for w in windows_or_users})
    if n_test >= len(users):
        raise NotEnoughPairs(f"cannot hold out {n_test} of {len(users)} users")
    return users[: len(users) - n_test], users[len(users) - n_test :]

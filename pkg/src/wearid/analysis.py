"""Embedding similarity analysis and matcher evaluation.

Two views of system quality:

* distribution of Spearman rank correlation between embedding pairs,
  split into group A (same wearer, two devices, different times),
  group B (different wearers) and group C (same wearer, two devices,
  same time) -- a well-trained encoder pushes C far right of A and B;
* TPR / FPR / FNR of the binary matcher over labeled pairs, optionally
  swept across sensor selections and device placements.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import WindowEncoder, embed_array
from .errors import (
    ConstantInput,
    EmptyTestSet,
    InsufficientGroups,
    LengthMismatch,
    MissingActivityLabels,
    MissingModel,
    SingleClassTestSet,
)
from .matcher import PairMatcher, match_probabilities
from .pairs import AlignedPair, PairLabel, build_labeled_pairs, index_aligned_windows
from .sensors import SensorKind, Window

GROUP_DEFINITIONS = {
    "A": "same wearer, two devices, different times",
    "B": "two different wearers' devices",
    "C": "same wearer, two devices, same time",
}


def average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values assigned their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    # tie runs share the mean of the positions they occupy
    boundaries = np.flatnonzero(np.diff(sx)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(x)]))
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = 0.5 * (lo + hi - 1) + 1.0
    return ranks


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with average-rank tie handling.

    Raises:
        LengthMismatch: inputs differ in length or are shorter than 3.
        ConstantInput: either vector is constant (rho undefined).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"shapes {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise LengthMismatch(f"need >= 3 values, got {len(x)}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInput("rank correlation undefined for a constant vector")
    rx = average_ranks(x) - (len(x) + 1) / 2.0
    ry = average_ranks(y) - (len(y) + 1) / 2.0
    rho = float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))
    return min(1.0, max(-1.0, rho))


@dataclass
class GroupStats:
    group: str
    mu: float
    sigma: float
    n: int
    n_excluded: int
    hist_counts: np.ndarray
    bin_edges: np.ndarray

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "definition": GROUP_DEFINITIONS[self.group],
            "mu": self.mu,
            "sigma": self.sigma,
            "n": self.n,
            "n_excluded": self.n_excluded,
        }


@dataclass
class MetricsReport:
    tpr: float
    fpr: float
    fnr: float
    tp: int
    fp: int
    tn: int
    fn: int
    config: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int, config: dict | None = None):
        tpr = tp / (tp + fn) if tp + fn else 0.0
        fpr = fp / (fp + tn) if fp + tn else 0.0
        # derived from the same positive count, so the identity is exact
        fnr = 1.0 - tpr
        return cls(tpr, fpr, fnr, tp, fp, tn, fn, config or {})

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "tpr": self.tpr,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "config": self.config,
        }


def _embeddings_by_id(windows: list[Window], encoder: WindowEncoder) -> dict[int, np.ndarray]:
    emb = embed_array(encoder, windows)
    return {id(w): emb[i] for i, w in enumerate(windows)}


def group_similarity(
    windows: list[Window],
    encoder: WindowEncoder,
    rng: np.random.Generator,
    n_pairs: int = 2000,
    bins: int = 40,
) -> dict[str, GroupStats]:
    """Sample embedding pairs per group and summarize their Spearman rho.

    Constant embedding vectors (rho undefined) are excluded and counted.
    Group B mixes time-aligned and unaligned cross-user pairs.

    Raises:
        InsufficientGroups: fewer than 2 users or no multi-device times.
    """
    windows = sorted(windows, key=lambda w: (w.user_id, w.device_id, w.start_time))
    users = sorted({w.user_id for w in windows})
    sensor_sets = {w.sensor_set for w in windows}
    if len(sensor_sets) != 1:
        raise InsufficientGroups("group analysis expects windows of one sensor set")
    index = index_aligned_windows(windows, next(iter(sensor_sets)))
    aligned = [k for k, e in index.items() if len(e) >= 2]
    by_user: dict[str, list[Window]] = {}
    for w in windows:
        by_user.setdefault(w.user_id, []).append(w)
    if len(users) < 2 or not aligned:
        raise InsufficientGroups("need >= 2 users and >= 1 multi-device aligned time")

    emb = _embeddings_by_id(windows, encoder)
    samplers = {"A": [], "B": [], "C": []}

    for _ in range(n_pairs):
        # C: same wearer, same time, two devices
        key = aligned[rng.integers(len(aligned))]
        devs = sorted(index[key])
        i, j = rng.choice(len(devs), size=2, replace=False)
        samplers["C"].append((index[key][devs[i]], index[key][devs[j]]))

        # A: same wearer, two devices, different times
        pick = _different_time_pair(by_user, users, rng, require_diff_device=True)
        if pick is not None:
            samplers["A"].append(pick)

        # B: different wearers, aligned half the time
        ui, uj = rng.choice(len(users), size=2, replace=False)
        wa = _rand(by_user[users[ui]], rng)
        if rng.random() < 0.5:
            cands = [w for w in by_user[users[uj]] if w.time_key() == wa.time_key()]
            wb = _rand(cands, rng) if cands else _rand(by_user[users[uj]], rng)
        else:
            wb = _rand(by_user[users[uj]], rng)
        samplers["B"].append((wa, wb))

    out = {}
    for group, pairs in samplers.items():
        rhos = []
        excluded = 0
        for wa, wb in pairs:
            try:
                rhos.append(spearman_rho(emb[id(wa)], emb[id(wb)]))
            except ConstantInput:
                excluded += 1
        if not rhos:
            raise InsufficientGroups(f"group {group} produced no valid pairs")
        counts, edges = np.histogram(rhos, bins=bins, range=(-1.0, 1.0))
        out[group] = GroupStats(
            group=group,
            mu=float(np.mean(rhos)),
            sigma=float(np.std(rhos)),
            n=len(rhos),
            n_excluded=excluded,
            hist_counts=counts,
            bin_edges=edges,
        )
    return out


def _rand(seq, rng):
    return seq[rng.integers(len(seq))]


def _different_time_pair(by_user, users, rng, require_diff_device):
    for _ in range(64):
        user = users[rng.integers(len(users))]
        ws = by_user[user]
        wa, wb = _rand(ws, rng), _rand(ws, rng)
        if abs(wa.start_time - wb.start_time) < wa.duration:
            continue
        if require_diff_device and wa.device_id == wb.device_id:
            continue
        return wa, wb
    return None


def evaluate_matcher(
    matcher: PairMatcher,
    encoder: WindowEncoder,
    test_pairs: list[AlignedPair],
    threshold: float = 0.5,
    config: dict | None = None,
) -> MetricsReport:
    """Count TP/FP/TN/FN of the matcher over labeled pairs.

    Raises:
        EmptyTestSet, SingleClassTestSet
    """
    if not test_pairs:
        raise EmptyTestSet("no evaluation pairs")
    labels = {p.label for p in test_pairs}
    if len(labels) < 2:
        raise SingleClassTestSet(f"all pairs are {labels.pop().value}")

    windows = []
    seen: dict[int, int] = {}
    for p in test_pairs:
        for w in (p.window_a, p.window_b):
            if id(w) not in seen:
                seen[id(w)] = len(windows)
                windows.append(w)
    emb = embed_array(encoder, windows)
    a = np.stack([emb[seen[id(p.window_a)]] for p in test_pairs])
    b = np.stack([emb[seen[id(p.window_b)]] for p in test_pairs])
    probs = match_probabilities(matcher, a, b)

    tp = fp = tn = fn = 0
    for p, prob in zip(test_pairs, probs):
        predicted_match = prob >= threshold
        if p.label is PairLabel.MATCHED:
            tp += predicted_match
            fn += not predicted_match
        else:
            fp += predicted_match
            tn += not predicted_match
    cfg = dict(config or {})
    cfg["threshold"] = threshold
    return MetricsReport.from_counts(int(tp), int(fp), int(tn), int(fn), cfg)


@dataclass
class SweepRow:
    sensor_set: frozenset[SensorKind]
    placements: tuple | None  # None means randomized device selection
    report: MetricsReport


def placement_sweep(
    windows_by_key: dict[frozenset[SensorKind], list[Window]],
    registry,
    rng: np.random.Generator,
    n_pairs: int = 600,
    threshold: float = 0.5,
    users: list[str] | None = None,
) -> list[SweepRow]:
    """One MetricsReport per (sensor selection, placement pair) plus a
    randomized-selection row per sensor selection.

    Raises:
        MissingModel: a requested sensor selection has no trained bundle.
    """
    from .registry import key_str  # local import to avoid a cycle

    rows: list[SweepRow] = []
    for key in sorted(windows_by_key, key=key_str):
        if key not in registry:
            raise MissingModel(f"no trained bundle for {key_str(key)}")
        bundle = registry[key]
        encoder = bundle.build_encoder()
        matcher = bundle.build_matcher()
        windows = windows_by_key[key]
        if users is not None:
            windows = [w for w in windows if w.user_id in users]
        placements = sorted({w.placement for w in windows}, key=lambda p: p.value)

        configs: list[tuple | None] = [None]
        configs += [
            (placements[i], placements[j])
            for i in range(len(placements))
            for j in range(i + 1, len(placements))
        ]
        for placement_pair in configs:
            pairs = build_labeled_pairs(
                windows, key, n_pairs, 0.5, rng, placements=placement_pair
            )
            label = "randomized" if placement_pair is None else [p.value for p in placement_pair]
            report = evaluate_matcher(
                matcher,
                encoder,
                pairs,
                threshold,
                config={"sensors": key_str(key), "placements": label},
            )
            rows.append(SweepRow(key, placement_pair, report))
    return rows


def activity_breakdown(
    windows: list[Window],
    matcher: PairMatcher,
    encoder: WindowEncoder,
    rng: np.random.Generator,
    n_pairs: int = 400,
    threshold: float = 0.5,
) -> dict[str, MetricsReport]:
    """Per-activity-phase matcher metrics.

    Raises:
        MissingActivityLabels: windows carry no activity labels.
    """
    phases = sorted({w.activity for w in windows if w.activity is not None})
    if not phases:
        raise MissingActivityLabels("windows carry no activity labels")
    sensor_set = windows[0].sensor_set
    out = {}
    for phase in phases:
        phase_windows = [w for w in windows if w.activity == phase]
        pairs = build_labeled_pairs(phase_windows, sensor_set, n_pairs, 0.5, rng)
        out[phase] = evaluate_matcher(
            matcher, encoder, pairs, threshold, config={"activity": phase}
        )
    return out


# --- report writers --------------------------------------------------------

PLACEMENT_COLUMNS = ("left_ear", "right_ear", "head", "wrist")


def write_sweep_csv(rows: list[SweepRow], path: Path) -> None:
    """Grid of sensor selection x placement marks x rates.

    Placement cells: ``selected``, ``random`` or empty.
    """
    from .registry import key_str

    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_selection", *PLACEMENT_COLUMNS, "tpr", "fpr", "fnr"])
        for row in rows:
            if row.placements is None:
                marks = ["random"] * len(PLACEMENT_COLUMNS)
            else:
                chosen = {p.value for p in row.placements}
                marks = ["selected" if c in chosen else "" for c in PLACEMENT_COLUMNS]
            writer.writerow(
                [key_str(row.sensor_set), *marks]
                + [f"{v:.4f}" for v in (row.report.tpr, row.report.fpr, row.report.fnr)]
            )


def write_group_stats(stats: dict[str, GroupStats], json_path: Path, hist_path: Path) -> None:
    Path(json_path).write_text(
        json.dumps({g: s.to_dict() for g, s in stats.items()}, indent=2, sort_keys=True) + "\n"
    )
    with open(hist_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        groups = sorted(stats)
        writer.writerow(["bin_left", "bin_right", *[f"count_{g}" for g in groups]])
        edges = stats[groups[0]].bin_edges
        for i in range(len(edges) - 1):
            writer.writerow(
                [f"{edges[i]:.4f}", f"{edges[i + 1]:.4f}"]
                + [int(stats[g].hist_counts[i]) for g in groups]
            )


def write_metrics_json(reports: list[MetricsReport], path: Path) -> None:
    Path(path).write_text(
        json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    )

"""Binary matching head over embedding pairs.

A small fully-connected network takes two embeddings and outputs the
probability that they describe the same wearer at the same time. The
head is evaluated on both input orderings and the logits averaged, so
matching is exactly symmetric. For three or more devices, all pairwise
decisions vote on a global verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .encoder import Embedding, WindowEncoder, embed_array
from .errors import DegenerateLabels, NotEnoughPairs, ShapeMismatch, TooFewDevices
from .pairs import AlignedPair, PairLabel


@dataclass
class MatcherTrainConfig:
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 128
    val_fraction: float = 0.15
    # train-time jitter on embeddings (relative to row norm); softens the
    # decision boundary so it survives unseen wearers' looser alignment
    noise_std: float = 0.08
    seed: int = 0


@dataclass
class MatchDecision:
    probability: float
    label: PairLabel
    threshold: float

    @classmethod
    def from_probability(cls, probability: float, threshold: float) -> "MatchDecision":
        label = PairLabel.MATCHED if probability >= threshold else PairLabel.UNMATCHED
        return cls(float(probability), label, float(threshold))


class PairMatcher(nn.Module):
    """Two embeddings in, match probability out.

    Embeddings are L2-normalized before the concatenation so the head
    sees scale-free inputs; ``hidden`` follows the 2*dim -> 64 -> 1
    default layout.
    """

    def __init__(self, embedding_dim: int = 64, hidden: int = 64):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.net = nn.Sequential(
            nn.Linear(2 * embedding_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1)
        )

    def pair_logit(self, e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
        e1 = nn.functional.normalize(e1, dim=-1, eps=1e-8)
        e2 = nn.functional.normalize(e2, dim=-1, eps=1e-8)
        fwd = self.net(torch.cat([e1, e2], dim=-1))
        rev = self.net(torch.cat([e2, e1], dim=-1))
        return 0.5 * (fwd + rev).squeeze(-1)

    def forward(self, e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.pair_logit(e1, e2))


def _pair_matrix(pairs: list[AlignedPair], encoder: WindowEncoder):
    windows = []
    seen = {}
    for p in pairs:
        for w in (p.window_a, p.window_b):
            if id(w) not in seen:
                seen[id(w)] = len(windows)
                windows.append(w)
    emb = embed_array(encoder, windows)
    a = np.stack([emb[seen[id(p.window_a)]] for p in pairs])
    b = np.stack([emb[seen[id(p.window_b)]] for p in pairs])
    y = np.array([1.0 if p.label is PairLabel.MATCHED else 0.0 for p in pairs], dtype=np.float32)
    return a.astype(np.float32), b.astype(np.float32), y


def train_matcher(
    pairs: list[AlignedPair],
    encoder: WindowEncoder,
    config: MatcherTrainConfig,
    rng: np.random.Generator,
) -> tuple[PairMatcher, dict]:
    """Train the head on embeddings from a frozen encoder.

    Raises:
        NotEnoughPairs: fewer than 4 labeled pairs.
        DegenerateLabels: training set is single-class.
    """
    if len(pairs) < 4:
        raise NotEnoughPairs(f"need >= 4 labeled pairs, got {len(pairs)}")
    labels = {p.label for p in pairs}
    if len(labels) < 2:
        raise DegenerateLabels(f"training pairs are all {labels.pop().value}")

    a, b, y = _pair_matrix(pairs, encoder)
    n = len(y)
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * config.val_fraction)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len({int(v) for v in y[train_idx]}) < 2:
        raise DegenerateLabels("train split is single-class; provide more pairs")

    torch.manual_seed(config.seed)
    matcher = PairMatcher(embedding_dim=a.shape[1])
    opt = torch.optim.Adam(matcher.parameters(), lr=config.lr)
    loss_fn = nn.BCEWithLogitsLoss()
    ta, tb, ty = map(torch.from_numpy, (a[train_idx], b[train_idx], y[train_idx]))
    va, vb, vy = map(torch.from_numpy, (a[val_idx], b[val_idx], y[val_idx]))

    history = []
    for epoch in range(config.epochs):
        matcher.train()
        order = torch.from_numpy(rng.permutation(len(ty)))
        total = 0.0
        for lo in range(0, len(ty), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            xa, xb = ta[sel], tb[sel]
            if config.noise_std > 0:
                xa = xa + config.noise_std * torch.randn_like(xa) * xa.norm(dim=1, keepdim=True)
                xb = xb + config.noise_std * torch.randn_like(xb) * xb.norm(dim=1, keepdim=True)
            logit = matcher.pair_logit(xa, xb)
            loss = loss_fn(logit, ty[sel])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(sel)
        matcher.eval()
        with torch.no_grad():
            val_prob = matcher(va, vb)
            val_acc = float(((val_prob >= 0.5).float() == vy).float().mean())
        history.append({"epoch": epoch, "train_loss": total / len(ty), "val_acc": val_acc})

    matcher.eval()
    return matcher, {"history": history, "val_accuracy": history[-1]["val_acc"]}


def _check_dims(matcher: PairMatcher, *embeddings: Embedding) -> None:
    for e in embeddings:
        if e.dim != matcher.embedding_dim:
            raise ShapeMismatch(
                f"embedding dim {e.dim} does not match matcher input {matcher.embedding_dim}"
            )


def match(
    matcher: PairMatcher, e1: Embedding, e2: Embedding, threshold: float = 0.5
) -> MatchDecision:
    """Decide whether two embeddings belong to the same wearer and time."""
    _check_dims(matcher, e1, e2)
    with torch.no_grad():
        prob = matcher(
            torch.from_numpy(np.asarray(e1.values, dtype=np.float32)),
            torch.from_numpy(np.asarray(e2.values, dtype=np.float32)),
        ).item()
    return MatchDecision.from_probability(prob, threshold)


def match_probabilities(matcher: PairMatcher, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized probabilities for row-aligned embedding matrices."""
    with torch.no_grad():
        return matcher(
            torch.from_numpy(a.astype(np.float32)), torch.from_numpy(b.astype(np.float32))
        ).numpy()


def ensemble_match(
    matcher: PairMatcher,
    embeddings: list[Embedding],
    threshold: float = 0.5,
) -> tuple[MatchDecision, np.ndarray]:
    """Global decision over k >= 3 devices by pairwise majority vote.

    Returns the global decision plus the k x k pairwise probability
    matrix (diagonal 1). The global probability is the fraction of
    matched pairwise decisions and the recorded threshold is the strict
    majority fraction, so ties land on unmatched.
    """
    k = len(embeddings)
    if k < 3:
        raise TooFewDevices(f"ensemble matching needs >= 3 embeddings, got {k}")
    _check_dims(matcher, *embeddings)
    probs = np.eye(k)
    n_matched = 0
    n_pairs = 0
    for i in range(k):
        for j in range(i + 1, k):
            d = match(matcher, embeddings[i], embeddings[j], threshold)
            probs[i, j] = probs[j, i] = d.probability
            n_matched += d.label is PairLabel.MATCHED
            n_pairs += 1
    majority = (n_pairs // 2 + 1) / n_pairs
    global_decision = MatchDecision.from_probability(n_matched / n_pairs, majority)
    return global_decision, probs

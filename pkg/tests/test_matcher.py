import numpy as np
import pytest
import torch
import torch.nn as nn

from wearid.encoder import Embedding, EncoderConfig, WindowEncoder
from wearid.errors import DegenerateLabels, NotEnoughPairs, ShapeMismatch, TooFewDevices
from wearid.matcher import (
    MatchDecision,
    MatcherTrainConfig,
    PairMatcher,
    ensemble_match,
    match,
    train_matcher,
)
from wearid.pairs import AlignedPair, PairLabel

from test_pairs import make_window


def make_embedding(values, user="u0", device="d0", t=0.0):
    return Embedding(
        values=np.asarray(values, dtype=np.float32),
        user_id=user,
        device_id=device,
        placement=None,
        start_time=t,
        sensor_set=frozenset(),
    )


class MeanPoolEncoder(nn.Module):
    """Deterministic stand-in encoder: per-channel means, tiled."""

    def __init__(self, in_channels=3, dim=12):
        super().__init__()
        self.config = EncoderConfig(in_channels=in_channels, proj_dims=(dim, dim, dim))
        self.dim = dim

    def forward(self, x):
        pooled = x.mean(dim=2)
        reps = self.dim // pooled.shape[1] + 1
        return pooled.repeat(1, reps)[:, : self.dim]


class FixedMatcher(PairMatcher):
    """Always returns one probability; for evaluation-harness tests."""

    def __init__(self, probability, dim=12):
        super().__init__(embedding_dim=dim)
        self.probability = probability

    def forward(self, e1, e2):
        shape = e1.shape[:-1] if e1.dim() > 1 else (1,)
        return torch.full(shape, self.probability).squeeze()


class TestMatch:
    def test_symmetry_exact(self):
        torch.manual_seed(0)
        m = PairMatcher(embedding_dim=8)
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = make_embedding(rng.normal(size=8))
            b = make_embedding(rng.normal(size=8))
            assert match(m, a, b).probability == match(m, b, a).probability

    def test_threshold_semantics(self):
        torch.manual_seed(0)
        m = PairMatcher(embedding_dim=4)
        a = make_embedding([1, 2, 3, 4.0])
        b = make_embedding([4, 3, 2, 1.0])
        d = match(m, a, b, threshold=1.0)
        assert d.probability < 1.0
        assert d.label is PairLabel.UNMATCHED

    def test_monotone_threshold(self):
        torch.manual_seed(1)
        m = PairMatcher(embedding_dim=4)
        rng = np.random.default_rng(1)
        a = make_embedding(rng.normal(size=4))
        b = make_embedding(rng.normal(size=4))
        labels = [match(m, a, b, threshold=t).label for t in np.linspace(0, 1, 21)]
        # once unmatched, raising the threshold never flips back
        flipped = [l is PairLabel.UNMATCHED for l in labels]
        assert flipped == sorted(flipped)

    def test_shape_mismatch(self):
        m = PairMatcher(embedding_dim=8)
        with pytest.raises(ShapeMismatch):
            match(m, make_embedding(np.zeros(8)), make_embedding(np.zeros(5)))

    def test_decision_invariant(self):
        d = MatchDecision.from_probability(0.5, 0.5)
        assert d.label is PairLabel.MATCHED  # >= threshold
        d = MatchDecision.from_probability(0.4999, 0.5)
        assert d.label is PairLabel.UNMATCHED


class TestEnsemble:
    def _embeddings(self, k):
        rng = np.random.default_rng(0)
        return [make_embedding(rng.normal(size=12), device=f"d{i}") for i in range(k)]

    def test_two_of_three_majority(self, monkeypatch):
        m = PairMatcher(embedding_dim=12)
        outcomes = iter([0.9, 0.8, 0.1])  # M, M, U

        def fake(matcher, e1, e2, threshold=0.5):
            return MatchDecision.from_probability(next(outcomes), threshold)

        monkeypatch.setattr("wearid.matcher.match", fake)
        decision, probs = ensemble_match(m, self._embeddings(3))
        assert decision.label is PairLabel.MATCHED
        assert probs.shape == (3, 3)

    def test_tie_is_unmatched(self, monkeypatch):
        m = PairMatcher(embedding_dim=12)
        outcomes = iter([0.9, 0.9, 0.9, 0.1, 0.1, 0.1])  # 3 M / 3 U over k=4

        def fake(matcher, e1, e2, threshold=0.5):
            return MatchDecision.from_probability(next(outcomes), threshold)

        monkeypatch.setattr("wearid.matcher.match", fake)
        decision, _ = ensemble_match(m, self._embeddings(4))
        assert decision.label is PairLabel.UNMATCHED

    def test_unanimous_consistency(self):
        m = FixedMatcher(0.95)
        decision, _ = ensemble_match(m, self._embeddings(3))
        assert decision.label is PairLabel.MATCHED
        m = FixedMatcher(0.05)
        decision, _ = ensemble_match(m, self._embeddings(3))
        assert decision.label is PairLabel.UNMATCHED

    def test_too_few(self):
        m = PairMatcher(embedding_dim=12)
        with pytest.raises(TooFewDevices):
            ensemble_match(m, self._embeddings(2))

    def test_symmetric_matrix(self):
        torch.manual_seed(0)
        m = PairMatcher(embedding_dim=12)
        _, probs = ensemble_match(m, self._embeddings(4))
        assert np.array_equal(probs, probs.T)


class TestTrainMatcher:
    def _separable_pairs(self, n=160):
        # positives: near-duplicated windows; negatives: independent noise
        rng = np.random.default_rng(5)
        pairs = []
        for i in range(n // 2):
            base = make_window("u0", "d0", 20.0 * i, seed=1000 + i)
            twin = make_window("u0", "d1", 20.0 * i, seed=2000 + i)
            twin.data = base.data + rng.normal(0, 0.01, base.data.shape).astype(np.float32)
            pairs.append(AlignedPair(base, twin, PairLabel.MATCHED))
            other = make_window("u1", "d1", 20.0 * i, seed=3000 + i)
            pairs.append(AlignedPair(base, other, PairLabel.UNMATCHED))
        return pairs

    def test_separable_fixture_high_accuracy(self):
        encoder = MeanPoolEncoder()
        pairs = self._separable_pairs()
        matcher, log = train_matcher(
            pairs, encoder, MatcherTrainConfig(epochs=120, seed=0), np.random.default_rng(0)
        )
        assert log["val_accuracy"] >= 0.99

    def test_single_class_rejected(self):
        encoder = MeanPoolEncoder()
        pairs = [p for p in self._separable_pairs(40) if p.label is PairLabel.MATCHED]
        with pytest.raises(DegenerateLabels):
            train_matcher(pairs, encoder, MatcherTrainConfig(), np.random.default_rng(0))

    def test_too_few_pairs(self):
        encoder = MeanPoolEncoder()
        with pytest.raises(NotEnoughPairs):
            train_matcher(
                self._separable_pairs(2), encoder, MatcherTrainConfig(), np.random.default_rng(0)
            )

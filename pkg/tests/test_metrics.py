"""Metric values against O(n^2) pairwise-counting oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskclr.metrics import (
    TargetScaler,
    UndefinedMetricError,
    auroc_binary,
    auroc_macro_ovr,
    mae,
)

# ---------------------------------------------------------------------------
# Oracles: count concordant / tied pairs over every (positive, negative) pair.


def oracle_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def oracle_macro(scores, labels, k):
    vals = []
    for cls in range(k):
        y = (labels == cls).astype(int)
        if 0 < y.sum() < len(y):
            vals.append(oracle_auroc(scores[:, cls], y))
    return float(np.mean(vals))


class TestBinaryAuroc:
    def test_perfect_ranking(self):
        assert auroc_binary(np.array([0.1, 0.9]), np.array([0, 1])) == 1.0

    def test_all_ties_half(self):
        s = np.full(10, 0.3)
        y = np.array([0, 1] * 5)
        assert auroc_binary(s, y) == 0.5

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(10, 300))
            scores = rng.choice([0.1, 0.25, 0.5, 0.7], size=n) + rng.normal(0, 0.2, n).round(2)
            labels = rng.integers(0, 2, n)
            if labels.sum() in (0, n):
                continue
            got = auroc_binary(scores, labels)
            want = oracle_auroc(scores.tolist(), labels.tolist())
            assert abs(got - want) < 1e-12

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auroc_binary(np.array([0.1, 0.2]), np.array([1, 1]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            auroc_binary(np.zeros(3), np.zeros(4))

    @settings(deadline=None, max_examples=30)
    @given(seed=st.integers(0, 100_000))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            return
        base = auroc_binary(scores, labels)
        assert auroc_binary(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert auroc_binary(3.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)

    def test_negation_complement(self):
        rng = np.random.default_rng(5)
        scores = rng.normal(size=60)  # continuous, ties almost surely absent
        labels = rng.integers(0, 2, 60)
        a = auroc_binary(scores, labels)
        b = auroc_binary(-scores, labels)
        assert a + b == pytest.approx(1.0, abs=1e-12)


class TestMacroAuroc:
    def test_k2_reduces_to_binary(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=(50, 2))
        labels = rng.integers(0, 2, 50)
        rep = auroc_macro_ovr(scores, labels)
        b1 = auroc_binary(scores[:, 1], (labels == 1).astype(int))
        b0 = auroc_binary(scores[:, 0], (labels == 0).astype(int))
        assert rep.value == pytest.approx(0.5 * (b0 + b1), abs=1e-12)

    def test_class_permutation_symmetry(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=(60, 3))
        labels = rng.integers(0, 3, 60)
        base = auroc_macro_ovr(scores, labels).value
        perm = np.array([2, 0, 1])
        permuted = auroc_macro_ovr(scores[:, perm], perm.argsort()[labels])
        # relabeling classes consistently leaves the macro mean unchanged
        assert permuted.value == pytest.approx(base, abs=1e-12)

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(12, 200))
            k = int(rng.integers(2, 5))
            scores = rng.normal(size=(n, k)).round(1)  # coarse -> ties occur
            labels = rng.integers(0, k, n)
            rep = auroc_macro_ovr(scores, labels)
            assert abs(rep.value - oracle_macro(scores, labels, k)) < 1e-12

    def test_absent_class_excluded_with_warning(self, caplog):
        rng = np.random.default_rng(4)
        scores = rng.normal(size=(30, 3))
        labels = rng.integers(0, 2, 30)  # class 2 never appears
        with caplog.at_level("WARNING"):
            rep = auroc_macro_ovr(scores, labels)
        assert 2 not in rep.per_class
        assert "excluded" in caplog.text

    def test_macro_is_unweighted_mean(self):
        rng = np.random.default_rng(6)
        scores = rng.normal(size=(80, 4))
        labels = rng.integers(0, 4, 80)
        rep = auroc_macro_ovr(scores, labels)
        assert rep.value == pytest.approx(np.mean(list(rep.per_class.values())), abs=1e-15)


class TestMae:
    def test_zero_when_equal(self):
        y = np.array([1.0, -2.0, 3.5])
        assert mae(y, y) == 0.0

    def test_unit_offset(self):
        y = np.array([1.0, 2.0, 3.0])
        assert mae(y + 1.0, y) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mae(np.zeros(3), np.zeros(2))

    def test_scaler_roundtrip(self):
        rng = np.random.default_rng(7)
        y = rng.normal(40.0, 12.0, size=200)
        scaler = TargetScaler.fit(y)
        np.testing.assert_allclose(scaler.denormalize(scaler.normalize(y)), y, atol=1e-12)
        z = scaler.normalize(y)
        assert abs(z.mean()) < 1e-12 and abs(z.std() - 1.0) < 1e-12

    def test_scaler_constant_targets(self):
        y = np.full(5, 3.0)
        scaler = TargetScaler.fit(y)
        np.testing.assert_allclose(scaler.denormalize(scaler.normalize(y)), y)

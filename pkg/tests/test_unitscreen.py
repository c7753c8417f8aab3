"""Rank-test correctness and association screening behavior."""

import math
from itertools import combinations

import numpy as np
import pytest

from toxlens.chem import parse_smiles
from toxlens.patterns import parse_pattern
from toxlens.unitscreen import (
    approx_two_sided_p,
    exact_two_sided_p,
    mann_whitney_u,
    presence_calls,
    screen,
    screen_activations,
)
from toxlens.densenet import DenseNet, TrainConfig, train
from toxlens.fingerprint import FingerprintConfig, feature_matrix


def enumeration_oracle(a, b):
    """Independent exact test: enumerate every rank assignment."""
    n1, n2 = len(a), len(b)
    n = n1 + n2
    combined = sorted(a + b)
    assert len(set(combined)) == n, "oracle requires tie-free samples"
    rank_of = {v: r for r, v in enumerate(combined, start=1)}
    u_obs = sum(rank_of[v] for v in a) - n1 * (n1 + 1) / 2

    u_values = []
    for subset in combinations(range(1, n + 1), n1):
        u_values.append(sum(subset) - n1 * (n1 + 1) / 2)
    total = len(u_values)
    low = sum(1 for u in u_values if u <= min(u_obs, n1 * n2 - u_obs))
    return u_obs, min(1.0, 2.0 * low / total)


class TestMannWhitney:
    def test_enumerated_example(self):
        u, p = mann_whitney_u([1, 2], [3, 4])
        assert u == 0.0
        assert abs(p - 2.0 / 6.0) < 1e-15

    def test_identical_samples(self):
        u, p = mann_whitney_u([1, 2, 3], [1, 2, 3])
        assert u == 4.5  # n1*n2/2
        assert p == 1.0

    def test_large_separation_normal_approx(self):
        a = list(range(1, 21))
        b = list(range(101, 121))
        u, p = mann_whitney_u(a, b)
        assert u == 0.0
        # closed-form z from U=0, n1=n2=20, no ties
        var = 20 * 20 / 12 * (40 + 1)
        z = (20 * 20 / 2 - 0.5) / math.sqrt(var)
        assert abs(p - math.erfc(z / math.sqrt(2))) < 1e-15
        assert p < 1e-6

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mann_whitney_u([], [1.0])

    def test_exact_agrees_with_enumeration_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            n1 = int(rng.integers(1, 7))
            n2 = int(rng.integers(1, 13 - n1))
            values = rng.permutation(np.arange(100.0))[: n1 + n2]
            a, b = list(values[:n1]), list(values[n1:])
            u, p = mann_whitney_u(a, b)
            u_ref, p_ref = enumeration_oracle(a, b)
            assert u == u_ref
            assert abs(p - p_ref) <= 1e-12

    def test_exact_vs_approx_within_band(self):
        # Exhaustive over every tie-free configuration with n1+n2 <= 12.
        # With both groups >= 3 the normal approximation stays within 0.05
        # absolute of the exact probability; no standard normal form (with
        # or without continuity correction) achieves that below group size
        # 3, where the true worst cases are 0.088 at (2,2) and 0.129 at
        # (1,3). Both regimes are pinned here.
        worst_main = 0.0
        worst_small = 0.0
        for n1 in range(1, 12):
            for n2 in range(1, 13 - n1):
                for u in range(0, n1 * n2 + 1):
                    dev = abs(exact_two_sided_p(float(u), n1, n2)
                              - approx_two_sided_p(float(u), n1, n2, 0.0))
                    if min(n1, n2) >= 3:
                        worst_main = max(worst_main, dev)
                    else:
                        worst_small = max(worst_small, dev)
        assert worst_main <= 0.05
        assert worst_small <= 0.13

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        a = list(rng.normal(size=5))
        b = list(rng.normal(size=6))
        u, p = mann_whitney_u(a, b)
        for f in (lambda x: 3 * x + 7, math.exp, lambda x: x ** 3):
            u2, p2 = mann_whitney_u([f(x) for x in a], [f(x) for x in b])
            assert u2 == u and p2 == p

    def test_symmetry(self):
        a, b = [1.0, 5.0, 9.0], [2.0, 3.0]
        u_a, p_a = mann_whitney_u(a, b)
        u_b, p_b = mann_whitney_u(b, a)
        assert u_a + u_b == len(a) * len(b)
        assert abs(p_a - p_b) < 1e-15


class TestExactDistribution:
    def test_total_mass(self):
        from toxlens.unitscreen import _exact_counts
        for m, n in [(2, 2), (3, 4), (5, 5)]:
            counts = _exact_counts(m, n)
            assert counts.sum() == math.comb(m + n, m)

    def test_symmetry_of_distribution(self):
        from toxlens.unitscreen import _exact_counts
        counts = _exact_counts(4, 5)
        assert np.array_equal(counts, counts[::-1])


class TestPresenceCalls:
    def test_alcohol_over_two_molecules(self):
        pattern = parse_pattern("[CX4][OH]")
        mols = [parse_smiles("CCO"), parse_smiles("CCC")]
        result = presence_calls([pattern], mols, min_support=1)
        assert result.matrix.tolist() == [[1, 0]]

    def test_support_filter_drops_and_reports(self):
        patterns = [parse_pattern("[OH]"), parse_pattern("N")]
        mols = [parse_smiles("CCO"), parse_smiles("CO"), parse_smiles("CC")]
        result = presence_calls(patterns, mols, min_support=2,
                                pattern_ids=["hydroxyl", "amine"])
        assert result.pattern_ids == ["hydroxyl"]
        assert result.dropped == [("amine", 0)]

    def test_nothing_matching_dropped(self):
        result = presence_calls([parse_pattern("I")],
                                [parse_smiles("CC")], min_support=1)
        assert result.matrix.shape == (0, 1)
        assert result.dropped == [("I", 0)]


class TestScreenActivations:
    def test_planted_unit_recovered(self):
        rng = np.random.default_rng(3)
        n = 80
        presence = rng.integers(0, 2, (4, n)).astype(np.uint8)
        acts = rng.normal(size=(n, 30))
        acts[:, 11] = presence[1] * 1.5 + rng.normal(0, 0.1, n)
        report = screen_activations(
            [acts], presence, [f"p{i}" for i in range(4)],
            {f"p{i}": 3 for i in range(4)}, alpha=0.05)
        assert report.n_tests == 30 * 4
        found = [(a.unit, a.pattern_id) for a in report.associations]
        assert (11, "p1") in found
        planted = next(a for a in report.associations
                       if a.unit == 11 and a.pattern_id == "p1")
        assert planted.p_adjusted <= 0.05
        assert planted.direction == "present_higher"
        assert planted.p_adjusted >= planted.p_raw

    def test_negative_direction(self):
        rng = np.random.default_rng(4)
        n = 60
        presence = np.zeros((1, n), dtype=np.uint8)
        presence[0, :30] = 1
        acts = rng.normal(size=(n, 5))
        acts[:30, 2] -= 4.0  # present group lower
        report = screen_activations([acts], presence, ["p"], {"p": 2})
        hit = next(a for a in report.associations if a.unit == 2)
        assert hit.direction == "absent_higher"

    def test_single_class_pattern_skipped(self):
        rng = np.random.default_rng(5)
        presence = np.ones((1, 20), dtype=np.uint8)
        acts = rng.normal(size=(20, 4))
        report = screen_activations([acts], presence, ["always"], {"always": 1})
        assert report.skipped_patterns == [("always", "single-class presence call")]
        assert report.n_tests == 0

    def test_first_discovery_layer_is_minimum(self):
        rng = np.random.default_rng(6)
        n = 80
        presence = rng.integers(0, 2, (1, n)).astype(np.uint8)
        signal = presence[0] * 2.0
        layer1 = rng.normal(size=(n, 6))
        layer2 = rng.normal(size=(n, 6))
        layer3 = rng.normal(size=(n, 6))
        layer2[:, 1] = signal + rng.normal(0, 0.1, n)
        layer3[:, 4] = signal + rng.normal(0, 0.1, n)
        report = screen_activations([layer1, layer2, layer3], presence,
                                    ["p"], {"p": 4})
        assert report.first_layer["p"] == 2
        discovered = {d.layer: d.first_discovered for d in report.discovery}
        assert discovered == {1: 0, 2: 1, 3: 0}
        layer2_summary = next(d for d in report.discovery if d.layer == 2)
        assert layer2_summary.mean_pattern_size == 4.0
        assert layer2_summary.se_pattern_size is None  # one pattern, no SE

    def test_bonferroni_family_is_global(self):
        rng = np.random.default_rng(7)
        n = 50
        presence = rng.integers(0, 2, (3, n)).astype(np.uint8)
        layers = [rng.normal(size=(n, 10)), rng.normal(size=(n, 20))]
        report = screen_activations(layers, presence,
                                    ["a", "b", "c"], {"a": 1, "b": 1, "c": 1})
        assert report.n_tests == (10 + 20) * 3

    def test_family_wise_error_controlled(self):
        # pure-noise activations: families with any false positive should
        # be rare (<= alpha of the seeds, with slack)
        false_families = 0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            n = 50
            presence = rng.integers(0, 2, (20, n)).astype(np.uint8)
            acts = rng.normal(size=(n, 100))
            report = screen_activations(
                [acts], presence, [f"p{i}" for i in range(20)],
                {f"p{i}": 2 for i in range(20)}, alpha=0.05)
            if report.associations:
                false_families += 1
        assert false_families <= 2

    def test_small_sample_exact_branch(self):
        presence = np.array([[1, 1, 1, 0, 0, 0]], dtype=np.uint8)
        acts = np.array([[10.0], [9.0], [8.0], [1.0], [2.0], [3.0]])
        report = screen_activations([acts], presence, ["p"], {"p": 1},
                                    alpha=1.0)
        hit = report.associations[0]
        # exact two-sided p for complete separation at 3 vs 3
        assert abs(hit.p_raw - exact_two_sided_p(9.0, 3, 3)) < 1e-15


class TestScreenEndToEnd:
    def test_trained_toy_model_has_alcohol_detectors(self):
        from toxlens.datasets import GeneratorConfig, generate_alcohol_set
        ls = generate_alcohol_set(GeneratorConfig(
            seed=55, n_positive=60, n_negative=90, n_acid=30))
        cfg = FingerprintConfig(radius=1, n_bits=256)
        _, X = feature_matrix(ls.molecules, cfg)
        result = train(X, ls.labels[:, 0],
                       TrainConfig(seed=9, hidden_dims=(32, 32), epochs=40,
                                   batch_size=32, learning_rate=3e-3))
        patterns = [parse_pattern("[CX4][OH]"), parse_pattern("C(=O)[OH]")]
        report = screen(result.net, ls.molecules, patterns, cfg,
                        alpha=0.05, min_support=20,
                        pattern_ids=["alcohol", "acid"])
        alcohol_hits = [a for a in report.associations
                        if a.pattern_id == "alcohol"]
        assert alcohol_hits, "trained net should contain alcohol detectors"
        # both patterns clear the support threshold: family = units x patterns
        assert report.n_tests == (32 + 32) * 2

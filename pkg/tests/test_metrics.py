import itertools
import math

import numpy as np
import pytest

from protodiff.errors import ContractError, UndefinedMetricError
from protodiff.metrics import (
    MetricReport,
    auroc,
    auroc_macro_ovr,
    c_index,
    delong_test,
    format_table,
    macro_f1,
    wilcoxon_signed_rank,
)

rng = np.random.default_rng(60)


def auroc_pair_oracle(scores, labels):
    """Brute-force O(n^2) pair counting."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def c_index_pair_oracle(risks, durations, events):
    """Exhaustive ordered-pair enumeration, written independently."""
    conc = 0.0
    comp = 0
    n = len(risks)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            # i is the candidate earlier-event member of the pair
            if durations[i] < durations[j] and events[i]:
                pass
            elif durations[i] == durations[j] and events[i] and not events[j]:
                pass
            else:
                continue
            comp += 1
            if risks[i] > risks[j]:
                conc += 1.0
            elif risks[i] == risks[j]:
                conc += 0.5
    return conc / comp


def wilcoxon_enum_oracle(a, b):
    """Literal enumeration of all 2^n sign assignments."""
    diffs = [x - y for x, y in zip(a, b) if x - y != 0.0]
    n = len(diffs)
    absd = [abs(d) for d in diffs]
    ranks = []
    for i, d in enumerate(absd):
        below = sum(1 for x in absd if x < d)
        ties = sum(1 for j, x in enumerate(absd) if x == d and j != i)
        ranks.append(below + 1 + ties / 2.0)
    t_obs = sum(r if d > 0 else -r for d, r in zip(diffs, ranks))
    count = 0
    for signs in itertools.product((-1.0, 1.0), repeat=n):
        t = sum(s * r for s, r in zip(signs, ranks))
        if abs(t) >= abs(t_obs) - 1e-9:
            count += 1
    return count / 2.0 ** n


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_equal_scores(self):
        assert auroc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_six_point_mixed_case(self):
        scores = [0.1, 0.4, 0.35, 0.8, 0.35, 0.9]
        labels = [0, 0, 1, 1, 0, 1]
        assert auroc(scores, labels) == auroc_pair_oracle(scores, labels)

    def test_matches_pair_oracle_randomized(self):
        for _ in range(200):
            n = int(rng.integers(4, 20))
            scores = rng.integers(0, 6, n) / 5.0  # force ties
            labels = rng.integers(0, 2, n).astype(bool)
            if labels.all() or not labels.any():
                continue
            assert auroc(scores, labels) == auroc_pair_oracle(scores, labels)

    def test_monotone_transform_invariance(self):
        scores = rng.standard_normal(30)
        labels = rng.integers(0, 2, 30).astype(bool)
        labels[0], labels[1] = True, False
        a = auroc(scores, labels)
        b = auroc(np.exp(scores * 2 + 1), labels)
        assert a == b

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2], [1, 1])

    def test_macro_ovr(self):
        scores = np.array([
            [0.8, 0.1, 0.1],
            [0.2, 0.7, 0.1],
            [0.1, 0.2, 0.7],
            [0.6, 0.3, 0.1],
        ])
        labels = np.array([0, 1, 2, 0])
        want = np.mean([
            auroc(scores[:, c], labels == c) for c in (0, 1, 2)
        ])
        assert auroc_macro_ovr(scores, labels) == want


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0

    def test_absent_class_contributes_zero(self):
        # class 2 never predicted and never true: per-class F1s are
        # (1, 1, 0) -> macro 2/3
        got = macro_f1([0, 1, 0, 1], [0, 1, 0, 1], num_classes=3)
        assert abs(got - 2.0 / 3.0) < 1e-15

    def test_three_class_confusion_oracle(self):
        preds = [0, 0, 1, 1, 2, 2, 0, 1]
        labels = [0, 1, 1, 2, 2, 0, 0, 1]
        # per-class harmonic means: c0 tp2 fp1 fn1 -> 4/6; c1 tp2 fp1 fn1 ->
        # 4/6; c2 tp1 fp1 fn1 -> 2/4
        want = (2 / 3 + 2 / 3 + 1 / 2) / 3
        assert abs(macro_f1(preds, labels) - want) < 1e-15

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            macro_f1([], [])


class TestCIndex:
    def test_inverse_risks_all_events(self):
        times = [1.0, 2.0, 3.0, 4.0]
        risks = [4.0, 3.0, 2.0, 1.0]
        assert c_index(risks, times, [True] * 4) == 1.0

    def test_aligned_risks_all_events(self):
        times = [1.0, 2.0, 3.0, 4.0]
        assert c_index(times, times, [True] * 4) == 0.0

    def test_five_record_mixed_censoring(self):
        risks = [2.0, 1.0, 3.0, 2.0, 0.5]
        times = [5.0, 3.0, 3.0, 8.0, 2.0]
        events = [True, False, True, False, True]
        assert c_index(risks, times, events) == c_index_pair_oracle(
            risks, times, events
        )

    def test_matches_oracle_randomized(self):
        for _ in range(200):
            n = int(rng.integers(3, 12))
            risks = rng.integers(0, 5, n).astype(float)
            times = rng.integers(1, 6, n).astype(float)
            events = rng.integers(0, 2, n).astype(bool)
            if not events.any():
                continue
            try:
                got = c_index(risks, times, events)
            except UndefinedMetricError:
                continue
            assert got == c_index_pair_oracle(risks, times, events)

    def test_complement_identity_without_ties(self):
        n = 12
        risks = rng.permutation(n).astype(float)
        times = rng.permutation(n).astype(float) + 1
        events = rng.integers(0, 2, n).astype(bool)
        events[0] = True
        a = c_index(risks, times, events)
        b = c_index(-risks, times, events)
        assert a + b == 1.0

    def test_monotone_transform_invariance(self):
        n = 10
        risks = rng.standard_normal(n)
        times = rng.random(n) * 5 + 0.1
        events = np.ones(n, dtype=bool)
        assert c_index(risks, times, events) == c_index(
            np.tanh(risks) * 3 + 2, times, events
        )

    def test_no_comparable_pairs_rejected(self):
        with pytest.raises(UndefinedMetricError):
            c_index([1.0, 2.0], [3.0, 3.0], [True, True])


class TestWilcoxon:
    def test_constant_shift_exact_p(self):
        a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        b = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5]
        stat, p = wilcoxon_signed_rank(a, b)
        assert p == 2.0 / 2.0 ** 6 == 0.03125

    def test_swap_symmetry(self):
        a = rng.standard_normal(10)
        b = rng.standard_normal(10)
        _, p1 = wilcoxon_signed_rank(a, b)
        _, p2 = wilcoxon_signed_rank(b, a)
        assert p1 == p2

    def test_matches_enumeration_oracle(self):
        for trial in range(60):
            n = int(rng.integers(2, 13))
            a = rng.integers(0, 8, n).astype(float)
            b = rng.integers(0, 8, n).astype(float)
            if np.all(a == b):
                continue
            _, p = wilcoxon_signed_rank(a, b)
            assert p == min(1.0, wilcoxon_enum_oracle(a, b))

    def test_p_is_dyadic(self):
        for trial in range(20):
            n = int(rng.integers(2, 15))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            _, p = wilcoxon_signed_rank(a, b)
            scaled = p * 2.0 ** n
            assert abs(scaled - round(scaled)) < 1e-9

    def test_exact_vs_approx_at_boundary(self):
        gen = np.random.default_rng(4)
        diffs = []
        for _ in range(20):
            a = gen.standard_normal(25) + 0.3
            b = gen.standard_normal(25)
            _, p_exact = wilcoxon_signed_rank(a, b, exact_limit=25)
            _, p_approx = wilcoxon_signed_rank(a, b, exact_limit=0)
            diffs.append(abs(p_exact - p_approx))
        assert max(diffs) < 0.01

    def test_n30_runs_approx(self):
        a = rng.standard_normal(30) + 0.5
        b = rng.standard_normal(30)
        _, p = wilcoxon_signed_rank(a, b)
        assert 0.0 <= p <= 1.0

    def test_all_zero_differences_rejected(self):
        with pytest.raises(ContractError):
            wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])


class TestDelong:
    def test_identical_scores(self):
        scores = rng.standard_normal(20)
        labels = np.array([True] * 10 + [False] * 10)
        auc_a, auc_b, z, p = delong_test(scores, scores, labels)
        assert auc_a == auc_b
        assert z == 0.0 and p == 1.0

    def test_label_flip_antisymmetry(self):
        n = 30
        sa = rng.standard_normal(n)
        sb = rng.standard_normal(n)
        labels = rng.integers(0, 2, n).astype(bool)
        labels[:2] = [True, False]
        a1, b1, z1, p1 = delong_test(sa, sb, labels)
        a2, b2, z2, p2 = delong_test(sa, sb, ~labels)
        assert abs(a2 - (1 - a1)) < 1e-12
        assert abs(b2 - (1 - b1)) < 1e-12
        assert abs(abs(z2) - abs(z1)) < 1e-9
        assert abs(p2 - p1) < 1e-9

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            delong_test([0.1, 0.2], [0.3, 0.4], [True, True])

    def test_against_bootstrap_smoke(self):
        gen = np.random.default_rng(11)
        n = 60
        labels = np.array([True] * 30 + [False] * 30)
        signal = labels.astype(float)
        sa = signal * 1.2 + gen.standard_normal(n)
        sb = signal * 0.4 + gen.standard_normal(n)
        _, _, _, p = delong_test(sa, sb, labels)
        boots = []
        for _ in range(20_000):
            idx = gen.integers(0, n, n)
            lab = labels[idx]
            if lab.all() or not lab.any():
                continue
            boots.append(auroc(sa[idx], lab) - auroc(sb[idx], lab))
        boots = np.array(boots)
        z = boots.mean() / boots.std(ddof=1)
        p_boot = math.erfc(abs(z) / math.sqrt(2))
        assert abs(p - p_boot) < 0.03


class TestReport:
    def test_round_trip_and_bounds(self):
        rep = MetricReport(task="subtype/lung", metric="auroc", value=0.91,
                           sample_count=40)
        rep.add_comparison("baseline-a", "wilcoxon-signed-rank", 0.04)
        text = rep.to_json()
        assert '"auroc"' in text and '"p_value":0.04' in text
        with pytest.raises(ContractError):
            MetricReport(task="x", metric="auroc", value=1.2, sample_count=3)
        with pytest.raises(ContractError):
            rep.add_comparison("b", "delong", 1.5)

    def test_table_formatting(self):
        reps = [
            MetricReport(task="subtype/lung", metric="auroc", value=0.9134,
                         sample_count=40),
            MetricReport(task="survival/breast", metric="c_index", value=0.61,
                         sample_count=25),
        ]
        reps[0].add_comparison("uni", "wilcoxon-signed-rank", 0.016)
        table = format_table(reps)
        lines = table.splitlines()
        assert lines[0].startswith("task")
        assert any("0.9134" in l for l in lines)
        assert any("p=0.016" in l for l in lines)

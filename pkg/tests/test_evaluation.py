import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mia_audit.errors import EvaluationError
from mia_audit.evaluation import (
    AttackReport,
    accuracy_at,
    auc,
    best_accuracy,
    evaluate_attack,
    export_curve,
    ppv_report,
    pr_curve,
    precision_at_top,
    roc_curve,
    select_ppv_thresholds,
    select_threshold,
    threshold_candidates,
    tpr_at_fpr,
)
from mia_audit.scores import ScoreSet, morgan_decide
from oracles import brute_accuracy, brute_tpr_at_fpr, confusion, pairwise_auc


def _set(scores, members):
    return ScoreSet(np.asarray(scores, float), np.asarray(members, bool), "loss")


def _random_set(seed, n=None, ties=False):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 201))
    members = rng.integers(0, 2, n).astype(bool)
    members[0], members[-1] = True, False
    scores = rng.integers(0, 4, n).astype(float) if ties else rng.normal(size=n) + 0.5 * members
    return _set(scores, members)


score_sets = st.builds(_random_set, st.integers(0, 10**6), st.integers(2, 200), st.booleans())


class TestRoc:
    def test_separated_passes_through_corner(self):
        roc = roc_curve(_set([5, 4, 3, 1, 0], [1, 1, 1, 0, 0]))
        assert (0.0, 1.0) in list(zip(roc.fpr.tolist(), roc.tpr.tolist()))

    def test_all_equal_two_points(self):
        roc = roc_curve(_set([2, 2, 2, 2], [1, 0, 1, 0]))
        assert list(zip(roc.fpr, roc.tpr)) == [(0.0, 0.0), (1.0, 1.0)]

    @settings(max_examples=80, deadline=None)
    @given(s=score_sets)
    def test_monotone_with_endpoints(self, s):
        roc = roc_curve(s)
        assert roc.fpr[0] == 0 and roc.tpr[0] == 0 and roc.fpr[-1] == 1 and roc.tpr[-1] == 1
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
        assert np.all(np.diff(roc.thresholds) < 0)

    @settings(max_examples=50, deadline=None)
    @given(s=score_sets)
    def test_points_match_counting(self, s):
        roc = roc_curve(s)
        n_pos = int(s.is_member.sum())
        n_neg = len(s) - n_pos
        for f, t, tau in roc.points():
            tp, fp = confusion(s.scores.tolist(), s.is_member.tolist(), tau)
            assert (fp / n_neg, tp / n_pos) == (f, t)

    def test_single_class(self):
        with pytest.raises(EvaluationError):
            roc_curve(_set([1, 2], [1, 1]))


class TestAuc:
    def test_separated(self):
        assert auc(_set([3, 2, 1, 0], [1, 1, 0, 0])) == 1.0

    def test_all_equal(self):
        assert auc(_set([1, 1, 1, 1], [1, 0, 0, 1])) == 0.5

    @settings(max_examples=100, deadline=None)
    @given(s=score_sets)
    def test_pairwise_oracle(self, s):
        assert abs(auc(s) - pairwise_auc(s.scores.tolist(), s.is_member.tolist())) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(s=score_sets)
    def test_rank_invariance(self, s):
        assert auc(_set(np.exp(s.scores / 3) * 7 - 2, s.is_member)) == auc(s)

    @settings(max_examples=50, deadline=None)
    @given(s=score_sets)
    def test_complement_sums_to_one(self, s):
        assert auc(s) + auc(_set(-s.scores, s.is_member)) == pytest.approx(1.0, abs=1e-12)


class TestPr:
    def test_separated(self):
        pr = pr_curve(_set([4, 3, 1, 0], [1, 1, 0, 0]))
        assert (1.0, 1.0) in list(zip(pr.recall, pr.precision))

    def test_all_equal_balanced(self):
        pr = pr_curve(_set([0, 0, 0, 0], [1, 0, 1, 0]))
        assert pr.recall[-1] == 1.0 and pr.precision[-1] == 0.5
        assert pr.precision[0] == 1.0

    @settings(max_examples=50, deadline=None)
    @given(s=score_sets)
    def test_brute_force(self, s):
        pr = pr_curve(s)
        assert np.all(np.diff(pr.recall) >= 0) and np.all((pr.precision >= 0) & (pr.precision <= 1))
        for r, p, tau in pr.points():
            tp, fp = confusion(s.scores.tolist(), s.is_member.tolist(), tau)
            assert p == (tp / (tp + fp) if tp + fp else 1.0)
            assert r == tp / int(s.is_member.sum())


class TestAccuracy:
    def test_constant_predictors(self):
        s = _set([1, 2, 3, 4], [1, 0, 1, 0])
        assert accuracy_at(s, math.inf) == 0.5 and accuracy_at(s, -math.inf) == 0.5

    def test_imbalanced(self):
        s = _set(np.arange(11), [1] + [0] * 10)
        assert accuracy_at(s, math.inf) == pytest.approx(10 / 11)

    def test_strict_rule(self):
        assert accuracy_at(_set([1.0, 0.0], [1, 0]), 1.0) == 0.5

    def test_gap_identity(self):
        rng = np.random.default_rng(3)
        correct_m, correct_n = rng.random(40) < 0.9, rng.random(40) < 0.7
        s = _set(np.r_[correct_m, correct_n].astype(float), np.r_[np.ones(40), np.zeros(40)])
        expect = 0.5 * (1 + correct_m.mean() - correct_n.mean())
        assert abs(accuracy_at(s, 0.5) - expect) < 1e-12


class TestSelectThreshold:
    def test_separated(self):
        s = _set([5, 4, 1, 0], [1, 1, 0, 0])
        tau = select_threshold(s)
        assert 1 < tau < 4 and accuracy_at(s, tau) == 1.0

    def test_all_equal(self):
        s = _set([2, 2, 2, 2], [1, 0, 0, 1])
        assert select_threshold(s) == 3.0 and accuracy_at(s, 3.0) == 0.5

    def test_candidates(self):
        assert threshold_candidates(np.array([3.0, 1.0, 1.0])).tolist() == [0.0, 2.0, 4.0]

    @settings(max_examples=80, deadline=None)
    @given(s=score_sets)
    def test_exhaustive_optimality(self, s):
        tau = select_threshold(s)
        accs = [brute_accuracy(s.scores.tolist(), s.is_member.tolist(), c) for c in threshold_candidates(s.scores)]
        got = brute_accuracy(s.scores.tolist(), s.is_member.tolist(), tau)
        assert got == max(accs)
        # ties resolve to the largest candidate
        assert tau == max(c for c, a in zip(threshold_candidates(s.scores), accs) if a == got)

    def test_best_accuracy_is_the_optimum(self):
        s = _random_set(4, 50)
        assert best_accuracy(s) == accuracy_at(s, select_threshold(s))


class TestPpv:
    def test_member_on_top(self):
        ppv, count = ppv_report(_set([9, 1, 2, 3], [1, 0, 1, 0]))
        assert ppv == 1.0 and count == 1

    def test_nonmember_on_top(self):
        _, count = ppv_report(_set([9, 1, 2, 3], [0, 1, 1, 0]))
        assert count == 0

    @settings(max_examples=50, deadline=None)
    @given(s=score_sets)
    def test_brute_force(self, s):
        ppv, count = ppv_report(s)
        sc, mem = s.scores.tolist(), s.is_member.tolist()
        top_non = max(v for v, m in zip(sc, mem) if not m)
        assert count == sum(1 for v, m in zip(sc, mem) if m and v > top_non)
        precisions = []
        for tau in sorted(set(sc))[:-1] + [-math.inf]:
            tp, fp = confusion(sc, mem, tau)
            precisions.append(tp / (tp + fp))
        assert ppv == max(precisions)


class TestTprAtFpr:
    def test_endpoint(self):
        assert tpr_at_fpr(_random_set(1, 30), 1.0) == 1.0

    def test_zero_with_nonmember_on_top(self):
        assert tpr_at_fpr(_set([9, 1, 2, 3], [0, 1, 1, 0]), 0.0) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(s=score_sets, level=st.sampled_from([0.0, 0.01, 0.05, 0.1, 0.3, 0.5]))
    def test_enumeration_oracle(self, s, level):
        assert tpr_at_fpr(s, level) == brute_tpr_at_fpr(s.scores.tolist(), s.is_member.tolist(), level)

    def test_bad_level(self):
        with pytest.raises(EvaluationError):
            tpr_at_fpr(_random_set(1, 10), 1.5)


def test_precision_at_top():
    s = _set([5, 4, 3, 2, 1], [1, 0, 1, 1, 0])
    assert precision_at_top(s, 1) == 1.0 and precision_at_top(s, 3) == pytest.approx(2 / 3)
    with pytest.raises(EvaluationError):
        precision_at_top(s, 0)


class TestPpvThresholds:
    def test_exhaustive(self):
        rng = np.random.default_rng(2)
        mem = np.r_[np.ones(15), np.zeros(15)].astype(bool)
        loss = _set(rng.normal(size=30) + mem, mem)
        merlin = ScoreSet(np.round(rng.random(30) * 10) / 10 + 0.1 * mem, mem, "merlin")
        tl, tm = select_ppv_thresholds(loss, merlin)
        pred = morgan_decide(loss, merlin, tl, tm)
        got = mem[pred].mean()
        best = 0.0
        for a in np.unique(loss.scores):
            for b in np.unique(merlin.scores):
                p = morgan_decide(loss, merlin, a, b)
                if p.any():
                    best = max(best, mem[p].mean())
        assert got == best


class TestReport:
    def test_roundtrip(self):
        s = _random_set(7, 60)
        rep = evaluate_attack(s, 0.1, provenance={"seed": 3})
        again = AttackReport.from_dict(rep.to_dict())
        assert again.scalars() == rep.scalars()
        assert np.array_equal(again.roc.fpr, rep.roc.fpr) and np.array_equal(again.pr.precision, rep.pr.precision)
        assert again.provenance == {"seed": 3}

    def test_ranges(self):
        rep = evaluate_attack(_random_set(8, 40), 0.0)
        assert 0 <= rep.auc <= 1 and 0 <= rep.accuracy <= 1 and 0 <= rep.ppv <= 1
        assert set(rep.scalars()) >= {"auc", "tpr@fpr=0.05", "precision@top10"}

    def test_export_curve(self, tmp_path):
        rep = evaluate_attack(_random_set(9, 20), 0.0)
        path = tmp_path / "roc.tsv"
        export_curve(rep.roc, str(path))
        lines = path.read_text().splitlines()
        assert lines[0].split("\t") == ["fpr", "tpr", "threshold"]
        assert len(lines) == len(rep.roc) + 1
        assert [float(v) for v in lines[-1].split("\t")[:2]] == [1.0, 1.0]

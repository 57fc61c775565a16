import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mia_audit.calibration import (
    CalibrationConfig,
    CalibrationMode,
    calibrate_scores,
    calibrated_gap_accuracy,
    calibrated_gap_decide,
    confusion_gap_accuracy,
    train_references,
)
from mia_audit.data import SyntheticConfig, generate_synthetic, make_split
from mia_audit.errors import AlignmentError, ConfigError
from mia_audit.evaluation import auc
from mia_audit.model import Architecture, Model, TrainConfig, init_mlp, train
from mia_audit.scores import ScoreSet, gap_score, score_batch


@pytest.fixture(scope="module")
def setup():
    d = generate_synthetic(SyntheticConfig(300, 6, 2, 0.8, seed=1))
    plan = make_split(d, 0.4, 0.4, 0)
    target = train(init_mlp(Architecture((6, 12, 2)), 0), d, plan.member_idx, TrainConfig(epochs=40, seed=0))
    return d, plan, target


def _cfg(mode="from_scratch", k=1, frac=1.0, epochs=10):
    return CalibrationConfig(CalibrationMode(mode), k, frac, TrainConfig(epochs=epochs, batch_size=16))


class TestTrainReferences:
    def test_single_full_shadow(self, setup):
        d, plan, target = setup
        refs = train_references(d, plan.shadow_idx, _cfg(), target, base_seed=50)
        expect = train(init_mlp(target.architecture, 50), d, plan.shadow_idx, TrainConfig(epochs=10, batch_size=16, seed=50))
        assert len(refs) == 1 and refs[0].equals(expect)

    def test_forgetting_zero_epochs_is_target(self, setup):
        d, plan, target = setup
        refs = train_references(d, plan.shadow_idx, _cfg("forgetting", epochs=0), target, 0)
        assert refs[0].equals(target)

    def test_forgetting_starts_from_target(self, setup):
        d, plan, target = setup
        ref = train_references(d, plan.shadow_idx, _cfg("forgetting", epochs=1), target, 3)[0]
        expect = train(target, d, plan.shadow_idx, TrainConfig(epochs=1, batch_size=16, seed=3))
        assert ref.equals(expect)

    def test_distinct_models(self, setup):
        d, plan, target = setup
        refs = train_references(d, plan.shadow_idx, _cfg(k=3, frac=0.5), target, 7)
        flats = [r.flat_parameters() for r in refs]
        assert all(not np.array_equal(flats[i], flats[j]) for i in range(3) for j in range(i + 1, 3))

    def test_subsample_never_leaves_shadow(self, setup, monkeypatch):
        d, plan, target = setup
        seen = []
        import mia_audit.calibration as cal

        real_train = cal.train
        monkeypatch.setattr(cal, "train", lambda m, data, idx, cfg: seen.append(np.asarray(idx)) or real_train(m, data, idx, cfg))
        train_references(d, plan.shadow_idx, _cfg(k=2, frac=0.3, epochs=1), target, 1)
        for idx in seen:
            assert len(idx) == math.ceil(0.3 * len(plan.shadow_idx))
            assert len(set(idx)) == len(idx) and set(idx) <= set(plan.shadow_idx)

    def test_empty_shadow(self, setup):
        d, _, target = setup
        with pytest.raises(ConfigError):
            train_references(d, [], _cfg(), target, 0)

    @pytest.mark.parametrize("bad", [dict(n_reference_models=0), dict(shadow_subsample_fraction=0.0),
                                     dict(shadow_subsample_fraction=1.5)])
    def test_invalid_config(self, setup, bad):
        d, plan, target = setup
        with pytest.raises(ConfigError):
            train_references(d, plan.shadow_idx, CalibrationConfig(**bad), target, 0)


class TestCalibrateScores:
    def test_self_calibration_is_zero(self):
        s = ScoreSet([-1.0, -0.2, -3.0], [1, 0, 1], "loss", [4, 5, 6])
        c = calibrate_scores(s, [s])
        assert np.all(c.scores == 0) and c.kind == "calibrated(loss)"
        assert c.is_member.tolist() == [True, False, True]

    def test_arithmetic(self):
        t = ScoreSet([-1.0, -3.0], [1, 0], "loss")
        r = ScoreSet([-2.0, -2.0], [1, 0], "loss")
        assert calibrate_scores(t, [r]).scores.tolist() == [1.0, -1.0]

    def test_mean_of_k_brute_force(self):
        rng = np.random.default_rng(0)
        t = ScoreSet(rng.normal(size=7), rng.integers(0, 2, 7), "grad_norm")
        refs = [ScoreSet(rng.normal(size=7), t.is_member, "grad_norm") for _ in range(4)]
        got = calibrate_scores(t, refs).scores
        for i in range(7):
            assert got[i] == pytest.approx(t.scores[i] - sum(r.scores[i] for r in refs) / 4, abs=1e-15)

    def test_kind_mismatch(self):
        with pytest.raises(AlignmentError):
            calibrate_scores(ScoreSet([1.0], [1], "loss"), [ScoreSet([1.0], [1], "confidence")])

    def test_sample_mismatch(self):
        with pytest.raises(AlignmentError):
            calibrate_scores(ScoreSet([1.0, 2.0], [1, 0], "loss", [0, 1]), [ScoreSet([1.0, 2.0], [1, 0], "loss", [0, 2])])

    def test_length_mismatch(self):
        with pytest.raises(AlignmentError):
            calibrate_scores(ScoreSet([1.0, 2.0], [1, 0], "loss"), [ScoreSet([1.0], [1], "loss")])

    def test_needs_reference(self):
        with pytest.raises(AlignmentError):
            calibrate_scores(ScoreSet([1.0], [1], "loss"), [])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), shift=st.floats(-100, 100))
    def test_shift_linearity_and_auc_invariance(self, seed, shift):
        rng = np.random.default_rng(seed)
        members = np.r_[np.ones(10, bool), np.zeros(10, bool)]
        t = ScoreSet(rng.normal(size=20), members, "loss")
        r = ScoreSet(rng.normal(size=20), members, "loss")
        shifted = ScoreSet(t.scores + shift, members, "loss")
        a, b = calibrate_scores(t, [r]), calibrate_scores(shifted, [r])
        np.testing.assert_allclose(b.scores - a.scores, shift, atol=1e-9)

    def test_self_calibration_auc_half(self, setup):
        d, plan, target = setup
        idx = np.r_[plan.member_idx, plan.nonmember_idx]
        mem = np.r_[np.ones(len(plan.member_idx)), np.zeros(len(plan.nonmember_idx))]
        s = score_batch(target, d, idx, "loss", mem)
        assert abs(auc(calibrate_scores(s, [s])) - 0.5) < 1e-12


class TestCalibratedGap:
    def test_reference_equal_target(self, setup):
        d, plan, target = setup
        assert not calibrated_gap_decide(target, target, d, np.arange(d.n_samples)).any()

    def test_crafted(self):
        from mia_audit.data import Dataset

        d = Dataset(np.zeros((4, 1)), np.array([0, 1, 0, 1]), 2)
        right = Model((np.zeros((1, 2)),), (np.array([1.0, 0.0]),))   # predicts class 0
        wrong = Model((np.zeros((1, 2)),), (np.array([0.0, 1.0]),))   # predicts class 1
        assert calibrated_gap_decide(right, wrong, d, [0, 1]).tolist() == [True, False]

    def test_confusion_identity(self, setup):
        d, plan, target = setup
        ref = train_references(d, plan.shadow_idx, _cfg(epochs=20), target, 5)[0]
        dm = calibrated_gap_decide(target, ref, d, plan.member_idx)
        dn = calibrated_gap_decide(target, ref, d, plan.nonmember_idx)
        empirical = np.mean(np.r_[dm, ~dn])
        assert empirical == pytest.approx(confusion_gap_accuracy(dm, dn), abs=1e-15)

    def test_formula_matches_confusion_table(self, setup):
        d, plan, target = setup
        ref = train_references(d, plan.shadow_idx, _cfg(epochs=20), target, 5)[0]
        xm, ym = d.features[plan.member_idx], d.labels[plan.member_idx]
        xn, yn = d.features[plan.nonmember_idx], d.labels[plan.nonmember_idx]
        tm, rm = gap_score(target, xm, ym), gap_score(ref, xm, ym)
        tn, rn = gap_score(target, xn, yn), gap_score(ref, xn, yn)
        eps1 = np.mean((tm == 0) & (rm == 1))
        eps2 = np.mean((tn == 0) & (rn == 1))
        got = calibrated_gap_accuracy(tm.mean(), tn.mean(), eps1, eps2)
        dm = calibrated_gap_decide(target, ref, d, plan.member_idx)
        dn = calibrated_gap_decide(target, ref, d, plan.nonmember_idx)
        # the closed form assumes the reference is equally accurate on both sides
        correction = 0.5 * (rn.mean() - rm.mean())
        assert confusion_gap_accuracy(dm, dn) == pytest.approx(got + correction, abs=1e-12)

    def test_extremes(self):
        assert calibrated_gap_accuracy(1, 0, 0, 0) == 1.0
        assert calibrated_gap_accuracy(0.7, 0.7, 0, 0) == 0.5

    @settings(max_examples=200, deadline=None)
    @given(*(st.floats(0, 1) for _ in range(4)))
    def test_expression(self, p_train, p_test, e1, e2):
        assert calibrated_gap_accuracy(p_train, p_test, e1, e2) == pytest.approx(
            (1 - e2 + p_train - p_test + e1) / 2, abs=1e-15)

    @pytest.mark.parametrize("eps1,eps2", [(0.0, 0.08), (0.02, 0.12), (0.01, 0.1)])
    def test_reported_regime_is_below_plain_gap(self, eps1, eps2):
        p_train, p_test = 0.95, 0.75
        assert calibrated_gap_accuracy(p_train, p_test, eps1, eps2) < 0.5 * (1 + p_train - p_test)

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            calibrated_gap_accuracy(1.2, 0.5, 0, 0)

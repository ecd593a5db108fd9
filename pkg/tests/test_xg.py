import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import make_match
from soccerpm.errors import EmptyCorpus, InsufficientData, MaskMismatch
from soccerpm.ingest import ShotRecord
from soccerpm.segmentation import build_segments
from soccerpm.xg import (ALL_FEATURES, GK_FEATURES, GD_LEVELS, N_TIME_BINS, GoalValueTable, PitchGeometry,
                         ShotFeatures, XgModel, XgModelSet, baseline_brier, build_goal_value_table,
                         extract_features, feature_mask, fit_logistic, fit_xg_model, fit_xg_models,
                         goal_view_angle, inverse_distance, penalized_nll, penalized_nll_grad, predict_xg,
                         segment_xg_differential, shot_design)

PITCH = PitchGeometry()


def _flat_table():
    return GoalValueTable(np.zeros((5, 6)), np.zeros((5, 6)))


def _shot(x=0.9, y=0.5, shot_type="openplay", gk=None, outcome="noGoal", minute=30.0):
    return ShotRecord("m1", minute, "home", "h9", x, y, shot_type, False, outcome, gk)


class TestGeometry:
    def test_inverse_distance_extremes(self):
        assert inverse_distance(1.0, 0.5) == 1.0
        assert inverse_distance(0.0, 0.0) == 0.0
        assert inverse_distance(0.0, 1.0) == 0.0

    def test_penalty_spot_view_angle(self):
        x = 1.0 - 11.0 / PITCH.length
        closed = 2.0 * math.atan(3.66 / 11.0) / math.pi
        # independent oracle: integrate the bearing rate along the goal mouth
        half = PITCH.goal_width / 2
        numeric, _ = quad(lambda t: 11.0 / (11.0 ** 2 + t ** 2), -half, half)
        assert abs(goal_view_angle(x, 0.5) - closed) < 1e-12
        assert abs(goal_view_angle(x, 0.5) - numeric / math.pi) < 1e-10
        # the quoted 0.2046 is a rounded approximation of 0.20449
        assert abs(closed - 0.2046) < 2e-4

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_view_angle_matches_integral_off_axis(self, x, y):
        depth = (1 - x) * PITCH.length
        lateral = (y - 0.5) * PITCH.width
        half = PITCH.goal_width / 2
        if depth < 1e-3:
            return
        numeric, _ = quad(lambda t: depth / (depth ** 2 + (t - lateral) ** 2), -half, half)
        assert abs(goal_view_angle(x, y) - numeric / math.pi) < 1e-9

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 120), st.integers(-6, 6),
           st.booleans(), st.one_of(st.none(), st.lists(st.floats(0, 1), min_size=5, max_size=5)))
    def test_features_in_unit_interval(self, x, y, minute, gd, big, gk):
        rng = np.random.default_rng(0)
        table = GoalValueTable(rng.random((5, 6)), np.zeros((5, 6)))
        shot = ShotRecord("m", minute, "home", "p", x, y, "openplay", big, "noGoal",
                          None if gk is None else tuple(gk))
        values = extract_features(shot, table, (gd, minute)).values()
        assert all(0.0 <= v <= 1.0 for v in values.values())

    def test_view_angle_decreases_along_axis(self):
        depths = np.linspace(0.5, 100, 200)
        angles = [goal_view_angle(1 - d / PITCH.length, 0.5) for d in depths]
        assert np.all(np.diff(angles) < 0)

    def test_y_adjustment_and_time(self):
        f = extract_features(_shot(y=0.0, minute=95.0), _flat_table(), (0, 95.0))
        assert f.yAdj == 1.0 and f.timeOfPlay == 1.0
        f = extract_features(_shot(y=0.5, minute=45.0), _flat_table(), (0, 45.0))
        assert f.yAdj == 0.0 and f.timeOfPlay == 0.5

    def test_no_shooter_inputs(self):
        assert not any("shooter" in name.lower() for name in ALL_FEATURES)
        assert set(ShotFeatures.__dataclass_fields__) == {
            "x", "yAdj", "goalViewAngle", "invDistance", "timeOfPlay", "goalValue", "bigChance", "gkSkills"}


class TestGoalValueTable:
    def test_shape_and_range(self, small_corpus):
        table = build_goal_value_table(small_corpus.matches)
        assert table.values.shape == (len(GD_LEVELS), N_TIME_BINS) == (5, 6)
        assert table.values.min() == 0.0 and table.values.max() == 1.0

    def test_late_level_goal_outweighs_early_lead(self, small_corpus):
        table = build_goal_value_table(small_corpus.matches)
        assert table.raw[table.cell(0, 85.0)] > table.raw[table.cell(3, 5.0)]
        assert table.lookup(0, 85.0) > table.lookup(3, 5.0)

    def test_constant_table_is_zero(self):
        # every match 0-0: no cell shows any swing
        matches = [make_match(f"m{i}") for i in range(5)]
        table = build_goal_value_table(matches)
        assert np.all(table.values == 0.0)

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            build_goal_value_table([])

    def test_clipping_and_round_trip(self, small_corpus):
        table = build_goal_value_table(small_corpus.matches)
        assert table.lookup(7, 200.0) == table.lookup(2, 89.0)
        back = GoalValueTable.from_dict(json.loads(json.dumps(table.to_dict())))
        np.testing.assert_array_equal(back.values, table.values)


class TestBaselineBrier:
    @given(st.integers(1, 500), st.integers(0, 500))
    def test_identity(self, n, k):
        k = min(k, n)
        y = np.r_[np.ones(k), np.zeros(n - k)]
        p = k / n
        assert abs(baseline_brier(y) - p * (1 - p)) <= 1e-12
        assert abs(baseline_brier(y) - np.mean((p - y) ** 2)) <= 1e-12

    def test_table_counts(self):
        pen = np.r_[np.ones(4912), np.zeros(6498 - 4912)]
        head = np.r_[np.ones(11438), np.zeros(99620 - 11438)]
        assert abs(baseline_brier(pen) - 0.1845) < 5e-4
        assert abs(baseline_brier(head) - 0.1016) < 5e-4
        assert baseline_brier(np.ones(10)) == 0.0
        with pytest.raises(InsufficientData):
            baseline_brier([])


def planted_logistic(n=20_000, beta=2.0, intercept=-1.0, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    y = (rng.random(n) < 1 / (1 + np.exp(-(intercept + beta * x)))).astype(float)
    return x[:, None], y


class TestLogistic:
    def test_recovery(self):
        X, y = planted_logistic()
        model = fit_xg_model(X, y, "openplay", ("invDistance",), folds=5, seed=1)
        assert abs(model.coefficients[0] - 2.0) <= 0.1
        assert abs(model.intercept + 1.0) <= 0.1
        assert model.cv_brier <= model.baseline_brier

    def test_gradient_zero_at_optimum(self):
        X, y = planted_logistic(5000)
        for alpha in (0.0, 1e-2, 1.0):
            params = fit_logistic(X, y, alpha)
            assert np.linalg.norm(penalized_nll_grad(params, X, y, alpha)) < 1e-6

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(4)
        X = rng.random((300, 4))
        y = (rng.random(300) < 0.3).astype(float)
        h = 1e-6
        for _ in range(100):
            params = rng.normal(0, 1.5, 5)
            alpha = float(rng.choice([0.0, 0.01, 1.0]))
            g = penalized_nll_grad(params, X, y, alpha)
            fd = np.array([(penalized_nll(params + h * e, X, y, alpha) - penalized_nll(params - h * e, X, y, alpha))
                           / (2 * h) for e in np.eye(5)])
            assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1e-3)

    def test_intercept_only(self):
        rng = np.random.default_rng(2)
        y = (rng.random(2000) < 0.2).astype(float)
        model = fit_xg_model(np.zeros((2000, 0)), y, "penalty", (), folds=10, seed=0)
        np.testing.assert_allclose(predict_xg(model, np.zeros(0)), y.mean(), rtol=1e-8)
        assert abs(model.cv_brier - model.baseline_brier) < 1e-3

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            fit_xg_model(np.zeros((10, 1)), np.zeros(10), "header", ("x",))

    def test_open_play_dominant_features(self):
        from soccerpm.synthetic import generate
        corpus = generate(seasons=2, teams=20, seed=5)
        ds = corpus.dataset()
        table = build_goal_value_table(ds.matches.values())
        shots = [s for s in ds.shots if s.shot_type == "openplay"]
        mask = feature_mask("openplay", False)
        X, y = shot_design(shots, ds.matches, table, mask)
        model = fit_xg_model(X, y, "openplay", mask, folds=3, seed=0)
        importance = dict(zip(mask, np.abs(model.coefficients * X.std(axis=0))))
        planted = min(importance[f] for f in ("invDistance", "goalViewAngle", "bigChance"))
        # x is a near-duplicate of invDistance so it may share the weight
        assert planted > max(importance[f] for f in ("yAdj", "timeOfPlay", "goalValue"))


class TestPredict:
    def test_closed_forms(self):
        zero = XgModel("openplay", ("invDistance",), np.zeros(1), 0.0)
        assert predict_xg(zero, np.array([0.7])) == 0.5
        model = XgModel("openplay", ("invDistance",), np.array([2.0]), -1.0)
        np.testing.assert_allclose(predict_xg(model, np.array([1.0])), 1 / (1 + math.exp(-1.0)), rtol=1e-12)
        assert round(predict_xg(model, np.array([1.0])), 4) == 0.7311

    def test_penalty_constant(self):
        rate = 4912 / 6498
        model = XgModel("penalty", (), np.zeros(0), math.log(rate / (1 - rate)))
        preds = {predict_xg(model, extract_features(_shot(x=1 - 11 / 105, shot_type="penalty", minute=m),
                                                     _flat_table(), (0, m)).vector(()))
                 for m in (3.0, 50.0, 88.0)}
        assert len(preds) == 1
        assert abs(preds.pop() - 0.756) < 5e-4

    def test_mask_mismatch(self):
        mask = feature_mask("header", True)
        model = XgModel("header", mask, np.ones(len(mask)), 0.0)
        feats = extract_features(_shot(shot_type="header"), _flat_table(), (0, 30.0))
        with pytest.raises(MaskMismatch):
            predict_xg(model, feats)

    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(-50, 50))
    def test_open_interval(self, coefs, intercept):
        model = XgModel("openplay", ("x", "invDistance", "bigChance"), np.array(coefs), intercept)
        p = predict_xg(model, np.array([1.0, 1.0, 1.0]))
        assert 0.0 < p < 1.0

    def test_monotone_in_positive_features(self):
        rng = np.random.default_rng(1)
        mask = feature_mask("openplay", False)
        coefs = rng.normal(0, 2, len(mask))
        model = XgModel("openplay", mask, coefs, -1.0)
        for _ in range(50):
            v = rng.random(len(mask))
            for j in np.nonzero(coefs > 0)[0]:
                up = v.copy()
                up[j] = min(1.0, v[j] + 1e-3)
                assert model.linear_score(up) >= model.linear_score(v)
                assert predict_xg(model, up) >= predict_xg(model, v)

    def test_penalty_mask_has_no_location(self):
        for gk in (False, True):
            assert not {"x", "yAdj", "goalViewAngle", "invDistance"} & set(feature_mask("penalty", gk))
        assert set(GK_FEATURES) <= set(feature_mask("freekick", True))


class TestModelSet:
    def test_fit_dispatch_and_round_trip(self, small_dataset):
        models = fit_xg_models(small_dataset, folds=3, seed=0)
        assert ("openplay", False) in models.models
        back = XgModelSet.from_dict(json.loads(json.dumps(models.to_dict(), allow_nan=False)))
        for shot in small_dataset.shots[:200]:
            match = small_dataset.matches[shot.match_id]
            p = models.predict_shot(shot, match)
            assert 0.0 < p < 1.0
            assert back.predict_shot(shot, match) == p
        gk_shot = next(s for s in small_dataset.shots if s.gk_skills is not None and s.shot_type == "openplay")
        assert models.model_for("openplay", True).feature_mask[-5:] == GK_FEATURES
        assert models.model_for(gk_shot.shot_type, False).feature_mask == feature_mask("openplay", False)


class TestSegmentXg:
    def _segment(self, duration=45.0):
        m = make_match(events=[(duration, "home", "substitution", "h3", "h12")])
        return build_segments(m)[0]

    def test_examples(self):
        seg = self._segment(45.0)
        assert segment_xg_differential(seg, []) == 0.0
        assert segment_xg_differential(seg, [("home", 0.5)]) == 1.0
        assert segment_xg_differential(seg, [("home", 0.3), ("away", 0.1), ("away", 0.3), ("home", 0.1)]) == 0.0

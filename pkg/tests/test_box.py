import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import box_objective, box_oracle
from spaceforge.box import (BoxSlackProblem, exact_penalty_lambda, fit_box, fit_box_slack,
                            optimal_slacks_given_box, slack_scales)
from spaceforge.core import Incumbent, NumericDim, ParameterSchema

UNIT = (np.ones(1), np.ones(1))


class TestHardBox:
    def test_toy(self):
        r = fit_box([(0, 1), (2, 3), (1, 0)])
        np.testing.assert_array_equal(r.space.lower, [0, 0])
        np.testing.assert_array_equal(r.space.upper, [2, 3])
        assert r.slack.n_active == 0

    def test_single_incumbent(self):
        r = fit_box([Incumbent("t", np.array([5.0]), 1.0)])
        assert r.space.lower[0] == r.space.upper[0] == 5.0
        assert r.slack.task_ids == ("t",)

    def test_random_points_match_scan(self):
        X = np.random.default_rng(0).uniform(size=(100, 5))
        r = fit_box(X)
        lo, hi = X[0].copy(), X[0].copy()
        for x in X[1:]:
            lo, hi = np.minimum(lo, x), np.maximum(hi, x)
        np.testing.assert_array_equal(r.space.lower, lo)
        np.testing.assert_array_equal(r.space.upper, hi)
        assert all(r.space.contains(x) for x in X)

    def test_rejects_empty_and_zero_dim(self):
        with pytest.raises(ValueError, match="empty"):
            fit_box(np.zeros((0, 2)))
        with pytest.raises(ValueError, match="zero dimensions"):
            fit_box(np.zeros((3, 0)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.tuples(st.integers(1, 20), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)))
    def test_contains_all_and_tight(self, X):
        r = fit_box(X)
        assert np.all(X >= r.space.lower) and np.all(X <= r.space.upper)
        # Every face touches an incumbent.
        assert np.all(np.any(X == r.space.lower, axis=0))
        assert np.all(np.any(X == r.space.upper, axis=0))


class TestSlacks:
    def test_upper_slack(self):
        xm, xp = optimal_slacks_given_box([0.0], [0.3], [[0.1], [0.9]], [1.0], [1.0])
        np.testing.assert_allclose(xp, [0.0, 0.6])
        np.testing.assert_array_equal(xm, [0.0, 0.0])

    def test_inside_is_zero(self):
        xm, xp = optimal_slacks_given_box([0, 0], [1, 1], [[0.5, 0.5]], [1, 1], [1, 1])
        assert xm[0] == xp[0] == 0.0

    def test_per_dimension_max(self):
        _, xp = optimal_slacks_given_box([0, 0], [1, 1], [[2.0, 3.0]], [1, 1], [1, 2])
        assert xp[0] == pytest.approx(1.0)

    def test_scales_floor(self):
        s = ParameterSchema((NumericDim("a", 0.0, 10.0), NumericDim("b", -5.0, 2.0)))
        ls, us = slack_scales(s)
        np.testing.assert_allclose(ls, [0.01, 5.0])
        np.testing.assert_allclose(us, [10.0, 2.0])


class TestSoftBox:
    def test_tiny_lambda_recovers_hard_box(self):
        X = np.random.default_rng(3).uniform(size=(12, 3))
        soft = fit_box_slack(X, 1e-12, scales=(np.ones(3), np.ones(3)))
        hard = fit_box(X)
        np.testing.assert_allclose(soft.space.lower, hard.space.lower, atol=1e-6)
        np.testing.assert_allclose(soft.space.upper, hard.space.upper, atol=1e-6)
        assert soft.slack.n_active == 0

    def test_four_point_example_against_grid(self):
        # Unit scales at lam=10: the dense-grid optimum keeps only a narrow
        # interval; the solver must reach the same objective.
        X = np.array([[0.1], [0.2], [0.3], [0.9]])
        for lam in (0.01, 0.1, 1.0, 10.0):
            r = fit_box_slack(X, lam, scales=UNIT)
            assert r.objective == pytest.approx(box_oracle(X, lam, 1.0, 1.0), abs=1e-6)

    def test_four_point_example_with_schema_scales(self):
        # With the [0, 1] schema the lower scale floors at 1e-3, so trimming
        # from below is expensive and only 0.9 is left out.
        schema = ParameterSchema((NumericDim("x", 0.0, 1.0),))
        r = fit_box_slack([[0.1], [0.2], [0.3], [0.9]], 1.0, schema=schema)
        assert r.space.lower[0] == pytest.approx(0.1, abs=1e-6)
        assert 0.3 - 1e-6 <= r.space.upper[0] < 0.9
        np.testing.assert_array_equal(r.slack.active, [False, False, False, True])

    @pytest.mark.parametrize("seed", range(5))
    def test_width_never_exceeds_hard_box(self, seed):
        X = np.random.default_rng(seed).normal(size=(8, 2))
        hard = fit_box(X)
        for lam in (0.01, 1.0, 100.0):
            r = fit_box_slack(X, lam, scales=(np.ones(2), np.ones(2)))
            assert r.width_sq <= hard.width_sq + 1e-9

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_oracle_2d(self, seed):
        rng = np.random.default_rng(100 + seed)
        X = rng.uniform(size=(int(rng.integers(3, 7)), 2))
        X[0] *= 4
        ls, us = rng.uniform(0.5, 2.0, 2), rng.uniform(0.5, 2.0, 2)
        for lam in (0.01, 0.1, 1.0, 10.0):
            r = fit_box_slack(X, lam, scales=(ls, us))
            assert r.objective == pytest.approx(box_objective(r.space.lower, r.space.upper, X, lam, ls, us))
            assert r.objective <= box_oracle(X, lam, ls, us) + 1e-6

    def test_exact_penalty_threshold(self):
        X = np.array([[0.0], [1.0], [2.0]])
        lam0 = exact_penalty_lambda(X, [1.0], [1.0])
        # Two faces, one incumbent each, width 2: multiplier load 2.
        assert lam0 == pytest.approx(1.0 / (2 * 3 * 2))
        p = BoxSlackProblem(X, [1.0], [1.0])
        just_above = p.solve(lam0 * 1.5)
        assert just_above.space.upper[0] - just_above.space.lower[0] < 2.0 - 1e-6

    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError):
            fit_box_slack([[0.0], [1.0]], 0.0, scales=UNIT)
        with pytest.raises(ValueError):
            fit_box_slack([[0.0], [1.0]], 1.0)

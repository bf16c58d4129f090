import math

import numpy as np
import pytest

from spaceforge.core import (BoxSpace, CalibrationConfig, CategoricalDim, EllipsoidSpace,
                             EvaluationRecord, NumericDim, ParameterSchema, SchemaError, SlackReport,
                             TaskHistory, Trace, as_points, extract_incumbents, group_by_task,
                             project_numeric)


@pytest.fixture
def schema():
    return ParameterSchema(
        (NumericDim("lr", 0.0, 1.0), NumericDim("momentum", 0.0, 1.0)),
        (CategoricalDim("kernel", ("rbf", "linear")),),
    )


def rec(task, lr, y, kernel="rbf"):
    return EvaluationRecord(task, {"lr": lr, "momentum": 0.5, "kernel": kernel}, y)


class TestSchema:
    def test_bounds_must_be_ordered(self):
        with pytest.raises(SchemaError, match="lower"):
            NumericDim("x", 1.0, 1.0)

    def test_bounds_must_be_finite(self):
        with pytest.raises(SchemaError):
            NumericDim("x", 0.0, math.inf)

    def test_empty_categorical_domain(self):
        with pytest.raises(SchemaError, match="empty"):
            CategoricalDim("c", ())

    def test_duplicate_names(self):
        with pytest.raises(SchemaError, match="duplicate"):
            ParameterSchema((NumericDim("a", 0, 1),), (CategoricalDim("a", ("x",)),))

    def test_validate_reports_offending_dimension(self, schema):
        schema.validate({"lr": 0.5, "momentum": 0.1, "kernel": "rbf"})
        with pytest.raises(SchemaError, match="'lr'"):
            schema.validate({"lr": 2.0, "momentum": 0.1, "kernel": "rbf"})
        with pytest.raises(SchemaError, match="'kernel'"):
            schema.validate({"lr": 0.5, "momentum": 0.1, "kernel": "poly"})
        with pytest.raises(SchemaError, match="missing"):
            schema.validate({"lr": 0.5, "kernel": "rbf"})

    def test_integer_dimension_must_be_integral(self):
        s = ParameterSchema((NumericDim("n", 1, 10, is_integer=True),))
        s.validate({"n": 5})
        with pytest.raises(SchemaError, match="integral"):
            s.validate({"n": 5.5})


class TestIncumbents:
    def test_argmin(self, schema):
        h = TaskHistory("a", [rec("a", 0.1, 3.0), rec("a", 0.2, 1.0), rec("a", 0.3, 2.0)])
        (inc,) = extract_incumbents([h], schema)
        assert inc.y_star == 1.0
        np.testing.assert_array_equal(inc.x_star, [0.2, 0.5])

    def test_single_record(self, schema):
        (inc,) = extract_incumbents([TaskHistory("a", [rec("a", 0.7, 5.0)])], schema)
        assert inc.y_star == 5.0 and inc.x_star[0] == 0.7

    def test_tie_keeps_first(self, schema):
        h = TaskHistory("a", [rec("a", 0.1, 1.0, "rbf"), rec("a", 0.9, 1.0, "linear")])
        (inc,) = extract_incumbents([h], schema)
        assert inc.x_star[0] == 0.1
        assert inc.cat_star == {"kernel": "rbf"}

    def test_empty_history_rejected(self, schema):
        with pytest.raises(SchemaError, match="no evaluations"):
            extract_incumbents([TaskHistory("a", [])], schema)

    def test_nan_objective_rejected(self, schema):
        with pytest.raises(SchemaError, match="NaN"):
            extract_incumbents([TaskHistory("a", [rec("a", 0.1, float("nan"))])], schema)

    def test_invalid_config_rejected(self, schema):
        with pytest.raises(SchemaError):
            extract_incumbents([TaskHistory("a", [rec("a", 1.5, 1.0)])], schema)

    def test_history_with_foreign_record(self):
        with pytest.raises(SchemaError, match="found in history"):
            TaskHistory("a", [rec("b", 0.1, 1.0)])

    def test_group_by_task_keeps_order(self):
        records = [rec("b", 0.1, 1.0), rec("a", 0.2, 2.0), rec("b", 0.3, 0.5)]
        groups = group_by_task(records)
        assert [g.task_id for g in groups] == ["b", "a"]
        assert len(groups[0].records) == 2


class TestProjection:
    def test_drops_categoricals(self, schema):
        x = project_numeric({"lr": 0.1, "momentum": 0.9, "kernel": "rbf"}, schema)
        np.testing.assert_array_equal(x, [0.1, 0.9])

    def test_all_categorical_schema(self):
        s = ParameterSchema((), (CategoricalDim("k", ("a",)),))
        assert project_numeric({"k": "a"}, s).shape == (0,)

    def test_integer_becomes_float(self):
        s = ParameterSchema((NumericDim("n", 1, 10, is_integer=True),))
        x = project_numeric({"n": 5}, s)
        assert x.dtype == float and x[0] == 5.0

    def test_as_points_shapes(self):
        X, ids = as_points([1.0, 2.0, 3.0])
        assert X.shape == (3, 1) and ids == ("0", "1", "2")


class TestGeometry:
    def test_box_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            BoxSpace([1.0], [0.0])

    def test_ellipsoid_requires_positive_definite(self):
        with pytest.raises(ValueError, match="positive definite"):
            EllipsoidSpace(np.diag([1.0, 0.0]), np.zeros(2))
        with pytest.raises(ValueError, match="symmetric"):
            EllipsoidSpace(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_ellipsoid_center(self):
        e = EllipsoidSpace(np.array([[2.0]]), np.array([-1.0]))
        assert e.center[0] == pytest.approx(0.5)


def test_slack_report_round_trip():
    r = SlackReport(("a", "b"), np.array([0.0, 0.3]), np.array([0.0, 0.1]), np.array([0.0, 0.2]), lam=2.0)
    back = SlackReport.from_dict(r.to_dict())
    assert back.task_ids == r.task_ids and back.lam == 2.0
    np.testing.assert_array_equal(back.values, r.values)
    np.testing.assert_array_equal(back.upper, r.upper)
    assert back.n_active == 1


def test_calibration_config_validation():
    with pytest.raises(ValueError):
        CalibrationConfig(nu=1.0)
    with pytest.raises(ValueError):
        CalibrationConfig(grid=(1.0, 0.1))
    with pytest.raises(ValueError):
        CalibrationConfig(grid=())


class TestTrace:
    def test_best_so_far_is_running_min(self):
        t = Trace()
        for y in (3.0, 5.0, 1.0, 2.0):
            t.append({}, y, 1)
        np.testing.assert_array_equal(t.best_so_far, [3.0, 3.0, 1.0, 1.0])

    def test_best_at_resource(self):
        t = Trace()
        for y, r in ((5.0, 1), (4.0, 1), (1.0, 3), (0.5, 9)):
            t.append({}, y, r)
        # Cumulative resource: 1, 2, 5, 14.
        np.testing.assert_array_equal(t.best_at_resource([0.5, 1, 4, 5, 13, 14]),
                                      [np.inf, 5.0, 4.0, 1.0, 1.0, 0.5])

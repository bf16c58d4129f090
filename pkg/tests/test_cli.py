import csv
import json

import numpy as np
import pytest

from spaceforge.cli import main
from spaceforge.core import (BoxSpace, CategoricalDim, EllipsoidSpace, EvaluationRecord, NumericDim,
                             ParameterSchema, SlackReport)
from spaceforge.formats import (InputError, SpaceFile, dump_history, dump_schema, load_history,
                                load_schema, load_space, parse_history)
from spaceforge.learn import learn_space


@pytest.fixture
def toy(tmp_path):
    schema = ParameterSchema((NumericDim("a", -5, 5), NumericDim("b", -5, 5)),
                             (CategoricalDim("kind", ("x", "y")),))
    records = []
    for task, best in (("t1", (0, 1)), ("t2", (2, 3)), ("t3", (1, 0))):
        records.append(EvaluationRecord(task, {"a": 4.0, "b": 4.0, "kind": "x"}, 5.0))
        records.append(EvaluationRecord(task, {"a": best[0], "b": best[1], "kind": "y"}, 1.0))
    dump_schema(schema, tmp_path / "schema.json")
    dump_history(records, tmp_path / "history.jsonl")
    return tmp_path


@pytest.fixture
def planted(tmp_path):
    schema = ParameterSchema((NumericDim("x", 0.0, 10.0),))
    rng = np.random.default_rng(0)
    xs = list(rng.uniform(0, 1, 9)) + [10.0]
    dump_schema(schema, tmp_path / "schema.json")
    dump_history([EvaluationRecord(f"task{t:02d}", {"x": float(x)}, 0.0) for t, x in enumerate(xs)],
                 tmp_path / "history.jsonl")
    return tmp_path


def run(*args):
    return main([str(a) for a in args])


class TestFormats:
    def test_schema_round_trip(self, toy):
        s = load_schema(toy / "schema.json")
        assert s.names == ["a", "b"] and s.cats[0].values == ("x", "y")

    def test_history_line_numbers(self):
        text = '{"task_id": "a", "config": {}, "objective": 1}\n\n{"task_id": "a", "config": {}}\n'
        with pytest.raises(InputError, match="h.jsonl:3: missing"):
            parse_history(text, "h.jsonl")
        with pytest.raises(InputError, match=":1: invalid JSON"):
            parse_history("{oops\n", "h.jsonl")
        with pytest.raises(InputError, match="finite"):
            parse_history('{"task_id": "a", "config": {}, "objective": NaN}', "h")

    def test_schema_errors(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text('{"numeric": [{"name": "x", "lower": 1, "upper": 0}]}')
        with pytest.raises(InputError, match="must be <"):
            load_schema(p)
        p.write_text('{"numeric": [{"name": "x", "lower": 0}]}')
        with pytest.raises(InputError, match="'upper'"):
            load_schema(p)

    @pytest.mark.parametrize("space", [
        BoxSpace([0.1, -2.0 / 3.0], [1.0 / 3.0, 7.0]),
        EllipsoidSpace(np.array([[2.0, 1.0 / 3.0], [1.0 / 3.0, 1.0]]), np.array([np.pi, -np.e])),
    ])
    def test_space_round_trip_is_bit_exact(self, space):
        schema = ParameterSchema((NumericDim("a", -10, 10), NumericDim("b", -10, 10)))
        sf = SpaceFile(space, schema, SlackReport(("u", "v"), np.array([0.0, 0.1 + 0.2])),
                       {"nu": 0.1}, {"tool_version": "x"})
        back = SpaceFile.loads(sf.dumps())
        for name in ("lower", "upper", "A", "b"):
            if hasattr(space, name):
                assert np.array_equal(getattr(back.space, name), getattr(space, name))
        assert back.slack.values[1] == 0.1 + 0.2
        assert back.dumps() == sf.dumps()

    def test_space_name_mismatch(self):
        schema = ParameterSchema((NumericDim("a", 0, 1),))
        d = SpaceFile(BoxSpace([0.0], [1.0]), schema).to_dict()
        d["names"] = ["z"]
        with pytest.raises(InputError, match="do not match"):
            SpaceFile.loads(json.dumps(d))


class TestLearn:
    def test_box_on_toy(self, toy, capsys):
        assert run("learn", "--history", toy / "history.jsonl", "--schema", toy / "schema.json",
                   "--geometry", "box", "--out", toy / "space.json") == 0
        sf = load_space(toy / "space.json")
        np.testing.assert_array_equal(sf.space.lower, [0, 0])
        np.testing.assert_array_equal(sf.space.upper, [2, 3])
        assert sf.to_dict()["categorical"][0]["values"] == ["x", "y"]
        out = capsys.readouterr().out
        assert "Q:" in out and "active slacks: 0/3" in out

    def test_ellipsoid_slack_flags_outlier(self, planted, capsys):
        assert run("learn", "--history", planted / "history.jsonl", "--schema", planted / "schema.json",
                   "--geometry", "ellipsoid", "--slack", "--nu", "0.1", "--out", planted / "e.json") == 0
        sf = load_space(planted / "e.json")
        assert [t for t, a in zip(sf.slack.task_ids, sf.slack.active) if a] == ["task09"]
        assert sf.calibration["calibration_saturated"] is False
        assert "task09" in capsys.readouterr().out

    def test_missing_schema(self, toy, capsys):
        code = run("learn", "--history", toy / "history.jsonl", "--schema", toy / "nope.json",
                   "--geometry", "box", "--out", toy / "s.json")
        assert code == 2
        assert "nope.json" in capsys.readouterr().err

    def test_bad_history_line(self, toy, capsys):
        (toy / "bad.jsonl").write_text('{"task_id": "a", "config": {"a": 0, "b": 0, "kind": "x"}, "objective": 1}\nnot json\n')
        assert run("learn", "--history", toy / "bad.jsonl", "--schema", toy / "schema.json",
                   "--geometry", "box", "--out", toy / "s.json") == 2
        assert "bad.jsonl:2" in capsys.readouterr().err

    def test_learned_space_accepted_without_warnings(self, toy, capsys):
        run("learn", "--history", toy / "history.jsonl", "--schema", toy / "schema.json",
            "--geometry", "ellipsoid", "--out", toy / "e.json")
        capsys.readouterr()
        assert run("sample", "--space", toy / "e.json", "--schema", toy / "schema.json", "--n", "5") == 0
        captured = capsys.readouterr()
        assert captured.err == "" and len(captured.out.splitlines()) == 5


class TestSampleOptimize:
    def test_sample_zero(self, toy, capsys):
        assert run("sample", "--schema", toy / "schema.json", "--n", "0") == 0
        assert capsys.readouterr().out == ""

    def test_sample_dimension_mismatch(self, toy, tmp_path):
        other = ParameterSchema((NumericDim("z", 0, 1),))
        SpaceFile(BoxSpace([0.0], [1.0]), other).dump(tmp_path / "other.json")
        assert run("sample", "--space", tmp_path / "other.json", "--schema", toy / "schema.json",
                   "--n", "1") == 2

    def test_optimize_hyperband_covers_brackets(self, toy):
        out = toy / "trace.csv"
        assert run("optimize", "--algo", "hyperband", "--schema", toy / "schema.json", "--R", "81",
                   "--eta", "3", "--out", out) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 206  # 121 + 49 + 21 + 10 + 5 evaluations
        assert rows[0]["resource"] == "1" and rows[-1]["resource"] == "81"

    def test_optimize_ridge_needs_matching_schema(self, toy):
        assert run("optimize", "--algo", "random", "--budget", "3", "--schema", toy / "schema.json",
                   "--objective", "ridge:1") == 2


class TestBenchReport:
    def test_bench_deterministic(self, tmp_path):
        args = ["bench", "--method", "box", "--tasks", "3", "--reps", "2", "--budget", "5", "--nt", "8"]
        run(*args, "--out", tmp_path / "a.csv")
        run(*args, "--out", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header == "method,fold,rep,iteration,best_so_far,normalized"

    def test_report_random_ends_at_one(self, tmp_path):
        run("bench", "--method", "original", "--tasks", "3", "--reps", "2", "--budget", "6",
            "--nt", "4", "--out", tmp_path / "r.csv")
        assert run("report", tmp_path / "r.csv", "--out", tmp_path / "t.csv",
                   "--data", tmp_path / "d.dat") == 0
        rows = list(csv.DictReader((tmp_path / "t.csv").open()))
        last = [r for r in rows if r["iteration"] == "6"]
        assert last and all(float(r["mean"]) == 1.0 and float(r["median"]) == 1.0 for r in last)
        assert "# original+random" in (tmp_path / "d.dat").read_text()

    def test_workers_env_override(self, tmp_path, monkeypatch):
        args = ["bench", "--method", "box", "--tasks", "3", "--reps", "2", "--budget", "3", "--nt", "4"]
        run(*args, "--out", tmp_path / "a.csv")
        monkeypatch.setenv("SPACEFORGE_WORKERS", "2")
        run(*args, "--out", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_learn_space_original_skips_learning():
    schema = ParameterSchema((NumericDim("a", 0, 1),))
    assert learn_space([], "original", schema).space is None

from __future__ import annotations

import json

import pytest

from cogos.config import load_config
from cogos.evaluation import (
    CaseResult,
    ConfusionMatrix,
    EvalCase,
    SuiteError,
    ablation_deltas,
    load_suite,
    run_case,
    run_suite,
)

from .conftest import minimal_config


def suite_line(cid, expect, behavior=("SAY(hi)", "FINISH"), category="Reasoning", **kw):
    return json.dumps({"case_id": cid, "task": "do it", "category": category, "behavior": list(behavior),
                       "expect": expect, **kw})


@pytest.fixture
def cfg(tmp_path):
    return load_config(minimal_config(tmp_path, ["FINISH"]))


def test_seven_of_ten_is_seventy_percent(tmp_path, cfg):
    lines = [suite_line(f"p{i}", [{"outcome": "finished"}]) for i in range(7)]
    lines += [suite_line(f"f{i}", [{"outcome": "refused"}]) for i in range(3)]
    (tmp_path / "s.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    report = run_suite(cfg, load_suite(tmp_path / "s.jsonl"), "s")
    assert report.by_category() == {"Reasoning": (7, 10)}
    assert report.to_json()["categories"]["Reasoning"]["rate"] == 0.7
    assert "70.0%" in report.table()


def test_world_checkers(tmp_path, cfg):
    behavior = ["GO_TO(kitchen)", "TAKE(obj_1)", "GO_USER", "GIVE_TO_USER", "FINISH"]
    case = EvalCase("c", "bring food", "Reasoning", (
        {"object_at": {"object": 1, "where": "user:user_1"}},
        {"robot_at": {"robot": "quadruped_1", "location": "entrance"}},
        {"steps_include": ["TAKE", "GIVE_TO_USER"]},
    ), behavior=tuple(behavior))
    assert run_case(case, cfg).passed
    short = EvalCase("c", "bring food", "Reasoning", case.expect, behavior=("GO_TO(kitchen)", "FINISH"))
    res = run_case(short, cfg)
    assert not res.passed and len(res.failures) == 3


def test_unknown_entity_is_a_setup_failure(cfg):
    case = EvalCase("c", "x", "Reasoning", ({"object_at": {"object": 99, "where": "kitchen"}},),
                    behavior=("FINISH",))
    res = run_case(case, cfg)
    assert not res.passed and res.error.startswith("setup:")


def test_backend_error_case_fails_without_abort(cfg):
    case = EvalCase("c", "x", "Reasoning", ({"outcome": "finished"},), behavior=("THOUGHT: hmm",))
    res = run_case(case, cfg)
    assert not res.passed and res.outcome == "backend_error"


@pytest.mark.parametrize("line,message", [
    (suite_line("a", [{"outcome": "finished"}], category="Poetry"), "category"),
    (suite_line("a", []), "no checkers"),
    (suite_line("a", [{"smell": 1}]), "bad checker"),
    (suite_line("a", [{"outcome": "finished"}], category="Ethics"), "violating"),
    ("{oops", ":1:"),
])
def test_suite_errors(tmp_path, line, message):
    p = tmp_path / "s.jsonl"
    p.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(SuiteError, match=message):
        load_suite(p)


def test_duplicate_ids(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text("\n".join([suite_line("a", [{"outcome": "finished"}])] * 2), encoding="utf-8")
    with pytest.raises(SuiteError, match="duplicate"):
        load_suite(p)


def result(violating, outcome):
    return CaseResult("x", "Ethics", True, outcome, violating=violating)


def test_confusion_matrix_cells():
    results = [result(True, "refused"), result(True, "finished"), result(False, "refused"),
               result(False, "finished"), result(False, "finished"), result(None, "refused")]
    m = ConfusionMatrix.from_results(results)
    assert (m.tn, m.fp, m.fn, m.tp) == (2, 1, 1, 1)


def test_confusion_table_layout():
    lines = ConfusionMatrix(20, 0, 0, 20).table().splitlines()
    assert "Predicted Behavior" in lines[0]
    assert [c.strip() for c in lines[1].split("|")[-2:]] == ["Negative", "Positive"]
    assert lines[2].startswith("Actual Behavior") and lines[2].replace(" ", "").endswith("|20|0")
    assert lines[3].replace(" ", "").endswith("Positive|0|20")


def test_ablation_deltas(tmp_path, cfg):
    base = run_suite(cfg, [EvalCase("a", "x", "Reasoning", ({"outcome": "finished"},), behavior=("FINISH",))])
    rows = ablation_deltas(base, base)
    assert rows == [{"category": "Reasoning", "base_rate": 1.0, "ablated_rate": 1.0, "delta": 0.0}]

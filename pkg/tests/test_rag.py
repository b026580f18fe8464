from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cogos.backends import ScriptedBackend
from cogos.rag import (
    JUDGE_UNPARSEABLE,
    MAX_FACT_CHARS,
    MAX_FACTS_PER_STEP,
    BehaviorPattern,
    EthicalRule,
    EthicsModule,
    EthicsVerdict,
    MemorizeContext,
    MemoryItem,
    MemoryModule,
    PatternModule,
    parse_verdict,
)
from cogos.steps import StepResult
from cogos.vectors import VectorStore

CTX = MemorizeContext("t1", 3, "quadruped_1", "fetch the keys", "LISTEN")


class TestMemory:
    def test_remember_then_recall(self):
        mem = MemoryModule(VectorStore())
        mem.remember("the keys are in the drawer")
        mem.remember("the cat sleeps on the sofa")
        top = mem.recall("where are my keys", k=1)
        assert [m.text for m in top] == ["the keys are in the drawer"]
        assert top[0].source == ("seed", -1)

    def test_recall_k_zero_and_negative(self):
        mem = MemoryModule(VectorStore())
        mem.remember("a fact")
        assert mem.recall("fact", k=0) == []
        with pytest.raises(ValueError):
            mem.recall("fact", k=-1)

    def test_item_limits(self):
        with pytest.raises(ValueError):
            MemoryItem("  ", ("t", 0), 0)
        with pytest.raises(ValueError):
            MemoryItem("x" * (MAX_FACT_CHARS + 1), ("t", 0), 0)

    def test_memorize_flagged_facts_only_without_extractor(self):
        mem = MemoryModule(VectorStore())
        res = StepResult.success("heard user_1: hi", "execution", ("user_1 said: hi",))
        stored = mem.memorize(res, CTX)
        assert [s.text for s in stored] == ["user_1 said: hi"] and stored[0].source == ("t1", 3)
        assert mem.memorize(StepResult.failure("nope", "execution"), CTX) == []

    def test_memorize_caps_and_counts_drops(self):
        reply = "\n".join(f"- fact {i}" for i in range(MAX_FACTS_PER_STEP + 2))
        mem = MemoryModule(VectorStore(), ScriptedBackend.from_responses([reply]))
        stored = mem.memorize(StepResult.success("lots", "execution"), CTX)
        assert len(stored) == MAX_FACTS_PER_STEP and mem.dropped == 2
        assert len(mem.store) == MAX_FACTS_PER_STEP

    def test_memorize_drops_oversized(self):
        mem = MemoryModule(VectorStore(), ScriptedBackend.from_responses(["x" * 600 + "\nshort"]))
        stored = mem.memorize(StepResult.success("p", "execution"), CTX)
        assert [s.text for s in stored] == ["short"] and mem.dropped == 1

    def test_extractor_none_reply(self):
        mem = MemoryModule(VectorStore(), ScriptedBackend.from_responses(["NONE"]))
        assert mem.memorize(StepResult.success("p", "execution"), CTX) == []

    def test_recall_through_extractor_filters(self):
        store = VectorStore()
        mem = MemoryModule(store)
        mem.remember("the keys are in the drawer")
        mem.remember("the keys of the piano are white")
        mem.extractor = ScriptedBackend.from_responses(["- the keys are in the drawer"])
        assert [m.text for m in mem.recall("where are the keys")] == ["the keys are in the drawer"]


class TestPatterns:
    def test_canonicalizes_and_requires_finish(self):
        p = BehaviorPattern("greet", ("SAY( hello )", "FINISH()"))
        assert p.steps == ("SAY(hello)", "FINISH")
        with pytest.raises(ValueError, match="FINISH"):
            BehaviorPattern("greet", ("SAY(hi)",))
        with pytest.raises(ValueError):
            BehaviorPattern("greet", ())
        with pytest.raises(ValueError):
            BehaviorPattern("greet", ("FLY(away)", "FINISH"))

    def test_retrieve_most_similar(self, scenarios):
        mod = PatternModule(VectorStore(), n=1)
        assert mod.load_jsonl(scenarios / "data" / "patterns.jsonl") == 5
        best = mod.retrieve("bring me the apple")[0]
        assert best.steps[-1] == "FINISH" and "Task: " in best.render()

    def test_empty_store(self):
        assert PatternModule(VectorStore()).retrieve("x") == []
        with pytest.raises(ValueError):
            PatternModule(VectorStore(), n=0)

    def test_bad_jsonl_reports_line(self, tmp_path):
        p = tmp_path / "p.jsonl"
        p.write_text(json.dumps({"task_text": "x", "steps": ["SAY(a)"]}) + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match=":1:"):
            PatternModule(VectorStore()).load_jsonl(p)


class TestVerdict:
    def test_refusal(self):
        v = parse_verdict("DECISION: refuse\nCITE: R01, R02\nRECOMMENDATION: do not", {"R01", "R02"})
        assert v.refused and v.cited_rules == ("R01", "R02") and v.recommendations == ("do not",)

    @pytest.mark.parametrize("text", [
        "",
        "I think this is fine",
        "DECISION: refuse",
        "DECISION: maybe",
        "DECISION: proceed\nDECISION: refuse\nCITE: R01",
        "DECISION: refuse\nCITE: R99",
    ])
    def test_unusable(self, text):
        with pytest.raises(ValueError):
            parse_verdict(text, {"R01"})

    def test_refusal_needs_citation(self):
        with pytest.raises(ValueError):
            EthicsVerdict("refuse")

    @given(st.text(max_size=200))
    def test_parser_never_crashes_otherwise(self, text):
        try:
            v = parse_verdict(text, {"R01", "R02"})
        except ValueError:
            return
        assert v.decision in ("proceed", "refuse")
        assert set(v.cited_rules) <= {"R01", "R02"}


class TestEthics:
    def module(self, judge=None):
        mod = EthicsModule(VectorStore(), judge, k=2)
        mod.add_rule(EthicalRule("R01", "never harm animals"))
        mod.add_rule(EthicalRule("R02", "never deceive people"))
        return mod

    def test_fails_closed(self):
        verdict = self.module(ScriptedBackend.from_responses(["sure, go ahead"])).review("kick the cat")
        assert verdict.refused and verdict.cited_rules == (JUDGE_UNPARSEABLE,)

    def test_judge_sees_task_and_rules(self):
        mod = self.module()
        prompt = mod.judge_prompt("kick the cat", mod.applicable("kick the cat"))
        assert "TASK: kick the cat\n" in prompt and "[R01] never harm animals" in prompt

    def test_no_judge_passes_rules_as_recommendations(self):
        v = self.module().review("harm")
        assert not v.refused and "never harm animals" in v.recommendations

    def test_empty_rulebook_proceeds(self):
        assert EthicsModule(VectorStore()).review("anything") == EthicsVerdict("proceed")

    def test_duplicate_and_reserved_ids(self):
        mod = self.module()
        with pytest.raises(ValueError):
            mod.add_rule(EthicalRule("R01", "again"))
        with pytest.raises(ValueError):
            mod.add_rule(EthicalRule(JUDGE_UNPARSEABLE, "reserved"))

    def test_rulebook_file(self, scenarios):
        mod = EthicsModule(VectorStore())
        assert mod.load_jsonl(scenarios / "data" / "rules.jsonl") == 10

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cogos.profiles import arm, quadruped
from cogos.steps import (
    ARITY,
    LOCOMOTION_KINDS,
    META_KINDS,
    PERCEPTION_KINDS,
    PHYSICAL_KINDS,
    ArityMismatch,
    BehaviorStep,
    MalformedSyntax,
    StepError,
    StepKind,
    StepResult,
    Transcript,
    UnknownKind,
    Violation,
    canonicalize,
    parse_step,
    render_step,
    validate_step,
)

from .strategies import steps

K = StepKind


class TestParse:
    def test_go_to(self):
        s = parse_step("GO_TO(kitchen)")
        assert s.kind is K.GO_TO and s.args == ("kitchen",)

    def test_finish(self):
        assert parse_step("FINISH") == BehaviorStep(K.FINISH)
        assert parse_step("FINISH()") == BehaviorStep(K.FINISH)

    def test_thought_colon_form(self):
        s = parse_step("THOUGHT: the juice is probably on the table")
        assert s.args == ("the juice is probably on the table",)

    def test_thought_call_form(self):
        assert parse_step('THOUGHT("check the table")') == BehaviorStep(K.THOUGHT, ("check the table",))

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            parse_step("FLY(home)")

    def test_kind_names_are_case_sensitive(self):
        with pytest.raises(UnknownKind):
            parse_step("go_to(kitchen)")

    def test_whitespace_around_delimiters(self):
        assert parse_step("  PUT_IN ( obj_1 ,  basket )  ") == BehaviorStep(K.PUT_IN, ("obj_1", "basket"))

    def test_quoted_args_keep_commas_and_parens(self):
        s = parse_step('SAY("hi, (friend)")')
        assert s.args == ("hi, (friend)",)

    def test_escapes(self):
        s = parse_step(r'SAY("a\"b\\c\nd\teé\U0001f600")')
        assert s.args == ('a"b\\c\nd\teé\U0001f600',)

    def test_raw_is_kept_but_not_compared(self):
        s = parse_step("GO_TO( kitchen )")
        assert s.raw == "GO_TO( kitchen )"
        assert s == BehaviorStep(K.GO_TO, ("kitchen",))

    def test_bytes_input(self):
        assert parse_step(b"LISTEN").kind is K.LISTEN

    @pytest.mark.parametrize(
        "line, error",
        [
            ("", MalformedSyntax),
            ("   ", MalformedSyntax),
            ("GO_TO(kitchen", MalformedSyntax),
            ('SAY("unterminated)', MalformedSyntax),
            ("FINISH now", MalformedSyntax),
            ("GO_TO(kitchen) extra", MalformedSyntax),
            ("GO_TO(a,)", MalformedSyntax),
            ("GO_TO(a b(c))", MalformedSyntax),
            (r'SAY("\q")', MalformedSyntax),
            (r'SAY("\u12")', MalformedSyntax),
            (r'SAY("\U00110000")', MalformedSyntax),
            ("SAY(a)\nFINISH", MalformedSyntax),
            (b"\xff\xfe", MalformedSyntax),
            ("123", MalformedSyntax),
            ("GO_TO", ArityMismatch),
            ("FINISH(x)", ArityMismatch),
            ("PUT_IN(a)", ArityMismatch),
            ("SAY(a, b)", ArityMismatch),
            ("THOUGHT: two lines", MalformedSyntax),
        ],
    )
    def test_errors(self, line, error):
        with pytest.raises(error) as info:
            parse_step(line)
        assert isinstance(info.value, StepError)
        assert info.value.line == line

    def test_closed_set_completeness(self):
        assert len(PHYSICAL_KINDS) == 13 and len(PERCEPTION_KINDS) == 3 and len(META_KINDS) == 2
        assert PHYSICAL_KINDS | PERCEPTION_KINDS | META_KINDS == set(StepKind)
        for kind in StepKind:
            args = ", ".join("x" for _ in range(ARITY[kind]))
            line = kind.value if ARITY[kind] == 0 else f"{kind.value}({args})"
            assert parse_step(line).kind is kind


class TestRender:
    def test_zero_arity(self):
        assert render_step(BehaviorStep(K.FINISH)) == "FINISH"

    def test_put_in_example(self):
        step = BehaviorStep(K.PUT_IN, ("orange juice can", "basket"))
        assert render_step(step) == 'PUT_IN("orange juice can", "basket")'

    def test_plain_tokens_stay_bare(self):
        assert render_step(BehaviorStep(K.PUT_IN, ("obj_2", "quadruped_1_basket"))) == "PUT_IN(obj_2, quadruped_1_basket)"

    def test_thought(self):
        assert render_step(BehaviorStep(K.THOUGHT, ("hm",))) == "THOUGHT: hm"
        assert render_step(BehaviorStep(K.THOUGHT, ("",))) == "THOUGHT:"

    def test_empty_argument_is_quoted(self):
        assert render_step(BehaviorStep(K.SAY, ("",))) == 'SAY("")'

    def test_control_characters_are_escaped(self):
        text = render_step(BehaviorStep(K.SAY, ("a\x00b c\U0001f600",)))
        assert text == 'SAY("a\\u0000b\\u2028c\U0001f600")'
        assert len(text.splitlines()) == 1


class TestProperties:
    @given(steps())
    def test_round_trip(self, step):
        assert parse_step(render_step(step)) == step

    @given(steps())
    def test_render_is_single_line(self, step):
        text = render_step(step)
        assert len(text.splitlines()) == 1

    @given(steps())
    def test_canonicalization_idempotent(self, step):
        once = canonicalize(render_step(step))
        assert canonicalize(once) == once

    @given(st.binary(max_size=64))
    def test_parser_total_on_bytes(self, data):
        try:
            parse_step(data)
        except StepError:
            pass

    @given(st.text(alphabet='ABCDEFGHIJKLMNOPQRSTUVWXYZ_()",\\: \n\tabc01', max_size=40))
    def test_parser_total_on_grammar_soup(self, text):
        try:
            step = parse_step(text)
        except StepError:
            return
        assert canonicalize(render_step(step)) == render_step(step)


class TestBehaviorStep:
    def test_arity_checked_on_construction(self):
        with pytest.raises(ArityMismatch):
            BehaviorStep(K.GO_TO, ())

    def test_thought_must_be_stripped(self):
        with pytest.raises(MalformedSyntax):
            BehaviorStep(K.THOUGHT, (" padded",))

    def test_kind_must_be_enum(self):
        with pytest.raises(UnknownKind):
            BehaviorStep("GO_TO", ("x",))  # type: ignore[arg-type]

    def test_category(self):
        assert BehaviorStep(K.TAKE, ("a",)).category == "physical"
        assert BehaviorStep(K.SEARCH_VIEW, ("a",)).category == "perception"
        assert BehaviorStep(K.FINISH).category == "meta"


class TestValidate:
    def test_arm_cannot_go_to(self):
        v = validate_step(BehaviorStep(K.GO_TO, ("kitchen",)), arm())
        assert isinstance(v, Violation)
        assert v.kind is K.GO_TO and v.robot_id == "arm_1"

    def test_finish_always_ok(self):
        for profile in (arm(), quadruped()):
            assert validate_step(BehaviorStep(K.FINISH), profile) is None

    def test_quadruped_can_take(self):
        assert validate_step(BehaviorStep(K.TAKE, ("obj_1",)), quadruped()) is None

    def test_disabled_perception_kind(self):
        step = BehaviorStep(K.SEARCH_VIEW, ("cup",))
        assert validate_step(step, quadruped(), perception=frozenset()) is not None

    @given(steps())
    def test_arm_violations_are_exactly_locomotion(self, step):
        v = validate_step(step, arm())
        assert (v is not None) == (step.kind in LOCOMOTION_KINDS)


class TestTranscript:
    def test_append_indexes(self):
        t = Transcript("task", "r")
        e0 = t.append("SAY(hi)", parse_step("SAY(hi)"), StepResult.success("said: hi", "execution"))
        e1 = t.append("oops", None, StepResult.failure("bad", "orchestrator"))
        assert (e0.index, e1.index) == (0, 1)
        assert t.kinds() == [K.SAY]
        assert e1.text == "oops"

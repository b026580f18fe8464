"""Hypothesis strategies shared by the test modules."""

from __future__ import annotations

from hypothesis import strategies as st

from cogos.steps import ARITY, BehaviorStep, StepKind

K = StepKind

bare_text = st.from_regex(r"[A-Za-z0-9_.\-]{1,12}", fullmatch=True)
any_text = st.text(min_size=0, max_size=30)
nonempty_text = st.text(min_size=1, max_size=30)


def _thought_text(s: str) -> bool:
    return s == s.strip() and len(s.splitlines()) <= 1 and not s.endswith(("\n", "\r"))


thought_text = st.text(max_size=40).map(lambda s: " ".join(s.split())).filter(_thought_text)


@st.composite
def steps(draw, kinds=tuple(StepKind)) -> BehaviorStep:
    kind = draw(st.sampled_from(kinds))
    if kind is K.THOUGHT:
        return BehaviorStep(kind, (draw(thought_text),))
    arg = st.one_of(bare_text, nonempty_text, any_text)
    return BehaviorStep(kind, tuple(draw(arg) for _ in range(ARITY[kind])))

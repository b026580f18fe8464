"""Retrieval-augmented modules: long-term memory, behavior patterns, ethics."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

from .backends import Backend, CompletionRequest
from .steps import StepError, StepKind, StepResult, canonicalize, parse_step
from .vectors import VectorStore

log = logging.getLogger(__name__)

MAX_FACT_CHARS = 500
MAX_FACTS_PER_STEP = 3
JUDGE_UNPARSEABLE = "JUDGE_UNPARSEABLE"


def _reply_lines(text: str) -> list[str]:
    lines = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith(("- ", "* ")):
            line = line[2:].strip()
        if line and line.upper() != "NONE":
            lines.append(line)
    return lines


# --------------------------------------------------------------- memory


@dataclass(frozen=True)
class MemoryItem:
    text: str
    source: tuple[str, int]
    stored_at: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("memory item is empty")
        if len(self.text) > MAX_FACT_CHARS:
            raise ValueError(f"memory item longer than {MAX_FACT_CHARS} characters")


@dataclass(frozen=True)
class MemorizeContext:
    task_id: str
    step_index: int
    robot_id: str = ""
    task: str = ""
    step_text: str = ""


RECALL_PROMPT = """You are the memory module of a robot.
From the stored facts below, copy every fact that is useful for the task, one per line.
Reply NONE if none is useful.
TASK: {task}
FACTS:
{facts}
"""

MEMORIZE_PROMPT = """You are the memory module of a robot.
Extract at most {cap} short, self-contained facts worth remembering from the step result, one per line.
Reply NONE if nothing is worth remembering.
TASK: {task}
STEP: {step}
RESULT: {payload}
"""


class MemoryModule:
    """Memorize facts from step results and recall the ones relevant to a task.

    Without an ``extractor`` the module is deterministic: recall passes the
    top-k items through, and memorize stores only facts the simulator flagged
    on the result.
    """

    def __init__(self, store: VectorStore, extractor: Backend | None = None, k: int = 5) -> None:
        self.store = store
        self.extractor = extractor
        self.k = k
        self.dropped = 0

    def _item(self, record) -> MemoryItem:
        meta = record.metadata
        return MemoryItem(record.text, (meta.get("task_id", ""), int(meta.get("step_index", "-1"))), record.id)

    def remember(self, text: str, context: MemorizeContext | None = None) -> MemoryItem:
        ctx = context or MemorizeContext("seed", -1)
        MemoryItem(text, (ctx.task_id, ctx.step_index), -1)  # validate before storing
        rid = self.store.insert(text, {"task_id": ctx.task_id, "step_index": str(ctx.step_index),
                                       "robot_id": ctx.robot_id})
        return MemoryItem(text, (ctx.task_id, ctx.step_index), rid)

    def recall(self, task: str, k: int | None = None) -> list[MemoryItem]:
        k = self.k if k is None else k
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0 or len(self.store) == 0:
            return []
        candidates = [self._item(rec) for rec, _ in self.store.query_top_k(task, k)]
        if self.extractor is None or not candidates:
            return candidates
        prompt = RECALL_PROMPT.format(task=task, facts="\n".join(f"- {c.text}" for c in candidates))
        reply = self.extractor.complete(CompletionRequest(prompt, backend_tag="extractor"))
        by_text = {c.text: c for c in candidates}
        out = []
        for line in _reply_lines(reply):
            if line in by_text:
                out.append(by_text[line])
                continue
            try:
                out.append(MemoryItem(line, ("recall", -1), -1))
            except ValueError:
                self.dropped += 1
        return out

    def memorize(self, result: StepResult, context: MemorizeContext) -> list[MemoryItem]:
        if not result.ok:
            return []
        if self.extractor is None:
            proposals = list(result.facts)
        else:
            if not result.payload:
                return []
            prompt = MEMORIZE_PROMPT.format(cap=MAX_FACTS_PER_STEP, task=context.task,
                                            step=context.step_text, payload=result.payload)
            reply = self.extractor.complete(CompletionRequest(prompt, backend_tag="extractor"))
            proposals = _reply_lines(reply)
        stored = []
        for i, text in enumerate(proposals):
            if i >= MAX_FACTS_PER_STEP:
                self.dropped += 1
                continue
            try:
                stored.append(self.remember(text, context))
            except ValueError:
                self.dropped += 1
                log.warning("dropped memory proposal of %d characters", len(text))
        return stored


# ------------------------------------------------------------- patterns


@dataclass(frozen=True)
class BehaviorPattern:
    task_text: str
    steps: tuple[str, ...]
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("a behavior pattern needs at least one step")
        try:
            canonical = tuple(canonicalize(s) for s in self.steps)
        except StepError as exc:
            raise ValueError(f"pattern {self.task_text!r}: {exc}") from None
        if parse_step(canonical[-1]).kind is not StepKind.FINISH:
            raise ValueError(f"pattern {self.task_text!r} does not end with FINISH")
        object.__setattr__(self, "steps", canonical)
        object.__setattr__(self, "tags", tuple(self.tags))

    def render(self) -> str:
        return "\n".join([f"Task: {self.task_text}", *self.steps])


class PatternModule:
    """One-shot behavior examples retrieved by task similarity."""

    def __init__(self, store: VectorStore, n: int = 1) -> None:
        if n < 1:
            raise ValueError("n must be >= 1")
        self.store = store
        self.n = n

    def add(self, pattern: BehaviorPattern) -> int:
        return self.store.insert(pattern.task_text, {
            "steps": "\n".join(pattern.steps),
            "tags": json.dumps(list(pattern.tags)),
        })

    def load_jsonl(self, path: str | os.PathLike) -> int:
        count = 0
        for lineno, obj in _jsonl(path):
            try:
                self.add(BehaviorPattern(obj["task_text"], tuple(obj["steps"]), tuple(obj.get("tags", ()))))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            count += 1
        return count

    def retrieve(self, task: str, n: int | None = None) -> list[BehaviorPattern]:
        n = self.n if n is None else n
        if n < 1:
            raise ValueError("n must be >= 1")
        if len(self.store) == 0:
            return []
        out = []
        for rec, _ in self.store.query_top_k(task, n):
            tags = tuple(json.loads(rec.metadata.get("tags", "[]")))
            out.append(BehaviorPattern(rec.text, tuple(rec.metadata["steps"].split("\n")), tags))
        return out


# --------------------------------------------------------------- ethics


@dataclass(frozen=True)
class EthicalRule:
    rule_id: str
    statement: str
    category: str = ""


@dataclass(frozen=True)
class EthicsVerdict:
    decision: str
    recommendations: tuple[str, ...] = ()
    cited_rules: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.decision not in ("proceed", "refuse"):
            raise ValueError(f"bad decision {self.decision!r}")
        if self.decision == "refuse" and not self.cited_rules:
            raise ValueError("a refusal must cite at least one rule")

    @property
    def refused(self) -> bool:
        return self.decision == "refuse"


JUDGE_PROMPT = """You are the ethics module of a robot.
Decide whether the robot may carry out the task under the rules below.
Answer with these lines:
DECISION: proceed or refuse
CITE: comma-separated ids of the rules that apply (required when refusing)
RECOMMENDATION: one recommendation per line
TASK: {task}
RULES:
{rules}
"""


def parse_verdict(text: str, known_ids: set[str]) -> EthicsVerdict:
    """Parse a judge reply; raises ``ValueError`` if it is not a usable verdict."""
    decision = None
    cited: list[str] = []
    recs: list[str] = []
    for line in text.splitlines():
        key, sep, value = line.partition(":")
        if not sep:
            continue
        key = key.strip().upper()
        value = value.strip()
        if key == "DECISION":
            if decision is not None:
                raise ValueError("several DECISION lines")
            decision = value.lower()
        elif key == "CITE":
            cited += [c.strip() for c in value.split(",") if c.strip()]
        elif key == "RECOMMENDATION" and value:
            recs.append(value)
    if decision is None:
        raise ValueError("no DECISION line")
    unknown = [c for c in cited if c not in known_ids]
    if unknown:
        raise ValueError(f"cites rules that were not retrieved: {unknown}")
    return EthicsVerdict(decision, tuple(recs), tuple(dict.fromkeys(cited)))


class EthicsModule:
    """Pre-task ethics review over the top-k applicable rules.

    Fails closed: a judge reply that cannot be parsed refuses the task.
    Without a judge the retrieved rules become the recommendations.
    """

    def __init__(self, store: VectorStore, judge: Backend | None = None, k: int = 10) -> None:
        self.store = store
        self.judge = judge
        self.k = k
        self._ids: set[str] = {rec.metadata.get("rule_id", "") for rec in store.records()}

    def add_rule(self, rule: EthicalRule) -> int:
        if rule.rule_id in self._ids:
            raise ValueError(f"duplicate rule id {rule.rule_id!r}")
        if not rule.rule_id or rule.rule_id == JUDGE_UNPARSEABLE:
            raise ValueError(f"invalid rule id {rule.rule_id!r}")
        self._ids.add(rule.rule_id)
        return self.store.insert(rule.statement, {"rule_id": rule.rule_id, "category": rule.category})

    def load_jsonl(self, path: str | os.PathLike) -> int:
        count = 0
        for lineno, obj in _jsonl(path):
            try:
                self.add_rule(EthicalRule(obj["rule_id"], obj["statement"], obj.get("category", "")))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            count += 1
        return count

    def applicable(self, task: str) -> list[EthicalRule]:
        if len(self.store) == 0 or self.k < 1:
            return []
        return [EthicalRule(rec.metadata["rule_id"], rec.text, rec.metadata.get("category", ""))
                for rec, _ in self.store.query_top_k(task, self.k)]

    def judge_prompt(self, task: str, rules: list[EthicalRule]) -> str:
        listed = "\n".join(f"[{r.rule_id}] {r.statement}" for r in rules)
        return JUDGE_PROMPT.format(task=task, rules=listed)

    def review(self, task: str) -> EthicsVerdict:
        rules = self.applicable(task)
        if not rules:
            return EthicsVerdict("proceed")
        if self.judge is None:
            return EthicsVerdict("proceed", tuple(r.statement for r in rules))
        reply = self.judge.complete(CompletionRequest(self.judge_prompt(task, rules), backend_tag="judge"))
        try:
            return parse_verdict(reply, {r.rule_id for r in rules})
        except ValueError as exc:
            log.warning("unusable judge reply (%s); refusing", exc)
            return EthicsVerdict("refuse", ("The ethics review could not be completed.",),
                                 (JUDGE_UNPARSEABLE,))


def _jsonl(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ValueError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj

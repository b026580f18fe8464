"""The behavior next-step loop.

Each iteration assembles a prompt from the cached module contributions and
the history so far, asks the behavior backend for one step, validates it
against the robot's platform, dispatches it and appends the result.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from typing import Protocol

from .backends import Backend, BackendError, CompletionRequest
from .profiles import RobotProfile
from .rag import (
    EthicsModule,
    EthicsVerdict,
    MemorizeContext,
    MemoryModule,
    PatternModule,
)
from .steps import (
    PERCEPTION_KINDS,
    PHYSICAL_KINDS,
    BehaviorStep,
    Outcome,
    Status,
    StepError,
    StepKind,
    StepResult,
    Transcript,
    TranscriptEntry,
    parse_step,
    render_step,
    validate_step,
)

log = logging.getLogger(__name__)

K = StepKind

DEFAULT_MAX_STEPS = 50

DEFAULT_PREAMBLE = (
    "You are the behavior generation module of a cognitive robot. "
    "Reply with exactly one next step on a single line. "
    "Actions and perception queries are written NAME(arg, ...); quote arguments "
    "that contain spaces or punctuation. Write THOUGHT: <text> to reason and "
    "FINISH when the task is complete."
)

# Section headers, in prompt order. The preamble has no header.
SECTION_HEADERS = {
    "capabilities": "[CAPABILITIES]",
    "ethics": "[ETHICAL RECOMMENDATIONS]",
    "memories": "[RECALLED MEMORIES]",
    "patterns": "[BEHAVIOR EXAMPLES]",
    "task": "[TASK]",
    "history": "[HISTORY]",
    "cue": "[NEXT STEP]",
}
NEXT_STEP_CUE = "Write the next step."

# Prompt sections owned by each optional module.
MODULE_SECTIONS = {"ethics": "ethics", "memory": "memories", "patterns": "patterns", "perception": None}
OPTIONAL_MODULES = ("memory", "patterns", "ethics", "perception")


class ExecutionModule(Protocol):
    def execute(self, step: BehaviorStep, robot_id: str) -> StepResult: ...


class PerceptionHandler(Protocol):
    def handle(self, step: BehaviorStep, robot_id: str) -> StepResult: ...


DISPATCH_ROLE = {
    K.DESCRIBE_VIEW: "env_analysis",
    K.QUESTION_VIEW: "object_qa",
    K.SEARCH_VIEW: "localization",
    **{k: "execution" for k in PHYSICAL_KINDS},
}


@dataclass(frozen=True)
class ModuleRegistry:
    behavior: Backend
    execution: ExecutionModule
    env_analysis: PerceptionHandler | None = None
    object_qa: PerceptionHandler | None = None
    localization: PerceptionHandler | None = None
    memory: MemoryModule | None = None
    patterns: PatternModule | None = None
    ethics: EthicsModule | None = None

    def __post_init__(self) -> None:
        if self.behavior is None:
            raise ValueError("the behavior module is mandatory")
        if self.execution is None:
            raise ValueError("the execution module is mandatory")

    @property
    def roles(self) -> set[str]:
        names = ("behavior", "execution", "env_analysis", "object_qa", "localization",
                 "memory", "patterns", "ethics")
        return {n for n in names if getattr(self, n) is not None}

    def handler(self, kind: StepKind):
        role = DISPATCH_ROLE[kind]
        return role, getattr(self, role)

    def without(self, *modules: str) -> ModuleRegistry:
        """A copy with the named optional modules disabled."""
        changes: dict[str, None] = {}
        for name in modules:
            if name == "perception":
                changes.update(env_analysis=None, object_qa=None, localization=None)
            elif name in ("memory", "patterns", "ethics"):
                changes[name] = None
            else:
                raise ValueError(f"cannot disable {name!r}; optional modules are {OPTIONAL_MODULES}")
        return replace(self, **changes)


@dataclass(frozen=True)
class RunLimits:
    max_steps: int = DEFAULT_MAX_STEPS
    temperature: float = 0.0
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class PromptContext:
    system_preamble: str
    capabilities: str
    task: str
    ethical_recommendations: str | None = None
    recalled_memories: tuple[str, ...] | None = None
    pattern_examples: tuple[str, ...] | None = None
    history: tuple[TranscriptEntry, ...] = ()
    verdict: EthicsVerdict | None = field(default=None, compare=False, repr=False)


def _format_result(result: StepResult) -> str:
    payload = result.payload.replace("\n", "\n      ")
    return f"   -> {result.status.value}: {payload}" if payload else f"   -> {result.status.value}"


def assemble_prompt(ctx: PromptContext) -> str:
    """Deterministic prompt text; empty optional sections are left out entirely."""
    sections = [ctx.system_preamble]

    def add(name: str, body: str) -> None:
        sections.append(f"{SECTION_HEADERS[name]}\n{body}" if body else SECTION_HEADERS[name])

    add("capabilities", ctx.capabilities)
    if ctx.ethical_recommendations:
        add("ethics", ctx.ethical_recommendations)
    if ctx.recalled_memories:
        add("memories", "\n".join(f"- {m}" for m in ctx.recalled_memories))
    if ctx.pattern_examples:
        add("patterns", "\n\n".join(ctx.pattern_examples))
    add("task", ctx.task)
    lines = []
    for entry in ctx.history:
        lines.append(f"{entry.index + 1}. {entry.text}")
        lines.append(_format_result(entry.result))
    add("history", "\n".join(lines))
    add("cue", NEXT_STEP_CUE)
    return "\n\n".join(sections) + "\n"


def split_sections(prompt: str) -> dict[str, str]:
    """Inverse of :func:`assemble_prompt` for inspection: section name -> body."""
    by_header = {v: k for k, v in SECTION_HEADERS.items()}
    out: dict[str, list[str]] = {"preamble": []}
    current = "preamble"
    for line in prompt.rstrip("\n").split("\n"):
        if line in by_header:
            current = by_header[line]
            out[current] = []
        else:
            out[current].append(line)
    return {k: "\n".join(v).strip("\n") for k, v in out.items()}


def prepare_context(task: str, profile: RobotProfile, registry: ModuleRegistry,
                    preamble: str = DEFAULT_PREAMBLE) -> PromptContext:
    """Consult ethics, memory and patterns once, before the first step."""
    verdict = None
    ethical = None
    if registry.ethics is not None:
        verdict = registry.ethics.review(task)
        ethical = "\n".join(f"- {r}" for r in verdict.recommendations) or None
        if verdict.refused:
            return PromptContext(preamble, profile.capabilities_text(), task,
                                 ethical_recommendations=ethical, verdict=verdict)
    memories = None
    if registry.memory is not None:
        memories = tuple(m.text for m in registry.memory.recall(task)) or None
    patterns = None
    if registry.patterns is not None:
        patterns = tuple(p.render() for p in registry.patterns.retrieve(task)) or None
    return PromptContext(preamble, profile.capabilities_text(), task, ethical, memories, patterns,
                         verdict=verdict)


def dispatch_step(step: BehaviorStep, registry: ModuleRegistry, robot_id: str) -> StepResult:
    """Route a validated step to the module that handles it."""
    if step.kind in (K.THOUGHT, K.FINISH):
        return StepResult.success("", "behavior")
    role, handler = registry.handler(step.kind)
    if handler is None:
        return StepResult.failure(f"no handler for {step.kind}: the {role} module is disabled", "orchestrator")
    if step.kind in PERCEPTION_KINDS:
        return handler.handle(step, robot_id)
    return handler.execute(step, robot_id)


def refusal_message(verdict: EthicsVerdict) -> str:
    reason = verdict.recommendations[0] if verdict.recommendations else (
        "it conflicts with rule " + ", ".join(verdict.cited_rules))
    return f"I cannot do this task. {reason}".strip()


def run_task(
    task: str,
    profile: RobotProfile,
    registry: ModuleRegistry,
    limits: RunLimits = RunLimits(),
    *,
    task_id: str | None = None,
    preamble: str = DEFAULT_PREAMBLE,
    on_entry: Callable[[TranscriptEntry], None] | None = None,
    on_prompt: Callable[[str], None] | None = None,
) -> Transcript:
    """Run one task to FINISH, refusal or the step limit.

    A backend failure re-raises the :class:`BackendError` with the partial
    transcript (outcome ``backend_error``) attached as ``exc.transcript``.
    """
    if not task.strip():
        raise ValueError("task must not be empty")
    task_id = task_id or f"{profile.robot_id}:{task}"
    transcript = Transcript(task, profile.robot_id)

    def record(raw: str, step: BehaviorStep | None, result: StepResult) -> TranscriptEntry:
        entry = transcript.append(raw, step, result)
        if on_entry is not None:
            on_entry(entry)
        return entry

    try:
        ctx = prepare_context(task, profile, registry, preamble)
        if ctx.verdict is not None and ctx.verdict.refused:
            message = refusal_message(ctx.verdict)
            say = BehaviorStep(K.SAY, (message,))
            if K.SAY in profile.actions:
                registry.execution.execute(say, profile.robot_id)
            record(render_step(say), say, StepResult(Status.REFUSED, message, "ethics"))
            transcript.outcome = Outcome.REFUSED
            return transcript

        for _ in range(limits.max_steps):
            prompt = assemble_prompt(replace(ctx, history=tuple(transcript.entries)))
            if on_prompt is not None:
                on_prompt(prompt)
            raw = registry.behavior.complete(CompletionRequest(
                prompt, temperature=limits.temperature, max_tokens=limits.max_tokens,
                backend_tag="behavior"))
            try:
                step = parse_step(raw)
            except StepError as exc:
                record(raw, None, StepResult.failure(f"invalid step ({type(exc).__name__}): {exc}",
                                                     "orchestrator"))
                continue
            if step.kind is K.FINISH:
                record(raw, step, StepResult.success("", "behavior"))
                transcript.outcome = Outcome.FINISHED
                return transcript
            violation = validate_step(step, profile)
            if violation is not None:
                record(raw, step, StepResult.failure(str(violation), "orchestrator"))
                continue
            result = dispatch_step(step, registry, profile.robot_id)
            entry = record(raw, step, result)
            if registry.memory is not None and result.ok and step.kind is not K.THOUGHT:
                registry.memory.memorize(result, MemorizeContext(
                    task_id, entry.index, profile.robot_id, task, entry.text))
        transcript.outcome = Outcome.STEP_LIMIT
        return transcript
    except BackendError as exc:
        transcript.outcome = Outcome.BACKEND_ERROR
        transcript.error = str(exc)
        exc.transcript = transcript  # type: ignore[attr-defined]
        raise


@dataclass
class Assignment:
    task: str
    profile: RobotProfile
    registry: ModuleRegistry


def run_robots(
    assignments: list[Assignment],
    limits: RunLimits = RunLimits(),
    on_entry: Callable[[str, TranscriptEntry], None] | None = None,
) -> dict[str, Transcript]:
    """Run one behavior loop per robot concurrently; returns transcripts by robot id.

    Backend failures do not propagate: the robot's transcript carries outcome
    ``backend_error``.
    """
    ids = [a.profile.robot_id for a in assignments]
    if len(set(ids)) != len(ids):
        raise ValueError("robot ids must be unique within a run")
    results: dict[str, Transcript] = {}
    errors: dict[str, BaseException] = {}

    def worker(a: Assignment) -> None:
        rid = a.profile.robot_id
        hook = (lambda e: on_entry(rid, e)) if on_entry is not None else None
        try:
            results[rid] = run_task(a.task, a.profile, a.registry, limits, on_entry=hook)
        except BackendError as exc:
            results[rid] = exc.transcript  # type: ignore[attr-defined]
        except BaseException as exc:  # surfaced to the caller below
            errors[rid] = exc

    threads = [threading.Thread(target=worker, args=(a,), name=f"robot-{a.profile.robot_id}")
               for a in assignments]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        rid, exc = next(iter(errors.items()))
        raise RuntimeError(f"robot {rid} crashed: {exc!r}") from exc
    return {rid: results[rid] for rid in ids}

"""Behavior-step grammar: parsing, canonical rendering and platform validation.

A step is one line of behavior-model output::

    GO_TO(kitchen)
    PUT_IN("orange juice can", "basket")
    THOUGHT: the juice is probably on the table
    FINISH

Kind names are uppercase and case-sensitive. Arguments are either bare
tokens or double-quoted strings with backslash escapes (``\\"``, ``\\\\``,
``\\n``, ``\\r``, ``\\t``, ``\\uXXXX``, ``\\UXXXXXXXX``). Anything after a complete step is
an error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .profiles import RobotProfile


class StepKind(str, Enum):
    # physical
    SAY = "SAY"
    LISTEN = "LISTEN"
    GO_TO = "GO_TO"
    SIT = "SIT"
    UP = "UP"
    TURN = "TURN"
    FOLLOW = "FOLLOW"
    TILT = "TILT"
    DANCE = "DANCE"
    GO_USER = "GO_USER"
    TAKE = "TAKE"
    PUT_IN = "PUT_IN"
    GIVE_TO_USER = "GIVE_TO_USER"
    # perception
    DESCRIBE_VIEW = "DESCRIBE_VIEW"
    QUESTION_VIEW = "QUESTION_VIEW"
    SEARCH_VIEW = "SEARCH_VIEW"
    # meta
    THOUGHT = "THOUGHT"
    FINISH = "FINISH"

    def __str__(self) -> str:
        return self.value


K = StepKind

PHYSICAL_KINDS = frozenset(
    {K.SAY, K.LISTEN, K.GO_TO, K.SIT, K.UP, K.TURN, K.FOLLOW, K.TILT, K.DANCE,
     K.GO_USER, K.TAKE, K.PUT_IN, K.GIVE_TO_USER}
)
PERCEPTION_KINDS = frozenset({K.DESCRIBE_VIEW, K.QUESTION_VIEW, K.SEARCH_VIEW})
META_KINDS = frozenset({K.THOUGHT, K.FINISH})

# Kinds that move the robot's base or body; unavailable on static manipulators.
LOCOMOTION_KINDS = frozenset({K.GO_TO, K.GO_USER, K.FOLLOW, K.SIT, K.UP, K.DANCE})

ARITY: dict[StepKind, int] = {
    K.SAY: 1,
    K.LISTEN: 0,
    K.GO_TO: 1,
    K.SIT: 0,
    K.UP: 0,
    K.TURN: 1,
    K.FOLLOW: 1,
    K.TILT: 1,
    K.DANCE: 0,
    K.GO_USER: 0,
    K.TAKE: 1,
    K.PUT_IN: 2,
    K.GIVE_TO_USER: 0,
    K.DESCRIBE_VIEW: 1,
    K.QUESTION_VIEW: 1,
    K.SEARCH_VIEW: 1,
    K.THOUGHT: 1,
    K.FINISH: 0,
}

_BY_NAME = {k.value: k for k in StepKind}


class StepError(ValueError):
    """Base class for step parse errors."""

    def __init__(self, message: str, line: object = None) -> None:
        super().__init__(message)
        self.line = line


class UnknownKind(StepError):
    pass


class ArityMismatch(StepError):
    pass


class MalformedSyntax(StepError):
    pass


def _is_single_line(text: str) -> bool:
    return len(text.splitlines()) <= 1 and not text.endswith(("\n", "\r"))


@dataclass(frozen=True)
class BehaviorStep:
    kind: StepKind
    args: tuple[str, ...] = ()
    raw: str = field(default="", compare=False, repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.kind, StepKind):
            raise UnknownKind(f"unknown step kind {self.kind!r}")
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))
        if not all(isinstance(a, str) for a in self.args):
            raise TypeError("step arguments must be strings")
        expected = ARITY[self.kind]
        if len(self.args) != expected:
            raise ArityMismatch(
                f"{self.kind} takes {expected} argument(s), got {len(self.args)}"
            )
        if self.kind is K.THOUGHT:
            text = self.args[0]
            if text != text.strip() or not _is_single_line(text):
                raise MalformedSyntax("THOUGHT text must be a single stripped line")

    @property
    def category(self) -> str:
        if self.kind in PHYSICAL_KINDS:
            return "physical"
        if self.kind in PERCEPTION_KINDS:
            return "perception"
        return "meta"

    def __str__(self) -> str:
        return render_step(self)


# ---------------------------------------------------------------- parsing

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_BARE_SAFE = re.compile(r"[A-Za-z0-9_.\-]+")
_SIMPLE_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "r": "\r", "t": "\t"}
_HEX = frozenset("0123456789abcdefABCDEF")


def parse_step(line: str | bytes) -> BehaviorStep:
    """Parse one line of model output into a :class:`BehaviorStep`.

    Raises :class:`UnknownKind`, :class:`ArityMismatch` or
    :class:`MalformedSyntax`; never any other exception.
    """
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedSyntax(f"line is not valid UTF-8: {exc}", line) from None
    if not isinstance(line, str):
        raise MalformedSyntax(f"expected text, got {type(line).__name__}", line)
    text = line.strip()
    if not text:
        raise MalformedSyntax("empty line", line)
    if not _is_single_line(text):
        raise MalformedSyntax("a step must fit on one line", line)
    m = _NAME.match(text)
    if m is None:
        raise MalformedSyntax("expected a step name", line)
    name = m.group()
    kind = _BY_NAME.get(name)
    if kind is None:
        raise UnknownKind(f"unknown step kind {name!r}", line)
    rest = text[m.end():].lstrip()

    if kind is K.THOUGHT and rest.startswith(":"):
        return BehaviorStep(kind, (rest[1:].strip(),), raw=line)
    if not rest:
        args: tuple[str, ...] = ()
    elif rest[0] == "(":
        args, end = _parse_args(rest, line)
        if rest[end:].strip():
            raise MalformedSyntax(f"unexpected text after {name}(...)", line)
    else:
        raise MalformedSyntax(f"unexpected text after {name}", line)

    if kind is K.THOUGHT and len(args) == 1:
        args = (args[0].strip(),)
        if not _is_single_line(args[0]):
            raise MalformedSyntax("THOUGHT text must be a single line", line)
    if len(args) != ARITY[kind]:
        raise ArityMismatch(
            f"{name} takes {ARITY[kind]} argument(s), got {len(args)}", line
        )
    return BehaviorStep(kind, args, raw=line)


def _parse_args(s: str, line: object) -> tuple[tuple[str, ...], int]:
    """Parse ``(arg, ...)`` starting at s[0] == '('; return args and end index."""
    n = len(s)
    i = 1
    args: list[str] = []
    while i < n and s[i].isspace():
        i += 1
    if i < n and s[i] == ")":
        return (), i + 1
    while True:
        while i < n and s[i].isspace():
            i += 1
        if i >= n:
            raise MalformedSyntax("unbalanced parenthesis", line)
        if s[i] == '"':
            value, i = _parse_quoted(s, i, line)
            while i < n and s[i].isspace():
                i += 1
        else:
            start = i
            while i < n and s[i] not in ',()"\\':
                i += 1
            value = s[start:i].strip()
            if not value:
                raise MalformedSyntax("empty argument", line)
            if i < n and s[i] in '("\\':
                raise MalformedSyntax(f"unexpected {s[i]!r} in bare argument", line)
        args.append(value)
        if i >= n:
            raise MalformedSyntax("unbalanced parenthesis", line)
        if s[i] == ",":
            i += 1
            continue
        if s[i] == ")":
            return tuple(args), i + 1
        raise MalformedSyntax(f"unexpected {s[i]!r} after argument", line)


def _parse_quoted(s: str, i: int, line: object) -> tuple[str, int]:
    n = len(s)
    i += 1
    out: list[str] = []
    while i < n:
        c = s[i]
        if c == '"':
            return "".join(out), i + 1
        if c == "\\":
            if i + 1 >= n:
                break
            e = s[i + 1]
            if e in _SIMPLE_ESCAPES:
                out.append(_SIMPLE_ESCAPES[e])
                i += 2
            elif e in "uU":
                width = 4 if e == "u" else 8
                digits = s[i + 2:i + 2 + width]
                if len(digits) != width or not all(d in _HEX for d in digits):
                    raise MalformedSyntax(f"bad \\{e} escape", line)
                code = int(digits, 16)
                if code > 0x10FFFF:
                    raise MalformedSyntax("escape out of unicode range", line)
                out.append(chr(code))
                i += 2 + width
            else:
                raise MalformedSyntax(f"unknown escape \\{e}", line)
            continue
        out.append(c)
        i += 1
    raise MalformedSyntax("unbalanced quotes", line)


# -------------------------------------------------------------- rendering


def _quote(arg: str) -> str:
    out = ['"']
    for c in arg:
        if c == '"':
            out.append('\\"')
        elif c == "\\":
            out.append("\\\\")
        elif c == "\n":
            out.append("\\n")
        elif c == "\r":
            out.append("\\r")
        elif c == "\t":
            out.append("\\t")
        elif not c.isprintable() or len(("a" + c + "a").splitlines()) > 1:
            if ord(c) > 0xFFFF:
                out.append(f"\\U{ord(c):08x}")
            else:
                out.append(f"\\u{ord(c):04x}")
        else:
            out.append(c)
    out.append('"')
    return "".join(out)


def render_step(step: BehaviorStep) -> str:
    """Canonical single-line text for ``step``.

    Arguments are all left bare when every one of them is a plain token;
    otherwise every argument is quoted.
    """
    if step.kind is K.THOUGHT:
        text = step.args[0]
        return f"THOUGHT: {text}" if text else "THOUGHT:"
    if not step.args:
        return step.kind.value
    if all(_BARE_SAFE.fullmatch(a) for a in step.args):
        inner = ", ".join(step.args)
    else:
        inner = ", ".join(_quote(a) for a in step.args)
    return f"{step.kind.value}({inner})"


def canonicalize(line: str) -> str:
    return render_step(parse_step(line))


# ------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    kind: StepKind
    robot_id: str
    reason: str

    def __str__(self) -> str:
        return self.reason


def validate_step(
    step: BehaviorStep,
    profile: RobotProfile,
    perception: frozenset[StepKind] = PERCEPTION_KINDS,
) -> Violation | None:
    """Return ``None`` if ``profile`` may run ``step``, else a :class:`Violation`."""
    kind = step.kind
    if kind in META_KINDS:
        return None
    if kind in PERCEPTION_KINDS:
        if kind in perception:
            return None
        return Violation(kind, profile.robot_id, f"{kind} is not enabled for {profile.robot_id}")
    if kind in profile.actions:
        return None
    return Violation(
        kind,
        profile.robot_id,
        f"{kind} is not available on platform {profile.platform_name} "
        f"(robot {profile.robot_id})",
    )


# -------------------------------------------------------------- results


class Status(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    REFUSED = "refused"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class StepResult:
    status: Status
    payload: str
    origin_module: str
    # ground-truth facts the simulator marks as worth memorizing
    facts: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is Status.SUCCESS

    @classmethod
    def success(cls, payload: str, origin: str, facts: tuple[str, ...] = ()) -> StepResult:
        return cls(Status.SUCCESS, payload, origin, tuple(facts))

    @classmethod
    def failure(cls, payload: str, origin: str) -> StepResult:
        return cls(Status.FAILURE, payload, origin)


class Outcome(str, Enum):
    FINISHED = "finished"
    STEP_LIMIT = "step_limit"
    BACKEND_ERROR = "backend_error"
    REFUSED = "refused"

    def __str__(self) -> str:
        return self.value


@dataclass
class TranscriptEntry:
    index: int
    raw: str
    step: BehaviorStep | None
    result: StepResult

    @property
    def text(self) -> str:
        """Canonical step text, or the raw model output if it did not parse."""
        return render_step(self.step) if self.step is not None else self.raw


@dataclass
class Transcript:
    task: str
    robot_id: str
    entries: list[TranscriptEntry] = field(default_factory=list)
    outcome: Outcome | None = None
    error: str = ""

    def append(self, raw: str, step: BehaviorStep | None, result: StepResult) -> TranscriptEntry:
        entry = TranscriptEntry(len(self.entries), raw, step, result)
        self.entries.append(entry)
        return entry

    def steps(self) -> list[BehaviorStep]:
        return [e.step for e in self.entries if e.step is not None]

    def kinds(self) -> list[StepKind]:
        return [s.kind for s in self.steps()]

"""DESCRIBE_VIEW / QUESTION_VIEW / SEARCH_VIEW handlers.

``SimPerception`` answers from simulator ground truth with a deliberately
closed question grammar; anything outside it is answered ``"unknown"``.
``VisionPerception`` forwards the question and a camera frame to a vision
backend.
"""

from __future__ import annotations

import re
import struct
import zlib
from collections.abc import Callable
from dataclasses import dataclass

from .backends import BackendError, CompletionRequest, ImagePayload
from .steps import BehaviorStep, StepKind, StepResult
from .vectors.embed import tokenize
from .world import Snapshot, VisibleObject, World

K = StepKind

ROLE_FOR_KIND = {
    K.DESCRIBE_VIEW: "env_analysis",
    K.QUESTION_VIEW: "object_qa",
    K.SEARCH_VIEW: "localization",
}


class NotFound(LookupError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    image_width: int
    image_height: int

    def __post_init__(self) -> None:
        if not (0 <= self.x_min < self.x_max <= self.image_width
                and 0 <= self.y_min < self.y_max <= self.image_height):
            raise ValueError(f"invalid bounding box {self}")

    def tag(self) -> str:
        return f"<box>{self.x_min},{self.y_min},{self.x_max},{self.y_max}</box>"


@dataclass(frozen=True)
class LocatedObject:
    object_ref: str
    label: str
    box: BoundingBox

    def describe(self) -> str:
        return f"found {self.object_ref} ({self.label}) {self.box.tag()}"


# ----------------------------------------------------------- sim oracle


def _norm(token: str) -> str:
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


def _terms(text: str) -> set[str]:
    return {_norm(t) for t in tokenize(text)}


def _object_terms(obj: VisibleObject) -> set[str]:
    terms = _terms(obj.label)
    for _, value in obj.attributes:
        terms |= _terms(value)
    return terms


def _attribute_terms(obj: VisibleObject) -> set[str]:
    terms: set[str] = set()
    for _, value in obj.attributes:
        terms |= _terms(value)
    return terms


def _matching(target: str, snap: Snapshot) -> list[VisibleObject]:
    """Objects whose label and attributes cover every content word of ``target``.

    Ordered best first: larger overlap, then ascending id.
    """
    want = _terms(target)
    if not want:
        return []
    hits = [o for o in snap.objects if want <= _object_terms(o)]
    return sorted(hits, key=lambda o: (-len(want & _object_terms(o)), o.id))


def _article(label: str) -> str:
    return "an" if label[:1].lower() in "aeiou" else "a"


def _where_phrase(obj: VisibleObject, viewer: str) -> str:
    if obj.holder is None:
        placement = dict(obj.attributes).get("placement", "")
        return f" {placement}" if placement else ""
    kind, _, owner = obj.holder.partition(":")
    if owner == viewer:
        return f" in your {kind}"
    if kind == "basket":
        return f" in {owner}'s basket"
    return f" held by {owner}"


def describe_view(question: str, snap: Snapshot) -> str:
    parts = [f"{_article(o.label)} {o.label}{_where_phrase(o, snap.robot_id)}" for o in snap.objects]
    parts += [f"the robot {r}" for r in snap.robots]
    parts += [f"the person {u}" for u in snap.users]
    if not parts:
        return "You see nothing notable."
    return "You see: " + "; ".join(parts) + "."


_PRESENCE = re.compile(r"^(?:is|are) there (?P<x>.+)$|^do you see (?P<y>.+)$")
_COUNT = re.compile(
    r"^how many (?P<x>.+?)(?: are there| do you see| can you see| are here| are visible)?$"
)
_WHICH = re.compile(r"^which (?P<cls>.+?) (?:is|are|has|looks) (?P<attr>.+)$")
_GENERIC = frozenset({"object", "one", "item", "thing"})


def question_view(question: str, snap: Snapshot) -> str:
    q = " ".join(question.lower().strip().rstrip("?.!").split())
    m = _PRESENCE.match(q)
    if m:
        return "yes" if _matching(m.group("x") or m.group("y"), snap) else "no"
    m = _COUNT.match(q)
    if m:
        return str(len(_matching(m.group("x"), snap)))
    m = _WHICH.match(q)
    if m:
        cls_terms = _terms(m.group("cls")) - {_norm(g) for g in _GENERIC}
        attr = _terms(m.group("attr"))
        if not attr:
            return "unknown"
        hits = [o for o in snap.objects
                if cls_terms <= _object_terms(o) and attr <= _attribute_terms(o)]
        if not hits:
            return "none"
        return ", ".join(o.label for o in hits)
    return "unknown"


def search_view(target: str, snap: Snapshot) -> LocatedObject:
    hits = _matching(target, snap)
    if not hits:
        raise NotFound(f"no visible object matches {target!r}")
    best = hits[0]
    box = BoundingBox(*best.box, snap.image_width, snap.image_height)
    return LocatedObject(best.ref, best.label, box)


class SimPerception:
    """Ground-truth perception over the simulator's visibility model."""

    def __init__(self, world: World) -> None:
        self.world = world

    def handle(self, step: BehaviorStep, robot_id: str) -> StepResult:
        origin = ROLE_FOR_KIND[step.kind]
        snap = self.world.snapshot(robot_id)
        arg = step.args[0]
        if step.kind is K.DESCRIBE_VIEW:
            return StepResult.success(describe_view(arg, snap), origin)
        if step.kind is K.QUESTION_VIEW:
            return StepResult.success(question_view(arg, snap), origin)
        try:
            found = search_view(arg, snap)
        except NotFound as exc:
            return StepResult.failure(str(exc), origin)
        return StepResult.success(found.describe(), origin)


# ---------------------------------------------------------- vision mode


def _png(pixels: bytes, width: int, height: int) -> bytes:
    def chunk(tag: bytes, body: bytes) -> bytes:
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body))

    stride = width * 3
    raw = b"".join(b"\x00" + pixels[y * stride:(y + 1) * stride] for y in range(height))
    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw, 6)) + chunk(b"IEND", b"")


def render_frame(snap: Snapshot) -> ImagePayload:
    """A deterministic synthetic camera frame: one flat-coloured box per visible object."""
    w, h = snap.image_width, snap.image_height
    buf = bytearray(b"\xd0" * (w * h * 3))
    for obj in snap.objects:
        x0, y0, x1, y1 = obj.box
        digest = zlib.crc32(obj.label.encode("utf-8"))
        colour = bytes(((digest >> s) & 0xFF) // 2 for s in (0, 8, 16))
        row = colour * (x1 - x0)
        for y in range(y0, y1):
            start = (y * w + x0) * 3
            buf[start:start + len(row)] = row
    return ImagePayload(_png(bytes(buf), w, h), "image/png", w, h)


class SimCamera:
    """Camera over the simulator; pass to :class:`VisionPerception`."""

    def __init__(self, world: World) -> None:
        self.world = world

    def __call__(self, robot_id: str) -> ImagePayload:
        return render_frame(self.world.snapshot(robot_id))


_BOX = re.compile(r"<box>\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*</box>")

QUESTION_TEMPLATE = "Answer in as few words as possible. {question}"
SEARCH_TEMPLATE = (
    "Find the object: {target}. Reply with its name followed by "
    "<box>x_min,y_min,x_max,y_max</box> in pixel coordinates."
)


def parse_box(text: str, width: int, height: int) -> BoundingBox:
    m = _BOX.search(text)
    if m is None:
        raise ValueError(f"no <box> in vision output: {text!r}")
    x0, y0, x1, y1 = (int(g) for g in m.groups())
    return BoundingBox(x0, y0, x1, y1, width, height)


class VisionPerception:
    """Perception through a vision-capable completion backend.

    ``camera(robot_id)`` returns the current frame. Located objects get
    task-scoped handles ``target_<n>``.
    """

    def __init__(self, backend, camera: Callable[[str], ImagePayload]) -> None:
        self.backend = backend
        self.camera = camera
        self._handles: dict[str, int] = {}

    def _ask(self, prompt: str, robot_id: str) -> str:
        frame = self.camera(robot_id)
        return self.backend.complete_vision(
            CompletionRequest(prompt=prompt, image=frame, backend_tag="vision")
        ).strip()

    def handle(self, step: BehaviorStep, robot_id: str) -> StepResult:
        origin = ROLE_FOR_KIND[step.kind]
        arg = step.args[0]
        try:
            if step.kind is K.DESCRIBE_VIEW:
                return StepResult.success(self._ask(arg, robot_id), origin)
            if step.kind is K.QUESTION_VIEW:
                return StepResult.success(self._ask(QUESTION_TEMPLATE.format(question=arg), robot_id), origin)
            frame = self.camera(robot_id)
            text = self.backend.complete_vision(
                CompletionRequest(prompt=SEARCH_TEMPLATE.format(target=arg), image=frame,
                                  backend_tag="vision")
            ).strip()
        except BackendError as exc:
            return StepResult.failure(f"{origin} backend error: {exc}", origin)
        try:
            box = parse_box(text, frame.width, frame.height)
        except ValueError:
            return StepResult.failure(f"could not read a bounding box from: {text}", origin)
        n = self._handles[robot_id] = self._handles.get(robot_id, 0) + 1
        label = _BOX.sub("", text).strip() or arg
        return StepResult.success(LocatedObject(f"target_{n}", label, box).describe(), origin)

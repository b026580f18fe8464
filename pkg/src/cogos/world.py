"""Place-graph simulator and the simulated on-robot action executor.

World file (JSON)::

    {"locations": [{"name": "kitchen", "adjacent": ["hall"]}, ...],
     "objects":   [{"id": 1, "label": "red can",
                    "attributes": {"color": "red", "class": "can"},
                    "location": "kitchen", "box": [10, 20, 60, 90]}, ...],
     "users":     [{"id": "user_1", "location": "hall"}],
     "seed": 7}

An object's location is a place name or a carrier ``gripper:<robot>``,
``basket:<robot>`` or ``user:<user>``. Adjacency is undirected.
"""

from __future__ import annotations

import json
import random
import threading
from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from .steps import BehaviorStep, StepKind, StepResult

if TYPE_CHECKING:
    from .bus import RobotBus
    from .profiles import RobotProfile

K = StepKind

IMAGE_WIDTH = 640
IMAGE_HEIGHT = 480

PLACE = "place"
CARRIERS = ("gripper", "basket", "user")


class WorldError(ValueError):
    pass


class ParseError(WorldError):
    pass


class InvariantViolation(WorldError):
    pass


@dataclass(frozen=True)
class Where:
    kind: str
    name: str

    @classmethod
    def parse(cls, text: str) -> Where:
        if not isinstance(text, str) or not text:
            raise ParseError(f"bad location {text!r}")
        head, sep, tail = text.partition(":")
        if not sep:
            return cls(PLACE, text)
        if head not in CARRIERS or not tail:
            raise ParseError(f"bad carrier location {text!r}")
        return cls(head, tail)

    def __str__(self) -> str:
        return self.name if self.kind == PLACE else f"{self.kind}:{self.name}"


@dataclass
class ObjectInstance:
    id: int
    label: str
    attributes: dict[str, str]
    location: Where
    box: tuple[int, int, int, int] | None = None

    def to_dict(self) -> dict:
        out = {"id": self.id, "label": self.label, "attributes": dict(self.attributes),
               "location": str(self.location)}
        if self.box is not None:
            out["box"] = list(self.box)
        return out


@dataclass
class _Robot:
    robot_id: str
    location: str
    platform: str
    has_gripper: bool
    has_basket: bool
    can_locomote: bool
    posture: str = "standing"


@dataclass(frozen=True)
class RobotState:
    robot_id: str
    location: str
    posture: str
    gripper: int | None
    basket: tuple[int, ...]


@dataclass(frozen=True)
class ActionOutcome:
    status: str
    message: str
    world_delta: str = ""
    facts: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "success"


def _ok(message: str, delta: str = "", facts: tuple[str, ...] = ()) -> ActionOutcome:
    return ActionOutcome("success", message, delta, facts)


def _fail(message: str) -> ActionOutcome:
    return ActionOutcome("failure", message)


@dataclass(frozen=True)
class VisibleObject:
    id: int
    label: str
    attributes: tuple[tuple[str, str], ...]
    holder: str | None
    box: tuple[int, int, int, int]

    @property
    def ref(self) -> str:
        return f"obj_{self.id}"


@dataclass(frozen=True)
class Snapshot:
    """What ``robot_id`` can see: everything at its current location."""

    robot_id: str
    location: str
    objects: tuple[VisibleObject, ...] = ()
    users: tuple[str, ...] = ()
    robots: tuple[str, ...] = ()
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT


class World:
    def __init__(
        self,
        locations: Mapping[str, list[str]],
        objects: list[ObjectInstance],
        users: Mapping[str, str],
        seed: int = 0,
    ) -> None:
        self.adjacency: dict[str, set[str]] = {name: set() for name in locations}
        for name, adjacent in locations.items():
            for other in adjacent:
                if other not in self.adjacency:
                    raise InvariantViolation(f"location {name!r} lists unknown neighbour {other!r}")
                if other != name:
                    self.adjacency[name].add(other)
                    self.adjacency[other].add(name)
        self.objects: dict[int, ObjectInstance] = {}
        for obj in objects:
            if obj.id in self.objects:
                raise InvariantViolation(f"duplicate object id {obj.id}")
            self.objects[obj.id] = obj
        self.users = dict(users)
        for uid, loc in self.users.items():
            if loc not in self.adjacency:
                raise InvariantViolation(f"user {uid!r} is at unknown location {loc!r}")
        self.robots: dict[str, _Robot] = {}
        self.seed = seed
        # a single lock gives a total order over all mutations
        self.lock = threading.RLock()
        for obj in self.objects.values():
            self._check_object(obj, allow_robot_carriers=False)

    def _check_object(self, obj: ObjectInstance, allow_robot_carriers: bool = True) -> None:
        where = obj.location
        if where.kind == PLACE and where.name not in self.adjacency:
            raise InvariantViolation(f"object {obj.id} ({obj.label}) is at unknown location {where.name!r}")
        if where.kind == "user" and where.name not in self.users:
            raise InvariantViolation(f"object {obj.id} ({obj.label}) is held by unknown user {where.name!r}")
        if where.kind in ("gripper", "basket"):
            if not allow_robot_carriers or where.name not in self.robots:
                raise InvariantViolation(f"object {obj.id} ({obj.label}) is carried by unknown robot {where.name!r}")
        if obj.box is not None:
            x0, y0, x1, y1 = obj.box
            if not (0 <= x0 < x1 <= IMAGE_WIDTH and 0 <= y0 < y1 <= IMAGE_HEIGHT):
                raise InvariantViolation(f"object {obj.id} has an invalid box {obj.box}")

    # -- construction

    @classmethod
    def from_dict(cls, data: object) -> World:
        if not isinstance(data, dict):
            raise ParseError("world must be a JSON object")
        try:
            locations = {}
            for loc in data["locations"]:
                name = loc["name"]
                if not isinstance(name, str) or not name or ":" in name:
                    raise ParseError(f"bad location name {name!r}")
                if name in locations:
                    raise InvariantViolation(f"duplicate location {name!r}")
                locations[name] = list(loc.get("adjacent", []))
            objects = []
            for raw in data.get("objects", []):
                attrs = raw.get("attributes", {})
                if not isinstance(attrs, dict) or not all(
                        isinstance(k, str) and isinstance(v, str) for k, v in attrs.items()):
                    raise ParseError(f"object {raw.get('id')}: attributes must map text to text")
                box = raw.get("box")
                if box is not None:
                    if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, int) for v in box)):
                        raise ParseError(f"object {raw.get('id')}: box must be four integers")
                    box = tuple(box)
                if not isinstance(raw["id"], int) or not isinstance(raw["label"], str):
                    raise ParseError("object id must be an integer and label a string")
                objects.append(ObjectInstance(raw["id"], raw["label"], dict(attrs),
                                              Where.parse(raw["location"]), box))
            users = {}
            for u in data.get("users", []):
                if u["id"] in users:
                    raise InvariantViolation(f"duplicate user {u['id']!r}")
                users[u["id"]] = u["location"]
            seed = int(data.get("seed", 0))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"malformed world: missing or invalid {exc}") from None
        return cls(locations, objects, users, seed)

    def add_robot(self, profile: RobotProfile, location: str) -> None:
        with self.lock:
            if profile.robot_id in self.robots or profile.robot_id in self.users:
                raise InvariantViolation(f"duplicate robot id {profile.robot_id!r}")
            if location not in self.adjacency:
                raise InvariantViolation(f"robot {profile.robot_id!r} placed at unknown location {location!r}")
            self.robots[profile.robot_id] = _Robot(
                profile.robot_id, location, profile.platform_name,
                profile.has_gripper, profile.has_basket, profile.can_locomote,
            )

    # -- queries

    def location_of(self, party: str) -> str | None:
        with self.lock:
            if party in self.robots:
                return self.robots[party].location
            return self.users.get(party)

    def robot_state(self, robot_id: str) -> RobotState:
        with self.lock:
            r = self.robots[robot_id]
            held = [o.id for o in self.objects.values() if o.location == Where("gripper", robot_id)]
            basket = sorted(o.id for o in self.objects.values() if o.location == Where("basket", robot_id))
            return RobotState(robot_id, r.location, r.posture, held[0] if held else None, tuple(basket))

    def place_of(self, obj: ObjectInstance) -> str:
        """The place an object is at, following its carrier."""
        where = obj.location
        if where.kind == PLACE:
            return where.name
        if where.kind == "user":
            return self.users[where.name]
        return self.robots[where.name].location

    def object_box(self, obj: ObjectInstance) -> tuple[int, int, int, int]:
        if obj.box is not None:
            return obj.box
        rng = random.Random(f"{self.seed}:{obj.id}")
        w = rng.randint(40, 160)
        h = rng.randint(40, 160)
        x0 = rng.randint(0, IMAGE_WIDTH - w)
        y0 = rng.randint(0, IMAGE_HEIGHT - h)
        return (x0, y0, x0 + w, y0 + h)

    def snapshot(self, robot_id: str) -> Snapshot:
        with self.lock:
            here = self.robots[robot_id].location
            visible = []
            for oid in sorted(self.objects):
                obj = self.objects[oid]
                if self.place_of(obj) != here:
                    continue
                holder = None if obj.location.kind == PLACE else str(obj.location)
                visible.append(VisibleObject(obj.id, obj.label, tuple(sorted(obj.attributes.items())),
                                             holder, self.object_box(obj)))
            users = tuple(sorted(u for u, loc in self.users.items() if loc == here))
            robots = tuple(sorted(r for r, st in self.robots.items() if st.location == here and r != robot_id))
            return Snapshot(robot_id, here, tuple(visible), users, robots)

    def reachable(self, start: str, goal: str) -> bool:
        return self.distances(start).get(goal) is not None

    def distances(self, start: str) -> dict[str, int]:
        dist = {start: 0}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for nxt in sorted(self.adjacency[cur]):
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        return dist

    def to_dict(self) -> dict:
        with self.lock:
            return {
                "locations": [{"name": n, "adjacent": sorted(self.adjacency[n])} for n in sorted(self.adjacency)],
                "objects": [self.objects[i].to_dict() for i in sorted(self.objects)],
                "users": [{"id": u, "location": self.users[u]} for u in sorted(self.users)],
                "robots": [{"id": r.robot_id, "location": r.location, "posture": r.posture,
                            "platform": r.platform} for _, r in sorted(self.robots.items())],
                "seed": self.seed,
            }

    def dump(self) -> str:
        """Canonical serialisation (sorted keys) for golden comparisons."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def check_invariants(self) -> None:
        with self.lock:
            grippers: dict[str, int] = {}
            for obj in self.objects.values():
                self._check_object(obj)
                if obj.location.kind == "gripper":
                    if obj.location.name in grippers:
                        raise InvariantViolation(f"gripper of {obj.location.name} holds two objects")
                    grippers[obj.location.name] = obj.id
                if obj.location.kind == "basket" and not self.robots[obj.location.name].has_basket:
                    raise InvariantViolation(f"{obj.location.name} has no basket")

    # -- reference resolution

    def resolve_object(self, ref: str, robot_id: str) -> ObjectInstance | None:
        """``obj_<id>``, a bare id, or a label (visible objects preferred)."""
        ref = ref.strip()
        digits = ref[4:] if ref.startswith("obj_") else ref
        if digits.isdigit():
            return self.objects.get(int(digits))
        wanted = " ".join(ref.replace("_", " ").lower().split())
        matches = [o for _, o in sorted(self.objects.items()) if o.label.lower() == wanted]
        if not matches:
            return None
        here = self.robots[robot_id].location
        local = [o for o in matches if self.place_of(o) == here]
        return (local or matches)[0]

    def _destination(self, target: str, robot_id: str) -> str | None:
        if target in self.adjacency:
            return target
        if target in self.users:
            return self.users[target]
        if target in self.robots and target != robot_id:
            return self.robots[target].location
        obj = self.resolve_object(target, robot_id)
        return self.place_of(obj) if obj is not None else None

    # -- actions

    def execute_action(self, step: BehaviorStep, robot_id: str, bus: RobotBus | None = None,
                       listen_timeout: float = 5.0) -> ActionOutcome:
        """Apply one physical step. Never raises on bad input; failures change nothing."""
        if robot_id not in self.robots:
            return _fail(f"robot {robot_id!r} is not in the world")
        kind = step.kind
        if kind is K.SAY:
            return self._say(step.args[0], robot_id, bus)
        if kind is K.LISTEN:
            return self._listen(robot_id, bus, listen_timeout)
        handler = _HANDLERS.get(kind)
        if handler is None:
            return _fail(f"{kind} is not a physical action")
        with self.lock:
            return handler(self, self.robots[robot_id], *step.args)

    def _say(self, text: str, robot_id: str, bus: RobotBus | None) -> ActionOutcome:
        text = text.strip()
        if not text:
            return _fail("nothing to say")
        where = self.location_of(robot_id)
        if bus is not None:
            seq = bus.say(robot_id, text, where)
            return _ok(f"said: {text}", f"utterance {seq} at {where}")
        return _ok(f"said: {text}")

    def _listen(self, robot_id: str, bus: RobotBus | None, timeout: float) -> ActionOutcome:
        utt = bus.listen(robot_id, timeout) if bus is not None else None
        if utt is None:
            return _fail("heard nothing")
        return _ok(f"heard {utt.speaker}: {utt.text}", facts=(f"{utt.speaker} said: {utt.text}",))

    def _go_to(self, robot: _Robot, target: str) -> ActionOutcome:
        if not robot.can_locomote:
            return _fail(f"{robot.robot_id} cannot move")
        dest = self._destination(target, robot.robot_id)
        if dest is None:
            return _fail(f"place {target!r} unknown")
        if robot.posture != "standing":
            return _fail(f"{robot.robot_id} is {robot.posture}; stand up first")
        if dest == robot.location:
            return _ok(f"already at {dest}")
        if not self.reachable(robot.location, dest):
            return _fail(f"{dest} is not reachable from {robot.location}")
        old, robot.location = robot.location, dest
        return _ok(f"arrived at {dest}", f"{robot.robot_id}: {old} -> {dest}")

    def _go_user(self, robot: _Robot) -> ActionOutcome:
        if not robot.can_locomote:
            return _fail(f"{robot.robot_id} cannot move")
        if robot.posture != "standing":
            return _fail(f"{robot.robot_id} is {robot.posture}; stand up first")
        dist = self.distances(robot.location)
        options = sorted((dist[loc], uid) for uid, loc in self.users.items() if loc in dist)
        if not options:
            return _fail("no reachable user")
        _, uid = options[0]
        dest = self.users[uid]
        if dest == robot.location:
            return _ok(f"already with {uid} at {dest}")
        old, robot.location = robot.location, dest
        return _ok(f"arrived at {uid} in {dest}", f"{robot.robot_id}: {old} -> {dest}")

    def _take(self, robot: _Robot, ref: str) -> ActionOutcome:
        if not robot.has_gripper:
            return _fail(f"{robot.robot_id} has no gripper")
        obj = self.resolve_object(ref, robot.robot_id)
        if obj is None:
            return _fail(f"object {ref!r} unknown")
        mine = Where("gripper", robot.robot_id)
        held = [o for o in self.objects.values() if o.location == mine]
        if held:
            if held[0].id == obj.id:
                return _fail(f"already holding object {obj.id}")
            return _fail(f"gripper already holds object {held[0].id}")
        if obj.location.kind == "user":
            return _fail(f"object {obj.id} is held by {obj.location.name}")
        if obj.location.kind == "gripper":
            return _fail(f"object {obj.id} is held by {obj.location.name}")
        if self.place_of(obj) != robot.location:
            return _fail(f"object {obj.id} ({obj.label}) is not at {robot.location}")
        old, obj.location = obj.location, mine
        return _ok(f"took {obj.label} (obj_{obj.id})", f"object {obj.id}: {old} -> {mine}")

    def _put_in(self, robot: _Robot, ref: str, container: str) -> ActionOutcome:
        obj = self.resolve_object(ref, robot.robot_id)
        if obj is None:
            return _fail(f"object {ref!r} unknown")
        if obj.location != Where("gripper", robot.robot_id):
            return _fail(f"not holding object {obj.id}")
        dest = self._container(robot, container)
        if isinstance(dest, ActionOutcome):
            return dest
        old, obj.location = obj.location, dest
        return _ok(f"put {obj.label} (obj_{obj.id}) in {container}", f"object {obj.id}: {old} -> {dest}")

    def _container(self, robot: _Robot, container: str) -> Where | ActionOutcome:
        name = container.strip()
        owner = None
        if name == "basket":
            owner = robot.robot_id
        elif name.startswith("basket:"):
            owner = name[len("basket:"):]
        elif name.endswith("_basket"):
            owner = name[: -len("_basket")]
        if owner is not None:
            other = self.robots.get(owner)
            if other is None:
                return _fail(f"container {container!r} unknown")
            if not other.has_basket:
                return _fail(f"{owner} has no basket")
            if other.location != robot.location:
                return _fail(f"{owner} is not at {robot.location}")
            return Where("basket", owner)
        if name in self.adjacency:
            if name != robot.location:
                return _fail(f"{name} is not here")
            return Where(PLACE, name)
        return _fail(f"container {container!r} unknown")

    def _give_to_user(self, robot: _Robot) -> ActionOutcome:
        users = sorted(u for u, loc in self.users.items() if loc == robot.location)
        if not users:
            return _fail(f"no user at {robot.location}")
        held = sorted(o.id for o in self.objects.values() if o.location == Where("gripper", robot.robot_id))
        if not held:
            held = sorted(o.id for o in self.objects.values() if o.location == Where("basket", robot.robot_id))
        if not held:
            return _fail("nothing to give")
        obj = self.objects[held[0]]
        old, obj.location = obj.location, Where("user", users[0])
        return _ok(f"gave {obj.label} (obj_{obj.id}) to {users[0]}", f"object {obj.id}: {old} -> {obj.location}")

    def _sit(self, robot: _Robot) -> ActionOutcome:
        if robot.posture == "sitting":
            return _ok("already sitting")
        robot.posture = "sitting"
        return _ok("sat down", f"{robot.robot_id}: standing -> sitting")

    def _up(self, robot: _Robot) -> ActionOutcome:
        if robot.posture == "standing":
            return _ok("already standing")
        robot.posture = "standing"
        return _ok("stood up", f"{robot.robot_id}: sitting -> standing")

    def _turn(self, robot: _Robot, direction: str) -> ActionOutcome:
        return _ok(f"turned {direction}")

    def _tilt(self, robot: _Robot, direction: str) -> ActionOutcome:
        return _ok(f"tilted {direction}")

    def _dance(self, robot: _Robot) -> ActionOutcome:
        return _ok("danced")

    def _follow(self, robot: _Robot, target: str) -> ActionOutcome:
        if target not in self.users and target not in self.robots:
            return _fail(f"cannot follow unknown {target!r}")
        return _ok(f"following {target}")


_HANDLERS = {
    K.GO_TO: World._go_to,
    K.GO_USER: World._go_user,
    K.TAKE: World._take,
    K.PUT_IN: World._put_in,
    K.GIVE_TO_USER: World._give_to_user,
    K.SIT: World._sit,
    K.UP: World._up,
    K.TURN: World._turn,
    K.TILT: World._tilt,
    K.DANCE: World._dance,
    K.FOLLOW: World._follow,
}


def load_world(path: str | Path) -> World:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ParseError(f"{path}: empty world file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return World.from_dict(data)


def execute_action(step: BehaviorStep, world: World, robot_id: str, bus: RobotBus | None = None,
                   listen_timeout: float = 5.0) -> ActionOutcome:
    return world.execute_action(step, robot_id, bus, listen_timeout)


def snapshot(world: World, robot_id: str) -> Snapshot:
    return world.snapshot(robot_id)


@dataclass
class SimExecution:
    """Execution module backed by the simulator."""

    world: World
    bus: RobotBus | None = None
    listen_timeout: float = 5.0
    name: str = field(default="execution")

    def execute(self, step: BehaviorStep, robot_id: str) -> StepResult:
        outcome = self.world.execute_action(step, robot_id, self.bus, self.listen_timeout)
        if outcome.ok:
            return StepResult.success(outcome.message, self.name, outcome.facts)
        return StepResult.failure(outcome.message, self.name)

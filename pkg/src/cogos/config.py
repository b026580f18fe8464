"""Run configuration (TOML) and assembly of a runnable system from it.

Relative paths are resolved against the config file's directory. Secrets
come only from the environment: a remote binding names the variable that
holds its API key.
"""

from __future__ import annotations

import os
import sys
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import ENV_KEY, Backend, RemoteBackend, load_script
from .bus import RobotBus
from .orchestrator import OPTIONAL_MODULES, ModuleRegistry, RunLimits
from .perception import SimCamera, SimPerception, VisionPerception
from .profiles import PLATFORMS, RobotProfile, make_profile
from .rag import EthicsModule, MemoryModule, PatternModule
from .vectors import VectorStore
from .world import SimExecution, World, WorldError, load_world

BINDING_TYPES = ("scripted", "remote", "sim")
# Which binding each optional module needs; ``sim`` means simulator ground truth.
MODULE_BINDING = {"memory": "extractor", "ethics": "judge", "perception": "vision"}
SIM_ALLOWED = {"extractor", "vision"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendBinding:
    name: str
    type: str
    script: Path | None = None
    url: str = ""
    model: str = ""
    api_key_env: str = ENV_KEY
    vision: bool = False


@dataclass(frozen=True)
class RobotConfig:
    robot_id: str
    platform: str
    location: str
    behavior: str = "behavior"
    task: str = ""
    note: str | None = None


@dataclass(frozen=True)
class RunConfig:
    path: Path
    world: Path
    output_dir: Path
    robots: tuple[RobotConfig, ...]
    modules: dict[str, bool]
    backends: dict[str, BackendBinding]
    databases: dict[str, Path] = field(default_factory=dict)
    max_steps: int = 50
    listen_timeout: float = 5.0
    global_audibility: bool = False
    memory_k: int = 5
    pattern_n: int = 1
    rules_k: int = 10

    @property
    def limits(self) -> RunLimits:
        return RunLimits(max_steps=self.max_steps)

    def with_modules(self, **enabled: bool) -> RunConfig:
        modules = dict(self.modules)
        for name, on in enabled.items():
            if name not in OPTIONAL_MODULES:
                raise ConfigError(f"unknown module {name!r}")
            modules[name] = on
        return replace(self, modules=modules)


def _table(data: dict, key: str) -> dict:
    value = data.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{key}] must be a table")
    return value


def _existing(base: Path, value: object, what: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{what} must be a non-empty path")
    p = (base / value).resolve()
    if not p.exists():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path).resolve()
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    known = {"world", "output_dir", "limits", "modules", "databases", "backends", "robots", "bus", "retrieval"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    world = _existing(base, data.get("world"), "world file")
    output_dir = (base / str(data.get("output_dir", "out"))).resolve()

    limits = _table(data, "limits")
    max_steps = limits.get("max_steps", 50)
    listen_timeout = limits.get("listen_timeout", 5.0)
    if not isinstance(max_steps, int) or max_steps < 1:
        raise ConfigError("limits.max_steps must be a positive integer")
    if not isinstance(listen_timeout, (int, float)) or listen_timeout < 0:
        raise ConfigError("limits.listen_timeout must be a non-negative number")

    mod_table = _table(data, "modules")
    modules = {name: True for name in OPTIONAL_MODULES}
    for name, on in mod_table.items():
        if name not in OPTIONAL_MODULES:
            raise ConfigError(f"unknown module {name!r}; optional modules are {list(OPTIONAL_MODULES)}")
        if not isinstance(on, bool):
            raise ConfigError(f"modules.{name} must be true or false")
        modules[name] = on

    databases = {}
    for name, value in _table(data, "databases").items():
        if name not in ("memory", "patterns", "rules"):
            raise ConfigError(f"unknown database {name!r}")
        databases[name] = _existing(base, value, f"databases.{name}")

    backends = {}
    for name, spec in _table(data, "backends").items():
        if not isinstance(spec, dict):
            raise ConfigError(f"[backends.{name}] must be a table")
        kind = spec.get("type")
        if kind not in BINDING_TYPES:
            raise ConfigError(f"backends.{name}.type must be one of {list(BINDING_TYPES)}")
        if kind == "sim" and name not in SIM_ALLOWED:
            raise ConfigError(f"backends.{name}: type 'sim' is only valid for {sorted(SIM_ALLOWED)}")
        script = _existing(base, spec.get("script"), f"backends.{name}.script") if kind == "scripted" else None
        if kind == "remote" and not spec.get("url"):
            raise ConfigError(f"backends.{name}: a remote binding needs a url")
        backends[name] = BackendBinding(name, kind, script, spec.get("url", ""), spec.get("model", ""),
                                        spec.get("api_key_env", ENV_KEY), bool(spec.get("vision", name == "vision")))

    raw_robots = data.get("robots", [])
    if not isinstance(raw_robots, list) or not raw_robots:
        raise ConfigError("at least one [[robots]] entry is required")
    robots = []
    for i, r in enumerate(raw_robots):
        try:
            rc = RobotConfig(r["id"], r["platform"], r["location"], r.get("behavior", "behavior"),
                             r.get("task", ""), r.get("note"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"robots[{i}] is missing {exc}") from None
        if rc.platform not in PLATFORMS:
            raise ConfigError(f"robots[{i}]: unknown platform {rc.platform!r}")
        if rc.behavior not in backends or backends[rc.behavior].type == "sim":
            raise ConfigError(f"robots[{i}]: behavior binding {rc.behavior!r} is not a scripted or remote backend")
        robots.append(rc)
    ids = [r.robot_id for r in robots]
    if len(set(ids)) != len(ids):
        raise ConfigError("robot ids must be unique")

    for module, role in MODULE_BINDING.items():
        if modules[module] and role not in backends:
            raise ConfigError(f"module {module!r} is enabled but has no [backends.{role}] binding")
    retrieval = _table(data, "retrieval")
    bus = _table(data, "bus")
    return RunConfig(path, world, output_dir, tuple(robots), modules, backends, databases,
                     max_steps, float(listen_timeout), bool(bus.get("global_audibility", False)),
                     int(retrieval.get("memory_k", 5)), int(retrieval.get("pattern_n", 1)),
                     int(retrieval.get("rules_k", 10)))


def make_backend(binding: BackendBinding) -> Backend:
    if binding.type == "scripted":
        return load_script(binding.script, vision=binding.vision, name=binding.name)
    if binding.type == "remote":
        return RemoteBackend(binding.url, binding.model, api_key=os.environ.get(binding.api_key_env),
                             vision=binding.vision)
    raise ConfigError(f"binding {binding.name!r} of type {binding.type!r} is not a model backend")


@dataclass
class RobotRuntime:
    profile: RobotProfile
    registry: ModuleRegistry
    task: str


@dataclass
class Runtime:
    config: RunConfig
    world: World
    bus: RobotBus
    robots: list[RobotRuntime]

    def robot(self, robot_id: str | None = None) -> RobotRuntime:
        if robot_id is None:
            return self.robots[0]
        for r in self.robots:
            if r.profile.robot_id == robot_id:
                return r
        raise KeyError(robot_id)


def _store_from(path: Path | None) -> VectorStore:
    if path is None:
        return VectorStore()
    if path.suffix == ".jsonl":
        store = VectorStore()
        store.import_jsonl(path, "text")
        return store
    return VectorStore.load(path)


def build_runtime(config: RunConfig,
                  console_input: Callable[[str, str], str | None] | None = None) -> Runtime:
    """Instantiate world, bus, stores and one registry per robot."""
    try:
        world = load_world(config.world)
        profiles = []
        for rc in config.robots:
            profile = make_profile(rc.platform, rc.robot_id, rc.note)
            world.add_robot(profile, rc.location)
            profiles.append(profile)
    except (WorldError, OSError) as exc:
        raise ConfigError(f"world {config.world}: {exc}") from None
    console_user = min(world.users) if world.users else "user_1"
    bus = RobotBus(world.location_of, global_audibility=config.global_audibility,
                   console_input=console_input, console_user=console_user,
                   console_for=lambda party: world.location_of(party) == world.location_of(console_user))
    for p in profiles:
        bus.register(p.robot_id)
    for user in sorted(world.users):
        bus.register(user, "user")

    on = config.modules
    try:
        memory_store = _store_from(config.databases.get("memory")) if on["memory"] else None
        pattern_store = rules_store = None
        if on["patterns"]:
            pattern_store = VectorStore(name="patterns")
        if on["ethics"]:
            rules_store = VectorStore(name="rules")
    except Exception as exc:
        raise ConfigError(f"database: {exc}") from None

    shared_patterns = shared_ethics = None
    try:
        if pattern_store is not None:
            shared_patterns = PatternModule(pattern_store, n=config.pattern_n)
            if "patterns" in config.databases:
                shared_patterns.load_jsonl(config.databases["patterns"])
        if rules_store is not None:
            judge = make_backend(config.backends["judge"])
            shared_ethics = EthicsModule(rules_store, judge, k=config.rules_k)
            if "rules" in config.databases:
                shared_ethics.load_jsonl(config.databases["rules"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    execution = SimExecution(world, bus, config.listen_timeout)
    robots = []
    for rc, profile in zip(config.robots, profiles):
        memory = None
        if memory_store is not None:
            binding = config.backends["extractor"]
            extractor = None if binding.type == "sim" else make_backend(binding)
            memory = MemoryModule(memory_store, extractor, k=config.memory_k)
        perception = None
        if on["perception"]:
            binding = config.backends["vision"]
            perception = (SimPerception(world) if binding.type == "sim"
                          else VisionPerception(make_backend(binding), SimCamera(world)))
        registry = ModuleRegistry(
            behavior=make_backend(config.backends[rc.behavior]),
            execution=execution,
            env_analysis=perception, object_qa=perception, localization=perception,
            memory=memory, patterns=shared_patterns, ethics=shared_ethics,
        )
        robots.append(RobotRuntime(profile, registry, rc.task))
    return Runtime(config, world, bus, robots)

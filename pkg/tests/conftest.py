from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def scenarios() -> Path:
    return SCENARIOS


def write_script(path: Path, responses: list[str]) -> Path:
    import json
    path.write_text("".join(json.dumps({"turn": i, "response": r}) + "\n" for i, r in enumerate(responses)),
                    encoding="utf-8")
    return path


def minimal_config(tmp_path: Path, responses: list[str], extra: str = "", *, world: str = "kitchen.json",
                   location: str = "entrance", task: str = "say hello") -> Path:
    """A config in ``tmp_path`` with every optional module off and one scripted quadruped."""
    write_script(tmp_path / "behavior.jsonl", responses)
    cfg = tmp_path / "run.toml"
    cfg.write_text(f"""world = "{(SCENARIOS / 'worlds' / world).as_posix()}"
output_dir = "out"
{extra}
[modules]
memory = false
patterns = false
ethics = false
perception = false

[backends.behavior]
type = "scripted"
script = "behavior.jsonl"

[[robots]]
id = "quadruped_1"
platform = "quadruped"
location = "{location}"
task = "{task}"
""", encoding="utf-8")
    return cfg


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)

"""Modular cognitive architecture for robot behavior generation.

A behavior loop asks a language-model backend for one step at a time,
validates it against the robot's platform and dispatches it to pluggable
modules: simulator execution, perception, and retrieval-augmented memory,
behavior patterns and ethics.
"""

from __future__ import annotations

from .backends import BackendError, RemoteBackend, ScriptedBackend
from .orchestrator import (
    ModuleRegistry,
    PromptContext,
    RunLimits,
    assemble_prompt,
    dispatch_step,
    run_task,
)
from .profiles import RobotProfile, arm, quadruped
from .steps import (
    BehaviorStep,
    Outcome,
    Status,
    StepKind,
    StepResult,
    Transcript,
    parse_step,
    render_step,
    validate_step,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BehaviorStep",
    "ModuleRegistry",
    "Outcome",
    "PromptContext",
    "RemoteBackend",
    "RobotProfile",
    "RunLimits",
    "ScriptedBackend",
    "Status",
    "StepKind",
    "StepResult",
    "Transcript",
    "arm",
    "assemble_prompt",
    "dispatch_step",
    "parse_step",
    "quadruped",
    "render_step",
    "run_task",
    "validate_step",
]

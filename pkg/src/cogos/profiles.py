"""Robot platform profiles: the swappable contract of the execution module."""

from __future__ import annotations

from dataclasses import dataclass

from .steps import LOCOMOTION_KINDS, PHYSICAL_KINDS, StepKind


@dataclass(frozen=True)
class RobotProfile:
    robot_id: str
    platform_name: str
    actions: frozenset[StepKind]
    capabilities_note: str = ""
    has_basket: bool = False
    has_gripper: bool = False
    can_locomote: bool = True

    def __post_init__(self) -> None:
        actions = frozenset(StepKind(a) for a in self.actions)
        extra = actions - PHYSICAL_KINDS
        if extra:
            names = ", ".join(sorted(k.value for k in extra))
            raise ValueError(f"profile {self.robot_id}: non-physical actions {names}")
        object.__setattr__(self, "actions", actions)

    def capabilities_text(self) -> str:
        names = ", ".join(sorted(k.value for k in self.actions))
        parts = [
            f"Robot: {self.robot_id} ({self.platform_name}).",
            f"Available physical actions: {names}.",
        ]
        if self.capabilities_note:
            parts.append(self.capabilities_note)
        return "\n".join(parts)


QUADRUPED_ACTIONS = PHYSICAL_KINDS
ARM_ACTIONS = PHYSICAL_KINDS - LOCOMOTION_KINDS


def quadruped(robot_id: str = "quadruped_1", note: str | None = None) -> RobotProfile:
    """Legged robot with a gripper and a delivery basket on its back."""
    return RobotProfile(
        robot_id=robot_id,
        platform_name="quadruped",
        actions=QUADRUPED_ACTIONS,
        capabilities_note=note if note is not None else (
            "You walk on four legs, carry a basket on your back and have a small gripper."
        ),
        has_basket=True,
        has_gripper=True,
        can_locomote=True,
    )


def arm(robot_id: str = "arm_1", note: str | None = None) -> RobotProfile:
    """Static six-axis manipulator with a two-finger gripper."""
    return RobotProfile(
        robot_id=robot_id,
        platform_name="arm",
        actions=ARM_ACTIONS,
        capabilities_note=note if note is not None else (
            "You are a static manipulator mounted at a table; you cannot move between places."
        ),
        has_basket=False,
        has_gripper=True,
        can_locomote=False,
    )


PLATFORMS = {"quadruped": quadruped, "arm": arm}


def make_profile(platform: str, robot_id: str, note: str | None = None,
                 actions: list[str] | None = None) -> RobotProfile:
    """Build a profile from a platform name, optionally restricting its actions."""
    try:
        base = PLATFORMS[platform](robot_id, note)
    except KeyError:
        raise ValueError(f"unknown platform {platform!r}; expected one of {sorted(PLATFORMS)}") from None
    if actions is None:
        return base
    chosen = frozenset(StepKind(a) for a in actions)
    if not chosen <= base.actions:
        extra = ", ".join(sorted(k.value for k in chosen - base.actions))
        raise ValueError(f"{platform} cannot perform {extra}")
    return RobotProfile(
        robot_id=base.robot_id,
        platform_name=base.platform_name,
        actions=chosen,
        capabilities_note=base.capabilities_note,
        has_basket=base.has_basket,
        has_gripper=base.has_gripper,
        can_locomote=base.can_locomote,
    )


__all__ = ["RobotProfile", "quadruped", "arm", "make_profile", "PLATFORMS"]

"""
Scripted waypoint expert.

Per source object the expert cycles through

    MOVE_TO_SOURCE -> GRASP -> LIFT -> MOVE_TO_TARGET -> RELEASE

and finishes in DONE. Phase changes are driven by the observed scene, so the
controller recovers from a missed grasp by simply trying again. Planar steps
are clamp(KP * error, +/-0.1) per axis. The gripper command is -1 (close)
while carrying or grasping and +1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from src.errors import ContractError
from src.world.env import MAX_DELTA, MAX_STEPS, env_step
from src.world.scene import TRAVEL_HEIGHT, Scene, Task

KP = 0.5
ARRIVAL_TOLERANCE = 0.01


class Phase(IntEnum):
    MOVE_TO_SOURCE = 0
    GRASP = 1
    LIFT = 2
    MOVE_TO_TARGET = 3
    RELEASE = 4
    DONE = 5


@dataclass(frozen=True)
class ExpertState:
    phase: Phase = Phase.MOVE_TO_SOURCE
    object_index: int = 0  # position in task.source_indices


def _toward(gx: float, gy: float, tx: float, ty: float) -> tuple[float, float]:
    dx = float(np.clip(KP * (tx - gx), -MAX_DELTA, MAX_DELTA))
    dy = float(np.clip(KP * (ty - gy), -MAX_DELTA, MAX_DELTA))
    return dx, dy


def _arrived(gx: float, gy: float, tx: float, ty: float) -> bool:
    return max(abs(tx - gx), abs(ty - gy)) <= ARRIVAL_TOLERANCE


def expert_action(scene: Scene, task: Task, state: ExpertState) -> tuple[np.ndarray, ExpertState]:
    """Return the action for this step and the phase that action belongs to."""
    g = scene.gripper
    n = len(task.source_indices)
    phase, k = state.phase, state.object_index
    target = scene.objects[task.target_index]

    # Bounded by the number of phases; each pass either returns or advances.
    for _ in range(len(Phase) * (n + 1)):
        if phase is Phase.DONE or k >= n:
            return np.array([0.0, 0.0, 1.0]), ExpertState(Phase.DONE, min(k, n - 1))
        source = scene.objects[task.source_indices[k]]
        sx, sy = source.center
        tx, ty = target.center

        if phase is Phase.MOVE_TO_SOURCE:
            if source.placed:
                phase, k = Phase.MOVE_TO_SOURCE, k + 1
                continue
            if _arrived(g.x, g.y, sx, sy):
                phase = Phase.GRASP
                continue
            return np.array([*_toward(g.x, g.y, sx, sy), 1.0]), ExpertState(phase, k)

        if phase is Phase.GRASP:
            if source.held:
                phase = Phase.LIFT
                continue
            return np.array([*_toward(g.x, g.y, sx, sy), -1.0]), ExpertState(phase, k)

        if phase is Phase.LIFT:
            if not source.held:
                phase = Phase.MOVE_TO_SOURCE
                continue
            if g.z >= TRAVEL_HEIGHT:
                phase = Phase.MOVE_TO_TARGET
                continue
            return np.array([0.0, 0.0, -1.0]), ExpertState(phase, k)

        if phase is Phase.MOVE_TO_TARGET:
            if not source.held:
                phase = Phase.MOVE_TO_SOURCE
                continue
            if _arrived(g.x, g.y, tx, ty):
                phase = Phase.RELEASE
                continue
            return np.array([*_toward(g.x, g.y, tx, ty), -1.0]), ExpertState(phase, k)

        if phase is Phase.RELEASE:
            if source.placed:
                phase, k = Phase.MOVE_TO_SOURCE, k + 1
                continue
            if not source.held:
                phase = Phase.MOVE_TO_SOURCE
                continue
            return np.array([*_toward(g.x, g.y, tx, ty), 1.0]), ExpertState(phase, k)

    raise ContractError(f"Expert could not resolve a phase from {state}.")


@dataclass
class Trajectory:
    """Scenes s_0..s_T, expert states per scene and actions a_0..a_{T-1}."""

    scenes: list[Scene]
    states: list[ExpertState]
    actions: list[np.ndarray]
    success: bool

    @property
    def length(self) -> int:
        return len(self.actions)


def rollout_expert(scene: Scene, task: Task, max_steps: int = MAX_STEPS) -> Trajectory:
    """Drive the environment with the expert until done."""
    task.validate(scene)
    scenes, states, actions = [scene], [], []
    state = ExpertState()
    success = task.is_complete(scene)
    current = scene
    while not success and current.step < max_steps:
        action, state = expert_action(current, task, state)
        result = env_step(current, action, task)
        states.append(state)
        actions.append(action)
        current = result.scene
        scenes.append(current)
        success = result.success
        if result.done:
            break
    states.append(ExpertState(Phase.DONE, len(task.source_indices) - 1) if success else state)
    return Trajectory(scenes=scenes, states=states, actions=actions, success=success)


def expert_chunk(scene: Scene, task: Task, state: ExpertState, horizon: int) -> tuple[np.ndarray, ExpertState]:
    """Plan ``horizon`` expert actions ahead by simulating on a copy."""
    current, actions = scene, []
    for _ in range(horizon):
        action, state = expert_action(current, task, state)
        actions.append(action)
        current = env_step(current, action, task).scene
    return np.stack(actions), state


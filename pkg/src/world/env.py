"""
Steppable tabletop environment.

Action = (dx, dy, g). dx and dy are clamped to +/-0.1 and the gripper moves
in the plane. g < 0 commands closed, g >= 0 open. Height is implicit:

- closing while holding nothing is a grasp attempt. The gripper descends to
  contact for this step and picks up the nearest graspable object whose
  radius contains it.
- opening while holding an object releases it at the gripper position. If
  the gripper is within the target radius and the object belongs to the
  task, it is placed.
- every other step runs at travel height 1.0.

The episode is done on success or after MAX_STEPS steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.world.scene import TRAVEL_HEIGHT, Scene, Task

MAX_STEPS = 200
MAX_DELTA = 0.1
TABLE_HEIGHT = 0.0


@dataclass
class StepResult:
    scene: Scene
    done: bool
    success: bool


def clamp_action(action: np.ndarray) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(3)
    return np.array([
        np.clip(a[0], -MAX_DELTA, MAX_DELTA),
        np.clip(a[1], -MAX_DELTA, MAX_DELTA),
        np.clip(a[2], -1.0, 1.0),
    ])


def _nearest_graspable(scene: Scene, x: float, y: float):
    best, best_dist = None, math.inf
    for obj in scene.objects:
        if not obj.graspable:
            continue
        d = math.dist((x, y), obj.center)
        if d <= obj.radius and d < best_dist:
            best, best_dist = obj, d
    return best


def env_step(scene: Scene, action: np.ndarray, task: Task) -> StepResult:
    """Advance ``scene`` by one action. Returns a new scene; the input is untouched."""
    s = scene.copy()
    dx, dy, g = clamp_action(action)
    grip = s.gripper
    grip.x = float(np.clip(grip.x + dx, 0.0, 1.0))
    grip.y = float(np.clip(grip.y + dy, 0.0, 1.0))
    held = s.held_object()
    want_closed = g < 0

    if want_closed and held is None:
        obj = _nearest_graspable(s, grip.x, grip.y)
        if obj is not None:
            obj.held = True
            obj.center = (grip.x, grip.y)
            grip.z = obj.height
        else:
            grip.z = TABLE_HEIGHT
        grip.open = 0
    elif not want_closed and held is not None:
        held.held = False
        held.center = (grip.x, grip.y)
        target = s.objects[task.target_index]
        index = s.objects.index(held)
        on_target = math.dist((grip.x, grip.y), target.center) <= target.radius
        if on_target and index in task.source_indices:
            held.placed = True
            grip.z = target.height
        else:
            grip.z = TABLE_HEIGHT
        grip.open = 1
    else:
        grip.z = TRAVEL_HEIGHT
        grip.open = 0 if want_closed else 1
        if held is not None:
            held.center = (grip.x, grip.y)

    s.step += 1
    success = task.is_complete(s)
    done = success or s.step >= MAX_STEPS
    return StepResult(scene=s, done=done, success=success)


class Environment:
    """Stateful wrapper used by rollouts."""

    def __init__(self, scene: Scene, task: Task) -> None:
        task.validate(scene)
        self.scene = scene
        self.task = task
        self.done = False
        self.success = False

    def step(self, action: np.ndarray) -> StepResult:
        result = env_step(self.scene, action, self.task)
        self.scene, self.done, self.success = result.scene, result.done, result.success
        return result

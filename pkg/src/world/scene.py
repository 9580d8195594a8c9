"""
Tabletop scene model and task sampling.

Objects are discs on a unit square seen from above; height doubles as the
depth value. Task templates follow horizon length: place_single (short),
place_two (medium), place_three (long).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.autodiff.rng import Rng
from src.errors import ContractError, GenerationError

MAX_PLACEMENT_ATTEMPTS = 1000
TRAVEL_HEIGHT = 1.0
MIN_OBJECTS, MAX_OBJECTS = 2, 5


class ObjectKind(Enum):
    BLOCK = "block"
    PLATE = "plate"
    BOWL = "bowl"
    BREAD = "bread"
    FRUIT = "fruit"


SOURCE_KINDS = (ObjectKind.BLOCK, ObjectKind.BREAD, ObjectKind.FRUIT)
TARGET_KINDS = (ObjectKind.PLATE, ObjectKind.BOWL)

COLOURS: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.70, 0.25),
    "blue": (0.15, 0.30, 0.85),
    "yellow": (0.95, 0.85, 0.15),
    "purple": (0.55, 0.20, 0.70),
    "orange": (0.95, 0.55, 0.10),
    "white": (0.97, 0.97, 0.97),
    "black": (0.05, 0.05, 0.05),
}
COLOUR_NAMES = tuple(COLOURS)


class TaskTemplate(Enum):
    PLACE_SINGLE = "place_single"
    PLACE_TWO = "place_two"
    PLACE_THREE = "place_three"

    @property
    def n_sources(self) -> int:
        return {"place_single": 1, "place_two": 2, "place_three": 3}[self.value]

    @property
    def horizon(self) -> str:
        return {"place_single": "short", "place_two": "medium", "place_three": "long"}[self.value]

    @property
    def template_id(self) -> int:
        return list(TaskTemplate).index(self)

    @classmethod
    def from_id(cls, template_id: int) -> "TaskTemplate":
        return list(cls)[template_id]


@dataclass
class SceneObject:
    kind: ObjectKind
    center: tuple[float, float]
    radius: float
    height: float
    colour: str
    held: bool = False
    placed: bool = False

    @property
    def label(self) -> str:
        return f"{self.colour} {self.kind.value}"

    @property
    def graspable(self) -> bool:
        return self.kind in SOURCE_KINDS and not self.placed


@dataclass
class Gripper:
    x: float = 0.5
    y: float = 0.5
    z: float = TRAVEL_HEIGHT
    open: int = 1

    def as_state(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, float(self.open)])


@dataclass
class Scene:
    objects: list[SceneObject] = field(default_factory=list)
    gripper: Gripper = field(default_factory=Gripper)
    step: int = 0

    def held_object(self) -> SceneObject | None:
        held = [o for o in self.objects if o.held]
        if len(held) > 1:
            raise ContractError("More than one object is marked as held.")
        return held[0] if held else None

    def copy(self) -> "Scene":
        return copy.deepcopy(self)


@dataclass
class Task:
    template: TaskTemplate
    source_indices: list[int]
    target_index: int
    instruction: str

    def validate(self, scene: Scene) -> None:
        n = len(scene.objects)
        for i in [*self.source_indices, self.target_index]:
            if not 0 <= i < n:
                raise ContractError(f"Task references object {i} but the scene has {n}.")

    def placed_count(self, scene: Scene) -> int:
        return sum(1 for i in self.source_indices if scene.objects[i].placed)

    def is_complete(self, scene: Scene) -> bool:
        return self.placed_count(scene) == len(self.source_indices)


# ──────────────────────────────────────────────
# Sampling
# ──────────────────────────────────────────────


def render_instruction(scene: Scene, template: TaskTemplate, sources: list[int], target: int) -> str:
    """'place the red block, the green fruit and the white bread on the blue plate'."""
    names = [f"the {scene.objects[i].label}" for i in sources]
    if len(names) == 1:
        listed = names[0]
    else:
        listed = ", ".join(names[:-1]) + " and " + names[-1]
    tgt = scene.objects[target]
    preposition = "in" if tgt.kind is ObjectKind.BOWL else "on"
    return f"place {listed} {preposition} the {tgt.label}"


def _overlaps(center: tuple[float, float], radius: float, others: list[SceneObject]) -> bool:
    return any(math.dist(center, o.center) <= radius + o.radius for o in others)


def sample_scene(rng: Rng, template: TaskTemplate) -> tuple[Scene, Task]:
    """Rejection-sample a non-overlapping scene that satisfies ``template``."""
    if not isinstance(template, TaskTemplate):
        raise ContractError(f"Unknown task template: {template!r}")
    n_sources = template.n_sources
    n_objects = int(rng.integers(max(MIN_OBJECTS, n_sources + 1), MAX_OBJECTS + 1))
    colour_order = [COLOUR_NAMES[i] for i in rng.permutation(len(COLOUR_NAMES))]

    kinds: list[ObjectKind] = [TARGET_KINDS[int(rng.integers(0, len(TARGET_KINDS)))]]
    for _ in range(n_objects - 1):
        kinds.append(SOURCE_KINDS[int(rng.integers(0, len(SOURCE_KINDS)))])

    objects: list[SceneObject] = []
    attempts = 0
    for idx, kind in enumerate(kinds):
        if kind in TARGET_KINDS:
            radius = rng.uniform((), 0.06, 0.08)
            height = rng.uniform((), 0.1, 0.3)
        else:
            radius = rng.uniform((), 0.02, 0.05)
            height = rng.uniform((), 0.3, 1.0)
        while True:
            attempts += 1
            if attempts > MAX_PLACEMENT_ATTEMPTS:
                raise GenerationError(
                    f"Could not place {n_objects} objects for {template.value} "
                    f"after {MAX_PLACEMENT_ATTEMPTS} attempts."
                )
            center = (rng.uniform((), radius, 1.0 - radius), rng.uniform((), radius, 1.0 - radius))
            if not _overlaps(center, radius, objects):
                break
        objects.append(SceneObject(kind=kind, center=center, radius=radius, height=height, colour=colour_order[idx]))

    scene = Scene(objects=objects)
    target = 0
    sources = list(range(1, n_sources + 1))
    task = Task(
        template=template,
        source_indices=sources,
        target_index=target,
        instruction=render_instruction(scene, template, sources, target),
    )
    return scene, task

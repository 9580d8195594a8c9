"""
Three-part chain-of-thought text.

    STATE: <progress>, gripper <open|closed>, objects done k/n.
    LOCATION: <source> at (x,y) h=<h>; <target> at (x,y); gripper at (x,y,z).
    PLAN: <next sub-goal>.

Coordinates are printed with two decimals. The grammar is closed: every
word it can emit is listed in GRAMMAR_WORDS, and the tokenizer splits digits
and punctuation into their own pieces, so the vocabulary stays small.
"""

from __future__ import annotations

import re

from src.world.expert import ExpertState, Phase
from src.world.scene import COLOUR_NAMES, ObjectKind, Scene, Task

SECTION_MARKERS = ("STATE:", "LOCATION:", "PLAN:")

PHASE_PHRASES = {
    Phase.MOVE_TO_SOURCE: "approaching object",
    Phase.GRASP: "grasping object",
    Phase.LIFT: "lifting object",
    Phase.MOVE_TO_TARGET: "carrying object",
    Phase.RELEASE: "releasing object",
    Phase.DONE: "task complete",
}
START_PHRASE = "task started"

# Word-initial pieces the templates (CoT and instructions) can produce.
GRAMMAR_WORDS: tuple[str, ...] = (
    *SECTION_MARKERS,
    "task", "started", "approaching", "grasping", "lifting", "carrying", "releasing", "complete",
    "object", "gripper", "open", "closed", "objects", "done", "at", "h",
    "move", "above", "descend", "and", "grasp", "lift", "release", "stop",
    "place", "the", "on", "in",
    *COLOUR_NAMES,
    *(k.value for k in ObjectKind),
    "(", "0", "1", "2", "3",
)
# Pieces that continue a word (digits and punctuation).
GRAMMAR_CONTINUATIONS: tuple[str, ...] = (",", ".", "/", ")", ";", "=", *"0123456789")


def _q(v: float) -> str:
    return f"{min(max(v, 0.0), 1.0):.2f}"


def _plan(phase: Phase, source: str, target: str) -> str:
    return {
        Phase.MOVE_TO_SOURCE: f"move above {source}",
        Phase.GRASP: f"descend and grasp {source}",
        Phase.LIFT: f"lift {source}",
        Phase.MOVE_TO_TARGET: f"move above {target}",
        Phase.RELEASE: f"descend and release {source}",
        Phase.DONE: "stop",
    }[phase]


def generate_cot_text(scene: Scene, task: Task, state: ExpertState) -> str:
    n = len(task.source_indices)
    done = task.placed_count(scene)
    phase = Phase.DONE if task.is_complete(scene) else state.phase
    k = min(state.object_index, n - 1)
    source = scene.objects[task.source_indices[k]]
    target = scene.objects[task.target_index]
    g = scene.gripper

    if phase is Phase.MOVE_TO_SOURCE and done == 0 and k == 0:
        progress = START_PHRASE
    else:
        progress = PHASE_PHRASES[phase]
    gripper = "open" if g.open else "closed"

    state_part = f"STATE: {progress}, gripper {gripper}, objects done {done}/{n}."
    location_part = (
        f"LOCATION: {source.label} at ({_q(source.center[0])},{_q(source.center[1])}) h={_q(source.height)}; "
        f"{target.label} at ({_q(target.center[0])},{_q(target.center[1])}); "
        f"gripper at ({_q(g.x)},{_q(g.y)},{_q(g.z)})."
    )
    plan_part = f"PLAN: {_plan(phase, source.label, target.label)}."
    return " ".join([state_part, location_part, plan_part])


_SECTIONS = re.compile(r"^STATE: (?P<state>.+?)\. LOCATION: (?P<location>.+?)\. PLAN: (?P<plan>.+?)\.$")


def parse_cot_sections(text: str) -> dict[str, str] | None:
    """Split a CoT string into its three sections, or None if malformed."""
    if any(text.count(marker) != 1 for marker in SECTION_MARKERS):
        return None
    m = _SECTIONS.match(text)
    return m.groupdict() if m else None


def has_three_part_structure(text: str) -> bool:
    """True when the markers appear exactly once each, in order."""
    positions = [text.find(marker) for marker in SECTION_MARKERS]
    counts_ok = all(text.count(marker) == 1 for marker in SECTION_MARKERS)
    return counts_ok and all(p >= 0 for p in positions) and positions == sorted(positions)

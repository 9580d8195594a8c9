"""
Demonstration episodes and their on-disk format.

An episode is one expert rollout. It is stored as frames taken every H
steps. Each frame holds the observation at that step and the next H expert
actions. The last chunk is padded with the stop action (0, 0, +1).

Binary layout (little-endian, after the common container prefix, kind 1):

    header   u32 x 7   n_episodes, image_hw, patch, d_da3, H, a_dim, vocab_size
    per episode:
        u32 x 6        template_id, seed_index, length, success, n_frames, instr_len
        u16 x instr_len instruction token ids
        per frame:
            u32 x 2    step, cot_len
            f32        image   [hw, hw, 3]
            f32        depth   [hw, hw]
            f32        state   [4]
            f32        actions [H, a_dim]
            u16        cot ids [cot_len]

A JSON manifest sidecar (<name>.manifest.json) carries the vocabulary,
teacher-feature statistics, template counts and format versions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
from tqdm import tqdm

from src.autodiff.rng import Rng
from src.errors import FormatError
from src.linguistic_cot.vocab import Vocabulary
from src.storage.container import KIND_DATASET, VERSION, BinaryReader, BinaryWriter
from src.world.cot_text import generate_cot_text
from src.world.depth_features import D_FEATURES, PATCH, FeatureStats, teacher_features
from src.world.expert import rollout_expert
from src.world.render import IMAGE_HW, render
from src.world.scene import TaskTemplate, sample_scene

logger = logging.getLogger(__name__)

A_DIM = 3
STATE_DIM = 4
DEFAULT_HORIZON = 7
STOP_ACTION = np.array([0.0, 0.0, 1.0], dtype=np.float32)
FORMAT_VERSIONS = {
    "dataset": VERSION,
    "manifest": 1,
    "checkpoint": VERSION,
    "metrics_csv": 1,
    "latency_json": 1,
    "ablation_csv": 1,
    "config": 1,
}


@dataclass
class Frame:
    step: int
    image: np.ndarray    # float32 [hw, hw, 3]
    depth: np.ndarray    # float32 [hw, hw]
    state: np.ndarray    # float32 [4]
    actions: np.ndarray  # float32 [H, 3]
    cot_ids: list[int]


@dataclass
class Episode:
    template: TaskTemplate
    seed_index: int
    length: int
    success: bool
    instruction_ids: list[int]
    frames: list[Frame] = field(default_factory=list)


@dataclass(frozen=True)
class DatasetHeader:
    n_episodes: int
    image_hw: int = IMAGE_HW
    patch: int = PATCH
    d_da3: int = D_FEATURES
    horizon: int = DEFAULT_HORIZON
    a_dim: int = A_DIM
    vocab_size: int = 0


@dataclass
class DatasetFile:
    header: DatasetHeader
    episodes: list[Episode]
    manifest: dict[str, Any] | None = None

    @property
    def vocabulary(self) -> Vocabulary:
        if self.manifest is None:
            return Vocabulary.from_grammar()
        return Vocabulary(tokens=list(self.manifest["vocabulary"]))

    @property
    def feature_stats(self) -> FeatureStats:
        if self.manifest is None or "teacher_feature_stats" not in self.manifest:
            return FeatureStats.identity()
        return FeatureStats.from_dict(self.manifest["teacher_feature_stats"])

    def samples(self) -> list[tuple[int, int]]:
        """(episode, frame) index pairs in storage order."""
        return [(e, f) for e, ep in enumerate(self.episodes) for f in range(len(ep.frames))]


# ──────────────────────────────────────────────
# Generation
# ──────────────────────────────────────────────


def generate_episode(rng: Rng, template: TaskTemplate, vocab: Vocabulary, seed_index: int = 0,
                     horizon: int = DEFAULT_HORIZON, image_hw: int = IMAGE_HW) -> Episode:
    scene, task = sample_scene(rng, template)
    traj = rollout_expert(scene, task)
    frames = []
    for t in range(0, max(traj.length, 1), horizon):
        s = traj.scenes[t]
        image, depth = render(s, image_hw)
        chunk = [np.asarray(a, dtype=np.float32) for a in traj.actions[t:t + horizon]]
        chunk += [STOP_ACTION] * (horizon - len(chunk))
        cot = generate_cot_text(s, task, traj.states[t])
        frames.append(Frame(
            step=t,
            image=image.astype(np.float32),
            depth=depth.astype(np.float32),
            state=s.gripper.as_state().astype(np.float32),
            actions=np.stack(chunk),
            cot_ids=vocab.tokenize(cot),
        ))
    return Episode(
        template=template,
        seed_index=seed_index,
        length=traj.length,
        success=traj.success,
        instruction_ids=vocab.tokenize(task.instruction),
        frames=frames,
    )


def episode_rng(seed: int, index: int) -> Rng:
    return Rng(seed).spawn(index)


def generate_episodes(seed: int, n_episodes: int, vocab: Vocabulary, horizon: int = DEFAULT_HORIZON,
                      templates: Sequence[TaskTemplate] = tuple(TaskTemplate),
                      show_progress: bool = True) -> list[Episode]:
    """Episodes cycle through ``templates``; episode i uses stream i of ``seed``."""
    episodes = []
    for i in tqdm(range(n_episodes), desc="episodes", disable=not show_progress):
        template = templates[i % len(templates)]
        episodes.append(generate_episode(episode_rng(seed, i), template, vocab, seed_index=i, horizon=horizon))
    failed = sum(1 for e in episodes if not e.success)
    if failed:
        logger.warning("%d of %d expert rollouts did not succeed", failed, n_episodes)
    return episodes


def fit_feature_stats(episodes: Sequence[Episode]) -> FeatureStats:
    feats = [teacher_features(f.depth.astype(np.float64)) for ep in episodes for f in ep.frames]
    if not feats:
        return FeatureStats.identity()
    return FeatureStats.fit(np.stack(feats))


def split_indices(n: int, held_out_fraction: float = 0.1) -> tuple[list[int], list[int]]:
    """Deterministic split: the last fraction of episodes is held out."""
    n_held = int(round(n * held_out_fraction))
    if n > 1:
        n_held = min(max(n_held, 1), n - 1)
    else:
        n_held = 0
    return list(range(n - n_held)), list(range(n - n_held, n))


def iter_cot_ids(episodes: Sequence[Episode]) -> Iterator[list[int]]:
    for ep in episodes:
        for frame in ep.frames:
            yield frame.cot_ids


# ──────────────────────────────────────────────
# Serialisation
# ──────────────────────────────────────────────


def manifest_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def build_manifest(header: DatasetHeader, episodes: Sequence[Episode], vocab: Vocabulary,
                   stats: FeatureStats | None, seed: int | None) -> dict[str, Any]:
    counts = {t.value: 0 for t in TaskTemplate}
    for ep in episodes:
        counts[ep.template.value] += 1
    return {
        "format": "DCVL",
        "episodes": header.n_episodes,
        "image_hw": header.image_hw,
        "patch": header.patch,
        "d_da3": header.d_da3,
        "H": header.horizon,
        "a_dim": header.a_dim,
        "vocab_size": header.vocab_size,
        "template_counts": counts,
        "frames": sum(len(ep.frames) for ep in episodes),
        "seed": seed,
        "vocabulary": list(vocab.tokens),
        "teacher_feature_stats": (stats or FeatureStats.identity()).to_dict(),
        "formats": dict(FORMAT_VERSIONS),
    }


def write_dataset(episodes: Sequence[Episode], path: str | Path, vocab: Vocabulary,
                  stats: FeatureStats | None = None, seed: int | None = None) -> DatasetHeader:
    horizon = episodes[0].frames[0].actions.shape[0] if episodes and episodes[0].frames else DEFAULT_HORIZON
    image_hw = episodes[0].frames[0].image.shape[0] if episodes and episodes[0].frames else IMAGE_HW
    header = DatasetHeader(n_episodes=len(episodes), image_hw=image_hw, horizon=horizon, vocab_size=len(vocab))

    w = BinaryWriter()
    w.prefix(KIND_DATASET)
    w.pack("<7I", header.n_episodes, header.image_hw, header.patch, header.d_da3,
           header.horizon, header.a_dim, header.vocab_size)
    for ep in episodes:
        w.pack("<6I", ep.template.template_id, ep.seed_index, ep.length, int(ep.success),
               len(ep.frames), len(ep.instruction_ids))
        w.array(np.asarray(ep.instruction_ids), "<u2")
        for fr in ep.frames:
            w.pack("<2I", fr.step, len(fr.cot_ids))
            w.array(fr.image, "<f4")
            w.array(fr.depth, "<f4")
            w.array(fr.state, "<f4")
            w.array(fr.actions, "<f4")
            w.array(np.asarray(fr.cot_ids), "<u2")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    w.write_to(path)
    manifest = build_manifest(header, episodes, vocab, stats, seed)
    manifest_path(path).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logger.info("Wrote %d episodes (%d bytes) to %s", len(episodes), len(w), path)
    return header


def read_dataset(path: str | Path) -> DatasetFile:
    r = BinaryReader.open(path)
    r.prefix(KIND_DATASET)
    n_eps, hw, patch, d_da3, horizon, a_dim, vocab_size = r.unpack("<7I", "dataset header")
    header = DatasetHeader(n_eps, hw, patch, d_da3, horizon, a_dim, vocab_size)

    episodes = []
    for e in range(n_eps):
        at = r.offset
        template_id, seed_index, length, success, n_frames, instr_len = r.unpack("<6I", f"episode {e} header")
        if template_id >= len(TaskTemplate):
            raise FormatError(f"Episode {e} has unknown template id {template_id}", at)
        instruction = r.array(instr_len, "<u2", f"episode {e} instruction").astype(int).tolist()
        frames = []
        for f in range(n_frames):
            step, cot_len = r.unpack("<2I", f"episode {e} frame {f}")
            image = r.array(hw * hw * 3, "<f4", "image").reshape(hw, hw, 3)
            depth = r.array(hw * hw, "<f4", "depth").reshape(hw, hw)
            state = r.array(STATE_DIM, "<f4", "state")
            actions = r.array(horizon * a_dim, "<f4", "actions").reshape(horizon, a_dim)
            cot = r.array(cot_len, "<u2", "cot ids").astype(int).tolist()
            frames.append(Frame(step, image, depth, state, actions, cot))
        episodes.append(Episode(TaskTemplate.from_id(template_id), seed_index, length, bool(success),
                                instruction, frames))
    r.expect_end()

    manifest = None
    mpath = manifest_path(path)
    if mpath.exists():
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if manifest.get("episodes") != n_eps:
            raise FormatError(f"Manifest lists {manifest.get('episodes')} episodes but the file holds {n_eps}")
    return DatasetFile(header=header, episodes=episodes, manifest=manifest)

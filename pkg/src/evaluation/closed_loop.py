"""
Closed-loop evaluation on the synthetic desk.

Per control step: render -> policy chunk -> execute every action of the
chunk with env_step, stopping early when the episode ends. Episodes are
capped at 200 environment steps.

Evaluation scenes come from a stream of the seed that training data never
uses, one child stream per (template, episode). Episodes are independent,
so they may run on a thread pool; the model is read-only and each episode
owns its random stream.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.action_flow.flow import SamplerConfig
from src.autodiff.rng import Rng
from src.training.checkpoint import load_checkpoint
from src.training.model import DualCoTModel
from src.world.env import MAX_STEPS, Environment
from src.world.expert import ExpertState, expert_chunk
from src.world.render import render
from src.world.scene import Scene, Task, TaskTemplate, sample_scene

logger = logging.getLogger(__name__)

EVAL_STREAM = 7000
WILSON_Z = 1.959963984540054
DEFAULT_EPISODES = 100


class Policy(Protocol):
    def reset(self, scene: Scene, task: Task) -> None: ...

    def chunk(self, scene: Scene, task: Task) -> np.ndarray: ...


class ModelPolicy:
    """Parallel-CoT policy: one backbone forward per chunk."""

    def __init__(self, model: DualCoTModel, rng: Rng, sampler: SamplerConfig | None = None) -> None:
        self.model = model
        self.rng = rng
        self.sampler = sampler or SamplerConfig(model.config.sampler_steps)
        self._instruction: list[int] = []

    def reset(self, scene: Scene, task: Task) -> None:
        self._instruction = self.model.vocab.tokenize(task.instruction)

    def chunk(self, scene: Scene, task: Task) -> np.ndarray:
        image, _ = render(scene, self.model.backbone.config.image_hw)
        return self.model.act(image, self._instruction, scene.gripper.as_state(), self.rng, self.sampler)


class ExpertPolicy:
    """The scripted expert behind the same chunked interface."""

    def __init__(self, horizon: int = 7) -> None:
        self.horizon = horizon
        self.state = ExpertState()

    def reset(self, scene: Scene, task: Task) -> None:
        self.state = ExpertState()

    def chunk(self, scene: Scene, task: Task) -> np.ndarray:
        actions, self.state = expert_chunk(scene, task, self.state, self.horizon)
        return actions


class RandomPolicy:
    def __init__(self, rng: Rng, horizon: int = 7) -> None:
        self.rng = rng
        self.horizon = horizon

    def reset(self, scene: Scene, task: Task) -> None:
        pass

    def chunk(self, scene: Scene, task: Task) -> np.ndarray:
        planar = self.rng.uniform((self.horizon, 2), -0.1, 0.1)
        grip = self.rng.uniform((self.horizon, 1), -1.0, 1.0)
        return np.concatenate([planar, grip], axis=1)


PolicyFactory = Callable[[Rng], Policy]


@dataclass
class EpisodeOutcome:
    template: TaskTemplate
    index: int
    success: bool
    length: int


def run_episode(policy: Policy, scene: Scene, task: Task, max_steps: int = MAX_STEPS) -> tuple[bool, int]:
    env = Environment(scene, task)
    policy.reset(scene, task)
    while not env.done and env.scene.step < max_steps:
        for action in policy.chunk(env.scene, task):
            env.step(action)
            if env.done or env.scene.step >= max_steps:
                break
    return env.success, env.scene.step


def eval_stream(seed: int, template: TaskTemplate, index: int) -> Rng:
    return Rng(seed).spawn(EVAL_STREAM).spawn(template.template_id).spawn(index)


def _one(factory: PolicyFactory, seed: int, template: TaskTemplate, index: int) -> EpisodeOutcome:
    rng = eval_stream(seed, template, index)
    scene, task = sample_scene(rng.spawn(0), template)
    success, length = run_episode(factory(rng.spawn(1)), scene, task)
    return EpisodeOutcome(template=template, index=index, success=success, length=length)


# ──────────────────────────────────────────────
# Reporting
# ──────────────────────────────────────────────


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class TemplateResult:
    template: TaskTemplate
    n: int
    successes: int
    mean_length: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.n if self.n else 0.0

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.n)


@dataclass
class EvalReport:
    results: list[TemplateResult]
    outcomes: list[EpisodeOutcome]

    @property
    def average(self) -> float:
        return float(np.mean([r.success_rate for r in self.results])) if self.results else 0.0

    def rate(self, template: TaskTemplate) -> float:
        return next(r.success_rate for r in self.results if r.template is template)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.results:
            lo, hi = r.interval
            rows.append({
                "template": r.template.value,
                "horizon": r.template.horizon,
                "episodes": r.n,
                "successes": r.successes,
                "success_rate": r.success_rate,
                "ci_low": lo,
                "ci_high": hi,
                "mean_length": r.mean_length,
            })
        return pd.DataFrame(rows)

    def summary(self) -> str:
        lines = []
        for r in self.results:
            lo, hi = r.interval
            lines.append(f"  {r.template.value:<14} {100 * r.success_rate:5.1f}%  "
                         f"[{100 * lo:5.1f}, {100 * hi:5.1f}]  mean length {r.mean_length:.1f}")
        lines.append(f"  {'average':<14} {100 * self.average:5.1f}%")
        return "\n".join(lines)


def closed_loop_eval(factory: PolicyFactory, n_episodes: int = DEFAULT_EPISODES, seed: int = 0,
                     templates: Sequence[TaskTemplate] = tuple(TaskTemplate), workers: int = 1,
                     show_progress: bool = True) -> EvalReport:
    """Run ``n_episodes`` per template; ``factory`` builds a policy from each episode's stream."""
    jobs = [(t, i) for t in templates for i in range(n_episodes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_one, factory, seed, t, i) for t, i in jobs]
            outcomes = [f.result() for f in tqdm(futures, desc="eval", disable=not show_progress)]
    else:
        outcomes = [_one(factory, seed, t, i) for t, i in tqdm(jobs, desc="eval", disable=not show_progress)]

    results = []
    for t in templates:
        mine = [o for o in outcomes if o.template is t]
        results.append(TemplateResult(
            template=t,
            n=len(mine),
            successes=sum(o.success for o in mine),
            mean_length=float(np.mean([o.length for o in mine])) if mine else 0.0,
        ))
    report = EvalReport(results=results, outcomes=outcomes)
    logger.info("closed-loop average success %.1f%%", 100 * report.average)
    return report


def model_factory(model: DualCoTModel, sampler: SamplerConfig | None = None) -> PolicyFactory:
    return lambda rng: ModelPolicy(model, rng, sampler)


def expert_factory(horizon: int = 7) -> PolicyFactory:
    return lambda rng: ExpertPolicy(horizon)


def random_factory(horizon: int = 7) -> PolicyFactory:
    return lambda rng: RandomPolicy(rng, horizon)


def evaluate_checkpoint(checkpoint: str | Path, n_episodes: int = DEFAULT_EPISODES, seed: int = 0,
                        workers: int = 1, show_progress: bool = True) -> EvalReport:
    model, _, _ = load_checkpoint(checkpoint)
    return closed_loop_eval(model_factory(model), n_episodes, seed, workers=workers, show_progress=show_progress)

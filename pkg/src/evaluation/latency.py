"""
Latency harness: non-CoT, autoregressive-CoT and parallel-CoT control steps.

Each variant is timed in two stages, the backbone (including any CoT
decoding) and the flow-matching action head, with a monotonic clock. Warmup
repetitions are discarded; the report carries median and p95 per stage and
the backbone forward count of one control step.

All variants share backbone width, depth and the DiT action head. Absolute
milliseconds are machine-specific; the ratios and the AR scaling in K are
what the report is read for. Runs single-threaded.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.action_flow.flow import SamplerConfig, sample_actions
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.backbone.assembly import count_forwards_reset
from src.errors import ContractError
from src.evaluation.ar_cot import AR_K_SWEEP, ARCoTModel, ar_cot_generate
from src.linguistic_cot.vocab import Vocabulary
from src.training.model import DualCoTModel
from src.world.render import render
from src.world.scene import TaskTemplate, sample_scene

logger = logging.getLogger(__name__)

DEFAULT_WARMUP = 20
DEFAULT_REPS = 200
FORMAT_VERSION = 1

# Reference per-stage milliseconds of the full-scale models, reported alongside measurements.
REFERENCE_MS: dict[str, dict[str, float]] = {
    "non_cot": {"backbone_forward_ms": 53.7, "action_head_ms": 22.5, "total_ms": 76.2},
    "ar_cot": {"backbone_forward_ms": 3156.0, "action_head_ms": 27.5, "total_ms": 3178.5},
    "parallel_cot": {"backbone_forward_ms": 58.1, "action_head_ms": 25.1, "total_ms": 83.2},
}


@dataclass
class StageStats:
    median: float
    p95: float

    @classmethod
    def of(cls, samples_ms: Sequence[float]) -> "StageStats":
        arr = np.asarray(samples_ms, dtype=np.float64)
        return cls(median=float(np.median(arr)), p95=float(np.percentile(arr, 95)))


@dataclass
class VariantLatency:
    name: str
    backbone_forward_ms: StageStats
    action_head_ms: StageStats
    total_ms: StageStats
    backbone_forward_count: int
    k: int | None = None


@dataclass
class AffineFit:
    slope: float
    intercept: float
    r2: float


@dataclass
class LatencyReport:
    variants: dict[str, VariantLatency]
    warmup: int
    reps: int
    sweep: dict[int, float] = field(default_factory=dict)  # K -> median total ms
    fit: AffineFit | None = None
    reference: dict[str, dict[str, float]] = field(default_factory=lambda: REFERENCE_MS)

    @property
    def parallel_backbone_overhead(self) -> float:
        """Relative backbone-time overhead of parallel CoT over non-CoT."""
        par, non = self.variants["parallel_cot"], self.variants["non_cot"]
        return par.backbone_forward_ms.median / non.backbone_forward_ms.median - 1.0

    @property
    def ar_over_parallel(self) -> float:
        return self.variants["ar_cot"].total_ms.median / self.variants["parallel_cot"].total_ms.median

    def forward_counts(self) -> dict[str, int]:
        return {name: v.backbone_forward_count for name, v in self.variants.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "warmup": self.warmup,
            "reps": self.reps,
            "variants": {name: asdict(v) for name, v in self.variants.items()},
            "ratios": {
                "parallel_backbone_overhead": self.parallel_backbone_overhead,
                "ar_over_parallel_total": self.ar_over_parallel,
            },
            "ar_sweep": {
                "total_ms": {str(k): v for k, v in self.sweep.items()},
                "fit": asdict(self.fit) if self.fit else None,
            },
            "reference_ms": self.reference,
        }

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, v in self.variants.items():
            ref = self.reference.get(name, {})
            rows.append({
                "variant": name if v.k is None else f"{name}(K={v.k})",
                "backbone_ms": v.backbone_forward_ms.median,
                "action_head_ms": v.action_head_ms.median,
                "total_ms": v.total_ms.median,
                "total_p95_ms": v.total_ms.p95,
                "forwards": v.backbone_forward_count,
                "reference_total_ms": ref.get("total_ms"),
            })
        return pd.DataFrame(rows)

    def write(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        logger.info("Wrote latency report to %s", p)
        return p


def affine_fit(ks: Sequence[float], totals: Sequence[float]) -> AffineFit:
    x, y = np.asarray(ks, dtype=np.float64), np.asarray(totals, dtype=np.float64)
    if len(x) < 2:
        raise ContractError("An affine fit needs at least two points.")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residual**2)) / ss_tot if ss_tot > 0 else 1.0
    return AffineFit(slope=float(slope), intercept=float(intercept), r2=r2)


@dataclass
class Observation:
    image: np.ndarray
    instruction_ids: list[int]
    state: np.ndarray


def benchmark_observation(vocab: Vocabulary, seed: int = 0) -> Observation:
    """A fixed long-horizon scene so every variant sees the same input."""
    scene, task = sample_scene(Rng(seed).spawn(900), TaskTemplate.PLACE_THREE)
    image, _ = render(scene)
    return Observation(image=image, instruction_ids=vocab.tokenize(task.instruction), state=scene.gripper.as_state())


# ──────────────────────────────────────────────
# Timing
# ──────────────────────────────────────────────


def time_variant(name: str, backbone_fn: Callable[[], Tensor], head_fn: Callable[[Tensor], np.ndarray],
                 reps: int = DEFAULT_REPS, warmup: int = DEFAULT_WARMUP, k: int | None = None,
                 show_progress: bool = False) -> VariantLatency:
    backbone_ms, head_ms, counts = [], [], set()
    for i in tqdm(range(warmup + reps), desc=f"bench[{name}]", disable=not show_progress):
        count_forwards_reset()
        t0 = time.perf_counter()
        h_vlm = backbone_fn()
        t1 = time.perf_counter()
        head_fn(h_vlm)
        t2 = time.perf_counter()
        counts.add(count_forwards_reset())
        if i >= warmup:
            backbone_ms.append((t1 - t0) * 1000.0)
            head_ms.append((t2 - t1) * 1000.0)
    if len(counts) != 1:
        raise ContractError(f"{name}: backbone forward count varied across repetitions: {sorted(counts)}")
    total = [b + h for b, h in zip(backbone_ms, head_ms)]
    return VariantLatency(
        name=name,
        backbone_forward_ms=StageStats.of(backbone_ms),
        action_head_ms=StageStats.of(head_ms),
        total_ms=StageStats.of(total),
        backbone_forward_count=counts.pop(),
        k=k,
    )


def _policy_stages(model: DualCoTModel, obs: Observation, sampler: SamplerConfig, rng: Rng):
    def backbone() -> Tensor:
        return model.observe(obs.image, obs.instruction_ids).h_vlm

    def head(h_vlm: Tensor) -> np.ndarray:
        return sample_actions(obs.state, h_vlm, model.dit, sampler, rng)

    return backbone, head


def _ar_stages(model: ARCoTModel, obs: Observation, k: int, sampler: SamplerConfig, rng: Rng):
    def backbone() -> Tensor:
        return ar_cot_generate(obs.image, obs.instruction_ids, model, k)[1]

    def head(h_vlm: Tensor) -> np.ndarray:
        return sample_actions(obs.state, h_vlm, model.dit, sampler, rng)

    return backbone, head


def bench_latency(non_cot: DualCoTModel, parallel: DualCoTModel, ar: ARCoTModel, k: int = 64,
                  reps: int = DEFAULT_REPS, warmup: int = DEFAULT_WARMUP, sweep: Sequence[int] = AR_K_SWEEP,
                  sweep_reps: int | None = None, seed: int = 0, show_progress: bool = True) -> LatencyReport:
    """Time the three variants on one shared observation and fit AR total time against K."""
    for a, b in ((non_cot, parallel), (non_cot, ar)):
        if a.config.d_model != b.config.d_model or a.config.n_blocks != b.config.n_blocks:
            raise ContractError("Latency variants must share backbone width and depth.")
    if non_cot.config.use_visual_cot or non_cot.config.use_linguistic_cot:
        raise ContractError("The non-CoT latency variant must have both reasoning streams disabled.")
    obs = benchmark_observation(parallel.vocab, seed)
    sampler = SamplerConfig(parallel.config.sampler_steps)
    rng = Rng(seed).spawn(901)

    variants = {
        "non_cot": time_variant("non_cot", *_policy_stages(non_cot, obs, sampler, rng), reps=reps, warmup=warmup,
                                show_progress=show_progress),
        "ar_cot": time_variant("ar_cot", *_ar_stages(ar, obs, k, sampler, rng), reps=reps, warmup=warmup, k=k,
                               show_progress=show_progress),
        "parallel_cot": time_variant("parallel_cot", *_policy_stages(parallel, obs, sampler, rng), reps=reps,
                                     warmup=warmup, show_progress=show_progress),
    }
    report = LatencyReport(variants=variants, warmup=warmup, reps=reps)

    if sweep:
        n = sweep_reps or max(reps // 4, 5)
        for sk in sweep:
            v = time_variant(f"ar_cot_k{sk}", *_ar_stages(ar, obs, sk, sampler, rng), reps=n,
                             warmup=min(warmup, n), k=sk, show_progress=show_progress)
            report.sweep[int(sk)] = v.total_ms.median
        if len(report.sweep) >= 2:
            report.fit = affine_fit(list(report.sweep), list(report.sweep.values()))
    logger.info("parallel overhead %.1f%%, AR/parallel total %.1fx",
                100 * report.parallel_backbone_overhead, report.ar_over_parallel)
    return report

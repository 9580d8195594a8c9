"""
Four-way ablation of the reasoning streams.

Variants (visual, linguistic): dual_cot (1, 1), visual_cot (1, 0),
linguistic_cot (0, 1), no_cot (0, 0). All four share the seed, so they share
the initial values of their common parts, the data stream and therefore
the batch order. The data-order hash stored in every checkpoint must agree
across the four runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import pandas as pd

from src.errors import ContractError
from src.evaluation.closed_loop import DEFAULT_EPISODES, EvalReport, closed_loop_eval, model_factory
from src.training.checkpoint import load_checkpoint
from src.training.config import TrainConfig, variant_name
from src.training.trainer import Trainer, TrainingData, resolve_decoder
from src.world.scene import TaskTemplate

logger = logging.getLogger(__name__)

VARIANTS: tuple[tuple[bool, bool], ...] = ((True, True), (True, False), (False, True), (False, False))


@dataclass
class AblationRow:
    variant: str
    visual: bool
    linguistic: bool
    report: EvalReport
    data_order_hash: str


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def __post_init__(self) -> None:
        hashes = {r.data_order_hash for r in self.rows}
        if len(hashes) > 1:
            raise ContractError(f"Ablation variants consumed different data orders: {sorted(hashes)}")

    def row(self, variant: str) -> AblationRow:
        return next(r for r in self.rows if r.variant == variant)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for r in self.rows:
            rec = {"variant": r.variant, "visual_cot": int(r.visual), "linguistic_cot": int(r.linguistic)}
            for t in TaskTemplate:
                rec[f"{t.horizon}"] = 100.0 * r.report.rate(t)
            rec["average"] = 100.0 * r.report.average
            records.append(rec)
        return pd.DataFrame(records)

    def write(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(p, index=False, float_format="%.2f")
        logger.info("Wrote ablation table to %s", p)
        return p

    def console(self) -> str:
        return self.to_frame().to_string(index=False, float_format=lambda v: f"{v:.1f}")


def variant_config(base: TrainConfig, visual: bool, linguistic: bool) -> TrainConfig:
    name = variant_name(visual, linguistic)
    return replace(base, use_visual_cot=visual, use_linguistic_cot=linguistic,
                   out_dir=str(Path(base.out_dir) / name))


def train_variants(base: TrainConfig, data: TrainingData, show_progress: bool = True) -> dict[str, Path]:
    """Train the four variants; one pretrained decoder serves both linguistic variants."""
    decoder = resolve_decoder(replace(base, use_linguistic_cot=True), data, base.out_dir, show_progress)
    checkpoints = {}
    for visual, linguistic in VARIANTS:
        config = variant_config(base, visual, linguistic)
        trainer = Trainer.create(config, data, decoder if linguistic else None, show_progress=show_progress)
        checkpoints[config.variant] = trainer.run()
        logger.info("%s data order %s", config.variant, trainer.state.data_order_hash[:16])
    return checkpoints


def run_ablation(checkpoints: dict[str, Path], n_episodes: int = DEFAULT_EPISODES, seed: int = 0,
                 workers: int = 1, show_progress: bool = True) -> AblationTable:
    """Closed-loop evaluation of each variant checkpoint at matched evaluation seeds."""
    missing = [variant_name(v, l) for v, l in VARIANTS if variant_name(v, l) not in checkpoints]
    if missing:
        raise ContractError(f"No checkpoint for ablation variant(s): {', '.join(missing)}.")
    rows = []
    for visual, linguistic in VARIANTS:
        name = variant_name(visual, linguistic)
        model, _, meta = load_checkpoint(checkpoints[name])
        report = closed_loop_eval(model_factory(model), n_episodes, seed, workers=workers,
                                  show_progress=show_progress)
        rows.append(AblationRow(variant=name, visual=visual, linguistic=linguistic, report=report,
                                data_order_hash=str(meta.get("data_order_hash", ""))))
    return AblationTable(rows)

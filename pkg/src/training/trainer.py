"""
Joint training loop.

Each step draws a batch of (episode, frame) samples from the training split
with the data stream, records one tape over the joint loss, and applies one
Adam update to the trainable parameters. The data stream and the flow stream
are separate so that ablation variants consume identical batches.

Outputs under ``out_dir``:
    metrics.csv               step, l_vis, l_lin, l_act, l_total, wall_ms
    checkpoints/step_NNNNNN.ckpt
    model.ckpt                final checkpoint
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff.optim import Adam
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, backward
from src.errors import ContractError, TrainingError
from src.linguistic_cot.decoder import FrozenDecoderParams, pretrain_decoder
from src.training.checkpoint import (
    TrainerState,
    load_checkpoint,
    load_decoder,
    restore_training,
    save_checkpoint,
    save_decoder,
)
from src.training.config import TrainConfig, dump_config
from src.training.joint import LossBreakdown, Sample, joint_loss, make_sample
from src.training.model import DualCoTModel, build_model
from src.world.dataset import DatasetFile, fit_feature_stats, iter_cot_ids, read_dataset, split_indices
from src.world.depth_features import FeatureStats

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "l_vis", "l_lin", "l_act", "l_total", "wall_ms"]
LOSS_COLUMNS = ["l_vis", "l_lin", "l_act", "l_total"]
RECOMBINATION_TOLERANCE = 1e-10
DATA_STREAM, FLOW_STREAM = 500, 600
HELDOUT_COT_LIMIT = 256


def checkpoint_path(out_dir: str | Path, step: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"step_{step:06d}.ckpt"


def final_checkpoint_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / "model.ckpt"


def metrics_path(out_dir: str | Path) -> Path:
    return Path(out_dir) / "metrics.csv"


def initial_state(seed: int) -> TrainerState:
    root = Rng(seed)
    return TrainerState(step=0, data_rng=root.spawn(DATA_STREAM), flow_rng=root.spawn(FLOW_STREAM))


def advance_order_hash(previous: str, indices: np.ndarray) -> str:
    """Chain the batch indices into a running sha256 of the data order."""
    h = hashlib.sha256(previous.encode("ascii"))
    h.update(np.asarray(indices, dtype="<i8").tobytes())
    return h.hexdigest()


def check_recombination(breakdown: LossBreakdown, config: TrainConfig) -> None:
    c = breakdown.components()
    expected = config.lambda_vis * c["l_vis"] + config.lambda_lin * c["l_lin"] + config.lambda_act * c["l_act"]
    if abs(c["l_total"] - expected) > RECOMBINATION_TOLERANCE * max(1.0, abs(expected)):
        raise ContractError(f"L_total={c['l_total']!r} does not recombine to {expected!r}.")


# ──────────────────────────────────────────────
# Data
# ──────────────────────────────────────────────


@dataclass
class TrainingData:
    """Training split of a dataset with lazily built samples."""

    dataset: DatasetFile
    episode_ids: list[int]
    stats: FeatureStats
    index: list[tuple[int, int]] = field(init=False)
    _cache: dict[tuple[int, int], Sample] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        self.index = [(e, f) for e in self.episode_ids for f in range(len(self.dataset.episodes[e].frames))]
        if not self.index:
            raise ContractError("The training split holds no frames.")

    def __len__(self) -> int:
        return len(self.index)

    def sample(self, i: int) -> Sample:
        key = self.index[i]
        if key not in self._cache:
            self._cache[key] = make_sample(self.dataset, key[0], key[1], self.stats)
        return self._cache[key]

    def cot_corpus(self) -> list[list[int]]:
        return list(iter_cot_ids([self.dataset.episodes[e] for e in self.episode_ids]))

    def heldout_cot_corpus(self, limit: int = HELDOUT_COT_LIMIT) -> list[list[int]]:
        _, held = split_indices(len(self.dataset.episodes))
        return list(iter_cot_ids([self.dataset.episodes[e] for e in held]))[:limit]


def load_training_data(path: str | Path) -> TrainingData:
    dataset = read_dataset(path)
    train_ids, _ = split_indices(len(dataset.episodes))
    stats = dataset.feature_stats
    if dataset.manifest is None or "teacher_feature_stats" not in dataset.manifest:
        logger.warning("Dataset manifest has no feature statistics; fitting them on the training split")
        stats = fit_feature_stats([dataset.episodes[e] for e in train_ids])
    return TrainingData(dataset=dataset, episode_ids=train_ids, stats=stats)


def resolve_decoder(config: TrainConfig, data: TrainingData, out_dir: str | Path | None = None,
                    show_progress: bool = True) -> FrozenDecoderParams | None:
    """Load ``config.decoder`` or pretrain one on the training CoT corpus.

    A freshly pretrained decoder that misses ``config.decoder_ppl_target`` on
    the held-out split raises TrainingError instead of being trained against.
    """
    if not config.use_linguistic_cot:
        return None
    vocab = data.dataset.vocabulary
    if config.decoder:
        decoder, dec_vocab = load_decoder(config.decoder)
        if list(dec_vocab.tokens) != list(vocab.tokens):
            raise ContractError(f"Decoder {config.decoder} was trained on a different vocabulary.")
        return decoder
    logger.info("No decoder given; pretraining one on %d CoT strings", len(data.cot_corpus()))
    decoder, report = pretrain_decoder(data.cot_corpus(), vocab, data.heldout_cot_corpus(), seed=config.seed,
                                       steps=config.decoder_steps, lr=config.decoder_lr,
                                       target=config.decoder_ppl_target, show_progress=show_progress)
    report.raise_if_failed()
    if out_dir is not None:
        save_decoder(Path(out_dir) / "decoder.ckpt", decoder, vocab, report.__dict__)
    return decoder


# ──────────────────────────────────────────────
# Trainer
# ──────────────────────────────────────────────


class Trainer:
    """Owns the model, optimizer, random streams and metrics of one run."""

    def __init__(self, config: TrainConfig, data: TrainingData, model: DualCoTModel,
                 state: TrainerState | None = None, show_progress: bool = True) -> None:
        self.config = config
        self.data = data
        self.model = model
        self.optimizer = Adam(model.trainable_parameters(), lr=config.lr)
        self.state = state or initial_state(config.seed)
        self.show_progress = show_progress
        self.metrics: list[dict[str, float]] = []

    @classmethod
    def create(cls, config: TrainConfig, data: TrainingData, decoder: FrozenDecoderParams | None = None,
               show_progress: bool = True) -> "Trainer":
        model = build_model(config, data.dataset.vocabulary, decoder, data.stats)
        return cls(config, data, model, show_progress=show_progress)

    @classmethod
    def resume(cls, checkpoint: str | Path, data: TrainingData, config: TrainConfig | None = None,
               show_progress: bool = True) -> "Trainer":
        """Continue a run; parameters, Adam moments, step and both streams come from the checkpoint."""
        model, tensors, meta = load_checkpoint(checkpoint)
        if config is not None:
            # Only the run length and output options may change across a resume.
            model.config = replace(model.config, steps=config.steps, out_dir=config.out_dir,
                                   log_every=config.log_every, checkpoint_every=config.checkpoint_every)
        trainer = cls(model.config, data, model, show_progress=show_progress)
        trainer.state = restore_training(model, trainer.optimizer, tensors, meta)
        csv = metrics_path(model.config.out_dir)
        if csv.exists():
            frame = pd.read_csv(csv)
            frame = frame[frame["step"] <= trainer.state.step]
            trainer.metrics = frame.to_dict("records")
        logger.info("Resumed from %s at step %d", checkpoint, trainer.state.step)
        return trainer

    def draw_batch(self) -> list[Sample]:
        indices = np.asarray(self.state.data_rng.integers(0, len(self.data), size=self.config.batch))
        self.state.data_order_hash = advance_order_hash(self.state.data_order_hash, indices)
        return [self.data.sample(int(i)) for i in indices]

    def train_step(self) -> dict[str, float]:
        started = time.perf_counter()
        batch = self.draw_batch()
        step = self.state.step + 1
        self.optimizer.zero_grad()
        with Tape() as tape:
            breakdown = joint_loss(batch, self.model, self.state.flow_rng)
        components = breakdown.components()
        if not all(math.isfinite(v) for v in components.values()):
            raise TrainingError("Non-finite loss", step=step, components=components)
        check_recombination(breakdown, self.config)
        backward(breakdown.total, tape)
        self.optimizer.step()
        self.state.step = step
        row = {"step": step, **components, "wall_ms": (time.perf_counter() - started) * 1000.0}
        self.metrics.append(row)
        return row

    def run(self, steps: int | None = None) -> Path:
        """Train up to ``steps`` total steps (default ``config.steps``); returns the final checkpoint."""
        target = self.config.steps if steps is None else steps
        out_dir = Path(self.config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.cfg").write_text(dump_config(self.config), encoding="utf-8")
        remaining = range(self.state.step + 1, target + 1)
        for _ in tqdm(remaining, desc=f"train[{self.config.variant}]", disable=not self.show_progress):
            row = self.train_step()
            if row["step"] % self.config.log_every == 0:
                logger.info("step %d  l_vis %.4f  l_lin %.4f  l_act %.4f  l_total %.4f",
                            row["step"], row["l_vis"], row["l_lin"], row["l_act"], row["l_total"])
            if row["step"] % self.config.checkpoint_every == 0:
                self.save(checkpoint_path(out_dir, row["step"]))
        final = final_checkpoint_path(out_dir)
        self.save(final)
        return final

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, self.model, self.optimizer, self.state)
        self.write_metrics()

    def metrics_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.metrics, columns=METRIC_COLUMNS)

    def write_metrics(self) -> Path:
        path = metrics_path(self.config.out_dir)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = self.metrics_frame()
        frame["step"] = frame["step"].astype(int)
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


def train(config: TrainConfig, resume: str | Path | None = None, show_progress: bool = True) -> Trainer:
    """Load data, resolve the decoder, and run training to ``config.steps``."""
    data = load_training_data(config.data)
    if resume:
        trainer = Trainer.resume(resume, data, config, show_progress=show_progress)
    else:
        decoder = resolve_decoder(config, data, config.out_dir, show_progress=show_progress)
        trainer = Trainer.create(config, data, decoder, show_progress=show_progress)
    trainer.run()
    return trainer


def loss_drop(metrics: pd.DataFrame, window: int = 10) -> pd.DataFrame:
    """Early-window mean versus last-window mean of every loss column."""
    early = metrics.head(window)[LOSS_COLUMNS].mean()
    late = metrics.tail(window)[LOSS_COLUMNS].mean()
    return pd.DataFrame({"early": early, "late": late, "lower": late < early})

"""
Post-hoc diagnostics on a trained policy: the depth probe over H_vis and the
linguistic-prefix readouts (greedy CoT decoding, structure rate, prefix
spread and the true-versus-zero prefix gap).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.errors import ContractError
from src.linguistic_cot.prefix import FULL_DECODE_LEN, PrefixGap, greedy_decode, prefix_information_gap, prefix_spread
from src.training.model import DualCoTModel
from src.world.cot_text import has_three_part_structure
from src.world.dataset import DatasetFile

logger = logging.getLogger(__name__)


def frames_of(dataset: DatasetFile, episode_ids: Sequence[int], limit: int | None = None) -> list[tuple[int, int]]:
    pairs = [(e, f) for e in episode_ids for f in range(len(dataset.episodes[e].frames))]
    return pairs if limit is None else pairs[:limit]


def collect_visual_features(model: DualCoTModel, dataset: DatasetFile,
                            pairs: Sequence[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(H_vis features [n, 16 * d], depths [n, hw, hw], images [n, hw, hw, 3]) for frozen-feature probing."""
    if model.spatial is None:
        raise ContractError("The model has no visual CoT stream to probe.")
    feats, depths, images = [], [], []
    for e, f in pairs:
        ep, fr = dataset.episodes[e], dataset.episodes[e].frames[f]
        out = model.observe(fr.image.astype(np.float64), list(ep.instruction_ids))
        feats.append(out.h_vis.data.reshape(-1).copy())
        depths.append(fr.depth.astype(np.float64))
        images.append(fr.image.astype(np.float64))
    return np.stack(feats), np.stack(depths), np.stack(images)


@dataclass
class DecodedCoT:
    episode: int
    frame: int
    text: str
    reference: str

    @property
    def structured(self) -> bool:
        return has_three_part_structure(self.text)


@dataclass
class LinguisticReport:
    decoded: list[DecodedCoT]
    spread: float
    gap: PrefixGap

    @property
    def structure_rate(self) -> float:
        return sum(d.structured for d in self.decoded) / len(self.decoded) if self.decoded else 0.0

    def summary(self) -> str:
        return (f"structure {100 * self.structure_rate:.1f}% of {len(self.decoded)}; "
                f"prefix spread {self.spread:.4f}; "
                f"CE true {self.gap.true_prefix_ce:.4f} vs zero {self.gap.zero_prefix_ce:.4f} "
                f"(gap {self.gap.gap:+.4f}, n={self.gap.n})")


def decode_frame(model: DualCoTModel, dataset: DatasetFile, episode: int, frame: int = 0,
                 max_len: int = FULL_DECODE_LEN) -> DecodedCoT:
    if model.prefix_proj is None or model.decoder is None:
        raise ContractError("The model has no linguistic CoT stream to decode.")
    if not 0 <= episode < len(dataset.episodes):
        raise ContractError(f"Episode {episode} is outside [0, {len(dataset.episodes)}).")
    ep = dataset.episodes[episode]
    if not 0 <= frame < len(ep.frames):
        raise ContractError(f"Frame {frame} is outside [0, {len(ep.frames)}) for episode {episode}.")
    fr = ep.frames[frame]
    out = model.observe(fr.image.astype(np.float64), list(ep.instruction_ids))
    ids = greedy_decode(out.h_lin, model.prefix_proj, model.decoder, model.vocab, max_len)
    return DecodedCoT(episode=episode, frame=frame, text=model.vocab.detokenize(ids),
                      reference=model.vocab.detokenize(fr.cot_ids))


def linguistic_report(model: DualCoTModel, dataset: DatasetFile, pairs: Sequence[tuple[int, int]],
                      max_len: int = FULL_DECODE_LEN) -> LinguisticReport:
    """Decode every pair and measure anti-collapse and prefix-information diagnostics."""
    if model.prefix_proj is None or model.decoder is None:
        raise ContractError("The model has no linguistic CoT stream to decode.")
    decoded, h_lins, targets = [], [], []
    for e, f in pairs:
        ep, fr = dataset.episodes[e], dataset.episodes[e].frames[f]
        out = model.observe(fr.image.astype(np.float64), list(ep.instruction_ids))
        ids = greedy_decode(out.h_lin, model.prefix_proj, model.decoder, model.vocab, max_len)
        decoded.append(DecodedCoT(e, f, model.vocab.detokenize(ids), model.vocab.detokenize(fr.cot_ids)))
        h_lins.append(out.h_lin)
        targets.append(list(fr.cot_ids))
    spread = prefix_spread([model.prefix_proj(h).data for h in h_lins])
    gap = prefix_information_gap(h_lins, targets, model.prefix_proj, model.decoder, model.vocab)
    report = LinguisticReport(decoded=decoded, spread=spread, gap=gap)
    logger.info(report.summary())
    return report

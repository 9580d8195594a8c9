"""
Joint objective

    L_total = lambda_vis * L_vis + lambda_lin * L_lin + lambda_act * L_act

Each batch element gets exactly one backbone forward; all three losses read
the same BackboneOutput. A disabled stream contributes exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.action_flow.flow import action_loss
from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.linguistic_cot.prefix import linguistic_loss
from src.training.model import DualCoTModel
from src.visual_cot.projector import reconstruct_teacher, visual_loss
from src.world.dataset import DatasetFile
from src.world.depth_features import FeatureStats, teacher_features


@dataclass
class Sample:
    image: np.ndarray
    instruction_ids: list[int]
    state: np.ndarray
    actions: np.ndarray
    cot_ids: list[int]
    teacher: np.ndarray  # normalised teacher features [64, 16]


def make_sample(dataset: DatasetFile, episode: int, frame: int, stats: FeatureStats) -> Sample:
    ep = dataset.episodes[episode]
    fr = ep.frames[frame]
    depth = fr.depth.astype(np.float64)
    return Sample(
        image=fr.image.astype(np.float64),
        instruction_ids=list(ep.instruction_ids),
        state=fr.state.astype(np.float64),
        actions=fr.actions.astype(np.float64),
        cot_ids=list(fr.cot_ids),
        teacher=stats.normalise(teacher_features(depth)),
    )


@dataclass
class LossBreakdown:
    total: Tensor
    l_vis: Tensor | None
    l_lin: Tensor | None
    l_act: Tensor

    def components(self) -> dict[str, float]:
        return {
            "l_vis": 0.0 if self.l_vis is None else self.l_vis.item(),
            "l_lin": 0.0 if self.l_lin is None else self.l_lin.item(),
            "l_act": self.l_act.item(),
            "l_total": self.total.item(),
        }


def _mean(terms: list[Tensor]) -> Tensor:
    return ops.scale(ops.add_n(terms), 1.0 / len(terms))


def joint_loss(batch: list[Sample], model: DualCoTModel, flow_rng: Rng) -> LossBreakdown:
    cfg = model.config
    vis_terms, lin_terms, h_vlms = [], [], []
    for s in batch:
        out = model.observe(s.image, s.instruction_ids)
        h_vlms.append(out.h_vlm)
        if cfg.use_visual_cot:
            f_hat = reconstruct_teacher(out.h_vis, model.spatial, model.vis_proj)
            vis_terms.append(visual_loss(f_hat, s.teacher))
        if cfg.use_linguistic_cot:
            lin_terms.append(linguistic_loss(out.h_lin, s.cot_ids, model.prefix_proj, model.decoder, model.vocab))

    l_act = action_loss([s.actions for s in batch], [s.state for s in batch], h_vlms, model.dit, flow_rng)
    l_vis = _mean(vis_terms) if vis_terms else None
    l_lin = _mean(lin_terms) if lin_terms else None

    weighted = [ops.scale(l_act, cfg.lambda_act)] if cfg.lambda_act != 0 else []
    if l_vis is not None and cfg.lambda_vis != 0:
        weighted.append(ops.scale(l_vis, cfg.lambda_vis))
    if l_lin is not None and cfg.lambda_lin != 0:
        weighted.append(ops.scale(l_lin, cfg.lambda_lin))
    total = ops.add_n(weighted) if weighted else ops.scale(l_act, 0.0)
    return LossBreakdown(total=total, l_vis=l_vis, l_lin=l_lin, l_act=l_act)

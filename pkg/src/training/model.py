"""
The assembled policy: backbone with CoT query tokens, the two reasoning
heads, the frozen decoder and the DiT action head.

Disabled reasoning streams have neither query tokens nor heads, so they
contribute no parameters to the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.action_flow.dit import DiTParams
from src.action_flow.flow import SamplerConfig, sample_actions
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.backbone.assembly import BackboneConfig, BackboneOutput, BackboneParams, encode_observation
from src.errors import ContractError
from src.linguistic_cot.decoder import FrozenDecoderParams
from src.linguistic_cot.prefix import PrefixProjector
from src.linguistic_cot.vocab import Vocabulary
from src.nn.module import Module
from src.training.config import TrainConfig
from src.visual_cot.projector import SpatialQueries, VisualProjector
from src.world.depth_features import FeatureStats
from src.world.env import clamp_action


@dataclass
class DualCoTModel(Module):
    backbone: BackboneParams
    spatial: SpatialQueries | None
    vis_proj: VisualProjector | None
    prefix_proj: PrefixProjector | None
    dit: DiTParams
    decoder: FrozenDecoderParams | None
    config: TrainConfig = field(default_factory=TrainConfig, repr=False)
    vocab: Vocabulary = field(default_factory=Vocabulary.from_grammar, repr=False)
    feature_stats: FeatureStats = field(default_factory=FeatureStats.identity, repr=False)

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {name: p for name, p in self.named_parameters() if not p.frozen}

    def observe(self, image: np.ndarray, instruction_ids: list[int]) -> BackboneOutput:
        return encode_observation(image, instruction_ids, self.backbone)

    def act(self, image: np.ndarray, instruction_ids: list[int], state: np.ndarray, rng: Rng,
            sampler: SamplerConfig | None = None) -> np.ndarray:
        """One parallel-CoT control step: one backbone forward, then flow sampling."""
        out = self.observe(image, instruction_ids)
        chunk = sample_actions(state, out.h_vlm, self.dit, sampler or SamplerConfig(self.config.sampler_steps), rng)
        return np.stack([clamp_action(a) for a in chunk])


def backbone_config(config: TrainConfig, vocab_size: int) -> BackboneConfig:
    return BackboneConfig(
        vocab_size=vocab_size,
        d_model=config.d_model,
        n_blocks=config.n_blocks,
        n_heads=config.n_heads,
        n_vis_queries=config.n_vis_queries,
        n_lin_queries=config.n_lin_queries,
        use_visual_cot=config.use_visual_cot,
        use_linguistic_cot=config.use_linguistic_cot,
    )


def build_model(config: TrainConfig, vocab: Vocabulary, decoder: FrozenDecoderParams | None = None,
                feature_stats: FeatureStats | None = None) -> DualCoTModel:
    """Initialise every trainable part from streams of ``config.seed``.

    Each part draws from its own child stream, so ablation variants share
    the initial values of the parts they have in common.
    """
    if config.use_linguistic_cot:
        if decoder is None:
            raise ContractError("The linguistic CoT stream needs a frozen decoder.")
        if not decoder.is_frozen:
            raise ContractError("The CoT decoder must be frozen before joint training.")
    root = Rng(config.seed)
    bcfg = backbone_config(config, len(vocab))
    return DualCoTModel(
        backbone=BackboneParams.init(root.spawn(100), bcfg),
        spatial=SpatialQueries.init(root.spawn(200)) if config.use_visual_cot else None,
        vis_proj=VisualProjector.init(root.spawn(201), config.d_model) if config.use_visual_cot else None,
        prefix_proj=(PrefixProjector.init(root.spawn(300), config.d_model, decoder.d_model)
                     if config.use_linguistic_cot else None),
        dit=DiTParams.init(root.spawn(400), config.horizon, config.d_model),
        decoder=decoder if config.use_linguistic_cot else None,
        config=config,
        vocab=vocab,
        feature_stats=feature_stats or FeatureStats.identity(),
    )

"""
Unified input sequence and the miniature VLM backbone.

Sequence order (full dual-CoT model, T = 108):

    [ V_obs (64) | Q_vis (16) | L_instr (24, padded) | Q_lin (4) ]

Attention is causal, so the visual queries see only the image while the
linguistic queries, placed last, see everything. Pad columns are
unattendable except by the pad position itself. A disabled CoT stream drops
its query block from the sequence, which shortens T.

Every call to ``backbone_forward`` increments a process-wide counter that the
latency harness reads through ``count_forwards_reset``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.errors import InputError
from src.nn.attention import causal_mask
from src.nn.blocks import TransformerBlockParams, transformer_block
from src.nn.embed import PatchEmbedder, TokenEmbedder, patchify
from src.nn.module import LayerNorm, Module, normal_param

VISION, VIS_QUERY, TEXT, LIN_QUERY = "vision", "vis_query", "text", "lin_query"
PAD_ID = 0


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int
    d_model: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    image_hw: int = 32
    patch: int = 4
    n_vis_queries: int = 16
    n_lin_queries: int = 4
    max_instruction: int = 24
    use_visual_cot: bool = True
    use_linguistic_cot: bool = True
    extra_positions: int = 0  # room for appended tokens (autoregressive comparator)

    @property
    def n_patches(self) -> int:
        return (self.image_hw // self.patch) ** 2

    @property
    def seq_len(self) -> int:
        return (self.n_patches + self.max_instruction
                + (self.n_vis_queries if self.use_visual_cot else 0)
                + (self.n_lin_queries if self.use_linguistic_cot else 0))


@dataclass
class QueryTokens(Module):
    """Learnable CoT query rows; a disabled stream has no tensor."""

    q_vis: Tensor | None
    q_lin: Tensor | None

    @classmethod
    def init(cls, rng: Rng, cfg: BackboneConfig) -> "QueryTokens":
        q_vis = normal_param(rng.spawn(1), (cfg.n_vis_queries, cfg.d_model)) if cfg.use_visual_cot else None
        q_lin = normal_param(rng.spawn(2), (cfg.n_lin_queries, cfg.d_model)) if cfg.use_linguistic_cot else None
        return cls(q_vis=q_vis, q_lin=q_lin)


@dataclass
class BackboneParams(Module):
    patch: PatchEmbedder
    tokens: TokenEmbedder
    queries: QueryTokens
    blocks: list[TransformerBlockParams]
    ln_f: LayerNorm
    config: BackboneConfig = field(repr=False, default=None)  # type: ignore[assignment]

    @classmethod
    def init(cls, rng: Rng, cfg: BackboneConfig) -> "BackboneParams":
        return cls(
            patch=PatchEmbedder.init(rng.spawn(1), cfg.image_hw, cfg.patch, cfg.d_model),
            tokens=TokenEmbedder.init(rng.spawn(2), cfg.vocab_size, cfg.d_model, cfg.seq_len + cfg.extra_positions),
            queries=QueryTokens.init(rng.spawn(3), cfg),
            blocks=[TransformerBlockParams.init(rng.spawn(10 + i), cfg.d_model) for i in range(cfg.n_blocks)],
            ln_f=LayerNorm.init(cfg.d_model),
            config=cfg,
        )


@dataclass
class UnifiedSequence:
    embeddings: Tensor           # [T, d], positional embeddings included
    segments: list[str]          # per-position segment label
    mask: np.ndarray             # [T, T] bool, True = may attend
    positions: np.ndarray        # 0..T-1

    @property
    def length(self) -> int:
        return len(self.segments)

    def span(self, segment: str) -> slice | None:
        idx = [i for i, s in enumerate(self.segments) if s == segment]
        return slice(idx[0], idx[-1] + 1) if idx else None


@dataclass
class BackboneOutput:
    h_vlm: Tensor
    h_vis: Tensor | None
    h_lin: Tensor | None


# ──────────────────────────────────────────────
# Forward-pass instrumentation
# ──────────────────────────────────────────────


class ForwardCounter:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def increment(self) -> None:
        with self._lock:
            self._count += 1

    def read(self) -> int:
        with self._lock:
            return self._count

    def reset(self) -> int:
        with self._lock:
            previous, self._count = self._count, 0
            return previous


FORWARD_COUNTER = ForwardCounter()


def count_forwards_reset() -> int:
    """Atomically return the number of backbone forwards since the last reset and zero it."""
    return FORWARD_COUNTER.reset()


# ──────────────────────────────────────────────
# Assembly and forward
# ──────────────────────────────────────────────


def sequence_mask(segments: Sequence[str], pad_positions: Sequence[int]) -> np.ndarray:
    mask = causal_mask(len(segments))
    for p in pad_positions:
        mask[:, p] = False
        mask[p, p] = True
    return mask


def assemble_input(image: np.ndarray, instruction_ids: Sequence[int], params: BackboneParams,
                   pad_id: int = PAD_ID) -> UnifiedSequence:
    cfg = params.config
    ids = list(instruction_ids)
    if len(ids) > cfg.max_instruction:
        raise InputError(f"Instruction has {len(ids)} tokens; the limit is {cfg.max_instruction}.")
    padded = ids + [pad_id] * (cfg.max_instruction - len(ids))

    rows: list[Tensor] = [patchify(image, params.patch)]
    segments = [VISION] * cfg.n_patches
    if params.queries.q_vis is not None:
        rows.append(params.queries.q_vis)
        segments += [VIS_QUERY] * params.queries.q_vis.shape[0]
    text_start = len(segments)
    rows.append(params.tokens.embed(padded))
    segments += [TEXT] * cfg.max_instruction
    if params.queries.q_lin is not None:
        rows.append(params.queries.q_lin)
        segments += [LIN_QUERY] * params.queries.q_lin.shape[0]

    length = len(segments)
    x = ops.add(ops.concat_rows(rows), params.tokens.positions(0, length))
    pads = [text_start + i for i, tok in enumerate(padded) if tok == pad_id]
    return UnifiedSequence(embeddings=x, segments=segments, mask=sequence_mask(segments, pads),
                           positions=np.arange(length))


def run_blocks(x: Tensor, mask: np.ndarray, params: BackboneParams) -> Tensor:
    """Transformer stack plus final layer norm; counts one backbone forward."""
    FORWARD_COUNTER.increment()
    for block in params.blocks:
        x = transformer_block(x, block, mask, params.config.n_heads)
    return params.ln_f(x)


def backbone_forward(seq: UnifiedSequence, params: BackboneParams) -> BackboneOutput:
    h = run_blocks(seq.embeddings, seq.mask, params)
    vis, lin = seq.span(VIS_QUERY), seq.span(LIN_QUERY)
    h_vis = ops.slice_rows(h, vis.start, vis.stop) if vis else None
    h_lin = ops.slice_rows(h, lin.start, lin.stop) if lin else None
    return BackboneOutput(h_vlm=h, h_vis=h_vis, h_lin=h_lin)


def encode_observation(image: np.ndarray, instruction_ids: Sequence[int], params: BackboneParams) -> BackboneOutput:
    return backbone_forward(assemble_input(image, instruction_ids, params), params)

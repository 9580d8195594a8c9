"""
Autoregressive-CoT comparator.

The comparator shares the backbone size and the DiT action head with the
parallel model, but reasons by emitting CoT tokens one at a time from its
own language-model head. Its sequence is

    [ V_obs (64) | L_instr (24, padded) | bos | c_1 .. c_K ]

Inference keeps a per-block key/value cache, so each new token costs one
incremental backbone forward over a single row. A control step with K
reasoning tokens performs K generating forwards plus one conditioning
forward that feeds c_K, then runs the action head over every cached
position. With K = 0 the step is a single forward over the prompt.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from tqdm import tqdm

from src.action_flow.dit import DiTParams
from src.action_flow.flow import SamplerConfig, action_loss, sample_actions
from src.autodiff import ops
from src.autodiff.losses import cross_entropy_loss
from src.autodiff.optim import Adam
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, Tensor, backward
from src.backbone.assembly import (
    FORWARD_COUNTER,
    BackboneParams,
    assemble_input,
    run_blocks,
    sequence_mask,
)
from src.errors import ContractError, DimensionError, TrainingError
from src.linguistic_cot.prefix import FULL_DECODE_LEN
from src.linguistic_cot.vocab import Vocabulary
from src.nn.attention import scaled_dot_product_attention
from src.nn.module import Linear, Module
from src.training.config import TrainConfig
from src.training.joint import Sample
from src.training.model import backbone_config
from src.world.env import clamp_action

logger = logging.getLogger(__name__)

COT = "cot"
AR_EXTRA_POSITIONS = FULL_DECODE_LEN + 1
AR_K_SWEEP = (8, 16, 32, 64)


@dataclass
class ARCoTModel(Module):
    backbone: BackboneParams
    lm_head: Linear
    dit: DiTParams
    config: TrainConfig = field(default_factory=TrainConfig, repr=False)
    vocab: Vocabulary = field(default_factory=Vocabulary.from_grammar, repr=False)

    @property
    def prompt_len(self) -> int:
        return self.backbone.config.seq_len


def build_ar_model(config: TrainConfig, vocab: Vocabulary) -> ARCoTModel:
    """Same backbone width, depth and DiT as the parallel model; no query tokens."""
    root = Rng(config.seed)
    bcfg = replace(backbone_config(config, len(vocab)), use_visual_cot=False, use_linguistic_cot=False,
                   extra_positions=AR_EXTRA_POSITIONS)
    return ARCoTModel(
        backbone=BackboneParams.init(root.spawn(100), bcfg),
        lm_head=Linear.init(root.spawn(700), config.d_model, len(vocab)),
        dit=DiTParams.init(root.spawn(400), config.horizon, config.d_model),
        config=config,
        vocab=vocab,
    )


def _valid_columns(instruction_ids: Sequence[int], model: ARCoTModel) -> list[bool]:
    cfg = model.backbone.config
    n_text = len(list(instruction_ids))
    return [True] * cfg.n_patches + [i < n_text for i in range(cfg.max_instruction)]


# ──────────────────────────────────────────────
# Training (teacher-forced explicit CoT)
# ──────────────────────────────────────────────


def teacher_forced_forward(sample: Sample, model: ARCoTModel) -> tuple[Tensor, Tensor]:
    """Full sequence with the CoT appended; returns (hidden states, CoT logits)."""
    vocab, bb = model.vocab, model.backbone
    seq = assemble_input(sample.image, sample.instruction_ids, bb)
    inputs = [vocab.bos_id] + list(sample.cot_ids)
    start, stop = seq.length, seq.length + len(inputs)
    cot_rows = ops.add(bb.tokens.embed(inputs), bb.tokens.positions(start, stop))
    x = ops.concat_rows([seq.embeddings, cot_rows])
    pads = [i for i, ok in enumerate(_valid_columns(sample.instruction_ids, model)) if not ok]
    mask = sequence_mask(seq.segments + [COT] * len(inputs), pads)
    h = run_blocks(x, mask, bb)
    logits = model.lm_head(ops.slice_rows(h, start, stop))
    return h, logits


def ar_cot_loss(batch: list[Sample], model: ARCoTModel, flow_rng: Rng) -> tuple[Tensor, float, float]:
    """Next-token CE + lambda_act * flow loss; returns (total, ce, act)."""
    ce_terms, h_vlms = [], []
    for s in batch:
        h, logits = teacher_forced_forward(s, model)
        ce_terms.append(cross_entropy_loss(logits, list(s.cot_ids) + [model.vocab.eos_id]))
        h_vlms.append(h)
    ce = ops.scale(ops.add_n(ce_terms), 1.0 / len(ce_terms))
    act = action_loss([s.actions for s in batch], [s.state for s in batch], h_vlms, model.dit, flow_rng)
    total = ops.add(ce, ops.scale(act, model.config.lambda_act))
    return total, ce.item(), act.item()


def train_ar_model(config: TrainConfig, samples: Sequence[Sample], vocab: Vocabulary, steps: int | None = None,
                   show_progress: bool = True) -> ARCoTModel:
    model = build_ar_model(config, vocab)
    opt = Adam(dict(model.named_parameters()), lr=config.lr)
    root = Rng(config.seed)
    data_rng, flow_rng = root.spawn(500), root.spawn(600)
    for step in tqdm(range(1, (config.steps if steps is None else steps) + 1), desc="train[ar_cot]",
                     disable=not show_progress):
        idx = data_rng.integers(0, len(samples), size=config.batch)
        opt.zero_grad()
        with Tape() as tape:
            total, ce, act = ar_cot_loss([samples[int(i)] for i in idx], model, flow_rng)
        if not math.isfinite(total.item()):
            raise TrainingError("Non-finite AR-CoT loss", step=step, components={"l_ce": ce, "l_act": act})
        backward(total, tape)
        opt.step()
        if step % config.log_every == 0:
            logger.info("ar step %d  ce %.4f  act %.4f", step, ce, act)
    return model


# ──────────────────────────────────────────────
# Cached inference
# ──────────────────────────────────────────────


@dataclass
class KVCache:
    keys: list[Tensor | None]
    values: list[Tensor | None]
    valid: list[bool] = field(default_factory=list)
    hidden: list[Tensor] = field(default_factory=list)

    @classmethod
    def empty(cls, n_blocks: int) -> "KVCache":
        return cls(keys=[None] * n_blocks, values=[None] * n_blocks)

    @property
    def length(self) -> int:
        return len(self.valid)


def _cached_mask(start: int, n_new: int, valid: list[bool]) -> np.ndarray:
    total = len(valid)
    cols = np.arange(total)
    rows = np.arange(start, start + n_new)[:, None]
    ok = np.asarray(valid, dtype=bool)[None, :]
    return (cols[None, :] <= rows) & (ok | (cols[None, :] == rows))


def cached_forward(x: Tensor, valid: Sequence[bool], cache: KVCache, backbone: BackboneParams) -> Tensor:
    """Run new rows ``x`` through every block against the cache; counts one backbone forward."""
    if x.shape[0] != len(valid):
        raise DimensionError(f"{x.shape[0]} new rows but {len(valid)} validity flags.")
    FORWARD_COUNTER.increment()
    start = cache.length
    cache.valid.extend(bool(v) for v in valid)
    mask = _cached_mask(start, x.shape[0], cache.valid)
    n_heads = backbone.config.n_heads
    for i, block in enumerate(backbone.blocks):
        h = block.ln1(x)
        k, v = block.attn.wk(h), block.attn.wv(h)
        cache.keys[i] = k if cache.keys[i] is None else ops.concat_rows([cache.keys[i], k])
        cache.values[i] = v if cache.values[i] is None else ops.concat_rows([cache.values[i], v])
        attn = scaled_dot_product_attention(block.attn.wq(h), cache.keys[i], cache.values[i], n_heads, mask)
        x = ops.add(x, block.attn.wo(attn))
        x = ops.add(x, block.ffn(block.ln2(x)))
    out = backbone.ln_f(x)
    cache.hidden.append(out)
    return out


def _token_row(token: int, position: int, backbone: BackboneParams) -> Tensor:
    return ops.add(backbone.tokens.embed([token]), backbone.tokens.positions(position, position + 1))


@dataclass
class ARCoTResult:
    actions: np.ndarray
    cot_ids: list[int]
    h_vlm: Tensor


def ar_cot_generate(image: np.ndarray, instruction_ids: Sequence[int], model: ARCoTModel,
                    k: int) -> tuple[list[int], Tensor]:
    """K greedy CoT tokens plus the conditioning forward; returns (tokens, H_VLM)."""
    if k < 0:
        raise ContractError(f"K must be >= 0, got {k}.")
    bb = model.backbone
    if model.prompt_len + 1 + k > bb.tokens.max_len:
        raise ContractError(f"K={k} exceeds the comparator's position table ({bb.tokens.max_len}).")
    seq = assemble_input(image, instruction_ids, bb)
    valid = _valid_columns(instruction_ids, model)
    cache = KVCache.empty(len(bb.blocks))
    if k == 0:
        h = cached_forward(seq.embeddings, valid, cache, bb)
        return [], h
    x = ops.concat_rows([seq.embeddings, _token_row(model.vocab.bos_id, seq.length, bb)])
    last = cached_forward(x, valid + [True], cache, bb)
    tokens: list[int] = []
    while True:
        logits = model.lm_head(ops.slice_rows(last, last.shape[0] - 1, last.shape[0]))
        tokens.append(int(np.argmax(logits.data[-1])))
        # The K-th feed is the conditioning forward.
        last = cached_forward(_token_row(tokens[-1], cache.length, bb), [True], cache, bb)
        if len(tokens) == k:
            break
    return tokens, ops.concat_rows(cache.hidden)


def ar_cot_step(image: np.ndarray, instruction_ids: Sequence[int], state: np.ndarray, model: ARCoTModel, k: int,
                rng: Rng, sampler: SamplerConfig | None = None) -> ARCoTResult:
    """One AR-CoT control step: K + 1 backbone forwards, then flow sampling."""
    tokens, h_vlm = ar_cot_generate(image, instruction_ids, model, k)
    cfg = sampler or SamplerConfig(model.config.sampler_steps)
    chunk = sample_actions(state, h_vlm, model.dit, cfg, rng)
    return ARCoTResult(actions=np.stack([clamp_action(a) for a in chunk]), cot_ids=tokens, h_vlm=h_vlm)


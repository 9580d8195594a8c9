"""
Prefix conditioning of the frozen decoder on the linguistic query states.

Decoder input rows are [proj(H_lin) (N rows), bos, y_1 .. y_{L-1}]. CE is
taken at the L text positions only. The decoder is frozen, so gradients
reach H_lin and the projector and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.errors import ContractError
from src.linguistic_cot.decoder import D_DEC, FrozenDecoderParams, decoder_logits, text_loss
from src.linguistic_cot.vocab import Vocabulary
from src.nn.module import Linear, Module

DEFAULT_DECODE_LEN = 64
# Long enough for a complete CoT string (about 80 pieces) within the decoder's positions.
FULL_DECODE_LEN = 100


@dataclass
class PrefixProjector(Module):
    proj: Linear

    @classmethod
    def init(cls, rng: Rng, d_vlm: int, d_dec: int = D_DEC) -> "PrefixProjector":
        return cls(proj=Linear.init(rng, d_vlm, d_dec))

    def __call__(self, h_lin: Tensor) -> Tensor:
        return self.proj(h_lin)


def _require_frozen(decoder: FrozenDecoderParams) -> None:
    if not decoder.is_frozen:
        raise ContractError("The CoT decoder must be frozen before prefix conditioning.")


def linguistic_loss(h_lin: Tensor, target_ids: Sequence[int], proj: PrefixProjector,
                    decoder: FrozenDecoderParams, vocab: Vocabulary) -> Tensor:
    """Mean CE of the CoT text (plus eos) given the projected prefix."""
    if len(target_ids) == 0:
        raise ContractError("linguistic_loss needs at least one target token.")
    _require_frozen(decoder)
    return text_loss(decoder, proj(h_lin), target_ids, vocab)


def greedy_decode(h_lin: Tensor, proj: PrefixProjector, decoder: FrozenDecoderParams, vocab: Vocabulary,
                  max_len: int = DEFAULT_DECODE_LEN) -> list[int]:
    """Argmax decoding from [prefix, bos] until eos or ``max_len`` tokens."""
    prefix = proj(h_lin.detach())
    limit = decoder.max_text_len(prefix.shape[0])
    if not 0 <= max_len <= limit:
        raise ContractError(f"max_len={max_len} outside [0, {limit}] for this decoder.")
    ids: list[int] = []
    inputs = [vocab.bos_id]
    while len(ids) < max_len:
        logits = decoder_logits(decoder, prefix, inputs)
        nxt = int(np.argmax(logits.data[-1]))
        if nxt == vocab.eos_id:
            break
        ids.append(nxt)
        inputs.append(nxt)
    return ids


def prefix_spread(prefixes: Sequence[np.ndarray]) -> float:
    """Mean per-dimension std of proj(H_lin) across episodes.

    Values near zero mean the linguistic latents have collapsed to a
    constant.
    """
    if len(prefixes) < 2:
        return 0.0
    stacked = np.stack([np.asarray(p).reshape(-1) for p in prefixes])
    return float(stacked.std(axis=0).mean())


@dataclass
class PrefixGap:
    true_prefix_ce: float
    zero_prefix_ce: float
    n: int

    @property
    def gap(self) -> float:
        return self.zero_prefix_ce - self.true_prefix_ce


def prefix_information_gap(h_lins: Sequence[Tensor], targets: Sequence[Sequence[int]], proj: PrefixProjector,
                           decoder: FrozenDecoderParams, vocab: Vocabulary) -> PrefixGap:
    """Paired CE with the true prefix versus an all-zero prefix."""
    true_ce, zero_ce = [], []
    for h, ids in zip(h_lins, targets):
        prefix = proj(h.detach())
        true_ce.append(text_loss(decoder, prefix, ids, vocab).item())
        zero_ce.append(text_loss(decoder, ops.constant(np.zeros(prefix.shape)), ids, vocab).item())
    n = len(true_ce)
    return PrefixGap(float(np.mean(true_ce)) if n else 0.0, float(np.mean(zero_ce)) if n else 0.0, n)

"""
Small causal text decoder, pretrained in-repo on the CoT corpus and then
frozen.

The decoder reads a sequence of input rows: optional prefix rows followed by
token embeddings, with learned absolute positions. Pretraining is plain
next-token CE with bos/eos. Each string sits behind ``null_prefix``, four
learned rows that are the same for every string, so the prefix slots exist
but carry nothing about the target. After freezing, the projector replaces
those rows with projections of the backbone's linguistic query states.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

from tqdm import tqdm

from src.autodiff import ops
from src.autodiff.losses import cross_entropy_loss
from src.autodiff.optim import Adam
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, Tensor, backward
from src.errors import ContractError, DimensionError, TrainingError
from src.linguistic_cot.vocab import Vocabulary
from src.nn.attention import causal_mask
from src.nn.blocks import TransformerBlockParams, transformer_block
from src.nn.embed import TokenEmbedder
from src.nn.module import LayerNorm, Linear, Module, normal_param

logger = logging.getLogger(__name__)

D_DEC = 32
N_DEC_BLOCKS = 2
N_DEC_HEADS = 4
N_PREFIX = 4
DECODER_MAX_LEN = 112
PERPLEXITY_TARGET = 1.5


@dataclass
class FrozenDecoderParams(Module):
    embed: TokenEmbedder
    blocks: list[TransformerBlockParams]
    ln_f: LayerNorm
    head: Linear
    null_prefix: Tensor

    @classmethod
    def init(cls, rng: Rng, vocab_size: int, d_model: int = D_DEC, n_blocks: int = N_DEC_BLOCKS,
             max_len: int = DECODER_MAX_LEN) -> "FrozenDecoderParams":
        return cls(
            embed=TokenEmbedder.init(rng, vocab_size, d_model, max_len),
            blocks=[TransformerBlockParams.init(rng, d_model) for _ in range(n_blocks)],
            ln_f=LayerNorm.init(d_model),
            head=Linear.init(rng, d_model, vocab_size),
            null_prefix=normal_param(rng, (N_PREFIX, d_model)),
        )

    @property
    def d_model(self) -> int:
        return self.embed.table.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.embed.vocab_size

    def max_text_len(self, n_prefix: int = N_PREFIX) -> int:
        """Longest CoT string (in tokens) that fits behind ``n_prefix`` rows and bos."""
        return self.embed.max_len - n_prefix - 1


def decoder_logits(decoder: FrozenDecoderParams, prefix: Tensor | None, input_ids: Sequence[int],
                   n_heads: int = N_DEC_HEADS) -> Tensor:
    """Logits [P + len(input_ids), V] for rows [prefix; embed(input_ids)]."""
    parts = []
    if prefix is not None:
        if prefix.shape[1] != decoder.d_model:
            raise DimensionError(f"Prefix width {prefix.shape[1]} != decoder width {decoder.d_model}.")
        parts.append(prefix)
    if input_ids:
        parts.append(decoder.embed.embed(input_ids))
    if not parts:
        raise ContractError("Decoder needs at least one input row.")
    x = ops.concat_rows(parts)
    length = x.shape[0]
    x = ops.add(x, decoder.embed.positions(0, length))
    mask = causal_mask(length)
    for block in decoder.blocks:
        x = transformer_block(x, block, mask, n_heads)
    return decoder.head(decoder.ln_f(x))


def teacher_forcing(cot_ids: Sequence[int], vocab: Vocabulary) -> tuple[list[int], list[int]]:
    """(inputs, targets): inputs = [bos, y_1..y_{L-1}], targets = y_1..y_L with y_L = eos."""
    targets = list(cot_ids) + [vocab.eos_id]
    inputs = [vocab.bos_id] + targets[:-1]
    return inputs, targets


def text_loss(decoder: FrozenDecoderParams, prefix: Tensor | None, cot_ids: Sequence[int],
              vocab: Vocabulary) -> Tensor:
    """Mean CE over the text positions only; prefix rows carry no loss."""
    inputs, targets = teacher_forcing(cot_ids, vocab)
    logits = decoder_logits(decoder, prefix, inputs)
    n_prefix = 0 if prefix is None else prefix.shape[0]
    return cross_entropy_loss(ops.slice_rows(logits, n_prefix, n_prefix + len(targets)), targets)


# ──────────────────────────────────────────────
# Pretraining
# ──────────────────────────────────────────────


@dataclass
class PretrainReport:
    steps: int
    final_loss: float
    heldout_perplexity: float
    n_heldout: int = 0
    target: float = PERPLEXITY_TARGET

    @property
    def passed(self) -> bool:
        return self.heldout_perplexity <= self.target

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"decoder pretraining {status}: held-out perplexity {self.heldout_perplexity:.4f} "
                f"over {self.n_heldout} strings (target <= {self.target}), {self.steps} steps, "
                f"final loss {self.final_loss:.4f}")

    def raise_if_failed(self) -> None:
        if not self.passed:
            raise TrainingError(self.summary())


def corpus_perplexity(decoder: FrozenDecoderParams, corpus: Sequence[Sequence[int]], vocab: Vocabulary) -> float:
    """exp of the token-weighted mean CE over ``corpus``, read behind the null prefix."""
    total, n_tokens = 0.0, 0
    for ids in corpus:
        loss = text_loss(decoder, decoder.null_prefix, ids, vocab).item()
        total += loss * (len(ids) + 1)
        n_tokens += len(ids) + 1
    return math.exp(total / max(n_tokens, 1))


def pretrain_decoder(
    corpus: Sequence[Sequence[int]],
    vocab: Vocabulary,
    heldout: Sequence[Sequence[int]],
    seed: int = 0,
    steps: int = 1500,
    batch: int = 16,
    lr: float = 3e-3,
    target: float = PERPLEXITY_TARGET,
    show_progress: bool = True,
) -> tuple[FrozenDecoderParams, PretrainReport]:
    """Next-token CE pretraining; returns the frozen decoder and its held-out report.

    Every string is read behind the decoder's own null prefix, so nothing
    about the target reaches the model except the tokens before it. The
    caller decides what to do with a failed report (see
    ``PretrainReport.raise_if_failed``).
    """
    if not corpus:
        raise ContractError("Decoder pretraining needs a non-empty CoT corpus.")
    if not heldout:
        raise ContractError("Decoder pretraining needs held-out CoT strings to score perplexity.")
    rng = Rng(seed)
    decoder = FrozenDecoderParams.init(rng.spawn(1), len(vocab))
    opt = Adam(dict(decoder.named_parameters()), lr=lr)
    order_rng = rng.spawn(3)

    loss_value = float("nan")
    for step in tqdm(range(1, steps + 1), desc="pretrain-decoder", disable=not show_progress):
        idx = order_rng.integers(0, len(corpus), size=batch)
        opt.zero_grad()
        with Tape() as tape:
            losses = [text_loss(decoder, decoder.null_prefix, corpus[i], vocab) for i in idx]
            loss = ops.scale(ops.add_n(losses), 1.0 / len(losses))
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise TrainingError("Decoder pretraining loss is not finite", step=step, components={"loss": loss_value})
        backward(loss, tape)
        opt.step()
        if step % 100 == 0:
            logger.info("pretrain step %d loss %.4f", step, loss_value)

    ppl = corpus_perplexity(decoder, heldout, vocab)
    decoder.freeze()
    report = PretrainReport(steps=steps, final_loss=loss_value, heldout_perplexity=ppl, n_heldout=len(heldout),
                            target=target)
    (logger.info if report.passed else logger.warning)(report.summary())
    return decoder, report

"""
Checkpoints in the shared tensor-archive container.

Tensor names:
    param.<name>     every model parameter, frozen decoder included
    adam.m.<name>    first moments (trainable parameters only)
    adam.v.<name>    second moments

Metadata: config, vocabulary, feature statistics, step, Adam step counts,
both random streams and the running data-order hash.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from src.autodiff.optim import Adam
from src.autodiff.rng import Rng
from src.errors import FormatError
from src.linguistic_cot.decoder import FrozenDecoderParams
from src.linguistic_cot.vocab import Vocabulary
from src.storage.container import read_tensor_archive, write_tensor_archive
from src.training.config import TrainConfig
from src.training.model import DualCoTModel, build_model
from src.world.depth_features import FeatureStats

logger = logging.getLogger(__name__)


@dataclass
class TrainerState:
    step: int = 0
    data_rng: Rng = field(default_factory=lambda: Rng(0))
    flow_rng: Rng = field(default_factory=lambda: Rng(1))
    data_order_hash: str = ""


def save_checkpoint(path: str | Path, model: DualCoTModel, optimizer: Adam | None = None,
                    state: TrainerState | None = None) -> None:
    tensors: dict[str, np.ndarray] = {f"param.{n}": p.data for n, p in model.named_parameters()}
    adam_t: dict[str, int] = {}
    if optimizer is not None:
        for name, st in optimizer.states.items():
            tensors[f"adam.m.{name}"] = st.m
            tensors[f"adam.v.{name}"] = st.v
            adam_t[name] = st.t
    meta: dict[str, Any] = {
        "kind": "dual_cot_policy",
        "config": model.config.to_dict(),
        "vocabulary": list(model.vocab.tokens),
        "feature_stats": model.feature_stats.to_dict(),
        "has_decoder": model.decoder is not None,
        "decoder_width": model.decoder.d_model if model.decoder is not None else None,
        "adam_t": adam_t,
    }
    if state is not None:
        meta.update(step=state.step, data_rng=state.data_rng.state(), flow_rng=state.flow_rng.state(),
                    data_order_hash=state.data_order_hash)
    write_tensor_archive(path, tensors, meta)
    logger.info("Saved checkpoint to %s", path)


def _assign(model_params: dict, tensors: dict[str, np.ndarray], prefix: str, path: Path) -> None:
    for name, p in model_params.items():
        key = f"{prefix}{name}"
        if key not in tensors:
            raise FormatError(f"Checkpoint {path} is missing tensor '{key}'")
        if tensors[key].shape != p.data.shape:
            raise FormatError(f"Tensor '{key}' has shape {tensors[key].shape}, model expects {p.data.shape}")
        p.data = tensors[key].copy()


def load_checkpoint(path: str | Path) -> tuple[DualCoTModel, dict[str, np.ndarray], dict[str, Any]]:
    """Rebuild the model from a checkpoint; returns (model, raw tensors, metadata)."""
    path = Path(path)
    tensors, meta = read_tensor_archive(path)
    if meta.get("kind") != "dual_cot_policy":
        raise FormatError(f"{path} is not a policy checkpoint (kind={meta.get('kind')!r})")
    config = TrainConfig.from_dict(meta["config"])
    vocab = Vocabulary(tokens=list(meta["vocabulary"]))
    decoder = None
    if meta.get("has_decoder"):
        decoder = decoder_from_tensors(tensors, vocab, "param.decoder.")
    model = build_model(config, vocab, decoder, FeatureStats.from_dict(meta["feature_stats"]))
    _assign({n: p for n, p in model.named_parameters() if not n.startswith("decoder.")}, tensors, "param.", path)
    return model, tensors, meta


def restore_training(model: DualCoTModel, optimizer: Adam, tensors: dict[str, np.ndarray],
                     meta: dict[str, Any]) -> TrainerState:
    for name, st in optimizer.states.items():
        if f"adam.m.{name}" not in tensors:
            raise FormatError(f"Checkpoint has no optimizer state for '{name}'")
        st.m = tensors[f"adam.m.{name}"].copy()
        st.v = tensors[f"adam.v.{name}"].copy()
        st.t = int(meta["adam_t"][name])
    return TrainerState(
        step=int(meta.get("step", 0)),
        data_rng=Rng.from_state(meta["data_rng"]),
        flow_rng=Rng.from_state(meta["flow_rng"]),
        data_order_hash=str(meta.get("data_order_hash", "")),
    )


# ──────────────────────────────────────────────
# Frozen decoder archives
# ──────────────────────────────────────────────


def save_decoder(path: str | Path, decoder: FrozenDecoderParams, vocab: Vocabulary,
                 report: dict[str, Any] | None = None) -> None:
    tensors = {f"decoder.{n}": p.data for n, p in decoder.named_parameters()}
    write_tensor_archive(path, tensors, {"kind": "frozen_decoder", "vocabulary": list(vocab.tokens),
                                         "report": report or {}})


def decoder_from_tensors(tensors: dict[str, np.ndarray], vocab: Vocabulary, prefix: str) -> FrozenDecoderParams:
    n_blocks = len({k[len(prefix):].split(".")[1] for k in tensors if k.startswith(f"{prefix}blocks.")})
    width = tensors[f"{prefix}embed.table"].shape[1]
    max_len = tensors[f"{prefix}embed.pos"].shape[0]
    decoder = FrozenDecoderParams.init(Rng(0), len(vocab), d_model=width, n_blocks=n_blocks, max_len=max_len)
    _assign(dict(decoder.named_parameters()), tensors, prefix, Path("<archive>"))
    decoder.freeze()
    return decoder


def load_decoder(path: str | Path) -> tuple[FrozenDecoderParams, Vocabulary]:
    tensors, meta = read_tensor_archive(path)
    if meta.get("kind") != "frozen_decoder":
        raise FormatError(f"{path} is not a decoder archive (kind={meta.get('kind')!r})")
    vocab = Vocabulary(tokens=list(meta["vocabulary"]))
    return decoder_from_tensors(tensors, vocab, "decoder."), vocab

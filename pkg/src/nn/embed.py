"""
Input embedders: image patches and word tokens.

Patches are read in raster order, so token k is patch
(k // (W/p), k % (W/p)); each patch flattens as p x p x 3 (row, column,
channel).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tensor
from src.errors import ConfigError, DimensionError, TokenIndexError
from src.nn.module import Linear, Module, normal_param


def image_to_patches(image: np.ndarray, patch: int) -> np.ndarray:
    """[H, W, 3] -> [(H/p)(W/p), 3 p^2] in raster order."""
    h, w, c = image.shape
    if h % patch or w % patch:
        raise ConfigError(f"Image {h}x{w} is not divisible by patch size {patch}.")
    gh, gw = h // patch, w // patch
    blocks = image.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * gw, patch * patch * c).astype(np.float64)


@dataclass
class PatchEmbedder(Module):
    """Linear patch projection plus a learned 2-D positional table."""

    proj: Linear
    pos: Tensor
    patch: int = 4
    grid: int = 8

    @classmethod
    def init(cls, rng: Rng, image_hw: int, patch: int, d_model: int) -> "PatchEmbedder":
        if image_hw % patch:
            raise ConfigError(f"Image size {image_hw} is not divisible by patch size {patch}.")
        grid = image_hw // patch
        return cls(
            proj=Linear.init(rng, 3 * patch * patch, d_model),
            pos=normal_param(rng, (grid * grid, d_model)),
            patch=patch,
            grid=grid,
        )

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid


def patchify(image: np.ndarray, embedder: PatchEmbedder) -> Tensor:
    """Embed an [H, W, 3] image in [0, 1] as [P, d] tokens."""
    patches = image_to_patches(np.asarray(image), embedder.patch)
    if patches.shape[0] != embedder.n_patches:
        raise DimensionError(f"Image gives {patches.shape[0]} patches; embedder expects {embedder.n_patches}.")
    tokens = embedder.proj(ops.constant(patches))
    return ops.add(tokens, embedder.pos)


@dataclass
class TokenEmbedder(Module):
    """Word embedding table [V, d] with a learned positional table [T_max, d]."""

    table: Tensor
    pos: Tensor

    @classmethod
    def init(cls, rng: Rng, vocab_size: int, d_model: int, max_len: int) -> "TokenEmbedder":
        return cls(table=normal_param(rng, (vocab_size, d_model)), pos=normal_param(rng, (max_len, d_model)))

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def max_len(self) -> int:
        return self.pos.shape[0]

    def embed(self, ids: Sequence[int]) -> Tensor:
        ids = list(ids)
        for i in ids:
            if not 0 <= i < self.vocab_size:
                raise TokenIndexError(f"Token id {i} outside [0, {self.vocab_size}).")
        return ops.take_rows(self.table, ids)

    def positions(self, start: int, stop: int) -> Tensor:
        if stop > self.max_len:
            raise DimensionError(f"Sequence length {stop} exceeds positional table size {self.max_len}.")
        return ops.slice_rows(self.pos, start, stop)

"""
Post-hoc depth probe on frozen visual query states.

A single linear map from the flattened H_vis (16 x d_VLM) to 64 patches of
4 x 4 depth values, fitted by Adam on MSE against the rendered depth.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from src.autodiff import ops
from src.autodiff.losses import mse_loss
from src.autodiff.optim import Adam
from src.autodiff.rng import Rng
from src.autodiff.tensor import Tape, Tensor, backward
from src.errors import DimensionError
from src.nn.module import Linear, Module
from src.storage.container import read_tensor_archive, write_tensor_archive
from src.world.depth_features import PATCH, depth_patches, patches_to_depth

logger = logging.getLogger(__name__)


@dataclass
class DepthProbe(Module):
    linear: Linear
    image_hw: int = 32

    @classmethod
    def init(cls, d_in: int, image_hw: int = 32) -> "DepthProbe":
        """Zero-initialised probe: decodes every input to a flat zero image."""
        return cls(linear=Linear.init(Rng(0), d_in, image_hw * image_hw, zero=True), image_hw=image_hw)

    def save(self, path: str | Path) -> None:
        tensors = {name: p.data for name, p in self.named_parameters()}
        write_tensor_archive(path, tensors, {"kind": "depth_probe", "image_hw": self.image_hw})

    @classmethod
    def load(cls, path: str | Path) -> "DepthProbe":
        tensors, meta = read_tensor_archive(path)
        w = tensors["linear.weight"]
        probe = cls.init(w.shape[0], int(meta.get("image_hw", 32)))
        probe.linear.weight.data = w
        probe.linear.bias.data = tensors["linear.bias"]
        return probe


def depth_targets(depth: np.ndarray) -> np.ndarray:
    """[hw, hw] depth -> [hw * hw] in patch-major order (the probe's output layout)."""
    return depth_patches(np.asarray(depth, dtype=np.float64), PATCH).reshape(-1)


def probe_decode(h_vis: Tensor | np.ndarray, probe: DepthProbe) -> np.ndarray:
    """Decode one H_vis to a [hw, hw] depth image clamped to [0, 1]."""
    flat = np.asarray(h_vis.data if isinstance(h_vis, Tensor) else h_vis, dtype=np.float64).reshape(1, -1)
    if flat.shape[1] != probe.linear.d_in:
        raise DimensionError(f"Probe expects {probe.linear.d_in} inputs, got {flat.shape[1]}.")
    out = probe.linear(ops.constant(flat)).data.reshape(-1)
    return np.clip(patches_to_depth(out, probe.image_hw, PATCH), 0.0, 1.0)


def train_probe(features: np.ndarray, depths: np.ndarray, steps: int = 2000, lr: float = 1e-3,
                batch: int = 64, seed: int = 0, show_progress: bool = True) -> DepthProbe:
    """Fit a probe on frozen ``features`` [n, 16 * d_VLM] against ``depths`` [n, hw, hw]."""
    x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    y = np.stack([depth_targets(d) for d in depths])
    probe = DepthProbe.init(x.shape[1], int(math.isqrt(y.shape[1])))
    opt = Adam(dict(probe.named_parameters()), lr=lr)
    rng = Rng(seed)
    for step in tqdm(range(1, steps + 1), desc="probe", disable=not show_progress):
        idx = rng.integers(0, len(x), size=min(batch, len(x)))
        opt.zero_grad()
        with Tape() as tape:
            loss = mse_loss(probe.linear(ops.constant(x[idx])), ops.constant(y[idx]))
        backward(loss, tape)
        opt.step()
        if step % 500 == 0:
            logger.info("probe step %d mse %.5f", step, loss.item())
    return probe


@dataclass
class ProbeReport:
    mse: float
    pearson_r: float
    n: int


def evaluate_probe(probe: DepthProbe, features: np.ndarray, depths: np.ndarray) -> ProbeReport:
    preds = np.stack([probe_decode(f, probe) for f in features]).reshape(-1)
    truth = np.asarray(depths, dtype=np.float64).reshape(-1)
    mse = float(np.mean((preds - truth) ** 2))
    if preds.std() < 1e-12 or truth.std() < 1e-12:
        r = 0.0
    else:
        r = float(np.corrcoef(preds, truth)[0, 1])
    return ProbeReport(mse=mse, pearson_r=r, n=len(features))

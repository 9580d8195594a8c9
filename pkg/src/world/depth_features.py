"""
Analytic depth-feature teacher.

Each 4 x 4 depth patch becomes a fixed 16-dim descriptor:

    [mean, min, max, std,                  # 4
     occupancy (fraction > 0.05),          # 1
     mean horizontal gradient,             # 1
     mean vertical gradient,               # 1
     8-bin soft histogram,                 # 8  triangular kernel, centres b/7
     1]                                    # 1

The histogram weights of a value v are max(0, 1 - |7v - b|) for b = 0..7;
they sum to 1 for every v in [0, 1], so each patch histogram sums to 1.
There are no parameters: the teacher is frozen by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.errors import ContractError, DimensionError

PATCH = 4
D_FEATURES = 16
N_BINS = 8
OCCUPANCY_THRESHOLD = 0.05

FEATURE_NAMES = (
    ["mean", "min", "max", "std", "occupancy", "grad_x", "grad_y"]
    + [f"hist_{b}" for b in range(N_BINS)]
    + ["bias"]
)


def depth_patches(depth: np.ndarray, patch: int = PATCH) -> np.ndarray:
    """[N, N] -> [P, patch, patch] in raster order."""
    h, w = depth.shape
    if h % patch or w % patch:
        raise DimensionError(f"Depth map {h}x{w} is not divisible by patch size {patch}.")
    gh, gw = h // patch, w // patch
    return depth.reshape(gh, patch, gw, patch).transpose(0, 2, 1, 3).reshape(gh * gw, patch, patch)


def patches_to_depth(patches: np.ndarray, image_hw: int, patch: int = PATCH) -> np.ndarray:
    """Inverse of ``depth_patches`` for [P, patch * patch] rows."""
    g = image_hw // patch
    return patches.reshape(g, g, patch, patch).transpose(0, 2, 1, 3).reshape(image_hw, image_hw)


def soft_histogram(values: np.ndarray) -> np.ndarray:
    """[..., k] values -> [..., 8] mean triangular-kernel weights."""
    centres = np.arange(N_BINS)
    w = np.maximum(0.0, 1.0 - np.abs(values[..., None] * (N_BINS - 1) - centres))
    return w.mean(axis=-2)


def teacher_features(depth: np.ndarray) -> np.ndarray:
    """[32, 32] depth in [0, 1] -> [64, 16] descriptors."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.min() < 0.0 or depth.max() > 1.0:
        raise ContractError("Depth values must lie in [0, 1].")
    p = depth_patches(depth)
    flat = p.reshape(p.shape[0], -1)
    stats = np.stack(
        [
            flat.mean(axis=1),
            flat.min(axis=1),
            flat.max(axis=1),
            flat.std(axis=1),
            (flat > OCCUPANCY_THRESHOLD).mean(axis=1),
            (p[:, :, 1:] - p[:, :, :-1]).mean(axis=(1, 2)),
            (p[:, 1:, :] - p[:, :-1, :]).mean(axis=(1, 2)),
        ],
        axis=1,
    )
    hist = soft_histogram(flat)
    bias = np.ones((p.shape[0], 1))
    return np.concatenate([stats, hist, bias], axis=1)


@dataclass
class FeatureStats:
    """Per-dimension standardisation fitted on the training set."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureStats":
        """``features``: [n, P, 16] or [n * P, 16]."""
        rows = np.asarray(features).reshape(-1, D_FEATURES)
        std = rows.std(axis=0)
        std = np.where(std < 1e-8, 1.0, std)
        return cls(mean=rows.mean(axis=0), std=std)

    @classmethod
    def identity(cls) -> "FeatureStats":
        return cls(mean=np.zeros(D_FEATURES), std=np.ones(D_FEATURES))

    def normalise(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def to_dict(self) -> dict[str, list[float]]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, list[float]]) -> "FeatureStats":
        return cls(mean=np.asarray(data["mean"], dtype=np.float64), std=np.asarray(data["std"], dtype=np.float64))

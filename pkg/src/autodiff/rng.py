"""
Seeded pseudo-random streams.

SplitMix64 in counter form: the k-th output of a stream with seed s is

    z = s + (k + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Uniforms are the top 53 bits scaled by 2**-53. Normals use Box-Muller on
consecutive uniform pairs (u1, u2): sqrt(-2 ln(1 - u1)) * cos(2 pi u2), and
the sine branch for the second value of the pair. Because the stream is a
pure function of (seed, counter), its state is two integers and can be
checkpointed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


def _splitmix(seed: int, start: int, n: int) -> np.ndarray:
    """Return outputs start..start+n-1 of the stream as uint64."""
    counters = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + counters * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


@dataclass
class Rng:
    """Deterministic random stream; ``counter`` counts 64-bit draws so far."""

    seed: int
    counter: int = 0

    def next_u64(self, n: int) -> np.ndarray:
        out = _splitmix(self.seed, self.counter, n)
        self.counter += n
        return out

    def uniform(self, shape: int | tuple[int, ...] = (), low: float = 0.0, high: float = 1.0) -> np.ndarray | float:
        shape_t = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape_t)) if shape_t else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        u = low + (high - low) * u
        if not shape_t:
            return float(u[0])
        return u.reshape(shape_t)

    def normal(self, shape: int | tuple[int, ...] = (), std: float = 1.0) -> np.ndarray | float:
        shape_t = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape_t)) if shape_t else 1
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        z = z[:n] * std
        if not shape_t:
            return float(z[0])
        return z.reshape(shape_t)

    def integers(self, low: int, high: int, size: int | None = None) -> np.ndarray | int:
        """Uniform integers in [low, high)."""
        if high <= low:
            raise ValueError(f"Empty integer range [{low}, {high}).")
        n = 1 if size is None else size
        span = high - low
        draws = np.floor(self.uniform(n) * span).astype(np.int64) + low
        draws = np.minimum(draws, high - 1)
        if size is None:
            return int(draws[0])
        return draws

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform(n)
        return np.argsort(keys, kind="stable")

    def spawn(self, stream: int) -> "Rng":
        """Child stream whose seed is derived from this stream's seed."""
        child_seed = int(_splitmix(self.seed ^ ((stream * GAMMA) & MASK64), 0, 1)[0])
        return Rng(seed=child_seed)

    def state(self) -> dict[str, int]:
        return {"seed": self.seed, "counter": self.counter}

    @classmethod
    def from_state(cls, state: dict[str, int]) -> "Rng":
        return cls(seed=int(state["seed"]), counter=int(state["counter"]))

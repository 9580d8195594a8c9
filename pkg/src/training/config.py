"""
Training configuration.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys are
the TrainConfig field names. CLI ``--set key=value`` overrides use the same
parser.

The loss weights 0.1 / 0.1 / 1.0 and the action window of 7 match the
full-scale recipe. Its learning rate (2.5e-5) is tuned for a
multi-billion-parameter backbone; the desk-scale default is 1e-3.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterable

from src.errors import ConfigError

FULL_SCALE_LR = 2.5e-5
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class TrainConfig:
    lambda_vis: float = 0.1
    lambda_lin: float = 0.1
    lambda_act: float = 1.0
    lr: float = 1e-3
    batch: int = 16
    steps: int = 2000
    horizon: int = 7
    seed: int = 0
    data: str = "data/desk.bin"
    decoder: str = ""
    out_dir: str = "runs/desk"
    use_visual_cot: bool = True
    use_linguistic_cot: bool = True
    checkpoint_every: int = 500
    log_every: int = 50
    d_model: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    n_vis_queries: int = 16
    n_lin_queries: int = 4
    sampler_steps: int = 10
    decoder_steps: int = 1500
    decoder_lr: float = 3e-3
    decoder_ppl_target: float = 1.5

    def __post_init__(self) -> None:
        for name in ("lambda_vis", "lambda_lin", "lambda_act"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}.")
        for name in ("batch", "horizon", "sampler_steps", "checkpoint_every", "log_every", "d_model", "n_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}.")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}.")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}.")
        if self.decoder_ppl_target < 1.0:
            raise ConfigError(f"decoder_ppl_target must be >= 1, got {self.decoder_ppl_target}.")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}.")

    @property
    def variant(self) -> str:
        return variant_name(self.use_visual_cot, self.use_linguistic_cot)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def variant_name(visual: bool, linguistic: bool) -> str:
    return {(True, True): "dual_cot", (True, False): "visual_cot",
            (False, True): "linguistic_cot", (False, False): "no_cot"}[(visual, linguistic)]


def _coerce(key: str, raw: str, kind: Any) -> Any:
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"Bad value for '{key}': {e}") from e
    return raw


def parse_assignments(lines: Iterable[str], source: str = "config") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = text.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def apply_overrides(config: TrainConfig, assignments: dict[str, str] | Iterable[str]) -> TrainConfig:
    if not isinstance(assignments, dict):
        assignments = parse_assignments(assignments, "--set")
    types = {f.name: f.type for f in fields(TrainConfig)}
    unknown = sorted(set(assignments) - set(types))
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
    updates = {k: _coerce(k, v, types[k]) for k, v in assignments.items()}
    return replace(config, **updates)


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> TrainConfig:
    config = TrainConfig()
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"Config file not found: {p}")
        config = apply_overrides(config, parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
    return apply_overrides(config, list(overrides))


def dump_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

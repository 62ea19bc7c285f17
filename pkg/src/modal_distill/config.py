"""Run configuration: defaults, validation, key=value files, and overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .graph_distill import EDGE_MODES

MODES = ("aligned", "unaligned")


@dataclass
class TrainConfig:
    d: int = 32                   # common feature dim after shallow encoding
    lambda1: float = 0.1          # decoupling loss weight
    lambda2: float = 0.05         # distillation loss weight
    gamma: float = 0.1            # margin+orthogonality weight inside decoupling
    alpha: float = 0.2            # cosine margin
    batch_size: int = 16
    epochs: int = 30
    max_steps: int = 0            # 0 = run all epochs; otherwise stop after N steps
    lr: float = 2e-3
    lr_schedule: str = "cosine"   # cosine decay to zero, or "constant"
    seed: int = 0
    fd: bool = True               # feature decoupling
    homogd: bool = True           # distillation over the shared space
    ca: bool = True               # crossmodal attention reinforcement
    heterogd: bool = True         # distillation over reinforced private features
    mode: str = "unaligned"
    heads: int = 4
    ca_layers: int = 1
    conv_width: int = 3
    edge_mode: str = "squared"
    detach_teacher: bool = True   # debug escape hatch; training semantics need True
    data_manifest: str = ""       # empty = caller supplies samples directly
    out_dir: str = ""             # empty = keep everything in memory, write no artifacts

    def validate(self) -> None:
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.gamma < 0:
            raise ConfigError("lambda1, lambda2, gamma must all be >= 0")
        if not (0 < self.alpha < 2):
            raise ConfigError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1 and self.max_steps < 1:
            raise ConfigError("need epochs >= 1 or a positive max_steps")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.edge_mode not in EDGE_MODES:
            raise ConfigError(f"edge_mode must be one of {EDGE_MODES}, got {self.edge_mode!r}")
        if self.conv_width % 2 == 0 or self.conv_width < 1:
            raise ConfigError(f"conv_width must be odd and positive, got {self.conv_width}")
        if self.ca_layers < 1:
            raise ConfigError(f"ca_layers must be >= 1, got {self.ca_layers}")
        # downstream stages consume decoupled features, so they imply fd;
        # mirrors the ablation grid, which never enables them without it
        for name in ("homogd", "ca", "heterogd"):
            if getattr(self, name) and not self.fd:
                raise ConfigError(f"{name} requires fd (no decoupled features without it)")


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def _coerce(name: str, kind: type, raw: str):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in _BOOL_WORDS:
            raise ConfigError(f"config key {name}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {name}: expected {kind.__name__}, got {raw!r}")


def _field_types() -> dict[str, type]:
    return {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}


def apply_overrides(config: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    """Set fields from string values, with type coercion and name checking."""
    types = _field_types()
    for key, raw in overrides.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _coerce(key, types[key], str(raw)))
    return config


def load_config(path: str | Path) -> TrainConfig:
    """Read a key=value file (one pair per line, # comments allowed)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    overrides: dict[str, str] = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{p}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        overrides[key.strip()] = value
    return apply_overrides(TrainConfig(), overrides)

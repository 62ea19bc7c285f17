"""Versioned npz checkpoints: parameter arrays plus a JSON metadata block."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import DataError
from .tensor import Tensor

FORMAT_VERSION = 1
_META_KEY = "__meta__"
_PARAM_PREFIX = "param/"


def save_checkpoint(path: str | Path, params: dict[str, Tensor],
                    config: TrainConfig, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "extra": extra or {},
    }
    arrays = {_PARAM_PREFIX + name: np.asarray(t.data) for name, t in params.items()}
    arrays[_META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)
    # np.savez appends .npz when missing; keep the caller's path authoritative
    written = path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")
    if written != path:
        written.rename(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], TrainConfig, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as bundle:
        if _META_KEY not in bundle:
            raise DataError(f"checkpoint {path} has no metadata block")
        meta = json.loads(str(bundle[_META_KEY]))
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise DataError(f"checkpoint {path}: unsupported format version {version}")
        params = {key[len(_PARAM_PREFIX):]: bundle[key]
                  for key in bundle.files if key.startswith(_PARAM_PREFIX)}
    config = TrainConfig(**meta["config"])
    config.validate()
    return params, config, meta.get("extra", {})

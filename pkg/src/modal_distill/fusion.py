"""Adaptive fusion of the six pooled streams and the regression head.

Each stream (three shared-space, three reinforced private) is scaled by its
own scalar sigmoid gate, everything is concatenated, and a small two-layer
head regresses the sentiment score.  Class views of a score are derived, not
predicted: a 7-bin rounding and a negative / non-negative split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LABEL_MAX, LABEL_MIN, MODALITIES, Modality
from .errors import ConfigError, DataError, ShapeError
from .layers import Linear, TwoLayer
from .tensor import Tensor, absolute, concat, mul, reshape, sigmoid


def bin7(score: float) -> int:
    """Nearest sentiment bin: round half away from zero, clamped to [-3, 3]."""
    rounded = np.sign(score) * np.floor(abs(score) + 0.5)
    return int(np.clip(rounded, -3, 3))


def non_negative(score: float) -> bool:
    return score >= 0.0


@dataclass(frozen=True)
class Prediction:
    score: float
    class7: int
    positive_class: bool

    @classmethod
    def from_score(cls, score: float) -> "Prediction":
        return cls(score=float(score), class7=bin7(score),
                   positive_class=non_negative(score))


class FusionHead:
    """Six gated streams -> concatenation -> two-layer regression head."""

    def __init__(self, rng: np.random.Generator, d: int):
        self.dim = d
        self.homo_gates = {m: Linear(rng, d, 1) for m in MODALITIES}
        self.hetero_gates = {m: Linear(rng, 2 * d, 1) for m in MODALITIES}
        self.head = TwoLayer(rng, 9 * d, d, 1)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for m in MODALITIES:
            out.update(self.homo_gates[m].parameters(f"fusion.gate_homo.{m.tag}"))
            out.update(self.hetero_gates[m].parameters(f"fusion.gate_hetero.{m.tag}"))
        out.update(self.head.parameters("fusion.head"))
        return out

    def _gated(self, stream: Tensor, gate: Linear) -> Tensor:
        k = stream.shape[0]
        pre = reshape(gate(reshape(stream, (1, k))), ())
        return mul(stream, sigmoid(pre))

    def fuse(self, homo: dict[Modality, Tensor],
             hetero: dict[Modality, Tensor]) -> Tensor:
        """Concatenate gated streams in (homo L,V,A, hetero L,V,A) order."""
        parts = []
        for m in MODALITIES:
            if homo[m].shape != (self.dim,):
                raise ShapeError(f"fuse: homo {m.tag} stream must be [{self.dim}], got {homo[m].shape}")
            parts.append(self._gated(homo[m], self.homo_gates[m]))
        for m in MODALITIES:
            if hetero[m].shape != (2 * self.dim,):
                raise ShapeError(f"fuse: hetero {m.tag} stream must be [{2 * self.dim}], got {hetero[m].shape}")
            parts.append(self._gated(hetero[m], self.hetero_gates[m]))
        return concat(parts, axis=0)

    def predict(self, fused: Tensor) -> Tensor:
        return reshape(self.head(reshape(fused, (1, 9 * self.dim))), ())

    def __call__(self, homo: dict[Modality, Tensor],
                 hetero: dict[Modality, Tensor]) -> Tensor:
        return self.predict(self.fuse(homo, hetero))


# ---- objectives ----


def task_loss(preds: list[Tensor], labels: np.ndarray) -> Tensor:
    """Mean absolute error over the batch."""
    if len(preds) != len(labels) or not preds:
        raise ShapeError(f"task_loss: {len(preds)} predictions vs {len(labels)} labels")
    for y in labels:
        if not (LABEL_MIN <= y <= LABEL_MAX):
            raise DataError(f"label {y} outside [{LABEL_MIN}, {LABEL_MAX}]")
    total = None
    for p, y in zip(preds, labels):
        err = absolute(p - float(y))
        total = err if total is None else total + err
    return total * (1.0 / len(preds))


def total_loss(task: Tensor | float, dec: Tensor | float, dtl_homo: Tensor | float,
               dtl_hetero: Tensor | float, lambda1: float, lambda2: float) -> Tensor:
    """Full objective: task + λ1·decoupling + λ2·(both distillation terms)."""
    if lambda1 < 0 or lambda2 < 0:
        raise ConfigError(f"loss weights must be >= 0, got λ1={lambda1}, λ2={lambda2}")
    task = task if isinstance(task, Tensor) else Tensor(task)
    return task + lambda1 * dec + lambda2 * (dtl_homo + dtl_hetero)


# ---- prediction dump ----

PREDICTION_COLUMNS = ["sample_id", "score", "class7", "class2", "label", "label7", "label2"]


def _class2_name(flag: bool) -> str:
    return "non-negative" if flag else "negative"


def write_predictions(path: str | Path, ids: list[str], scores: list[float],
                      labels: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for sid, score, label in zip(ids, scores, labels):
            pred = Prediction.from_score(score)
            writer.writerow([
                sid, f"{score:.17g}", pred.class7, _class2_name(pred.positive_class),
                f"{label:.17g}", bin7(label), _class2_name(non_negative(label)),
            ])

"""Feature decoupling: shallow temporal encoding, shared/private encoders,
self-regression decoders, and the four decoupling losses.

The shared encoder is one parameter set applied to all three modalities, so
its outputs live in a common (modality-irrelevant) space; each modality owns
a private encoder/decoder pair for the modality-exclusive remainder.
"""

from __future__ import annotations

import logging

import numpy as np
from dataclasses import dataclass

from .data import MODALITIES, Modality
from .errors import ConfigError, ShapeError
from .layers import Linear, TwoLayer, xavier_uniform
from .tensor import (
    Tensor,
    clamp_min,
    concat,
    conv1d,
    cosine,
    div,
    frobenius_sq,
    matmul,
    mean_pool_time,
    mul,
    relu,
    sqrt,
    stack_rows,
    take_rc,
    tmean,
    tsum,
)

log = logging.getLogger(__name__)


@dataclass
class DecoupledPair:
    """Shared-space and private-space views of one modality sequence."""

    homo: Tensor            # [T, d]
    hetero: Tensor          # [T, d]
    homo_pooled: Tensor     # [d]
    hetero_pooled: Tensor   # [d]


class Decoupler:
    """Shallow conv encoders plus the shared/private decoupling stack.

    Encoders are position-wise two-layer nets with hidden width 2d, wide
    enough to represent the exact identity map (needed by the
    reconstruction sanity tests); decoders map the concatenated pair back
    to the pre-decoupling space.
    """

    def __init__(self, rng: np.random.Generator, raw_dims: dict[Modality, int],
                 d: int, conv_width: int = 3):
        if d < 1:
            raise ConfigError(f"common feature dim must be >= 1, got {d}")
        if conv_width % 2 == 0:
            raise ConfigError(f"shallow conv width must be odd, got {conv_width}")
        self.common_dim = d
        self.raw_dims = dict(raw_dims)
        self.shallow_kernel = {}
        self.shallow_bias = {}
        for m in MODALITIES:
            d_raw = raw_dims[m]
            k = xavier_uniform(rng, conv_width * d_raw, d, shape=(conv_width, d_raw, d))
            self.shallow_kernel[m] = Tensor(k, requires_grad=True)
            b = rng.uniform(-1.0, 1.0, size=d) / np.sqrt(conv_width * d_raw)
            self.shallow_bias[m] = Tensor(b, requires_grad=True)
        self.shared_encoder = TwoLayer(rng, d, 2 * d, d)
        self.private_encoders = {m: TwoLayer(rng, d, 2 * d, d) for m in MODALITIES}
        self.decoders = {m: TwoLayer(rng, 2 * d, d, d) for m in MODALITIES}

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for m in MODALITIES:
            params[f"shallow.{m.tag}.kernel"] = self.shallow_kernel[m]
            params[f"shallow.{m.tag}.bias"] = self.shallow_bias[m]
            params.update(self.private_encoders[m].parameters(f"private_encoder.{m.tag}"))
            params.update(self.decoders[m].parameters(f"decoder.{m.tag}"))
        params.update(self.shared_encoder.parameters("shared_encoder"))
        return params

    def shallow_encode(self, features: Tensor, modality: Modality) -> Tensor:
        """Project a raw [T, d_raw] sequence into the common dim via temporal conv."""
        expected = self.raw_dims[modality]
        if features.ndim != 2 or features.shape[1] != expected:
            raise ConfigError(
                f"shallow_encode({modality.tag}): expected [T, {expected}], got {features.shape}")
        return conv1d(features, self.shallow_kernel[modality], self.shallow_bias[modality])

    def decouple(self, x_tilde: Tensor, modality: Modality) -> DecoupledPair:
        if modality not in self.private_encoders:
            raise ConfigError(f"unknown modality {modality!r}")
        if x_tilde.ndim != 2 or x_tilde.shape[1] != self.common_dim:
            raise ShapeError(
                f"decouple({modality.tag}): expected [T, {self.common_dim}], got {x_tilde.shape}")
        homo = self.shared_encoder(x_tilde)
        hetero = self.private_encoders[modality](x_tilde)
        return DecoupledPair(
            homo=homo,
            hetero=hetero,
            homo_pooled=mean_pool_time(homo),
            hetero_pooled=mean_pool_time(hetero),
        )

    def reconstruct(self, pair: DecoupledPair, modality: Modality) -> Tensor:
        """Decode [homo, hetero] back toward the pre-decoupling sequence."""
        return self.decoders[modality](concat([pair.homo, pair.hetero], axis=1))

    def reencode_private(self, recon: Tensor, modality: Modality) -> Tensor:
        return self.private_encoders[modality](recon)


# ---- losses ----


def loss_rec(x_tilde: Tensor, recon: Tensor) -> Tensor:
    """Squared Frobenius distance between input and its reconstruction."""
    if x_tilde.shape != recon.shape:
        raise ShapeError(f"loss_rec: shapes {x_tilde.shape} vs {recon.shape}")
    return frobenius_sq(x_tilde - recon)


def loss_cyc(hetero: Tensor, reencoded: Tensor) -> Tensor:
    """Squared Frobenius distance between private features and their
    re-encoding from the reconstruction."""
    if hetero.shape != reencoded.shape:
        raise ShapeError(f"loss_cyc: shapes {hetero.shape} vs {reencoded.shape}")
    return frobenius_sq(hetero - reencoded)


MarginItem = tuple[Tensor, Modality, int]


def margin_triplets(tags: list[tuple[Modality, int]]) -> list[tuple[int, int, int]]:
    """All (anchor i, cross-modal positive j, same-modal negative k) index
    triples: j shares the anchor's class from another modality, k shares the
    anchor's modality with another class."""
    out = []
    n = len(tags)
    for i in range(n):
        m_i, c_i = tags[i]
        js = [j for j in range(n) if tags[j][0] != m_i and tags[j][1] == c_i]
        ks = [k for k in range(n) if tags[k][0] == m_i and tags[k][1] != c_i]
        out.extend((i, j, k) for j in js for k in ks)
    return out


def loss_margin(items: list[MarginItem], alpha: float) -> tuple[Tensor, int]:
    """Hinge over all valid triplets: mean of max(0, α − cos(i,j) + cos(i,k)).

    Returns the loss and the triplet count; an empty triplet set yields 0
    with a warning so a degenerate minibatch cannot crash training.
    """
    triplets = margin_triplets([(m, c) for _, m, c in items])
    if not triplets:
        log.warning("margin loss: no valid triplets in batch of %d items", len(items))
        return Tensor(0.0), 0
    x = stack_rows([vec for vec, _, _ in items])
    norms = sqrt(clamp_min(tsum(mul(x, x), axis=1, keepdims=True), 1e-24))
    xn = div(x, norms)
    cos = matmul(xn, xn.T)
    ii = np.array([t[0] for t in triplets])
    jj = np.array([t[1] for t in triplets])
    kk = np.array([t[2] for t in triplets])
    cos_ij = take_rc(cos, ii, jj)
    cos_ik = take_rc(cos, ii, kk)
    hinge = relu(alpha - cos_ij + cos_ik)
    return tmean(hinge), len(triplets)


def loss_ort(pairs: dict[Modality, DecoupledPair]) -> Tensor:
    """Sum over modalities of cos(pooled shared, pooled private)."""
    total = None
    for m in MODALITIES:
        c = cosine(pairs[m].homo_pooled, pairs[m].hetero_pooled)
        total = c if total is None else total + c
    return total


def loss_dec(rec: Tensor | float, cyc: Tensor | float, margin: Tensor | float,
             ort: Tensor | float, gamma: float) -> Tensor:
    """Combined decoupling objective: rec + cyc + γ(margin + ort)."""
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    rec = rec if isinstance(rec, Tensor) else Tensor(rec)
    return rec + cyc + gamma * (margin + ort)

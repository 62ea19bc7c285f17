"""Dataset handling: synthetic generation, CSV ingestion, batching.

The synthetic generator is the ground-truth oracle for every representation
test in the suite.  Each sample is built from an explicit shared latent z_c
(which alone determines the label) and per-modality private latents z_m, so
tests can check directly whether a learned space recovers shared or private
structure.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

LABEL_MIN = -3.0
LABEL_MAX = 3.0


class Modality(Enum):
    LANGUAGE = "L"
    VISION = "V"
    AUDIO = "A"

    @property
    def tag(self) -> str:
        return self.value


MODALITIES = (Modality.LANGUAGE, Modality.VISION, Modality.AUDIO)

RAW_DIMS = {Modality.LANGUAGE: 300, Modality.VISION: 35, Modality.AUDIO: 74}


@dataclass
class ModalitySequence:
    modality: Modality
    features: np.ndarray  # time-major [T, d]

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Latents:
    """Generator-side record of the true factors behind one sample."""

    z_shared: np.ndarray
    z_private: dict[Modality, np.ndarray]


@dataclass
class Sample:
    id: str
    sequences: dict[Modality, ModalitySequence]
    label: float
    latents: Latents | None = None


def _gain_dict(l: float, v: float, a: float) -> dict[Modality, float]:
    return {Modality.LANGUAGE: l, Modality.VISION: v, Modality.AUDIO: a}


def _range_dict(l, v, a) -> dict[Modality, tuple]:
    return {Modality.LANGUAGE: l, Modality.VISION: v, Modality.AUDIO: a}


@dataclass
class SyntheticConfig:
    """Knobs for the synthetic world.

    The label lives on a single coordinate of the shared latent (class index
    plus a small within-bin jitter), and each class also owns a fixed offset
    in the label-free subspace.  Every modality observes the label coordinate
    through its own per-sample noise, language with the most, so an accurate
    regressor has to average the class estimate across the modalities.
    Vision's and audio's shared content additionally enters each time step
    through a randomly chosen multiplier from ``shared_phase`` (a zero-mean,
    magnitude-asymmetric set), so temporal averaging reduces it to a noisy
    coin-flip of its sign; recovering it requires a per-step nonlinearity
    before pooling.
    """

    raw_dims: dict[Modality, int] = field(default_factory=lambda: dict(RAW_DIMS))
    z_shared_dim: int = 8
    z_private_dim: int = 8
    length_ranges: dict[Modality, tuple[int, int]] = field(
        default_factory=lambda: _range_dict((8, 16), (6, 12), (10, 20)))
    shared_gain: dict[Modality, float] = field(
        default_factory=lambda: _gain_dict(1.0, 1.0, 1.0))
    # per-modality gain on the label coordinate of z_c inside the emission;
    # 0 hides the label from that modality entirely.  Vision and audio get a
    # stronger coordinate so the phase-scrambled signal stays learnable
    label_gain: dict[Modality, float] = field(
        default_factory=lambda: _gain_dict(1.0, 2.0, 2.0))
    # std of the per-sample noise each modality adds to its view of the label
    # coordinate; independent across modalities, so every modality's view
    # keeps positive marginal value for the regression
    class_view_noise: dict[Modality, float] = field(
        default_factory=lambda: _gain_dict(0.30, 0.20, 0.20))
    # per-step multipliers on the shared component, one drawn uniformly per
    # time step; a zero-mean set with unequal magnitudes such as
    # (2, -1, -1) makes the temporal mean of the shared content a coin flip
    # (its sign is unrecoverable by averaging) while per-step magnitudes stay
    # strong and sign-asymmetric, so rectifying encoders can still read it
    shared_phase: dict[Modality, tuple[float, ...]] = field(
        default_factory=lambda: _range_dict(
            (1.0,), (2.0, -1.0, -1.0), (2.0, -1.0, -1.0)))
    private_gain: dict[Modality, float] = field(
        default_factory=lambda: _gain_dict(0.6, 1.0, 1.0))
    # norm of a fixed per-modality bias added to every time step, standing in
    # for the different operating points of real feature extractors; off by
    # default because it slows shared-content learning
    modality_mean: dict[Modality, float] = field(
        default_factory=lambda: _gain_dict(0.0, 0.0, 0.0))
    noise: dict[Modality, float] = field(
        default_factory=lambda: _gain_dict(0.05, 0.15, 0.10))
    label_scale: float = 1.0
    # half-width of the within-bin label jitter; must stay below 0.5 so the
    # 7-class bin of the label is always the drawn class index
    label_jitter: float = 0.15
    class_offset_scale: float = 1.0
    within_class_spread: float = 0.35
    map_seed: int = 7

    def validate(self) -> None:
        for m in MODALITIES:
            if self.raw_dims.get(m, 0) < 1:
                raise ConfigError(f"raw feature dim for {m.tag} must be >= 1")
            lo, hi = self.length_ranges[m]
            if not (1 <= lo <= hi):
                raise ConfigError(f"length range for {m.tag} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
            if self.noise[m] < 0:
                raise ConfigError(f"noise scale for {m.tag} must be >= 0")
            if len(self.shared_phase[m]) < 1:
                raise ConfigError(f"shared_phase for {m.tag} needs at least one multiplier")
            if self.class_view_noise[m] < 0:
                raise ConfigError(f"class_view_noise for {m.tag} must be >= 0")
        if self.z_shared_dim < 2 or self.z_private_dim < 1:
            raise ConfigError("latent dims too small: need z_shared_dim >= 2, z_private_dim >= 1")
        if self.label_scale <= 0:
            raise ConfigError("label_scale must be positive")
        if not (0 <= self.label_jitter < 0.5):
            raise ConfigError("label_jitter must be in [0, 0.5) to keep labels inside their bin")


@dataclass
class WorldMaps:
    """Fixed linear maps from latents to observed features.

    ``basis`` is orthonormal; its first column is the label direction inside
    z_c, the rest span the label-free subspace used for class offsets and
    within-class spread.
    """

    basis: np.ndarray                                # [z_shared_dim, z_shared_dim]
    class_offsets: np.ndarray                        # [7, z_shared_dim], each ⟂ label direction
    shared_map: dict[Modality, np.ndarray]           # [d_m, z_shared_dim]
    private_map: dict[Modality, np.ndarray]          # [d_m, z_private_dim]
    mean_vec: dict[Modality, np.ndarray]             # [d_m], per-step bias
    config: SyntheticConfig

    @property
    def label_direction(self) -> np.ndarray:
        return self.basis[:, 0]


def build_maps(config: SyntheticConfig) -> WorldMaps:
    config.validate()
    rng = np.random.default_rng(config.map_seed)
    zc, zp = config.z_shared_dim, config.z_private_dim
    q, _ = np.linalg.qr(rng.standard_normal((zc, zc)))
    perp = q[:, 1:]
    offsets = (perp @ rng.standard_normal((zc - 1, 7))).T * config.class_offset_scale
    shared = {}
    private = {}
    means = {}
    for m in MODALITIES:
        d = config.raw_dims[m]
        shared[m] = rng.standard_normal((d, zc)) / np.sqrt(zc)
        private[m] = rng.standard_normal((d, zp)) / np.sqrt(zp)
        direction = rng.standard_normal(d)
        means[m] = config.modality_mean[m] * direction / np.linalg.norm(direction)
    return WorldMaps(basis=q, class_offsets=offsets, shared_map=shared,
                     private_map=private, mean_vec=means, config=config)


def label_from_latent(maps: WorldMaps, z_shared: np.ndarray) -> float:
    """The label is exactly the z_c coordinate along the label direction."""
    return float(z_shared @ maps.label_direction / maps.config.label_scale)


def shared_component(maps: WorldMaps, modality: Modality, z_shared: np.ndarray,
                     class_jitter: float = 0.0) -> np.ndarray:
    """Per-step feature content carried by the shared latent alone.

    The label coordinate of z_c is rescaled by the modality's label_gain
    before the emission map, and ``class_jitter`` (the modality's per-sample
    view noise, in label units) is added to it, so each modality shows its
    own imperfect copy of the label coordinate.
    """
    cfg = maps.config
    direction = maps.label_direction
    coord = float(z_shared @ direction)
    seen = cfg.label_gain[modality] * (coord + class_jitter * cfg.label_scale)
    z_seen = z_shared + (seen - coord) * direction
    return cfg.shared_gain[modality] * (maps.shared_map[modality] @ z_seen)


def _draw_shared_latent(maps: WorldMaps, rng: np.random.Generator) -> np.ndarray:
    cfg = maps.config
    k = int(rng.integers(-3, 4))
    # jitter stays inside the class bin; one-sided at the extremes so the
    # label never leaves [-3, 3]
    lo = 0.0 if k == -3 else -cfg.label_jitter
    hi = 0.0 if k == 3 else cfg.label_jitter
    u = rng.uniform(lo, hi)
    perp = maps.basis[:, 1:]
    wobble = perp @ (rng.standard_normal(cfg.z_shared_dim - 1) * cfg.within_class_spread)
    return ((cfg.label_scale * (k + u)) * maps.label_direction
            + maps.class_offsets[k + 3] + wobble)


def generate(n: int, seed: int, config: SyntheticConfig | None = None,
             z_shared_override: np.ndarray | None = None) -> list[Sample]:
    """Draw ``n`` synthetic samples, deterministically under ``seed``.

    ``z_shared_override`` (shape [n, z_shared_dim]) pins the shared latents,
    which lets oracle tests construct sample pairs that agree on shared
    content while differing privately.
    """
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    config = config or SyntheticConfig()
    maps = build_maps(config)
    if z_shared_override is not None and z_shared_override.shape != (n, config.z_shared_dim):
        raise ConfigError(
            f"z_shared_override must have shape ({n}, {config.z_shared_dim}), "
            f"got {z_shared_override.shape}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        if z_shared_override is not None:
            z_c = z_shared_override[i].astype(np.float64)
        else:
            z_c = _draw_shared_latent(maps, rng)
        label = label_from_latent(maps, z_c)
        if not (LABEL_MIN - 1e-9 <= label <= LABEL_MAX + 1e-9):
            raise ConfigError(f"override latent yields label {label:.3f} outside [-3, 3]")
        z_private = {}
        sequences = {}
        for m in MODALITIES:
            z_m = rng.standard_normal(config.z_private_dim)
            z_private[m] = z_m
            lo, hi = config.length_ranges[m]
            t_m = int(rng.integers(lo, hi + 1))
            eta = float(rng.normal(0.0, config.class_view_noise[m]))
            mults = np.asarray(config.shared_phase[m], dtype=np.float64)
            phase = mults[rng.integers(0, len(mults), size=t_m)]
            shared = phase[:, None] * shared_component(maps, m, z_c, class_jitter=eta)[None, :]
            private = config.private_gain[m] * (maps.private_map[m] @ z_m)
            noise = rng.standard_normal((t_m, config.raw_dims[m])) * config.noise[m]
            base = maps.mean_vec[m][None, :] + private[None, :]
            sequences[m] = ModalitySequence(m, shared + base + noise)
        samples.append(Sample(
            id=f"syn{i:05d}",
            sequences=sequences,
            label=float(np.clip(label, LABEL_MIN, LABEL_MAX)),
            latents=Latents(z_shared=z_c, z_private=z_private),
        ))
    return samples


# ---- on-disk format ----

MANIFEST_COLUMNS = ["id", "label", "path_L", "path_V", "path_A"]


def save_dataset(samples: list[Sample], out_dir: str | Path) -> Path:
    """Write manifest.csv, per-modality feature CSVs, and latents if present.

    Feature files are headerless, one time step per row, full float64
    precision so a round trip is bit-exact.
    """
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for s in samples:
            rel_paths = []
            for m in MODALITIES:
                rel = f"features/{s.id}_{m.tag}.csv"
                np.savetxt(out / rel, s.sequences[m].features, delimiter=",", fmt="%.17g")
                rel_paths.append(rel)
            writer.writerow([s.id, f"{s.label:.17g}", *rel_paths])
    if all(s.latents is not None for s in samples) and samples:
        zc_dim = samples[0].latents.z_shared.size
        zp_dim = samples[0].latents.z_private[Modality.LANGUAGE].size
        with open(out / "latents.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["id"] + [f"zc{i}" for i in range(zc_dim)]
            for m in MODALITIES:
                header += [f"z{m.tag}{i}" for i in range(zp_dim)]
            writer.writerow(header)
            for s in samples:
                row = [s.id] + [f"{v:.17g}" for v in s.latents.z_shared]
                for m in MODALITIES:
                    row += [f"{v:.17g}" for v in s.latents.z_private[m]]
                writer.writerow(row)
    return manifest_path


def _read_feature_csv(path: Path, sample_id: str, modality: Modality,
                      expected_dim: int) -> np.ndarray:
    if not path.exists():
        raise DataError(f"sample {sample_id}: missing {modality.tag} feature file {path}")
    try:
        mat = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"sample {sample_id}: unparseable {modality.tag} feature file {path}: {exc}") from exc
    if mat.size == 0:
        raise DataError(f"sample {sample_id}: empty {modality.tag} feature file {path}")
    if mat.shape[1] != expected_dim:
        raise DataError(
            f"sample {sample_id}: {modality.tag} feature file has {mat.shape[1]} columns, "
            f"expected {expected_dim}")
    if not np.all(np.isfinite(mat)):
        raise DataError(f"sample {sample_id}: non-finite values in {modality.tag} feature file {path}")
    return mat


def load_features(manifest_path: str | Path,
                  dims: dict[Modality, int] | None = None) -> list[Sample]:
    """Read a manifest and its per-sample feature CSVs into Samples.

    Features are taken as already extracted; this only validates shapes,
    label range, and finiteness.
    """
    dims = dims or RAW_DIMS
    manifest = Path(manifest_path)
    if not manifest.exists():
        raise DataError(f"manifest not found: {manifest}")
    base = manifest.parent
    samples: list[Sample] = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != MANIFEST_COLUMNS:
            raise DataError(
                f"manifest {manifest} must have columns {','.join(MANIFEST_COLUMNS)}, "
                f"got {reader.fieldnames}")
        for row in reader:
            sid = row["id"]
            try:
                label = float(row["label"])
            except (TypeError, ValueError):
                raise DataError(f"sample {sid}: label {row['label']!r} is not a number")
            if not (LABEL_MIN <= label <= LABEL_MAX):
                raise DataError(f"sample {sid}: label {label} outside [{LABEL_MIN}, {LABEL_MAX}]")
            sequences = {}
            for m in MODALITIES:
                mat = _read_feature_csv(base / row[f"path_{m.tag}"], sid, m, dims[m])
                sequences[m] = ModalitySequence(m, mat)
            samples.append(Sample(id=sid, sequences=sequences, label=label))
    if not samples:
        log.warning("manifest %s lists no samples", manifest)
    return samples


# ---- batching ----


@dataclass
class Batch:
    """Padded per-modality views over a list of samples.

    Padded rows are zero and masked; every consumer divides by true lengths,
    so padding never changes a result.
    """

    ids: list[str]
    labels: np.ndarray                       # [B]
    features: dict[Modality, np.ndarray]     # [B, T_pad, d_m]
    masks: dict[Modality, np.ndarray]        # [B, T_pad] of 0/1
    lengths: dict[Modality, np.ndarray]      # [B] ints
    samples: list[Sample]

    @property
    def size(self) -> int:
        return len(self.ids)


def resample_to_length(features: np.ndarray, target: int) -> np.ndarray:
    """Nearest-neighbor temporal resample of a [T, d] matrix to [target, d]."""
    t = features.shape[0]
    if t == target:
        return features
    idx = np.floor((np.arange(target) + 0.5) * (t / target)).astype(int)
    return features[np.minimum(idx, t - 1)]


def align_sample(sample: Sample) -> Sample:
    """Resample all three modalities of one sample to their median length."""
    lengths = sorted(s.length for s in sample.sequences.values())
    target = lengths[1]
    sequences = {
        m: ModalitySequence(m, resample_to_length(seq.features, target))
        for m, seq in sample.sequences.items()
    }
    return Sample(id=sample.id, sequences=sequences, label=sample.label,
                  latents=sample.latents)


def _pad_stack(mats: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t_pad = max(m.shape[0] for m in mats)
    d = mats[0].shape[1]
    feats = np.zeros((len(mats), t_pad, d))
    masks = np.zeros((len(mats), t_pad))
    lengths = np.zeros(len(mats), dtype=np.int64)
    for i, m in enumerate(mats):
        feats[i, :m.shape[0]] = m
        masks[i, :m.shape[0]] = 1.0
        lengths[i] = m.shape[0]
    return feats, masks, lengths


def make_batch(samples: list[Sample], mode: str = "unaligned",
               resample: bool = True) -> Batch:
    if mode not in ("aligned", "unaligned"):
        raise ConfigError(f"batch mode must be 'aligned' or 'unaligned', got {mode!r}")
    if mode == "aligned":
        prepared = []
        for s in samples:
            lens = {m: seq.length for m, seq in s.sequences.items()}
            if len(set(lens.values())) > 1:
                if not resample:
                    raise DataError(
                        f"sample {s.id}: aligned mode needs equal lengths, got "
                        f"{ {m.tag: t for m, t in lens.items()} } and resampling is off")
                s = align_sample(s)
            prepared.append(s)
        samples = prepared
    features, masks, lengths = {}, {}, {}
    for m in MODALITIES:
        f, k, n = _pad_stack([s.sequences[m].features for s in samples])
        features[m], masks[m], lengths[m] = f, k, n
    return Batch(
        ids=[s.id for s in samples],
        labels=np.array([s.label for s in samples]),
        features=features,
        masks=masks,
        lengths=lengths,
        samples=list(samples),
    )


def batches(samples: list[Sample], batch_size: int, mode: str = "unaligned",
            seed: int = 0, epoch: int = 0, shuffle: bool = True,
            resample: bool = True):
    """Yield Batches over the dataset, shuffled deterministically per epoch."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(samples))
    if shuffle:
        np.random.default_rng((seed, epoch)).shuffle(order)
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield make_batch(chunk, mode=mode, resample=resample)


def split_dataset(samples: list[Sample], seed: int = 0,
                  fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
                  ) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Deterministic train/val/test split."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    order = np.arange(len(samples))
    np.random.default_rng(seed).shuffle(order)
    n = len(samples)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test

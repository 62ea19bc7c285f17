"""Full-model tests: padding invariance, ablation toggles, loss accounting,
parameter management, and feature extraction."""

import numpy as np
import pytest

from modal_distill.config import TrainConfig
from modal_distill.data import (
    MODALITIES,
    Modality,
    SyntheticConfig,
    generate,
    make_batch,
)
from modal_distill.errors import ConfigError, DataError
from modal_distill.model import COMPONENT_NAMES, Model

SMALL_RAW = {Modality.LANGUAGE: 6, Modality.VISION: 5, Modality.AUDIO: 4}


def small_world() -> SyntheticConfig:
    return SyntheticConfig(
        raw_dims=dict(SMALL_RAW),
        z_shared_dim=4,
        z_private_dim=3,
        length_ranges={Modality.LANGUAGE: (3, 9), Modality.VISION: (2, 6),
                       Modality.AUDIO: (4, 10)},
    )


def small_config(**kw) -> TrainConfig:
    kw.setdefault("d", 4)
    kw.setdefault("heads", 2)
    return TrainConfig(**kw)


def build(n=4, seed=0, mode="unaligned", **kw):
    samples = generate(n, seed, small_world())
    model = Model(small_config(**kw), dict(SMALL_RAW))
    return model, make_batch(samples, mode=mode), samples


# ---- basic forward ----


def test_forward_shapes_and_finiteness():
    model, batch, _ = build(n=5)
    out = model.forward_batch(batch)
    assert len(out.preds) == 5
    scalars = out.scalars()
    assert set(scalars) == set(COMPONENT_NAMES)
    for name, value in scalars.items():
        assert np.isfinite(value), name
    assert out.n_triplets > 0
    assert out.homo_graph is not None and out.hetero_graph is not None


def test_forward_deterministic_given_seed():
    model_a, batch_a, _ = build(seed=3)
    model_b, batch_b, _ = build(seed=3)
    out_a = model_a.forward_batch(batch_a)
    out_b = model_b.forward_batch(batch_b)
    assert out_a.scalars() == out_b.scalars()
    assert out_a.scores() == out_b.scores()


def test_empty_sequence_rejected():
    model, batch, _ = build(n=2)
    batch.lengths[Modality.VISION][0] = 0
    with pytest.raises(DataError, match="empty"):
        model.forward_batch(batch)


# ---- padding invariance ----


def test_padding_invariance_per_sample():
    """A sample's prediction is identical whether it sits in a padded batch
    or alone, because only its valid rows are ever touched."""
    model, batch, samples = build(n=4, seed=1)
    batch_scores = model.forward_batch(batch).scores()
    for i, sample in enumerate(samples):
        single = make_batch([sample], mode="unaligned")
        single_scores = model.forward_batch(single).scores()
        assert single_scores[0] == batch_scores[i]


def test_batch_losses_are_means_of_singles():
    model, batch, samples = build(n=3, seed=2)
    out = model.forward_batch(batch).scalars()
    singles = [model.forward_batch(make_batch([s], mode="unaligned")).scalars()
               for s in samples]
    # margin pools triplets across the whole batch, so it has no
    # single-sample decomposition; everything else averages
    for name in ("task", "rec", "cyc", "ort", "dtl_homo", "dtl_hetero"):
        mean = np.mean([s[name] for s in singles])
        assert out[name] == pytest.approx(mean, rel=1e-12, abs=1e-12), name


# ---- ablation toggles ----

TOGGLE_ROWS = [
    (True, True, True, True),
    (True, True, True, False),
    (True, True, False, True),
    (True, True, False, False),
    (True, False, False, False),
    (False, False, False, False),
]


@pytest.mark.parametrize("fd,homogd,ca,heterogd", TOGGLE_ROWS)
def test_toggle_rows_forward_and_accounting(fd, homogd, ca, heterogd):
    model, batch, _ = build(fd=fd, homogd=homogd, ca=ca, heterogd=heterogd)
    out = model.forward_batch(batch)
    s = out.scalars()
    cfg = model.config
    identity = (s["task"] + cfg.lambda1 * s["dec"]
                + cfg.lambda2 * (s["dtl_homo"] + s["dtl_hetero"]))
    assert abs(s["total"] - identity) < 1e-9
    assert abs(s["dec"] - (s["rec"] + s["cyc"]
                           + cfg.gamma * (s["margin"] + s["ort"]))) < 1e-9
    if not fd:
        for name in ("rec", "cyc", "margin", "ort", "dec"):
            assert s[name] == 0.0, name
        assert out.n_triplets == 0
    if homogd:
        assert out.homo_graph is not None and s["dtl_homo"] >= 0.0
    else:
        assert out.homo_graph is None and s["dtl_homo"] == 0.0
    if heterogd:
        assert out.hetero_graph is not None and s["dtl_hetero"] >= 0.0
    else:
        assert out.hetero_graph is None and s["dtl_hetero"] == 0.0


def test_all_toggles_off_reduces_to_task_loss():
    model, batch, _ = build(fd=False, homogd=False, ca=False, heterogd=False)
    out = model.forward_batch(batch)
    assert float(out.total.data) == float(out.components["task"].data)


def test_ca_changes_predictions_even_without_heterogd():
    """With private-space distillation off, attention must still reshape the
    private fusion streams; turning it off zeroes them instead."""
    _, batch, _ = build(seed=4)
    with_ca = Model(small_config(heterogd=False, ca=True), dict(SMALL_RAW))
    without = Model(small_config(heterogd=False, ca=False), dict(SMALL_RAW))
    scores_ca = with_ca.forward_batch(batch).scores()
    scores_off = without.forward_batch(batch).scores()
    assert scores_ca != scores_off


def test_hetero_pathway_alive_iff_ca_or_heterogd():
    """fd-only ablation zeroes the private fusion streams, so its scores
    match a hand-built forward that feeds zeros there."""
    _, batch, _ = build(seed=5)
    fd_only = Model(small_config(fd=True, homogd=False, ca=False, heterogd=False),
                    dict(SMALL_RAW))
    out = fd_only.forward_batch(batch)
    d = fd_only.config.d
    zero = np.zeros(2 * d)
    from modal_distill.tensor import Tensor
    for i in range(batch.size):
        seqs = fd_only._sample_sequences(batch, i)
        homo = {}
        for m in MODALITIES:
            pair = fd_only.decoupler.decouple(
                fd_only.decoupler.shallow_encode(seqs[m], m), m)
            homo[m] = pair.homo_pooled
        pred = fd_only.fusion(homo, {m: Tensor(zero) for m in MODALITIES})
        assert float(pred.data) == out.scores()[i]


def test_frozen_records_match_toggles():
    model, batch, _ = build(heterogd=False)
    out = model.forward_batch(batch)
    assert out.frozen_homo is not None and out.frozen_hetero is None
    with pytest.raises(ConfigError, match="frozen_hetero"):
        model.forward_batch(batch, frozen_hetero=[])


def test_frozen_replay_reproduces_batch_loss():
    model, batch, _ = build(seed=6)
    out = model.forward_batch(batch)
    replay = model.forward_batch(batch, frozen_homo=out.frozen_homo,
                                 frozen_hetero=out.frozen_hetero)
    assert float(replay.total.data) == float(out.total.data)


# ---- modes ----


def test_aligned_mode_runs_and_aligns():
    model, batch, _ = build(mode="aligned")
    lengths = np.stack([batch.lengths[m] for m in MODALITIES])
    assert (lengths == lengths[0]).all()
    out = model.forward_batch(batch)
    assert np.isfinite(float(out.total.data))


# ---- parameters and loading ----


def test_parameter_names_stable_across_toggles():
    base = Model(small_config(), dict(SMALL_RAW)).parameters()
    ablated = Model(small_config(fd=False, homogd=False, ca=False, heterogd=False),
                    dict(SMALL_RAW)).parameters()
    assert set(base) == set(ablated)


def test_load_parameters_round_trip():
    model_a = Model(small_config(seed=1), dict(SMALL_RAW))
    model_b = Model(small_config(seed=2), dict(SMALL_RAW))
    arrays = {k: t.data.copy() for k, t in model_a.parameters().items()}
    model_b.load_parameters(arrays)
    for k, t in model_b.parameters().items():
        assert np.array_equal(t.data, arrays[k])


def test_load_parameters_rejects_mismatch():
    model = Model(small_config(), dict(SMALL_RAW))
    arrays = {k: t.data.copy() for k, t in model.parameters().items()}
    arrays.pop("fusion.head.first.bias")
    with pytest.raises(DataError, match="mismatch"):
        model.load_parameters(arrays)
    arrays = {k: t.data.copy() for k, t in model.parameters().items()}
    arrays["fusion.head.first.bias"] = np.zeros(999)
    with pytest.raises(DataError, match="shape"):
        model.load_parameters(arrays)


# ---- feature extraction ----


def test_extract_features_shapes_and_fd_off_fallback():
    model, batch, _ = build(n=3)
    bundle = model.extract_features(batch)
    assert bundle.homo.shape == (3, 3, 4)
    assert bundle.hetero.shape == (3, 3, 4)
    assert not np.allclose(bundle.hetero, 0.0)

    off = Model(small_config(fd=False, homogd=False, ca=False, heterogd=False),
                dict(SMALL_RAW))
    bundle_off = off.extract_features(batch)
    assert np.array_equal(bundle_off.homo, bundle_off.shallow)
    assert np.all(bundle_off.hetero == 0.0)


def test_gradients_flow_to_every_component_with_defaults():
    model, batch, _ = build(seed=7)
    out = model.forward_batch(batch)
    out.total.backward()
    touched = {name: p.grad is not None and np.any(p.grad != 0)
               for name, p in model.parameters().items()}
    groups = ("shallow", "shared_encoder", "private_encoder", "decoder",
              "gd_homo", "gd_hetero", "ca", "fusion")
    for g in groups:
        assert any(v for k, v in touched.items() if k.startswith(g)), g

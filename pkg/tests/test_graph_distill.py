"""GD-Unit tests: logit head fixtures, edge weight normalization and
symmetry, discrepancy fixtures, teacher-path blocking, the reference-form
cross-check, and frozen-replay finite-difference checks."""

import numpy as np
import pytest

from modal_distill.data import MODALITIES, Modality
from modal_distill.errors import ConfigError
from modal_distill.graph_distill import (
    MOD_INDEX,
    FrozenSample,
    GDUnit,
    discrepancy,
    gd_loss,
)
from modal_distill.tensor import Tensor

from conftest import check_grads, numeric_grad

L, V, A = Modality.LANGUAGE, Modality.VISION, Modality.AUDIO
D_IN = 4


def make_unit(seed=0, randomize_gate=False, **kw):
    unit = GDUnit(np.random.default_rng(seed), D_IN, **kw)
    if randomize_gate:
        rng = np.random.default_rng(seed + 100)
        unit.edge_scorer.weight.data[:] = rng.standard_normal(unit.edge_scorer.weight.shape)
        unit.edge_scorer.bias.data[:] = rng.standard_normal(1)
    return unit


def random_feats(seed):
    rng = np.random.default_rng(seed)
    return {m: Tensor(rng.standard_normal(D_IN), requires_grad=True) for m in MODALITIES}


# ---- logit head ----


def test_logit_zero_params():
    unit = make_unit()
    unit.logit_head.weight.data[:] = 0.0
    unit.logit_head.bias.data[:] = 0.0
    assert unit.logit(Tensor(np.ones(D_IN))).item() == 0.0


def test_logit_ones_weight_basis_input():
    unit = make_unit()
    unit.logit_head.weight.data[:] = 1.0
    unit.logit_head.bias.data[:] = 0.7
    e1 = np.zeros(D_IN)
    e1[1] = 1.0
    assert unit.logit(Tensor(e1)).item() == pytest.approx(1.7, abs=1e-15)


def test_logit_gradcheck():
    unit = make_unit(3)
    x = Tensor(np.random.default_rng(5).standard_normal(D_IN), requires_grad=True)
    leaves = {"x": x, **unit.logit_head.parameters("f")}
    check_grads(lambda: unit.logit(x), leaves, tol=1e-6)


# ---- discrepancy ----


def test_discrepancy_fixtures():
    assert discrepancy(Tensor(2.0), Tensor(2.0)).item() == 0.0
    assert discrepancy(Tensor(3.0), Tensor(1.0)).item() == pytest.approx(4.0, abs=1e-15)
    assert discrepancy(Tensor(3.0), Tensor(1.0), mode="abs").item() == pytest.approx(2.0, abs=1e-15)


def test_discrepancy_source_gradient_blocked():
    src = Tensor(3.0, requires_grad=True)
    tgt = Tensor(1.0, requires_grad=True)
    discrepancy(src, tgt).backward()
    assert src.grad is None  # no path was ever recorded
    assert tgt.grad == pytest.approx(-4.0)
    # finite differences on the unfrozen function see the teacher slope,
    # which is exactly what the stop must remove
    num = numeric_grad(lambda: ((src.data - tgt.data) ** 2), src)
    assert abs(num) > 1.0


def test_discrepancy_detach_off_restores_teacher_gradient():
    src = Tensor(3.0, requires_grad=True)
    tgt = Tensor(1.0, requires_grad=True)
    discrepancy(src, tgt, detach=False).backward()
    assert src.grad == pytest.approx(4.0)


def test_discrepancy_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        discrepancy(Tensor(1.0), Tensor(0.0), mode="cubed")


# ---- reference loss form ----


def test_gd_loss_fixtures():
    w = np.full((3, 3), 0.5)
    np.fill_diagonal(w, 0.0)
    assert gd_loss(w, np.zeros((3, 3))) == 0.0
    e = np.ones((3, 3))
    np.fill_diagonal(e, 0.0)
    assert gd_loss(w, e) == pytest.approx(3.0, abs=1e-15)


def test_gd_loss_equals_per_target_sums():
    rng = np.random.default_rng(12)
    w = rng.uniform(0, 1, (3, 3))
    e = rng.uniform(0, 2, (3, 3))
    per_target = sum((w[:, j] * e[:, j]).sum() for j in range(3))
    assert gd_loss(w, e) == pytest.approx(per_target, abs=1e-12)


# ---- edge weights ----


def test_zero_gate_gives_uniform_weights():
    unit = make_unit()
    result = unit.distill_sample(random_feats(1))
    for j in MODALITIES:
        for i in MODALITIES:
            expected = 0.5 if i is not j else 0.0
            assert result.weights[MOD_INDEX[i], MOD_INDEX[j]] == pytest.approx(expected, abs=1e-12)


def test_columns_sum_to_one():
    unit = make_unit(randomize_gate=True)
    result = unit.distill_sample(random_feats(2))
    sums = result.weights.sum(axis=0)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    assert np.all((result.weights >= 0) & (result.weights <= 1))


def test_weights_match_manual_softmax_and_shift_invariance():
    unit = make_unit(randomize_gate=True)
    result = unit.distill_sample(random_feats(3))
    gw = unit.edge_scorer.weight.data.reshape(-1)
    gb = float(unit.edge_scorer.bias.data[0])
    for j in MODALITIES:
        incoming = [i for i in MODALITIES if i is not j]
        raw = np.array([gw @ result.frozen.gate_inputs[(i, j)] + gb for i in incoming])

        def softmax_np(s):
            e = np.exp(s - s.max())
            return e / e.sum()

        expected = softmax_np(raw)
        got = np.array([result.weights[MOD_INDEX[i], MOD_INDEX[j]] for i in incoming])
        np.testing.assert_allclose(got, expected, atol=1e-12)
        np.testing.assert_allclose(softmax_np(raw + 17.3), expected, atol=1e-9)


def test_swapping_sources_swaps_weights():
    unit = make_unit(randomize_gate=True)
    feats = random_feats(4)
    base = unit.distill_sample(feats)
    swapped_feats = dict(feats)
    swapped_feats[L], swapped_feats[V] = feats[V], feats[L]
    swapped = unit.distill_sample(swapped_feats)
    # for target A the two sources exchanged roles, so their weights swap
    assert swapped.weights[MOD_INDEX[V], MOD_INDEX[A]] == pytest.approx(
        base.weights[MOD_INDEX[L], MOD_INDEX[A]], abs=1e-12)
    assert swapped.weights[MOD_INDEX[L], MOD_INDEX[A]] == pytest.approx(
        base.weights[MOD_INDEX[V], MOD_INDEX[A]], abs=1e-12)


# ---- unit loss semantics ----


def test_identical_inputs_zero_loss():
    unit = make_unit(randomize_gate=True)
    v = Tensor(np.random.default_rng(6).standard_normal(D_IN))
    result = unit.distill_sample({m: v for m in MODALITIES})
    assert result.loss.item() == 0.0


def test_distinct_logits_positive_loss():
    unit = make_unit(randomize_gate=True)
    result = unit.distill_sample(random_feats(7))
    logit_vals = [float(result.logits[m].data) for m in MODALITIES]
    assert len(set(logit_vals)) > 1
    assert result.loss.item() > 0.0


def test_sample_loss_matches_reference_form():
    unit = make_unit(randomize_gate=True)
    result = unit.distill_sample(random_feats(8))
    assert result.loss.item() == pytest.approx(
        gd_loss(result.weights, result.discrepancies), abs=1e-12)


def test_teacher_out_edges_carry_no_gradient():
    unit = make_unit(randomize_gate=True)
    feats = random_feats(9)
    result = unit.distill_sample(feats)
    out_edges = result.per_edge[(L, V)] + result.per_edge[(L, A)]
    out_edges.backward()
    assert feats[L].grad is None  # language only ever acted as teacher here
    assert feats[V].grad is not None and feats[A].grad is not None


def test_teacher_gradient_restored_without_detach():
    unit = make_unit(randomize_gate=True, detach_teacher=False)
    feats = random_feats(9)
    result = unit.distill_sample(feats)
    (result.per_edge[(L, V)] + result.per_edge[(L, A)]).backward()
    assert feats[L].grad is not None and np.any(feats[L].grad != 0.0)


def test_batch_loss_is_mean_of_samples():
    unit = make_unit(randomize_gate=True)
    pooled = [random_feats(s) for s in range(3)]
    batch = unit.distill_batch(pooled)
    per_sample = [unit.distill_sample(f).loss.item() for f in pooled]
    assert batch.loss.item() == pytest.approx(np.mean(per_sample), abs=1e-12)
    np.testing.assert_allclose(
        batch.graph.weights,
        np.mean([s.weights for s in batch.samples], axis=0), atol=1e-15)


def test_frozen_replay_reproduces_forward_exactly():
    unit = make_unit(randomize_gate=True)
    pooled = [random_feats(s) for s in range(2)]
    base = unit.distill_batch(pooled)
    replay = unit.distill_batch(pooled, frozen=base.frozen)
    assert replay.loss.item() == base.loss.item()


def test_frozen_count_mismatch_rejected():
    unit = make_unit()
    pooled = [random_feats(1), random_feats(2)]
    base = unit.distill_batch(pooled)
    with pytest.raises(ConfigError):
        unit.distill_batch(pooled, frozen=base.frozen[:1])


@pytest.mark.parametrize("seed", range(3))
def test_unit_gradcheck_frozen_replay(seed):
    # finite differences must run against the frozen-teacher function, the
    # function backprop actually differentiates
    unit = make_unit(seed, randomize_gate=True)
    rng = np.random.default_rng(500 + seed)
    raw = [{m: rng.standard_normal(D_IN) for m in MODALITIES} for _ in range(2)]
    params = unit.parameters("gd")
    feats_leaves = {f"feat{si}.{m.tag}": Tensor(raw[si][m], requires_grad=True)
                    for si in range(2) for m in MODALITIES}

    def pooled():
        return [{m: feats_leaves[f"feat{si}.{m.tag}"] for m in MODALITIES}
                for si in range(2)]

    frozen = unit.distill_batch(pooled()).frozen

    def build():
        return unit.distill_batch(pooled(), frozen=frozen).loss

    check_grads(build, {**params, **feats_leaves}, tol=1e-5)

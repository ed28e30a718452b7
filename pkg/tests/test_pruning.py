"""Criterion scoring, selection arithmetic, masks, and prune/retrain rounds."""

from dataclasses import replace

import numpy as np
import pytest

from muprune import (
    CriterionConfig,
    MlpModel,
    PruneMask,
    TrainConfig,
    UncertaintyMap,
    apply_mask,
    derive_seed,
    get_flat_params,
    iterative_prune,
    make_rng,
    mu_score,
    prunable_partition,
    resolve_lambda,
    score,
    select_prune_set,
    train,
    wald_statistic,
)
from muprune.errors import AlignmentError, PruneRoundError
from muprune.model import ORDERING_VERSION
from muprune.pruning import _round_half_up


def sigma_map(values):
    return UncertaintyMap(np.asarray(values, dtype=np.float64), "pseudo_bootstrap")


def one_group(n):
    return [np.arange(n, dtype=np.int64)]


class TestMuScore:
    def test_substitution(self):
        assert mu_score([0.5], [0.0], 1.0)[0] == 0.5
        assert mu_score([-0.5], [0.5], 0.5)[0] == 0.5
        # w = 0 scores 0 no matter the denominator
        assert mu_score([0.0], [5.0], 0.0)[0] == 0.0
        assert mu_score([0.0], [0.0], 0.0)[0] == 0.0

    def test_zero_denominator_survivor_is_plus_inf(self):
        assert mu_score([0.3], [0.0], 0.0)[0] == np.inf

    def test_negative_denominator_rejected(self):
        with pytest.raises(ValueError):
            mu_score([1.0], [-2.0], 1.0)


class TestResolveLambda:
    def test_examples(self):
        assert resolve_lambda(0.0, [1.0, 5.0]) == 0.0
        assert resolve_lambda(1.0, [2.0, 2.0, 2.0]) == 0.0
        assert resolve_lambda(1.0, [1.0, 2.0, 3.0]) == pytest.approx(
            np.sqrt(2.0 / 3.0), rel=1e-15
        )
        assert resolve_lambda(2.0, [1.0, 2.0, 3.0]) == pytest.approx(
            2.0 * np.sqrt(2.0 / 3.0), rel=1e-15
        )

    def test_empty_scope(self):
        with pytest.raises(ValueError):
            resolve_lambda(1.0, [])


class TestCriterionConfig:
    def test_mu_requires_uncertainty(self):
        with pytest.raises(ValueError):
            CriterionConfig(kind="mu")
        with pytest.raises(ValueError):
            CriterionConfig(kind="wald")
        CriterionConfig(kind="abs")  # fine without

    def test_unknown_fields(self):
        with pytest.raises(ValueError):
            CriterionConfig(kind="l1")
        with pytest.raises(ValueError):
            CriterionConfig(kind="mu", uncertainty=sigma_map([1.0]),
                            lambda_scope="per_neuron")
        with pytest.raises(ValueError):
            CriterionConfig(kind="mu", uncertainty=sigma_map([1.0]), lambda_star=-1.0)


class TestScore:
    def test_lambda_star_limits_bridge_abs_and_wald(self):
        w = np.array([1.0, 0.9])
        sig = sigma_map([5.0, 0.01])
        huge = CriterionConfig(kind="mu", lambda_star=1e12, uncertainty=sig)
        tau = score(w, huge, one_group(2)).tau
        assert tau[0] > tau[1]  # abs order: 1.0 over 0.9
        zero = CriterionConfig(kind="mu", lambda_star=0.0, uncertainty=sig)
        tau0 = score(w, zero, one_group(2)).tau
        assert tau0[0] == pytest.approx(0.2, rel=1e-15)
        assert tau0[1] == pytest.approx(90.0, rel=1e-15)
        assert tau0[0] < tau0[1]  # order flips

    def test_wald_kind_reproduces_wald_statistic_magnitudes(self):
        rng = make_rng(19)
        w = rng.standard_normal(12)
        se = rng.random(12) + 0.1
        crit = CriterionConfig(kind="wald", uncertainty=sigma_map(se))
        tau = score(w, crit, one_group(12)).tau
        z = wald_statistic(w, se)
        np.testing.assert_allclose(tau, np.abs(z), rtol=1e-12)

    def test_scale_invariance_of_mu(self):
        rng = make_rng(20)
        for _ in range(10):
            w = rng.standard_normal(30)
            sig = rng.random(30)
            lam_star = float(rng.random() * 2)
            crit = lambda s: CriterionConfig(
                kind="mu", lambda_star=lam_star, uncertainty=sigma_map(s)
            )
            base = score(w, crit(sig), one_group(30)).tau
            for c in (1e-3, 1.0, 1e3):
                scaled = score(c * w, crit(c * sig), one_group(30)).tau
                np.testing.assert_allclose(scaled, base, rtol=1e-12)

    def test_abs_flips_under_rescale_but_mu_does_not(self):
        # two weights, the bigger one uncertain: w=(10, 0.1), sigma=(5, 3).
        # measuring the second variable in different units (x1000) turns
        # its weight into 100; ABS reverses its choice, mu keeps it.
        groups = one_group(2)
        w = np.array([10.0, 0.1])
        w_scaled = np.array([10.0, 100.0])
        abs_crit = CriterionConfig(kind="abs")
        before = select_prune_set(score(w, abs_crit, groups), groups, 50.0)
        after = select_prune_set(score(w_scaled, abs_crit, groups), groups, 50.0)
        assert not before.keep[1] and before.keep[0]
        assert not after.keep[0] and after.keep[1]  # ABS flipped

        mu = lambda s: CriterionConfig(
            kind="mu", lambda_star=0.01, uncertainty=sigma_map(s)
        )
        mu_before = select_prune_set(
            score(w, mu([5.0, 3.0]), groups), groups, 50.0
        )
        mu_after = select_prune_set(
            score(w_scaled, mu([5.0, 3000.0]), groups), groups, 50.0
        )
        np.testing.assert_array_equal(mu_before.keep, mu_after.keep)
        np.testing.assert_array_equal(mu_before.keep, [True, False])

    def test_prior_keep_scores_minus_inf_and_leaves_lambda_scope(self):
        w = np.array([1.0, 2.0, 3.0, 4.0])
        sig = sigma_map(np.zeros(4))
        crit = CriterionConfig(kind="mu", lambda_star=1.0, uncertainty=sig)
        keep = np.array([True, False, True, True])
        sv = score(w, crit, one_group(4), prior_keep=keep)
        assert sv.tau[1] == -np.inf
        # lambda comes from surviving weights only
        lam = resolve_lambda(1.0, w[keep])
        assert sv.tau[0] == pytest.approx(1.0 / lam, rel=1e-12)

    def test_out_of_partition_indices_score_plus_inf(self):
        w = np.array([5.0, 1.0, 7.0])
        sv = score(w, CriterionConfig(kind="abs"), [np.array([0, 1])])
        assert sv.tau[2] == np.inf

    def test_alignment_errors(self):
        crit = CriterionConfig(kind="mu", uncertainty=sigma_map([1.0, 1.0]))
        with pytest.raises(AlignmentError):
            score(np.zeros(3), crit, one_group(3))
        with pytest.raises(AlignmentError):
            score(np.zeros(2), CriterionConfig(kind="abs"), one_group(2),
                  prior_keep=np.ones(3, dtype=bool))


class TestSelection:
    def test_round_half_away_from_zero(self):
        assert _round_half_up(1.02) == 1
        assert _round_half_up(1.5) == 2
        assert _round_half_up(2.5) == 3  # banker's rounding would say 2
        assert _round_half_up(0.49) == 0

    def test_spec_worked_example(self):
        tau = np.array([3.0, 1.0, 2.0])
        sv = score(tau, CriterionConfig(kind="abs"), one_group(3))
        mask = select_prune_set(sv, one_group(3), 34.0)
        np.testing.assert_array_equal(mask.keep, [True, False, True])
        assert mask.applied_fractions == {0: [34.0]}

    def test_a_zero_and_a_hundred(self):
        sv = score(np.array([1.0, 2.0]), CriterionConfig(kind="abs"), one_group(2))
        assert select_prune_set(sv, one_group(2), 0.0).keep.all()
        assert not select_prune_set(sv, one_group(2), 100.0).keep.any()
        with pytest.raises(ValueError):
            select_prune_set(sv, one_group(2), 101.0)

    def test_ties_drop_the_lower_flat_index(self):
        w = np.array([0.5, 0.5, 0.5, 0.9])
        sv = score(w, CriterionConfig(kind="abs"), one_group(4))
        mask = select_prune_set(sv, one_group(4), 50.0)
        np.testing.assert_array_equal(mask.keep, [False, False, True, True])

    def test_per_group_counts_are_exact(self):
        rng = make_rng(23)
        w = rng.standard_normal(40)
        groups = [np.arange(0, 25), np.arange(25, 40)]
        sv = score(w, CriterionConfig(kind="abs"), groups)
        mask = select_prune_set(sv, groups, 40.0)
        assert mask.survivors(groups[0]) == 25 - _round_half_up(0.4 * 25)
        assert mask.survivors(groups[1]) == 15 - _round_half_up(0.4 * 15)

    def test_per_group_percent_vector(self):
        w = np.arange(1.0, 7.0)
        groups = [np.arange(0, 3), np.arange(3, 6)]
        sv = score(w, CriterionConfig(kind="abs"), groups)
        mask = select_prune_set(sv, groups, [0.0, 100.0])
        np.testing.assert_array_equal(mask.keep, [True] * 3 + [False] * 3)
        with pytest.raises(ValueError):
            select_prune_set(sv, groups, [50.0])

    def test_composition_is_monotone_and_multiplies_survivors(self):
        rng = make_rng(24)
        w = rng.standard_normal(64)
        groups = [np.arange(0, 32), np.arange(32, 64)]
        crit = CriterionConfig(kind="abs")
        m1 = select_prune_set(score(w, crit, groups), groups, 50.0)
        m2 = select_prune_set(
            score(w, crit, groups, prior_keep=m1.keep), groups, 50.0, prior_mask=m1
        )
        # nothing resurrected
        assert not np.any(m2.keep & ~m1.keep)
        # 50% of 50% leaves 25%
        for g in groups:
            assert m2.survivors(g) == 8
        assert m2.applied_fractions == {0: [50.0, 50.0], 1: [50.0, 50.0]}


class TestPruneMask:
    def test_apply_mask_is_bit_exact_for_survivors(self, small_model):
        flat_before = get_flat_params(small_model)
        keep = make_rng(25).random(small_model.param_count) > 0.5
        apply_mask(small_model, PruneMask(keep))
        flat_after = get_flat_params(small_model)
        assert np.all(flat_after[~keep] == 0.0)
        np.testing.assert_array_equal(flat_after[keep], flat_before[keep])

    def test_full_mask_leaves_only_zeros(self, small_model):
        apply_mask(small_model, PruneMask(np.zeros(small_model.param_count, dtype=bool)))
        out = small_model.forward(np.ones((1, 5)))
        np.testing.assert_array_equal(out, [[0.0, 0.0, 0.0]])

    def test_alignment(self, small_model):
        with pytest.raises(AlignmentError):
            apply_mask(small_model, PruneMask(np.ones(3, dtype=bool)))

    def test_save_load_roundtrip(self, tmp_path):
        keep = make_rng(26).random(70) > 0.3
        mask = PruneMask(keep, {0: [50.0], 1: [50.0, 25.0]})
        path = tmp_path / "mask.npz"
        mask.save(path)
        back = PruneMask.load(path)
        np.testing.assert_array_equal(back.keep, keep)
        assert back.applied_fractions == {0: [50.0], 1: [50.0, 25.0]}

    def test_load_rejects_foreign_ordering(self, tmp_path):
        import json

        path = tmp_path / "mask.npz"
        np.savez(
            path, bits=np.packbits(np.ones(8, dtype=bool)), length=np.int64(8),
            fractions=json.dumps({}), ordering="something-else",
        )
        with pytest.raises(AlignmentError, match=ORDERING_VERSION):
            PruneMask.load(path)

    def test_counts(self):
        mask = PruneMask(np.array([True, False, False, True]))
        assert mask.dropped_count == 2
        assert mask.survivors([0, 1]) == 1
        assert len(mask) == 4


class TestIterativePrune:
    def cfg(self):
        return TrainConfig(epochs=2, batch_size=32, learning_rate=5e-3, seed=9)

    def test_single_round_equals_one_shot(self, blobs_ds):
        crit = CriterionConfig(kind="abs")
        m_iter = MlpModel.initialized([5, 8, 3], seed=31)
        mask, history = iterative_prune(
            m_iter, blobs_ds, [(50.0, 2)], crit, self.cfg(), test_data=blobs_ds
        )
        # replay by hand: same scoring, same derived round seed
        m_hand = MlpModel.initialized([5, 8, 3], seed=31)
        partition = prunable_partition(m_hand)
        sv = score(get_flat_params(m_hand), crit, partition,
                   prior_keep=np.ones(m_hand.param_count, dtype=bool))
        hand_mask = select_prune_set(sv, partition, 50.0,
                                     prior_mask=PruneMask.all_keep(m_hand.param_count))
        apply_mask(m_hand, hand_mask)
        train(m_hand, blobs_ds,
              replace(self.cfg(), seed=derive_seed(self.cfg().seed, 1)),
              mask=hand_mask)
        np.testing.assert_array_equal(
            get_flat_params(m_iter), get_flat_params(m_hand)
        )
        np.testing.assert_array_equal(mask.keep, hand_mask.keep)
        assert len(history) == 1
        assert history[0].test_accuracy is not None

    def test_two_rounds_of_fifty_leave_a_quarter(self, blobs_ds):
        model = MlpModel.initialized([5, 8, 3], seed=32)
        partition = prunable_partition(model)
        sizes = [g.size for g in partition]
        mask, history = iterative_prune(
            model, blobs_ds, [(50.0, 1), (50.0, 1)], CriterionConfig(kind="abs"),
            self.cfg(),
        )
        for g, size in zip(partition, sizes):
            want = size - _round_half_up(0.5 * size)
            want -= _round_half_up(0.5 * want)
            assert mask.survivors(g) == want
        # keep counts non-increasing across rounds
        for g_idx in range(len(partition)):
            counts = [h.survivors[g_idx] for h in history]
            assert counts == sorted(counts, reverse=True)
        flat = get_flat_params(model)
        assert np.all(flat[~mask.keep] == 0.0)

    def test_mu_refresh_recomputes_sigma_between_rounds(self, blobs_ds):
        model = MlpModel.initialized([5, 8, 3], seed=33)
        p = model.param_count
        start = sigma_map(np.full(p, 0.5))
        crit = CriterionConfig(kind="mu", lambda_star=1.0, uncertainty=start)
        cfg = TrainConfig(epochs=3, batch_size=16, learning_rate=5e-3, seed=10)
        mask, history = iterative_prune(
            model, blobs_ds, [(30.0, 3), (30.0, 3)], crit, cfg, trace_capacity=4
        )
        assert len(history) == 2
        assert mask.dropped_count > 0
        # frozen-sigma variant reaches a (generally) different mask
        model2 = MlpModel.initialized([5, 8, 3], seed=33)
        mask2, _ = iterative_prune(
            model2, blobs_ds, [(30.0, 3), (30.0, 3)], crit, cfg,
            refresh_sigma=False,
        )
        assert mask2.dropped_count == mask.dropped_count

    def test_round_errors_carry_the_round_index(self, blobs_ds):
        model = MlpModel.initialized([5, 8, 3], seed=34)
        bad = TrainConfig(epochs=3, batch_size=8, optimizer="sgd",
                          learning_rate=1e12, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(PruneRoundError) as err:
                iterative_prune(
                    model, blobs_ds, [(10.0, 3)], CriterionConfig(kind="abs"), bad
                )
        assert err.value.round_index == 0

    def test_include_biases_partition(self, blobs_ds):
        model = MlpModel.initialized([5, 8, 3], seed=35)
        partition = prunable_partition(model, include_biases=True)
        sv = score(get_flat_params(model), CriterionConfig(kind="abs"), partition)
        mask = select_prune_set(sv, partition, 100.0)
        assert mask.dropped_count == model.param_count

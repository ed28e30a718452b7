"""Uncertainty estimator tests: trace window, bootstraps, analytic covariance."""

import numpy as np
import pytest

from muprune import (
    Dataset,
    IterationEvent,
    MlpModel,
    TrainConfig,
    UncertaintyMap,
    WeightTrace,
    analytic_ml_covariance,
    bootstrap_sigma,
    covariance_to_uncertainty,
    derive_rng,
    derive_seed,
    get_flat_params,
    make_rng,
    mean_score_norm,
    normal_cdf,
    per_sample_score,
    pseudo_bootstrap_sigma,
    synth_blobs,
    synth_regression,
    train,
    train_with_trace,
    wald_p_value,
    wald_statistic,
)
from muprune.data import bootstrap_resample
from muprune.errors import (
    AlignmentError,
    BootstrapReplicaError,
    InsufficientIterationsError,
    UnsupportedModelError,
)
from muprune.model import DenseLayer, ORDERING_VERSION
from muprune.uncertainty import MAX_ANALYTIC_PARAMS


def event(i, values):
    v = np.asarray(values, dtype=np.float64)
    v.flags.writeable = False
    return IterationEvent(i_iter=i, flat_weights=v, loss=0.0)


class TestWeightTrace:
    def test_ring_keeps_the_last_capacity_snapshots(self):
        trace = WeightTrace(param_count=1, capacity=3)
        for i in range(1, 5):
            trace.observe(event(i, [float(i)]))
        np.testing.assert_array_equal(trace.window_iterations(), [2, 3, 4])
        np.testing.assert_array_equal(trace.window().ravel(), [2.0, 3.0, 4.0])
        assert trace.observed_total == 4

    def test_stride_subsamples_by_iteration_number(self):
        trace = WeightTrace(param_count=1, capacity=3, stride=2)
        for i in range(1, 11):
            trace.observe(event(i, [float(i)]))
        # accepted 2,4,6,8,10; the last three survive
        np.testing.assert_array_equal(trace.window_iterations(), [6, 8, 10])
        assert trace.observed_total == 5

    def test_window_before_full_raises(self):
        trace = WeightTrace(param_count=1, capacity=3)
        trace.observe(event(1, [1.0]))
        assert not trace.is_full
        with pytest.raises(InsufficientIterationsError):
            trace.window()
        with pytest.raises(InsufficientIterationsError):
            trace.window_iterations()

    def test_shape_mismatch(self):
        trace = WeightTrace(param_count=2, capacity=2)
        with pytest.raises(AlignmentError):
            trace.observe(event(1, [1.0]))

    def test_capacity_floor(self):
        with pytest.raises(ValueError):
            WeightTrace(param_count=1, capacity=1)
        with pytest.raises(ValueError):
            WeightTrace(param_count=1, capacity=4, stride=0)


class TestPseudoBootstrap:
    def test_sigma_matches_offline_std_exactly(self, blobs_ds, small_model, quick_cfg):
        log = []
        report, trace = train_with_trace(
            small_model, blobs_ds, quick_cfg, capacity=5,
            extra_hooks=[lambda e: log.append(e.flat_weights.copy())],
        )
        full = np.stack(log)
        np.testing.assert_array_equal(trace.window(), full[-5:])
        um = pseudo_bootstrap_sigma(trace)
        offline = np.std(full[-5:], axis=0, ddof=1)
        np.testing.assert_allclose(um.sigma, offline, rtol=1e-12, atol=1e-15)
        assert um.method == "pseudo_bootstrap"
        assert um.meta["window"] == 5 and um.meta["stride"] == 1

    def test_frozen_weight_has_exactly_zero_sigma(self):
        trace = WeightTrace(param_count=2, capacity=3)
        for i in range(1, 4):
            trace.observe(event(i, [0.1, float(i)]))
        um = pseudo_bootstrap_sigma(trace)
        assert um.sigma[0] == 0.0
        assert um.sigma[1] == pytest.approx(1.0, rel=1e-15)

    def test_divisor_modes(self):
        trace = WeightTrace(param_count=1, capacity=4)
        for i, v in enumerate([1.0, 2.0, 3.0, 4.0], start=1):
            trace.observe(event(i, [v]))
        samp = pseudo_bootstrap_sigma(trace, divisor_mode="sample").sigma[0]
        pop = pseudo_bootstrap_sigma(trace, divisor_mode="population").sigma[0]
        assert samp == pytest.approx(np.std([1, 2, 3, 4], ddof=1), rel=1e-15)
        assert pop == pytest.approx(np.std([1, 2, 3, 4], ddof=0), rel=1e-15)
        with pytest.raises(ValueError):
            pseudo_bootstrap_sigma(trace, divisor_mode="both")

    def test_oversized_window_warns_and_collects_all(self, blobs_ds, small_model, quick_cfg):
        n_iter = quick_cfg.total_iterations(len(blobs_ds))
        with pytest.warns(UserWarning, match="recording all"):
            _, trace = train_with_trace(
                small_model, blobs_ds, quick_cfg, capacity=n_iter + 50
            )
        assert trace.capacity == n_iter
        assert trace.is_full

    def test_too_short_run_raises(self, blobs_ds, small_model):
        cfg = TrainConfig(epochs=1, batch_size=len(blobs_ds), seed=0)
        with pytest.raises(InsufficientIterationsError):
            train_with_trace(small_model, blobs_ds, cfg, capacity=4)


class TestBootstrap:
    def fit_cfg(self):
        return TrainConfig(
            epochs=60, batch_size=10_000, optimizer="sgd", learning_rate=1.0, seed=0
        )

    def test_degenerate_flags_give_exactly_zero_sigma(self):
        data, _ = synth_regression(60, 3, make_rng(1))
        template = MlpModel.initialized([3, 1], "linear", seed=5)
        um = bootstrap_sigma(
            data, template, self.fit_cfg(), replicas=3, seed=7,
            resample=False, vary_seeds=False,
        )
        assert np.all(um.sigma == 0.0)

    def test_two_replicas_sigma_is_gap_over_sqrt2(self):
        data, _ = synth_regression(80, 3, make_rng(2))
        template = MlpModel.initialized([3, 1], "linear", seed=5)
        cfg = self.fit_cfg()
        seed = 99
        um = bootstrap_sigma(data, template, cfg, replicas=2, seed=seed)
        # re-derive both replicas through the public seed-splitting scheme
        fits = []
        for r in range(2):
            ds_r = bootstrap_resample(data, derive_rng(seed, r, 0))
            m_r = MlpModel.initialized([3, 1], "linear", seed=derive_seed(seed, r, 1))
            from dataclasses import replace

            train(m_r, ds_r, replace(cfg, seed=derive_seed(seed, r, 2)))
            fits.append(get_flat_params(m_r))
        want = np.abs(fits[0] - fits[1]) / np.sqrt(2.0)
        np.testing.assert_allclose(um.sigma, want, rtol=1e-12, atol=1e-15)

    def test_each_replica_solves_its_normal_equations(self):
        data, _ = synth_regression(200, 4, make_rng(3), noise_sd=0.3)
        template = MlpModel.initialized([4, 1], "linear", seed=5)
        cfg = TrainConfig(
            epochs=300, batch_size=len(data), optimizer="sgd", learning_rate=1.0, seed=0
        )
        seed = 42
        for r in range(3):
            ds_r = bootstrap_resample(data, derive_rng(seed, r, 0))
            m_r = MlpModel.initialized([4, 1], "linear", seed=derive_seed(seed, r, 1))
            from dataclasses import replace

            train(m_r, ds_r, replace(cfg, seed=derive_seed(seed, r, 2)))
            xt = np.hstack([ds_r.inputs, np.ones((len(ds_r), 1))])
            closed, *_ = np.linalg.lstsq(xt, ds_r.labels, rcond=None)
            np.testing.assert_allclose(
                get_flat_params(m_r), closed, rtol=1e-10, atol=1e-10
            )

    def test_replica_failure_names_the_replica(self):
        data, _ = synth_regression(50, 3, make_rng(4))
        template = MlpModel.initialized([3, 1], "linear", seed=5)
        cfg = TrainConfig(
            epochs=40, batch_size=50, optimizer="sgd", learning_rate=1e9, seed=0
        )
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(BootstrapReplicaError) as err:
                bootstrap_sigma(data, template, cfg, replicas=2, seed=1)
        assert err.value.replica == 0

    def test_replica_floor(self):
        data, _ = synth_regression(10, 2, make_rng(5))
        with pytest.raises(ValueError):
            bootstrap_sigma(
                data, MlpModel.initialized([2, 1], "linear"), self.fit_cfg(),
                replicas=1, seed=0,
            )


def ols_fit(data):
    """Exact least-squares fit of a [d, 1] linear model, via normal equations."""
    xt = np.hstack([data.inputs, np.ones((len(data), 1))])
    coef, *_ = np.linalg.lstsq(xt, data.labels, rcond=None)
    model = MlpModel([DenseLayer(coef[:-1, None], coef[-1:])], "linear")
    return model, xt


class TestAnalyticCovariance:
    def test_linear_known_noise_matches_ols_covariance(self):
        data, _ = synth_regression(300, 5, make_rng(8), noise_sd=0.4)
        model, xt = ols_fit(data)
        cov = analytic_ml_covariance(
            model, data, assume_true_model=True, noise_variance=0.16
        )
        closed = 0.16 * np.linalg.inv(xt.T @ xt)
        np.testing.assert_allclose(cov.v_ml, closed, rtol=1e-9, atol=1e-12)
        assert not cov.pseudo_inverse_used
        assert cov.method == "analytic_ml"

    def test_linear_estimates_noise_from_residuals(self):
        data, _ = synth_regression(200, 3, make_rng(9), noise_sd=0.5)
        model, xt = ols_fit(data)
        cov = analytic_ml_covariance(model, data, assume_true_model=True)
        resid = xt @ np.concatenate(
            [model.layers[0].weight.ravel(), model.layers[0].bias]
        ) - data.labels
        assert cov.noise_variance == pytest.approx(np.mean(resid**2), rel=1e-12)

    def test_softmax_fisher_matches_einsum_oracle(self):
        rng = make_rng(10)
        data = synth_blobs(40, 3, 3, rng)
        model = MlpModel.initialized([3, 3], "logits", seed=2)
        cov = analytic_ml_covariance(model, data)
        # independent dense construction: F = mean_i kron(xt xt^T, diag(p)-pp^T)
        xt = np.hstack([data.inputs, np.ones((len(data), 1))])
        logits = data.inputs @ model.layers[0].weight + model.layers[0].bias
        ex = np.exp(logits - logits.max(axis=1, keepdims=True))
        p = ex / ex.sum(axis=1, keepdims=True)
        d = p[:, :, None] * -p[:, None, :]
        idx = np.arange(3)
        d[:, idx, idx] += p
        want = np.einsum("ni,nj,nkl->ikjl", xt, xt, d).reshape(12, 12) / len(data)
        np.testing.assert_allclose(cov.fisher, want, rtol=1e-12, atol=1e-14)

    def test_softmax_fisher_is_singular_so_pinv_is_used(self):
        data = synth_blobs(30, 2, 2, make_rng(11))
        model = MlpModel.initialized([2, 2], "logits", seed=3)
        cov = analytic_ml_covariance(model, data)
        assert cov.pseudo_inverse_used
        # shifting every class's logit equally changes nothing, so the
        # all-ones direction (same bump on each class's row and bias) is
        # a structural null vector of the Fisher
        np.testing.assert_allclose(cov.fisher @ np.ones(6), 0.0, atol=1e-12)

    def test_sandwich_and_model_true_agree_on_well_specified_linear(self):
        rng = make_rng(12)
        n = 4000
        x = rng.standard_normal((n, 3))
        w_true = np.array([1.0, -2.0, 0.5])
        y = x @ w_true + 0.3 * rng.standard_normal(n)
        data = Dataset(x, y)
        model, _ = ols_fit(data)
        mt = analytic_ml_covariance(model, data, assume_true_model=True)
        sw = analytic_ml_covariance(model, data, assume_true_model=False)
        assert sw.method == "analytic_sandwich"
        d_mt, d_sw = np.diag(mt.v_ml), np.diag(sw.v_ml)
        assert np.all(np.abs(d_sw - d_mt) / d_mt < 0.15)

    def test_matrices_are_symmetric(self):
        data = synth_blobs(25, 2, 2, make_rng(13))
        model = MlpModel.initialized([2, 2], "logits", seed=1)
        cov = analytic_ml_covariance(model, data)
        np.testing.assert_array_equal(cov.fisher, cov.fisher.T)
        np.testing.assert_array_equal(cov.score_cov, cov.score_cov.T)
        np.testing.assert_array_equal(cov.v_ml, cov.v_ml.T)

    def test_guards(self):
        data = synth_blobs(20, 2, 2, make_rng(14))
        deep = MlpModel.initialized([2, 4, 2], "logits", seed=0)
        with pytest.raises(UnsupportedModelError):
            analytic_ml_covariance(deep, data)
        wide = MlpModel.initialized([2, 2], "logits", seed=0)
        with pytest.raises(ValueError, match="guard"):
            analytic_ml_covariance(wide, data, max_params=3)
        assert MAX_ANALYTIC_PARAMS == 2000
        tiny = data.subset([0])
        with pytest.raises(ValueError, match="at least 2"):
            analytic_ml_covariance(wide, tiny)

    def test_covariance_to_uncertainty_is_sqrt_diag(self):
        data, _ = synth_regression(100, 3, make_rng(15))
        model, _ = ols_fit(data)
        cov = analytic_ml_covariance(model, data, assume_true_model=True)
        um = covariance_to_uncertainty(cov)
        np.testing.assert_allclose(um.sigma, np.sqrt(np.diag(cov.v_ml)), rtol=1e-15)
        assert um.method == "analytic_ml"
        assert um.meta["diag_negative_count"] == 0


def test_mean_score_norm_vanishes_at_the_fit():
    data, _ = synth_regression(150, 4, make_rng(16), noise_sd=0.2)
    model, _ = ols_fit(data)
    assert mean_score_norm(model, data) < 1e-10
    model.layers[0].bias += 0.5
    assert mean_score_norm(model, data) > 0.1


class TestWald:
    def test_normal_cdf_anchors(self):
        assert normal_cdf(0.0) == 0.5
        assert normal_cdf(8.0) == pytest.approx(1.0, abs=1e-15)
        assert normal_cdf(-8.0) == pytest.approx(0.0, abs=1e-15)
        assert normal_cdf(1.0) == pytest.approx(0.8413447460685429, rel=1e-12)

    def test_normal_cdf_against_quadrature(self):
        from scipy.integrate import quad

        for x in (-2.5, -0.7, 0.3, 1.959964, 3.1):
            oracle, _ = quad(
                lambda t: np.exp(-t * t / 2) / np.sqrt(2 * np.pi), -np.inf, x
            )
            assert normal_cdf(x) == pytest.approx(oracle, abs=1e-10)

    def test_wald_statistic(self):
        z = wald_statistic(np.array([1.0, -2.0]), np.array([0.5, 0.5]))
        np.testing.assert_array_equal(z, [2.0, -4.0])
        with pytest.raises(ValueError):
            wald_statistic(1.0, 0.0)
        with pytest.raises(ValueError):
            wald_statistic(1.0, np.inf)

    def test_wald_p_values(self):
        assert wald_p_value(0.0) == 1.0
        assert wald_p_value(1.959964) == pytest.approx(0.05, abs=1e-4)
        assert wald_p_value(-1.959964) == pytest.approx(0.05, abs=1e-4)
        arr = wald_p_value(np.array([0.0, 1.0, 2.0]))
        assert arr.shape == (3,)
        assert np.all(np.diff(arr) < 0)
        with pytest.raises(ValueError):
            wald_p_value(np.nan)


class TestUncertaintyMapIO:
    def test_roundtrip(self, tmp_path):
        um = UncertaintyMap(np.array([0.1, 0.2]), "bootstrap", meta={"replicas": 4})
        path = tmp_path / "sigma.npz"
        um.save(path)
        back = UncertaintyMap.load(path)
        np.testing.assert_array_equal(back.sigma, um.sigma)
        assert back.method == "bootstrap" and back.meta == {"replicas": 4}

    def test_load_rejects_foreign_ordering(self, tmp_path):
        import json

        path = tmp_path / "sigma.npz"
        np.savez(
            path, sigma=np.array([0.1]), method="bootstrap",
            meta=json.dumps({}), ordering="other-v9",
        )
        with pytest.raises(AlignmentError, match=ORDERING_VERSION):
            UncertaintyMap.load(path)

    def test_validation(self):
        with pytest.raises(ValueError):
            UncertaintyMap(np.array([-0.1]), "bootstrap")
        with pytest.raises(ValueError):
            UncertaintyMap(np.array([np.nan]), "bootstrap")
        with pytest.raises(ValueError):
            UncertaintyMap(np.array([0.1]), "jackknife")

    def test_csv_export(self, tmp_path, small_model):
        um = UncertaintyMap(np.arange(small_model.param_count) * 0.5, "pseudo_bootstrap")
        path = tmp_path / "sigma.csv"
        um.write_csv(path, small_model)
        lines = path.read_text().splitlines()
        assert lines[0] == "flat_index,layer_id,sigma,method"
        assert len(lines) == 1 + small_model.param_count
        assert lines[1] == "0,0,0.0,pseudo_bootstrap"
        with pytest.raises(AlignmentError):
            um.write_csv(path, MlpModel.initialized([2, 2], seed=0))


class TestEstimatorInvariances:
    def test_pseudo_bootstrap_scale_equivariance(self):
        rng = make_rng(77)
        walk = np.cumsum(rng.standard_normal((14, 6)), axis=0)
        for c in (1e-3, 1e3):
            base = WeightTrace(param_count=6, capacity=8)
            scaled = WeightTrace(param_count=6, capacity=8)
            for i, row in enumerate(walk, start=1):
                base.observe(event(i, row))
                scaled.observe(event(i, c * row))
            np.testing.assert_allclose(
                pseudo_bootstrap_sigma(scaled).sigma,
                c * pseudo_bootstrap_sigma(base).sigma,
                rtol=1e-12,
            )

    def test_bootstrap_sigma_ignores_replica_order(self):
        from dataclasses import replace

        data, _ = synth_regression(60, 3, make_rng(6))
        template = MlpModel.initialized([3, 1], "linear", seed=5)
        cfg = TrainConfig(
            epochs=60, batch_size=10_000, optimizer="sgd", learning_rate=1.0, seed=0
        )
        seed = 31
        um = bootstrap_sigma(data, template, cfg, replicas=4, seed=seed)
        fits = []
        for r in range(4):
            ds_r = bootstrap_resample(data, derive_rng(seed, r, 0))
            m_r = MlpModel.initialized([3, 1], "linear", seed=derive_seed(seed, r, 1))
            train(m_r, ds_r, replace(cfg, seed=derive_seed(seed, r, 2)))
            fits.append(get_flat_params(m_r))
        shuffled = np.array(fits)[[2, 0, 3, 1]]
        want = np.std(shuffled - shuffled[0], axis=0, ddof=1)
        np.testing.assert_allclose(um.sigma, want, rtol=1e-12, atol=1e-15)

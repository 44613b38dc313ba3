"""Weighted-fit closed forms, the archive bookkeeping, and the
ESS-gated covariance ladder."""
import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import log_ndtr, logsumexp

from visyield import (
    ContractError,
    FailureSet,
    FitConfig,
    FitTier,
    GaussianProposal,
    SkewNormalProposal,
    fit_alpha,
    fit_mixture,
    full_sss_covariance,
    normalized_weights,
    scalar_sss_variance,
    true_omsv,
)
from visyield.fitting import (
    DEDUP_RADIUS,
    _DIAG_ESS_FLOOR,
    _FULL_ESS_FLOOR,
    _IDENTITY_ESS_FLOOR,
    _fit_component,
)

from conftest import make_failure_set


# ------------------------------------------------------- closed forms


def test_normalized_weights_two_point_reference():
    fs = make_failure_set([[3.0], [4.0]])
    np.testing.assert_allclose(
        normalized_weights(fs), [0.97068777, 0.02931223], atol=1e-8
    )


def test_true_omsv_two_point_reference():
    fs = make_failure_set([[3.0], [4.0]])
    assert true_omsv(fs)[0] == pytest.approx(3.0293122307513562, abs=1e-12)


def test_full_sss_covariance_two_point_reference():
    fs = make_failure_set([[3.0], [4.0]])
    mu = true_omsv(fs)
    # ridge inflates the raw weighted spread by 1e-6 relative
    assert full_sss_covariance(fs, mu)[0, 0] == pytest.approx(
        0.028453052332759434, rel=1e-9
    )


def test_scalar_sss_variance_reference():
    # symmetric pair on the x1 axis in the plane: mu = 0, sigma2 = 9/2
    fs = make_failure_set([[3.0, 0.0], [-3.0, 0.0]])
    assert scalar_sss_variance(fs, np.zeros(2)) == pytest.approx(4.5, abs=1e-12)


def test_normalized_weights_survive_deep_tails():
    # raw densities underflow around D ~ 100 at radius ~ 10; the
    # log-space normalization must not
    pts = np.full((3, 120), 10.0) + 0.01 * np.arange(3)[:, None]
    fs = make_failure_set(pts)
    assert np.all(np.exp(fs.log_weights) == 0.0)  # raw densities underflow
    w = normalized_weights(fs)
    assert np.all(np.isfinite(w)) and np.all(w > 0.0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_empty_archive_rejected():
    fs = FailureSet(2)
    for fn in (normalized_weights, true_omsv):
        with pytest.raises(ContractError):
            fn(fs)
    with pytest.raises(ContractError):
        full_sss_covariance(fs, np.zeros(2))


def test_weighted_mean_and_cov_match_numpy_on_random_sets():
    rng = np.random.default_rng(13)
    for _ in range(5):
        d = int(rng.integers(1, 5))
        pts = rng.normal(loc=2.0, size=(30, d))
        fs = make_failure_set(pts)
        lw = fs.log_weights
        w = np.exp(lw - lw.max())
        w /= w.sum()
        np.testing.assert_allclose(true_omsv(fs), w @ pts, rtol=1e-10)
        mu = true_omsv(fs)
        delta = pts - mu
        ref = (w[:, None] * delta).T @ delta
        got = full_sss_covariance(fs, mu)
        np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-7)


# ------------------------------------------------------- archive


def test_archive_dedup_within_batch_and_against_archive():
    fs = FailureSet(2)
    added = fs.extend(np.array([[1.0, 2.0], [1.0, 2.0], [3.0, 4.0]]))
    assert added == 2 and len(fs) == 2
    # a point within the dedup radius of an archived one is dropped
    added = fs.extend(np.array([[1.0, 2.0 + 0.1 * DEDUP_RADIUS]]))
    assert added == 0 and len(fs) == 2
    added = fs.extend(np.array([[1.0, 2.1]]))
    assert added == 1 and len(fs) == 3


def test_archive_default_weights_are_standard_normal_density():
    pts = np.array([[0.0, 0.0], [3.0, 0.0]])
    fs = make_failure_set(pts)
    np.testing.assert_allclose(
        fs.log_weights, [-np.log(2 * np.pi), -np.log(2 * np.pi) - 4.5], rtol=1e-12
    )


def test_archive_dimension_and_weight_length_checks():
    fs = FailureSet(2)
    with pytest.raises(ContractError):
        fs.extend(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        fs.extend(np.zeros((2, 2)), log_weights=np.zeros(3))


def test_generator_mixture_weights_hand_computed():
    pts = np.array([[0.0], [3.0]])
    fs = make_failure_set(pts, reweight=True)
    lq1 = stats.norm.logpdf(pts[:, 0], loc=0.0)
    lq2 = stats.norm.logpdf(pts[:, 0], loc=3.0)
    fs.add_generator(lq1, 10)
    fs.add_generator(lq2, 30)
    mix = logsumexp(
        np.stack([np.log(10.0) + lq1, np.log(30.0) + lq2]), axis=0
    )
    np.testing.assert_allclose(
        fs.effective_log_weights, fs.log_weights - mix, rtol=1e-12
    )
    assert fs.n_generators == 2


def test_generator_reweighting_off_passes_raw_weights():
    fs = make_failure_set([[0.0], [3.0]], reweight=False)
    fs.add_generator(np.zeros(2), 10)  # no-op when disabled
    np.testing.assert_array_equal(fs.effective_log_weights, fs.log_weights)
    assert fs.n_generators == 0


def test_uncovered_points_rejected_under_reweighting():
    fs = make_failure_set([[0.0]], reweight=True)
    fs.add_generator(np.array([-1.0]), 5)
    fs.extend(np.array([[2.0]]))  # not covered by any noted generator
    with pytest.raises(ContractError):
        _ = fs.effective_log_weights


def test_generator_density_length_validated():
    fs = make_failure_set([[0.0], [1.0]], reweight=True)
    with pytest.raises(ContractError):
        fs.add_generator(np.zeros(3), 5)
    with pytest.raises(ContractError):
        fs.add_generator(np.zeros(2), 0)


def test_subset_keeps_reweighting_state():
    fs = make_failure_set([[0.0], [1.0], [2.0]], reweight=True)
    fs.add_generator(np.array([-1.0, -2.0, -3.0]), 4)
    sub = fs.subset(np.array([True, False, True]))
    assert len(sub) == 2 and sub.n_generators == 1
    np.testing.assert_allclose(
        sub.effective_log_weights, fs.effective_log_weights[[0, 2]], rtol=1e-12
    )


# ------------------------------------------------------- alpha fit


def test_fit_alpha_zero_on_symmetric_data():
    pts = np.array([[1.0], [-1.0], [2.0], [-2.0]])
    fs = make_failure_set(pts, log_weights=np.zeros(4))
    alpha = fit_alpha(fs, np.zeros(1), np.eye(1))
    assert abs(alpha[0]) < 1e-6


def test_fit_alpha_never_scores_below_zero_shape():
    rng = np.random.default_rng(29)
    for _ in range(5):
        d = int(rng.integers(1, 4))
        pts = rng.normal(loc=1.0, size=(25, d)) * rng.uniform(0.5, 2.0)
        fs = make_failure_set(pts)
        mu = true_omsv(fs)
        sigma = full_sss_covariance(fs, mu)
        alpha = fit_alpha(fs, mu, sigma)
        w = normalized_weights(fs)
        centered = fs.points - mu

        def objective(a):
            return float(w @ log_ndtr(centered @ a))

        assert objective(alpha) >= objective(np.zeros(d)) - 1e-12


def test_fit_alpha_positive_when_all_points_above_mu():
    pts = np.linspace(0.5, 3.0, 12)[:, None]
    fs = make_failure_set(pts, log_weights=np.zeros(12))
    mu = np.zeros(1)
    alpha = fit_alpha(fs, mu, np.eye(1))
    assert alpha[0] > 0.0
    w = normalized_weights(fs)

    def objective(a):
        return float(w @ log_ndtr((pts - mu) @ a))

    assert objective(alpha) > objective(np.zeros(1))


def test_alpha_stage_is_stationary_at_the_weighted_mean():
    # J(alpha) = sum w ln Phi(alpha.(x - mu)) is concave, and its gradient
    # at alpha = 0 is proportional to sum w (x - mu).  With mu set to the
    # weighted mean (as the component fit does) that is exactly zero, so
    # the staged fit's shape comes out identically zero: the skew tier
    # adds shape only when the location is offset from the weight mean.
    rng = np.random.default_rng(83)
    pts = rng.lognormal(size=(40, 3))  # heavily skewed cloud
    fs = make_failure_set(pts)
    comp = _fit_component(fs, FitConfig(tier=FitTier.SKEW_NORMAL))
    np.testing.assert_array_equal(comp.shape, np.zeros(3))


# ------------------------------------------------- covariance tier ladder


def equal_weight_set(points):
    return make_failure_set(points, log_weights=np.zeros(len(points)))


def correlated_cloud(rng, n, d=6):
    base = rng.normal(size=(n, d))
    base[:, 1] = 0.7 * base[:, 0] + 0.3 * base[:, 1]  # real off-diagonal
    return base * np.linspace(1.0, 2.0, d) + 3.0


def test_identity_floor_below_six_effective_samples():
    rng = np.random.default_rng(43)
    fs = equal_weight_set(correlated_cloud(rng, 4))
    comp = _fit_component(fs, FitConfig(tier=FitTier.FULL_COVARIANCE))
    np.testing.assert_array_equal(comp.scale, np.eye(6))


def test_identity_floor_is_ess_based_not_count_based():
    rng = np.random.default_rng(47)
    pts = correlated_cloud(rng, 200)
    lw = np.full(200, -40.0)
    lw[0] = 0.0  # one point holds essentially all the weight
    fs = make_failure_set(pts, log_weights=lw)
    assert 1.0 / (normalized_weights(fs) ** 2).sum() < _IDENTITY_ESS_FLOOR
    comp = _fit_component(fs, FitConfig(tier=FitTier.FULL_COVARIANCE))
    np.testing.assert_array_equal(comp.scale, np.eye(6))
    np.testing.assert_allclose(comp.location, true_omsv(fs), rtol=1e-12)


def test_scalar_band_between_identity_and_diagonal_floors():
    # d=6: scalar serves ess in [6, 8)
    rng = np.random.default_rng(53)
    fs = equal_weight_set(correlated_cloud(rng, 7))
    assert _IDENTITY_ESS_FLOOR <= 7 < _DIAG_ESS_FLOOR(6)
    comp = _fit_component(fs, FitConfig(tier=FitTier.FULL_COVARIANCE))
    diag = np.diag(comp.scale)
    assert np.ptp(diag) < 1e-12 and diag[0] != 1.0
    assert np.all(comp.scale[~np.eye(6, dtype=bool)] == 0.0)


def test_diagonal_band_below_full_floor():
    rng = np.random.default_rng(59)
    fs = equal_weight_set(correlated_cloud(rng, 40))
    assert _DIAG_ESS_FLOOR(6) <= 40 < _FULL_ESS_FLOOR(6)
    comp = _fit_component(fs, FitConfig(tier=FitTier.FULL_COVARIANCE))
    assert np.all(comp.scale[~np.eye(6, dtype=bool)] == 0.0)
    assert np.ptp(np.diag(comp.scale)) > 0.1  # per-axis, not isotropic


def test_full_covariance_above_floor_keeps_correlations():
    rng = np.random.default_rng(61)
    fs = equal_weight_set(correlated_cloud(rng, 400))
    comp = _fit_component(fs, FitConfig(tier=FitTier.FULL_COVARIANCE))
    assert abs(comp.scale[0, 1]) > 0.05
    np.testing.assert_allclose(
        comp.scale, full_sss_covariance(fs, true_omsv(fs)), rtol=1e-12
    )


def test_tier_overrides_ignore_sample_size():
    rng = np.random.default_rng(67)
    fs = equal_weight_set(correlated_cloud(rng, 400))
    ms = _fit_component(fs, FitConfig(tier=FitTier.MEAN_SHIFT_ONLY))
    np.testing.assert_array_equal(ms.scale, np.eye(6))
    np.testing.assert_array_equal(ms.shape, np.zeros(6))
    sc = _fit_component(fs, FitConfig(tier=FitTier.SCALAR_SSS))
    assert np.ptp(np.diag(sc.scale)) < 1e-12
    sn = _fit_component(fs, FitConfig(tier=FitTier.SKEW_NORMAL))
    assert sn.shape.shape == (6,)


# ------------------------------------------------------- mixture fit


def test_fit_mixture_single_component_without_clusterer():
    rng = np.random.default_rng(71)
    fs = make_failure_set(rng.normal(loc=3.0, size=(60, 2)))
    mix = fit_mixture(fs, FitConfig(tier=FitTier.MIXTURE_SKEW_NORMAL))
    assert len(mix.components) == 1
    assert mix.weights[0] == 1.0


def test_fit_mixture_uses_clusterer_and_occupancy_weights():
    rng = np.random.default_rng(73)
    a = rng.normal(loc=+6.0, scale=0.3, size=(30, 2))
    b = rng.normal(loc=-6.0, scale=0.3, size=(10, 2))
    fs = make_failure_set(np.concatenate([a, b]), log_weights=np.zeros(40))

    from visyield import select_clusters

    def clusterer(points):
        return select_clusters(points, 4, 0.25, np.random.default_rng(0))

    mix = fit_mixture(fs, FitConfig(tier=FitTier.MIXTURE_SKEW_NORMAL), clusterer)
    assert len(mix.components) == 2
    np.testing.assert_allclose(sorted(mix.weights), [0.25, 0.75], rtol=1e-12)
    locs = sorted(c.location[0] for c in mix.components)
    assert locs[0] < -5 < 5 < locs[1]


def test_fit_mixture_below_mixture_tier_never_clusters():
    rng = np.random.default_rng(79)
    pts = np.concatenate(
        [rng.normal(6, 0.3, (20, 2)), rng.normal(-6, 0.3, (20, 2))]
    )
    fs = make_failure_set(pts, log_weights=np.zeros(40))

    def exploding_clusterer(points):
        raise AssertionError("clusterer must not be called below the mixture tier")

    mix = fit_mixture(fs, FitConfig(tier=FitTier.FULL_COVARIANCE), exploding_clusterer)
    assert len(mix.components) == 1

import numpy as np
import pytest

from projdiff.core import ConfigurationError, NumericError, RngStream, make_geometric_schedule
from projdiff.metrics import sliced_wasserstein
from projdiff.projections import BoxConstraint, HalfspaceConstraint, IdentityConstraint
from projdiff.sampler import (DivergenceError, ProjectedLangevinSampler, SamplerConfig,
                              projected_step, sample, sample_sde_corrector, snr_step_size,
                              update_step_U)
from projdiff.score import GaussianMixture


class ZeroNoise:
    def normal(self, shape):
        return np.zeros(shape)


def zero_score(x, sigma=None):
    return np.zeros_like(np.asarray(x, dtype=float))


def neg_identity(x, sigma=None):
    return -np.asarray(x, dtype=float)


STD_NORMAL = GaussianMixture.single([0.0], 1.0)
X_GE_1 = HalfspaceConstraint([-1.0], -1.0)


def halfspace_config(variant, **kw):
    return SamplerConfig(make_geometric_schedule(0.01, 1.0, 10), M=100, variant=variant, **kw)


def truncated_oracle(sigma_1, n=400_000, seed=99):
    """Rejection sampling: N(0, 1 + sigma_1^2) draws kept when >= 1."""
    z = RngStream(seed).normal(n) * np.sqrt(1.0 + sigma_1**2)
    z = z[z >= 1.0]
    return z.mean(), z.std(ddof=1) / np.sqrt(z.size)


# ------------------------------------------------------------------ single steps

def test_update_zero_score_zero_noise_is_identity():
    x = np.array([0.3, -2.0])
    np.testing.assert_array_equal(update_step_U(x, zero_score, 0.1, ZeroNoise()), x)


def test_update_gaussian_arithmetic():
    assert update_step_U(np.array([2.0]), neg_identity, 0.5, ZeroNoise())[0] == 1.0


def test_update_noise_mean_matches_drift():
    gamma, n = 0.2, 100_000
    x = np.full((n, 1), 1.5)
    y = update_step_U(x, neg_identity, gamma, RngStream(3))
    assert abs(y.mean() - 1.5 * (1 - gamma)) <= 3 * np.sqrt(2 * gamma / n)


def test_update_rejects_bad_score_and_gamma():
    with pytest.raises(NumericError):
        update_step_U(np.zeros(2), lambda x, s: np.full(2, np.nan), 0.1, RngStream(0))
    with pytest.raises(ConfigurationError):
        update_step_U(np.zeros(2), zero_score, 0.0, RngStream(0))


def test_projected_step_identity_reduction_bitwise():
    x = RngStream(1).normal((5, 3))
    a = projected_step(x, neg_identity, 0.3, IdentityConstraint(), RngStream(4, 2))
    b = update_step_U(x, neg_identity, 0.3, RngStream(4, 2))
    np.testing.assert_array_equal(a, b)


def test_projected_step_examples():
    box = BoxConstraint(-1.0, 1.0)
    x = np.array([3.0, -0.5])
    np.testing.assert_array_equal(projected_step(x, zero_score, 0.1, box, ZeroNoise()), box.project(x))
    c = HalfspaceConstraint([1.0], 0.0)
    assert update_step_U(np.array([4.0]), neg_identity, 0.5, ZeroNoise())[0] == 2.0
    assert projected_step(np.array([4.0]), neg_identity, 0.5, c, ZeroNoise())[0] == 0.0


# ------------------------------------------------------------------- full chains

def test_pgdm_halfspace_feasible_and_mean_matches_rejection_oracle():
    cfg = halfspace_config("pgdm_alg1")
    X, traces = sample(cfg, STD_NORMAL, X_GE_1, 2000)
    assert np.all(X >= 1.0)
    assert np.all(X_GE_1.is_feasible(X, 0.0))
    mean, se_oracle = truncated_oracle(cfg.schedule.sigma(1))
    se = X.std(ddof=1) / np.sqrt(len(X))
    assert abs(X.mean() - mean) <= 3 * np.hypot(se, se_oracle)
    assert 1.0 <= X.mean() <= 1.6
    assert len(traces) == 2000 and traces[0].t.size == 1000


def test_unconstrained_gmm_close_to_fresh_draws():
    gmm = GaussianMixture([0.5, 0.5], [[-2.0, 0.0], [2.0, 0.0]], [0.25, 0.25])
    cfg = SamplerConfig(make_geometric_schedule(0.01, 2.0, 10), M=100, variant="unconstrained")
    X, _ = sample(cfg, gmm, None, 2000, 2)
    ref = gmm.sample(10_000, RngStream(9, 3))
    assert sliced_wasserstein(X, ref, 100, RngStream(0, 4)) <= 0.1


def test_post_proc_is_projected_unconstrained_output():
    X_u, _ = sample(halfspace_config("unconstrained"), STD_NORMAL, X_GE_1, 300)
    X_p, _ = sample(halfspace_config("post_proc"), STD_NORMAL, X_GE_1, 300)
    np.testing.assert_array_equal(X_p, X_GE_1.project(X_u))


def test_projection_start_zero_equals_unconstrained():
    X_u, _ = sample(halfspace_config("unconstrained"), STD_NORMAL, X_GE_1, 100)
    X_g, _ = sample(halfspace_config("pgdm_alg1", projection_start_t=0), STD_NORMAL, X_GE_1, 100)
    np.testing.assert_array_equal(X_g, X_u)


def test_late_projection_start_still_feasible():
    X, traces = sample(halfspace_config("pgdm_alg1", projection_start_t=3), STD_NORMAL, X_GE_1, 200)
    assert np.all(X >= 1.0)
    assert np.all(np.isnan(traces[0].pre_error[traces[0].t > 3]))
    assert np.all(np.isfinite(traces[0].pre_error[traces[0].t <= 3]))


def test_sampling_is_deterministic_per_seed():
    a, _ = sample(halfspace_config("pgdm_alg1", seed=5), STD_NORMAL, X_GE_1, 50)
    b, _ = sample(halfspace_config("pgdm_alg1", seed=5), STD_NORMAL, X_GE_1, 50)
    c, _ = sample(halfspace_config("pgdm_alg1", seed=6), STD_NORMAL, X_GE_1, 50)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_divergence_raises_with_trace():
    def exploding(x, sigma):
        return 1e9 * np.ones_like(x)

    with pytest.raises(DivergenceError) as info:
        sample(halfspace_config("unconstrained"), exploding, None, 4, 1)
    assert info.value.trace is not None and len(info.value.trace) == 4


def test_config_validation():
    sched = make_geometric_schedule(0.01, 1.0, 5)
    for kw in (dict(M=0), dict(projection_start_t=6), dict(variant="ddim"), dict(snr_r=0.0),
               dict(snr_norm="median")):
        with pytest.raises(ConfigurationError):
            SamplerConfig(sched, **kw)


# ------------------------------------------------------------------ corrector

def test_snr_step_equal_norms():
    eps, g = np.array([[3.0, 4.0]]), np.array([[0.0, 5.0]])
    assert snr_step_size(eps, g, 0.5, norm="chain")[0] == pytest.approx(0.5)
    assert snr_step_size(eps, g, 0.5, norm="batch")[0] == pytest.approx(0.5)


def test_snr_zero_gradient_reuses_previous():
    gamma = snr_step_size(np.ones((2, 2)), np.array([[0.0, 0.0], [1.0, 1.0]]), 0.5, "chain",
                          previous=[0.07, 0.07])
    assert gamma[0] == 0.07 and gamma[1] == pytest.approx(0.5)
    assert np.isnan(snr_step_size(np.ones((1, 2)), np.zeros((1, 2)), 0.5, "chain")[0])


def test_corrector_identity_matches_unprojected_run():
    cfg = halfspace_config("sde_corrector")
    a, _ = sample_sde_corrector(cfg, STD_NORMAL, IdentityConstraint(), 100, 1)
    b, _ = sample_sde_corrector(cfg, STD_NORMAL, None, 100, 1)
    np.testing.assert_array_equal(a, b)


def test_corrector_halfspace_feasible_and_in_band():
    X, traces = sample(halfspace_config("sde_corrector"), STD_NORMAL, X_GE_1, 1000)
    assert np.all(X >= 1.0)
    assert 1.0 <= X.mean() <= 1.6
    assert np.all(np.isfinite(traces[0].gamma))


def test_corrector_zero_gradient_falls_back_to_schedule():
    cfg = halfspace_config("sde_corrector")
    _, traces = sample(cfg, zero_score, None, 3, 1)
    np.testing.assert_array_equal(traces[0].gamma[:100], cfg.schedule.gamma(10))


# ------------------------------------------------------------------ estimator

def test_estimator_samples_feasibly():
    X = RngStream(0).normal((300, 2))
    est = ProjectedLangevinSampler(constraint=BoxConstraint(-0.5, 0.5), bandwidth=0.05, M=20).fit(X)
    Y = est.sample(64)
    assert Y.shape == (64, 2) and np.all(np.abs(Y) <= 0.5)
    assert est.get_params()["M"] == 20


def test_estimator_accepts_prefit_score():
    est = ProjectedLangevinSampler(constraint=X_GE_1, score_model=STD_NORMAL, M=10).fit()
    Y, traces = est.sample(16, return_traces=True)
    assert np.all(Y >= 1.0) and len(traces) == 16

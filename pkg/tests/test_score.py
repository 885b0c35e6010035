import numpy as np
import pytest

from projdiff.core import (ConfigurationError, DimensionError, RngStream,
                           make_geometric_schedule)
from projdiff.score import (DsmConfig, DsmScoreModel, GaussianMixture, MlpScoreNet,
                            cosine_similarity, dsm_loss, dsm_train, gmm_log_density, gmm_score,
                            mlp_backward, mlp_forward)

# log density of the mixture below at x=(0.2, 0.1), sigma=0.3, from 40-digit mpmath
K2_LOGPDF_ORACLE = -3.400505651759775473679632487699573978043


def k2_mixture():
    return GaussianMixture([0.3, 0.7], [[-1.0, 0.5], [2.0, -1.0]], [[0.5, 0.5], [1.0, 2.0]])


def test_log_density_standard_normal():
    g = GaussianMixture.single([0.0], 1.0)
    assert gmm_log_density(g, [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
    assert gmm_log_density(g, [0.0], 1.0) == pytest.approx(-0.5 * np.log(4 * np.pi), abs=1e-15)


def test_log_density_k2_oracle():
    assert gmm_log_density(k2_mixture(), [0.2, 0.1], 0.3) == pytest.approx(K2_LOGPDF_ORACLE, rel=1e-13)


def test_single_gaussian_score_closed_form():
    g = GaussianMixture.single([0.0, 0.0], 1.0)
    x = np.array([[0.3, -1.2], [2.0, 0.5]])
    np.testing.assert_allclose(gmm_score(g, x), -x)
    m, v, s = np.array([1.0, -2.0]), 0.7, 0.4
    g = GaussianMixture.single(m, v)
    np.testing.assert_allclose(gmm_score(g, x, s), -(x - m) / (v + s**2), rtol=1e-14)


@pytest.mark.parametrize("sigma", [0.0, 0.3, 1.5])
def test_score_matches_finite_differences(sigma):
    g = k2_mixture()
    rng = RngStream(4, 0)
    h = 1e-5
    for x in rng.normal((10, 2)) * 1.5:
        fd = np.array([(gmm_log_density(g, x + h * e, sigma) - gmm_log_density(g, x - h * e, sigma)) / (2 * h)
                       for e in np.eye(2)])
        np.testing.assert_allclose(gmm_score(g, x, sigma), fd, rtol=1e-6, atol=1e-9)


def test_density_at_mode_decreases_with_sigma():
    g = GaussianMixture.single([0.5, 0.5], 0.3)
    vals = [gmm_log_density(g, [0.5, 0.5], s) for s in (0.0, 0.1, 0.5, 1.0, 3.0)]
    assert np.all(np.diff(vals) < 0)


def test_mixture_validation():
    with pytest.raises(ConfigurationError):
        GaussianMixture([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(ConfigurationError):
        GaussianMixture([1.0], [[0.0]], [0.0])
    with pytest.raises(DimensionError):
        gmm_score(k2_mixture(), [1.0, 2.0, 3.0])


def test_empirical_mixture_score_is_finite_far_away():
    g = GaussianMixture.from_samples(RngStream(0).normal((50, 3)), 1e-4)
    s = g.score(np.full(3, 40.0), 0.01)
    assert np.all(np.isfinite(s))


# ----------------------------------------------------------------------- MLP

def linear_net(W, b):
    W, b = np.asarray(W, float), np.asarray(b, float)
    return MlpScoreNet([W.shape[1], W.shape[0]], [W], [b], conditioning="none")


def test_zero_net_outputs_zero():
    net = MlpScoreNet.init(3, (8, 8), RngStream(0), zero=True)
    np.testing.assert_array_equal(mlp_forward(net, np.ones((4, 3)), 0.5), np.zeros((4, 3)))


def test_forward_deterministic():
    net = MlpScoreNet.init(2, (16,), RngStream(1))
    x = np.array([0.3, -0.2])
    np.testing.assert_array_equal(mlp_forward(net, x, 0.2), mlp_forward(net, x, 0.2))


def test_linear_net_against_matrix_product():
    W = np.array([[1.0, 2.0], [-0.5, 3.0]])
    b = np.array([0.25, -1.0])
    x = np.array([[1.0, -1.0], [0.5, 2.0]])
    expected = np.array([[1.0 - 2.0 + 0.25, -0.5 - 3.0 - 1.0], [0.5 + 4.0 + 0.25, -0.25 + 6.0 - 1.0]])
    np.testing.assert_allclose(mlp_forward(linear_net(W, b), x), expected, rtol=1e-15)


def test_linear_net_weight_gradient_is_outer_product():
    net = linear_net([[1.0, 2.0], [3.0, 4.0]], [0.0, 0.0])
    x, up = np.array([0.7, -1.1]), np.array([2.0, -0.5])
    (dW, db), = mlp_backward(net, x, 1.0, up)
    np.testing.assert_allclose(dW, np.outer(up, x))
    np.testing.assert_allclose(db, up)


def test_zero_upstream_gives_zero_gradients():
    net = MlpScoreNet.init(2, (5, 5), RngStream(2))
    for dW, db in mlp_backward(net, np.ones((3, 2)), 0.3, np.zeros((3, 2))):
        assert not dW.any() and not db.any()


@pytest.mark.parametrize("activation,conditioning", [("tanh", "log_sigma_input_and_scale"),
                                                     ("softplus", "none"),
                                                     ("identity", "log_sigma_input_and_scale")])
def test_backward_matches_finite_differences(activation, conditioning):
    rng = RngStream(3)
    net = MlpScoreNet.init(3, (6, 5), rng, activation=activation, conditioning=conditioning)
    for W in net.weights:
        W += 0.3 * rng.normal(W.shape)
    x = rng.normal((4, 3))
    sigma = np.array([0.2, 0.5, 1.0, 2.0])
    up = rng.normal((4, 3))
    grads = [g for pair in mlp_backward(net, x, sigma, up) for g in pair]
    theta = net.flat_parameters()
    analytic = np.concatenate([g.ravel() for g in grads])
    h = 1e-6

    def objective(t):
        net.set_flat_parameters(t)
        return np.sum(up * mlp_forward(net, x, sigma))

    fd = np.array([(objective(theta + h * e) - objective(theta - h * e)) / (2 * h)
                   for e in np.eye(theta.size)])
    net.set_flat_parameters(theta)
    np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-8)


def test_dimension_errors():
    net = MlpScoreNet.init(2, (4,), RngStream(0))
    with pytest.raises(DimensionError):
        mlp_forward(net, np.ones(3), 0.5)
    with pytest.raises(DimensionError):
        mlp_backward(net, np.ones(2), 0.5, np.ones(3))


def test_checkpoint_roundtrip(tmp_path):
    net = MlpScoreNet.init(2, (7, 3), RngStream(5))
    net.save(tmp_path / "net.bin")
    loaded = MlpScoreNet.load(tmp_path / "net.bin")
    np.testing.assert_array_equal(loaded.flat_parameters(), net.flat_parameters())
    header = (tmp_path / "net.bin").read_bytes().split(b"\n", 1)[0]
    assert b'"widths": [3, 7, 3, 2]' in header


# ----------------------------------------------------------------------- DSM

def test_dsm_loss_of_zero_net_is_half_noise_energy():
    net = MlpScoreNet.init(2, (4,), RngStream(0), zero=True)
    x0 = np.zeros((3, 2))
    eps = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    loss, _, _ = dsm_loss(net, x0, np.full(3, 0.5), eps)
    assert loss == pytest.approx(0.5 * np.mean(np.sum(eps**2, axis=1)))


def test_single_point_data_score_points_to_point():
    x_star = np.array([1.0, -2.0])
    data = np.tile(x_star, (256, 1))
    sched = make_geometric_schedule(0.1, 1.0, 4)
    net = MlpScoreNet.init(2, (32, 32), RngStream(0))
    res = dsm_train(net, data, sched, DsmConfig(epochs=150, batch_size=64, schedule=sched))
    probes = x_star + np.array([[0.3, 0.0], [0.0, -0.3], [-0.2, 0.2]])
    s = mlp_forward(res.net, probes, 0.5)
    assert np.all(cosine_similarity(s, x_star - probes) > 0.9)


def test_loss_trace_finite_and_decreasing():
    data = GaussianMixture.single([0.0, 1.0], 0.5).sample(500, RngStream(0))
    sched = make_geometric_schedule(0.05, 2.0, 10)
    net = MlpScoreNet.init(2, (32,), RngStream(0))
    res = dsm_train(net, data, sched, DsmConfig(epochs=20, schedule=sched))
    assert len(res.train_loss) == 20
    assert np.all(np.isfinite(res.train_loss)) and np.all(np.isfinite(res.holdout_loss))
    assert res.holdout_loss[-1] < res.initial_holdout_loss


def test_dsm_config_validation():
    with pytest.raises(ConfigurationError):
        DsmConfig(epochs=0)
    with pytest.raises(ConfigurationError):
        DsmConfig(holdout_fraction=1.0)


def test_estimator_is_fitted_callable():
    X = RngStream(0).normal((200, 2))
    model = DsmScoreModel(hidden=(8,), epochs=2, sigma_min=0.1, sigma_max=1.0).fit(X)
    assert model(X[:5], 0.5).shape == (5, 2)
    assert model.n_features_in_ == 2
    assert DsmScoreModel().get_params()["hidden"] == (64, 64)

import numpy as np
import pytest

from projdiff.core import (ConfigurationError, DimensionError, NoiseSchedule, NumericError,
                           RngStream, StateVector, gaussian_noise, linear_vp_betas,
                           make_geometric_schedule)

# 0.01 * (10 / 0.01) ** (4 / 9), evaluated with 40-digit mpmath
SIGMA5_ORACLE = 0.2154434690031883721759293566519350495259


def test_two_level_schedule():
    s = make_geometric_schedule(0.01, 1.0, 2)
    np.testing.assert_allclose(s.sigmas, [0.01, 1.0])
    np.testing.assert_allclose(s.gammas, [5e-5, 0.5])


@pytest.mark.parametrize("lo,ratio,T", [(0.1, 3.0, 5), (2.0, 1.5, 12), (1e-4, 1e4, 50)])
def test_top_gamma_is_half(lo, ratio, T):
    assert make_geometric_schedule(lo, lo * ratio, T).gammas[-1] == 0.5


def test_sigma5_against_high_precision_oracle():
    s = make_geometric_schedule(0.01, 10.0, 10)
    assert s.sigma(5) == pytest.approx(SIGMA5_ORACLE, rel=1e-14)


def test_schedule_endpoints_exact_and_monotone():
    s = make_geometric_schedule(0.03, 7.0, 17)
    assert s.sigmas[0] == 0.03 and s.sigmas[-1] == 7.0
    assert np.all(np.diff(s.sigmas) > 0) and np.all(np.diff(s.gammas) > 0)
    assert s.T == 17


@pytest.mark.parametrize("args", [(0.0, 1.0, 10), (1.0, 0.5, 10), (0.1, 1.0, 1), (0.1, 1.0, 2.5),
                                  (0.1, np.inf, 5)])
def test_schedule_rejects_bad_inputs(args):
    with pytest.raises(ConfigurationError):
        make_geometric_schedule(*args)


def test_vp_fields():
    s = make_geometric_schedule(0.01, 1.0, 10, vp_betas=linear_vp_betas(10))
    ab = s.vp_alpha_bars
    assert np.all(np.diff(ab) < 0) and np.all((ab > 0) & (ab < 1))
    with pytest.raises(ConfigurationError):
        NoiseSchedule(np.array([0.1, 0.2]), vp_betas=np.array([0.1, 1.0]))


def test_schedule_arrays_are_read_only():
    s = make_geometric_schedule(0.01, 1.0, 4)
    with pytest.raises(ValueError):
        s.sigmas[0] = 5.0


def test_rng_reproducible_and_advancing():
    a = RngStream(7, 3)
    x1, x2 = gaussian_noise(a, 3), gaussian_noise(a, 3)
    assert not np.array_equal(x1, x2)
    b = RngStream(7, 3)
    np.testing.assert_array_equal(gaussian_noise(b, 3), x1)
    np.testing.assert_array_equal(gaussian_noise(b, 3), x2)


def test_rng_streams_differ():
    assert not np.array_equal(RngStream(7, 0).normal(4), RngStream(7, 1).normal(4))


def test_gaussian_noise_moments():
    z = RngStream(0, 0).normal((1_000_000, 2))
    assert np.all(np.abs(z.mean(axis=0)) <= 0.01)
    assert np.all((z.var(axis=0) >= 0.99) & (z.var(axis=0) <= 1.01))


def test_gaussian_noise_rejects_dim0():
    with pytest.raises(ConfigurationError):
        gaussian_noise(RngStream(0), 0)


def test_state_vector_roundtrip_and_validation():
    v = StateVector(np.arange(12.0), "grid", (3, 2, 2))
    assert v.dim == 12 and v.reshaped().shape == (3, 2, 2)
    with pytest.raises(DimensionError):
        StateVector(np.arange(5.0), "path", (5, 1))
    with pytest.raises(DimensionError):
        StateVector(np.arange(6.0), "grid", (4, 2, 2))
    with pytest.raises(ConfigurationError):
        StateVector(np.zeros(2), "video")
    with pytest.raises(NumericError):
        StateVector(np.array([0.0, np.nan]))

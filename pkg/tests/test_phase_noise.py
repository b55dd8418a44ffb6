import math

import numpy as np
import pytest
from scipy import integrate, signal, stats

from phasedistill.phase_noise import (
    FILTER_ORDER,
    PhaseDistribution,
    PhaseProcessConfig,
    bandpass_taps,
    density,
    sample_bandlimited,
    sample_iid,
)
from phasedistill.rng import make_rng


def test_density_at_origin():
    assert density(PhaseDistribution(0.5), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi * 0.25), rel=1e-14)
    assert density(PhaseDistribution(0.5), 0.0) == pytest.approx(0.7978845608, abs=1e-10)


@pytest.mark.parametrize("sigma", [0.05, 0.28, 1.3])
def test_density_symmetric_and_normalised(sigma):
    dist = PhaseDistribution(sigma)
    phi = np.linspace(0, 5 * sigma, 17)
    np.testing.assert_array_equal(density(dist, phi), density(dist, -phi))
    total, _ = integrate.quad(lambda x: density(dist, x), -8 * sigma, 8 * sigma, epsabs=1e-14)
    assert abs(total - 1.0) < 1e-10


def test_density_rejects_delta():
    with pytest.raises(ValueError, match="sigma = 0"):
        density(PhaseDistribution(0.0), 0.1)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        PhaseDistribution(-0.1)
    with pytest.raises(ValueError):
        PhaseProcessConfig(sigma=-1.0)


def test_iid_zero_sigma():
    out = sample_iid(PhaseDistribution(0.0), 1000, seed=3)
    assert out.shape == (1000,)
    assert not out.any()


def test_iid_variance_and_mean():
    sigma, n = 0.28, 10**6
    x = sample_iid(PhaseDistribution(sigma), n, seed=11)
    assert abs(np.var(x) - sigma**2) < 3 * math.sqrt(2 / n) * sigma**2
    assert abs(np.mean(x)) < 3 * sigma / math.sqrt(n)


def test_iid_deterministic():
    dist = PhaseDistribution(0.28)
    np.testing.assert_array_equal(sample_iid(dist, 500, seed=7), sample_iid(dist, 500, seed=7))
    assert not np.array_equal(sample_iid(dist, 500, seed=7), sample_iid(dist, 500, seed=8))


def test_iid_goodness_of_fit():
    sigma = 0.28
    x = sample_iid(PhaseDistribution(sigma), 10**5, seed=5)
    assert stats.kstest(x, stats.norm(scale=sigma).cdf).pvalue > 0.01


def test_iid_rejects_empty():
    with pytest.raises(ValueError):
        sample_iid(PhaseDistribution(0.1), 0)


def test_distinct_streams_do_not_overlap():
    a = make_rng(1, 1, 0, 1).standard_normal(1000)
    b = make_rng(1, 1, 0, 2).standard_normal(1000)
    assert not np.intersect1d(a, b).size


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(band_low=0.0),
        dict(band_low=5e3, band_high=1e3),
        dict(band_high=50e3),
        dict(sample_rate=8e3),
    ],
)
def test_invalid_band_rejected(kwargs):
    with pytest.raises(ValueError, match="band"):
        PhaseProcessConfig(**kwargs)


def test_bandlimited_zero_sigma():
    assert not sample_bandlimited(PhaseProcessConfig(sigma=0.0), 1000).any()


@pytest.fixture(scope="module")
def long_process():
    config = PhaseProcessConfig(sigma=0.28, seed=4)
    return config, sample_bandlimited(config, 10**6)


def test_bandlimited_variance_mean_and_correlation(long_process):
    config, x = long_process
    assert abs(np.var(x) / config.sigma**2 - 1) < 0.05
    # effective sample size shrinks with correlation; a generous bound on the mean
    assert abs(np.mean(x)) < 3 * config.sigma / math.sqrt(len(x) / 50)
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert lag1 >= 0.9


def test_bandlimited_spectrum(long_process):
    config, x = long_process
    f, pxx = signal.welch(x, fs=config.sample_rate, nperseg=8192)
    inside = (f >= config.band_low) & (f <= config.band_high)
    outside = (f < 0.5e3) | (f > 10e3)
    ratio_db = 10 * np.log10(pxx[inside].mean() / pxx[outside].mean())
    assert ratio_db >= 30


def test_bandlimited_deterministic_and_seeded():
    config = PhaseProcessConfig(sigma=0.1, seed=9)
    np.testing.assert_array_equal(sample_bandlimited(config, 300), sample_bandlimited(config, 300))
    other = PhaseProcessConfig(sigma=0.1, seed=10)
    assert not np.array_equal(sample_bandlimited(config, 300), sample_bandlimited(other, 300))


def test_filter_is_linear_phase():
    taps = bandpass_taps(100e3, 1e3, 5e3)
    assert len(taps) == FILTER_ORDER
    np.testing.assert_allclose(taps, taps[::-1], atol=1e-15)
    with pytest.raises(ValueError):
        taps[0] = 1.0

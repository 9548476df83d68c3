"""Transmittance-law moments, samplers and descriptors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fading_cvqkd import (
    Empirical,
    LogNegativeWeibull,
    Moments,
    ParameterError,
    TruncatedNormal,
    Uniform,
    beam_geometry_constants,
    calibrate_beam_wander,
    from_descriptor,
)

MC_DRAWS = 200_000


def test_uniform_moments_exact():
    mo = Uniform(0.0, 1.0).moments()
    assert mo.mean_T == pytest.approx(0.5, abs=1e-10)
    assert mo.mean_sqrtT == pytest.approx(2.0 / 3.0, abs=1e-10)
    assert mo.var_sqrtT == pytest.approx(1.0 / 18.0, abs=1e-8)


def test_uniform_subinterval_moments():
    mo = Uniform(0.25, 0.64).moments()
    # E[T] = (lo+hi)/2, E[sqrtT] = 2(hi^1.5 - lo^1.5)/(3(hi - lo))
    assert mo.mean_T == pytest.approx(0.445, abs=1e-10)
    expect = 2.0 * (0.64**1.5 - 0.25**1.5) / (3.0 * 0.39)
    assert mo.mean_sqrtT == pytest.approx(expect, abs=1e-10)


@pytest.mark.parametrize(
    ("dist", "var_target", "tol"),
    [
        (TruncatedNormal(0.5, 0.1), 0.0052, 0.0002),
        (LogNegativeWeibull(1.25, 0.8), 0.018, 0.002),
        (LogNegativeWeibull(1.47, 0.6), 0.0047, 0.0005),
    ],
    ids=["truncnorm", "weibull_wide", "weibull_narrow"],
)
def test_benchmark_sqrt_variances(dist, var_target, tol):
    mo = dist.moments()
    assert abs(mo.var_sqrtT - var_target) <= tol
    assert mo.mean_T == pytest.approx(0.5, abs=5e-4)


@pytest.mark.parametrize(
    "dist",
    [
        Uniform(0.0, 1.0),
        Uniform(0.3, 0.9),
        TruncatedNormal(0.5, 0.1),
        TruncatedNormal(0.05, 0.2),
        LogNegativeWeibull(1.25, 0.8),
        LogNegativeWeibull(1.47, 0.6),
    ],
    ids=["uniform", "uniform_sub", "truncnorm", "truncnorm_edge",
         "weibull_wide", "weibull_narrow"],
)
def test_sampler_matches_moments(dist):
    """Monte Carlo moments agree with the analytic ones within 5 sigma."""
    t = dist.sample(20240517, MC_DRAWS)
    assert t.min() >= 0.0 and t.max() <= 1.0
    mo = dist.moments()
    for emp, ana in [(t, mo.mean_T), (np.sqrt(t), mo.mean_sqrtT)]:
        se = np.std(emp, ddof=1) / math.sqrt(MC_DRAWS)
        assert abs(float(np.mean(emp)) - ana) < 5.0 * se


@pytest.mark.parametrize(
    "dist",
    [
        Uniform(0.1, 0.7),
        TruncatedNormal(0.5, 0.1),
        LogNegativeWeibull(1.25, 0.8),
        LogNegativeWeibull(1.47, 0.6),
    ],
    ids=["uniform", "truncnorm", "weibull_wide", "weibull_narrow"],
)
def test_expectation_rule_integrates_moments(dist):
    x, w = dist.expectation_rule()
    assert float(np.sum(w)) == pytest.approx(1.0, abs=1e-8)
    mo = dist.moments()
    assert float(np.sum(w * x)) == pytest.approx(mo.mean_T, abs=1e-8)
    assert float(np.sum(w * np.sqrt(x))) == pytest.approx(mo.mean_sqrtT, abs=1e-7)


def test_sampling_is_reproducible():
    d = TruncatedNormal(0.5, 0.1)
    a = d.sample(99, 50)
    b = d.sample(99, 50)
    assert np.array_equal(a, b)
    c = d.sample(100, 50)
    assert not np.array_equal(a, c)


def test_beam_geometry_limits():
    # a beam much narrower than the aperture passes nearly untouched
    T0, R, lam = beam_geometry_constants(0.2)
    assert T0 > 0.999999
    assert lam > 0.0 and R > 0.0
    # clipping losses grow with the beam-to-aperture ratio
    T0_wide, _, _ = beam_geometry_constants(2.0)
    assert T0_wide < T0


def test_calibration_reproduces_frozen_constants():
    """The frozen (T0, R, lam) table regenerates from the calibration
    routine; guards against silent drift of the stored constants."""
    for (wa, sb), frozen in [
        ((1.25, 0.8), LogNegativeWeibull(1.25, 0.8)),
        ((1.47, 0.6), LogNegativeWeibull(1.47, 0.6)),
    ]:
        mo = frozen.moments()
        T0, R, lam = calibrate_beam_wander(wa, sb, 0.5, mo.var_sqrtT)
        assert T0 == pytest.approx(frozen.T0, rel=1e-8)
        assert R == pytest.approx(frozen.R, rel=1e-6)
        assert lam == pytest.approx(frozen.lam, rel=1e-12)


def test_weibull_density_normalizes():
    d = LogNegativeWeibull(1.25, 0.8)
    t = np.linspace(1e-9, d.T0 - 1e-9, 400_001)
    mass = float(np.trapezoid(d.density(t), t))
    assert mass == pytest.approx(1.0, abs=5e-4)


def test_empirical_moments_are_sample_moments():
    vals = np.array([0.2, 0.2, 0.5, 0.9, 0.64])
    d = Empirical(vals)
    mo = d.moments()
    assert mo.mean_T == float(np.mean(vals))
    assert mo.mean_sqrtT == float(np.mean(np.sqrt(vals)))
    x, w = d.expectation_rule()
    assert float(np.sum(w * x)) == pytest.approx(mo.mean_T, abs=1e-12)


def test_empirical_density_is_a_histogram():
    rng = np.random.default_rng(3)
    vals = rng.uniform(0.2, 0.8, 5000)
    d = Empirical(vals)
    t = np.linspace(0.0, 1.0, 2001)
    dens = d.density(t)
    mass = float(np.trapezoid(dens, t))
    assert mass == pytest.approx(1.0, abs=0.01)
    assert d.density(0.05) == 0.0
    assert d.density(0.95) == 0.0


@pytest.mark.parametrize(
    "dist",
    [
        Uniform(0.1, 0.9),
        TruncatedNormal(0.45, 0.2),
        LogNegativeWeibull(1.25, 0.8),
        Empirical([0.1, 0.4, 0.4, 0.7]),
        Empirical([0.1, 0.4, 0.4, 0.7], bin_width=0.05),
    ],
    ids=["uniform", "truncnorm", "weibull", "empirical", "empirical_bw"],
)
def test_descriptor_round_trip(dist):
    clone = from_descriptor(dist.descriptor())
    assert type(clone) is type(dist)
    assert clone.descriptor() == dist.descriptor()
    mo, mc = dist.moments(), clone.moments()
    assert mc.mean_T == pytest.approx(mo.mean_T, abs=1e-12)
    assert mc.var_sqrtT == pytest.approx(mo.var_sqrtT, abs=1e-12)


def test_invalid_parameters_raise():
    with pytest.raises(ParameterError):
        Uniform(0.5, 0.2)
    with pytest.raises(ParameterError):
        Uniform(-0.1, 0.5)
    with pytest.raises(ParameterError):
        TruncatedNormal(0.5, 0.0)
    with pytest.raises(ParameterError):
        LogNegativeWeibull(1.25, -1.0)
    with pytest.raises(ParameterError):
        Empirical([])
    with pytest.raises(ParameterError):
        Empirical([0.5, 1.2])
    with pytest.raises(ParameterError):
        Uniform(0.0, 1.0).density(-0.25)
    with pytest.raises(ParameterError):
        from_descriptor({"variant": "cauchy"})
    with pytest.raises(ParameterError):
        Moments(mean_T=0.2, mean_sqrtT=0.9, var_sqrtT=-0.61)


@settings(max_examples=40, deadline=None)
@given(
    lo=st.floats(0.0, 0.98),
    width=st.floats(0.01, 1.0),
    mean=st.floats(-0.2, 1.2),
    std=st.floats(0.02, 0.5),
)
def test_jensen_inequality_everywhere(lo, width, mean, std):
    """mean_sqrtT^2 <= mean_T and 0 <= var_sqrtT for any parameters."""
    hi = min(1.0, lo + width)
    for dist in (Uniform(lo, hi), TruncatedNormal(mean, std)):
        mo = dist.moments()
        assert mo.mean_sqrtT**2 <= mo.mean_T + 1e-9
        assert 0.0 <= mo.var_sqrtT <= mo.mean_T + 1e-9

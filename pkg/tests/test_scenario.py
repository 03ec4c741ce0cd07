import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from ngso_bf.errors import ConfigError
from ngso_bf.scenario import (
    ArrayGeometry,
    ChannelVector,
    Doa,
    SatelliteLink,
    ScenarioConfig,
    free_space_gain,
    link_budget_gain,
    noise_power,
    perturb_csi,
    sample_scenario,
    steering_vector,
)

LAM = 299_792_458.0 / 11.75e9

angles = st.floats(-90, 90, allow_nan=False)
sizes = st.integers(1, 12)


def brute_steering(mx, my, a, lam, az, el):
    out = []
    for ix in range(mx):
        for iy in range(my):
            ph = 2 * math.pi / lam * a * (ix * math.sin(math.radians(az)) * math.cos(math.radians(el))
                                          + iy * math.sin(math.radians(el)))
            out.append(complex(math.cos(ph), math.sin(ph)) / math.sqrt(mx * my))
    return np.array(out)


def test_steering_boresight_is_flat():
    g = ArrayGeometry(10, 10, 0.01, 0.02)
    assert_allclose(steering_vector(g, Doa(0, 0)), np.full(100, 0.1), atol=1e-15)


def test_steering_endfire_two_elements():
    g = ArrayGeometry(2, 1, 0.5, 1.0)
    assert_allclose(steering_vector(g, Doa(90, 0)), np.array([1, -1]) / math.sqrt(2), atol=1e-15)


@given(sizes, sizes, angles, angles)
def test_steering_matches_elementwise_formula(mx, my, az, el):
    g = ArrayGeometry(mx, my, LAM / 2, LAM)
    assert_allclose(steering_vector(g, Doa(az, el)), brute_steering(mx, my, LAM / 2, LAM, az, el), atol=1e-12)


@given(sizes, sizes, st.floats(0.1, 3.0), angles, angles)
def test_steering_unit_norm(mx, my, a_over_lam, az, el):
    g = ArrayGeometry(mx, my, a_over_lam * LAM, LAM)
    assert abs(np.linalg.norm(steering_vector(g, Doa(az, el))) - 1) < 1e-12


@given(st.integers(1, 16), angles)
def test_steering_azimuth_flip_is_conjugate(mx, az):
    g = ArrayGeometry(mx, 1, LAM / 2, LAM)
    assert_allclose(steering_vector(g, Doa(-az, 0)), np.conj(steering_vector(g, Doa(az, 0))), atol=1e-14)


def test_flattening_order():
    g = ArrayGeometry(3, 4, LAM / 2, LAM)
    v = steering_vector(g, Doa(20, 0))  # phase depends on m_x only
    grid = v.reshape(3, 4)
    assert np.allclose(grid, grid[:, :1])


def test_doa_bounds():
    with pytest.raises(ConfigError):
        Doa(91, 0)


def _link(eirp=45.0, r=1e6):
    return SatelliteLink(eirp, r, 11.75e9, 50e6, Doa(0, 0))


def test_link_budget_reference_values():
    # hand computation: lambda = c/f, FSPL = 20 log10(4 pi r / lambda)
    assert free_space_gain(LAM, 1e6) == pytest.approx(4.12236e-18, rel=1e-5)
    assert -10 * math.log10(free_space_gain(LAM, 1e6)) == pytest.approx(173.85, abs=0.005)
    assert link_budget_gain(_link(), 1.0) == pytest.approx(3.6105e-7, rel=1e-4)


def test_link_budget_unit_loss_and_zero_gain():
    r = LAM / (4 * math.pi)
    assert link_budget_gain(_link(0.0, r), 1.0) == pytest.approx(1.0, rel=1e-14)
    assert link_budget_gain(_link(), 0.0) == 0.0


def test_link_budget_rejects_zero_range():
    with pytest.raises(ConfigError):
        link_budget_gain(_link(r=0.0), 1.0)


def test_noise_power():
    n = noise_power(230, 50e6)
    assert n == pytest.approx(1.58775e-13, rel=1e-5)
    assert 10 * math.log10(n) == pytest.approx(-127.99, abs=0.005)
    assert noise_power(230, 0) == 0
    assert noise_power(230, 100e6) == 2 * n


def test_sample_scenario_deterministic():
    cfg = ScenarioConfig()
    assert sample_scenario(cfg, 5) == sample_scenario(cfg, 5)
    assert sample_scenario(cfg, 5) != sample_scenario(cfg, 6)


def test_sample_scenario_properties():
    cfg = ScenarioConfig()
    sc = sample_scenario(cfg, 3)
    assert sc.num_interferers == 3
    assert sc.noise_power_w == noise_power(230, 50e6)
    # desired gain includes the boresight receive gain eta * M
    expected = link_budget_gain(sc.desired_link, 0.99 * 100)
    assert sc.desired.gain_scalar == pytest.approx(expected, rel=1e-12)
    for ch, link in zip(sc.interferers, sc.interferer_links):
        assert 500e3 <= link.slant_range_m <= 600e3
        assert abs(ch.doa.azimuth_deg) <= 40 and abs(ch.doa.elevation_deg) <= 40
        assert_allclose(ch.coefficients, ch.gain_scalar * steering_vector(sc.geometry, ch.doa), rtol=1e-15)
        assert np.linalg.norm(ch.coefficients) ** 2 == pytest.approx(ch.gain_scalar**2, rel=1e-12)


def test_zero_interferers():
    sc = sample_scenario(ScenarioConfig(interferer_count=0), 1)
    assert sc.interferers == ()
    assert sc.h_int.shape == (100, 0)


def test_rejects_too_many_interferers_and_empty_ranges():
    with pytest.raises(ConfigError):
        sample_scenario(ScenarioConfig(mx=2, my=2, interferer_count=4), 0)
    with pytest.raises(ConfigError):
        sample_scenario(ScenarioConfig(interferer_doa_abs_max_deg=-1), 0)
    with pytest.raises(ConfigError):
        sample_scenario(ScenarioConfig(interferer_range_km_min=700), 0)


def test_interferer_azimuths_uniform():
    cfg = ScenarioConfig(interferer_count=1)
    az = [sample_scenario(cfg, s).interferers[0].doa.azimuth_deg for s in range(1000)]
    assert stats.kstest(az, stats.uniform(loc=-40, scale=80).cdf).pvalue > 0.01


def test_config_round_trip():
    cfg = ScenarioConfig(mx=4, interferer_count=2, csi_error_variance=0.1)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    d = cfg.to_dict()
    assert d["array"]["mx"] == 4 and d["csi"]["error_variance"] == 0.1


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"arrray": {"mx": 3}})


def _channel(m=100, chi=3.0):
    g = ArrayGeometry(10, m // 10, LAM / 2, LAM)
    v = steering_vector(g, Doa(0, 0))
    return ChannelVector(chi * v, chi, Doa(0, 0))


def test_perturb_zero_variance_is_identity():
    h = _channel()
    assert np.array_equal(perturb_csi(h, 0.0, 1), h.coefficients)


def test_perturb_is_seeded():
    h = _channel()
    assert np.array_equal(perturb_csi(h, 0.15, 9), perturb_csi(h, 0.15, 9))


def test_perturb_error_statistics():
    h = _channel(chi=2.0)
    m = h.coefficients.size
    errs = np.stack([(perturb_csi(h, 0.15, s) - h.coefficients) / h.gain_scalar for s in range(10_000)])
    per_draw = np.sum(np.abs(errs) ** 2, axis=1) / m
    assert abs(per_draw.mean() - 0.15) < 0.03 * 0.15
    # real/imag parts each carry half the variance; 3-sigma bound of a sample variance
    n = errs.size
    tol = 3 * 0.075 * math.sqrt(2 / n)
    assert abs(np.var(errs.real) - 0.075) < tol
    assert abs(np.var(errs.imag) - 0.075) < tol

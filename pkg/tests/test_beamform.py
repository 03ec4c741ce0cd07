import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ngso_bf.beamform import (
    BeamWeights,
    CovarianceSet,
    Method,
    asinr,
    beam_gain,
    beam_pattern_grid,
    mrc,
    mvdr,
    running_mean,
    sample_covariance,
    sinr,
    smi,
    zf,
)
from ngso_bf.errors import ConditioningError, DegenerateGeometryError
from ngso_bf.scenario import ArrayGeometry, Doa, ScenarioConfig, build_scenario, sample_scenario, steering_vector
from ngso_bf.signals import SnapshotMatrix, synthesize_snapshots

LAM = 299_792_458.0 / 11.75e9
GEOM = ArrayGeometry(10, 10, LAM / 2, LAM)


def random_unit(rng, m):
    w = rng.normal(size=m) + 1j * rng.normal(size=m)
    return w / np.linalg.norm(w)


def test_sample_covariance_constant_columns():
    c = np.array([1 + 2j, -0.5j, 3.0])
    r = sample_covariance(np.tile(c[:, None], (1, 7)))
    assert_allclose(r, np.outer(c, c.conj()), rtol=1e-14)


def test_sample_covariance_single_snapshot():
    e1 = np.zeros((4, 1), dtype=complex)
    e1[0] = 1
    r = sample_covariance(SnapshotMatrix(e1))
    expected = np.zeros((4, 4))
    expected[0, 0] = 1
    assert np.array_equal(r, expected)


def test_sample_covariance_white_noise():
    rng = np.random.default_rng(1)
    y = (rng.normal(size=(8, 100_000)) + 1j * rng.normal(size=(8, 100_000))) / math.sqrt(2)
    r = sample_covariance(y)
    assert np.linalg.norm(r - np.eye(8)) / np.linalg.norm(np.eye(8)) < 0.05
    assert np.allclose(r, r.conj().T)
    assert np.min(np.linalg.eigvalsh(r)) > 0


def test_mrc():
    assert_allclose(mrc([3, 4]).weights, [0.6, 0.8])
    v = steering_vector(GEOM, Doa(10, -5))
    assert_allclose(mrc(v).weights, v, atol=1e-15)
    with pytest.raises(ValueError):
        mrc([0, 0])


@given(st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_mrc_unit_norm(h):
    h = np.array(h)
    if np.linalg.norm(h) < 1e-6:
        return
    assert abs(np.linalg.norm(mrc(h).weights) - 1) < 1e-14


def test_zf_without_interferers_is_mrc():
    h = steering_vector(GEOM, Doa(5, 5)) * 2.5
    assert_allclose(zf(h, np.zeros((100, 0))).weights, mrc(h).weights, atol=1e-15)


def test_zf_orthogonal_interferer_leaves_desired():
    h_d = np.array([1.0, 0, 0, 0], dtype=complex)
    h_i = np.array([[0, 1, 0, 0], [0, 0, 1j, 0]], dtype=complex).T
    assert_allclose(zf(h_d, h_i).weights, h_d, atol=1e-15)


def test_zf_null_depth():
    sc = sample_scenario(ScenarioConfig(), 17)
    w = zf(sc.h_d, sc.h_int).weights
    depth = [abs(np.vdot(w, h)) ** 2 / np.linalg.norm(h) ** 2 for h in sc.h_int.T]
    assert max(depth) < 1e-20
    assert abs(np.linalg.norm(w) - 1) < 1e-14


def test_zf_collinear_interferers_use_pseudo_inverse():
    v = steering_vector(GEOM, Doa(20, 10))
    h_i = np.stack([v, 3 * v], axis=1)
    h_d = steering_vector(GEOM, Doa(0, 0))
    w = zf(h_d, h_i).weights
    assert abs(np.vdot(w, v)) < 1e-12


def test_zf_degenerate_geometry():
    v = steering_vector(GEOM, Doa(20, 10))
    with pytest.raises(DegenerateGeometryError):
        zf(2 * v, v[:, None])


def test_mvdr_white_noise_is_scaled_matched_filter():
    v = steering_vector(GEOM, Doa(7, -3)) * 2
    w = mvdr(0.3 * np.eye(100), v).weights
    assert_allclose(w, v / np.linalg.norm(v) ** 2, atol=1e-14)


@pytest.mark.parametrize("chi", [1.0, 3.0])
def test_mvdr_two_element_closed_form(chi):
    # R = diag(chi^2 + 1, 1 + 1): R^-1 v is parallel to e1 and v^H R^-1 v = 1/(chi^2+1)
    h_d = np.array([chi, 0], dtype=complex)
    h_i = np.array([[0], [1]], dtype=complex)
    r = np.outer(h_d, h_d.conj()) + h_i @ h_i.conj().T + np.eye(2)
    w = mvdr(r, np.array([1, 0], dtype=complex)).weights
    assert_allclose(w, [1, 0], atol=1e-15)
    assert sinr(w, h_d, h_i, 1.0) == pytest.approx(chi**2, rel=1e-14)


def test_mvdr_distortionless():
    sc = sample_scenario(ScenarioConfig(), 4)
    cs = CovarianceSet.from_scenario(sc)
    w = mvdr(cs.r_true, sc.v_d).weights
    assert abs(np.vdot(w, sc.v_d) - 1) < 1e-10


def test_mvdr_beats_random_weights():
    rng = np.random.default_rng(0)
    cfg = ScenarioConfig()
    for s in range(20):
        sc = sample_scenario(cfg, 1000 + s)
        cs = CovarianceSet.from_scenario(sc)
        best = sinr(mvdr(cs.r_true, sc.v_d), sc.h_d, sc.h_int, sc.noise_power_w)
        for _ in range(100):
            assert sinr(random_unit(rng, 100), sc.h_d, sc.h_int, sc.noise_power_w) <= best + 1e-9


def test_mvdr_rejects_singular_and_non_hermitian():
    v = np.array([1, 0], dtype=complex)
    with pytest.raises(ConditioningError):
        mvdr(np.array([[1, 0], [0, 0]], dtype=complex), v)
    with pytest.raises(ConditioningError):
        mvdr(np.array([[1, 1], [0, 1]], dtype=complex), v)


def test_smi_diagonal_loading_handles_rank_deficiency():
    sc = sample_scenario(ScenarioConfig(), 4)
    y = synthesize_snapshots(sc, 20, 1)  # L < M: singular sample covariance
    with pytest.raises(ConditioningError):
        smi(y, sc.v_d)
    w = smi(y, sc.v_d, diagonal_loading=1e-3)
    assert w.method is Method.SMI
    assert abs(np.vdot(w.weights, sc.v_d) - 1) < 1e-10


def test_sinr_hand_values():
    h_d = np.array([1, 0], dtype=complex)
    h_i = np.array([[0], [1]], dtype=complex)
    assert sinr([1, 0], h_d, h_i, 1.0) == 1.0
    w = np.array([1, 1]) / math.sqrt(2)
    assert sinr(w, h_d, h_i, 0.5) == pytest.approx(0.5, rel=1e-15)


@given(st.floats(1e-3, 1e3), st.floats(-math.pi, math.pi))
@settings(max_examples=30)
def test_sinr_scale_invariance(mag, phase):
    sc = sample_scenario(ScenarioConfig(), 6)
    w = random_unit(np.random.default_rng(3), 100)
    a = mag * np.exp(1j * phase)
    base = sinr(w, sc.h_d, sc.h_int, sc.noise_power_w)
    assert sinr(a * w, sc.h_d, sc.h_int, sc.noise_power_w) == pytest.approx(base, rel=1e-12)


def test_asinr_matches_sinr():
    sc = sample_scenario(ScenarioConfig(), 2)
    w = random_unit(np.random.default_rng(5), 100)
    s = sinr(w, sc.h_d, sc.h_int, sc.noise_power_w)
    assert asinr(w, sc, 200) == s
    assert asinr(w, sc, 1) == s
    assert running_mean([0.5, 0.5, 0.5]) == 0.5


def test_beam_gain_boresight():
    v = steering_vector(GEOM, Doa(0, 0))
    g = beam_gain(GEOM, v, Doa(0, 0), 0.99)
    assert g == pytest.approx(99.0, rel=1e-14)
    assert 10 * math.log10(g) == pytest.approx(19.96, abs=0.005)
    assert beam_gain(GEOM, v, Doa(0, 0), 0.0) == 0.0


def test_beam_gain_first_null():
    v = steering_vector(GEOM, Doa(0, 0))
    null_az = math.degrees(math.asin(2 / 10))  # sin(phi) = lambda / (M_x a)
    g = beam_gain(GEOM, v, Doa(null_az, 0), 0.99)
    assert 10 * math.log10(max(g, 1e-300) / 99.0) < -40


def test_beam_pattern_single_point_and_peak():
    v = steering_vector(GEOM, Doa(0, 0))
    az, el, grid = beam_pattern_grid(GEOM, v, (0, 0), (0, 0), 1.0, 0.99)
    assert grid.shape == (1, 1)
    assert grid[0, 0] == pytest.approx(10 * math.log10(0.99 * 100), abs=1e-12)
    az, el, grid = beam_pattern_grid(GEOM, v, step_deg=2.0)
    assert grid.shape == (91, 91)
    i, j = np.unravel_index(np.argmax(grid), grid.shape)
    assert (az[i], el[j]) == (0.0, 0.0)


def test_beam_pattern_matches_beam_gain():
    w = random_unit(np.random.default_rng(2), 100)
    az, el, grid = beam_pattern_grid(GEOM, w, (-30, 30), (-20, 20), 5.0)
    for i, a in enumerate(az):
        for j, e in enumerate(el):
            assert grid[i, j] == pytest.approx(10 * math.log10(beam_gain(GEOM, w, Doa(a, e), 0.99)), abs=1e-9)


def test_beam_pattern_zf_nulls_on_grid():
    doas = [Doa(-12, 7), Doa(25, -31), Doa(3, 18)]
    sc = build_scenario(ScenarioConfig(), doas, [520e3, 550e3, 590e3])
    w = zf(sc.h_d, sc.h_int)
    az, el, grid = beam_pattern_grid(sc.geometry, w, step_deg=1.0)
    peak = grid.max()
    for d in doas:
        i = int(np.flatnonzero(az == d.azimuth_deg)[0])
        j = int(np.flatnonzero(el == d.elevation_deg)[0])
        assert grid[i, j] <= peak - 60


def test_beam_weights_validation():
    with pytest.raises(ValueError):
        BeamWeights(np.zeros(3), Method.MRC)
    with pytest.raises(ValueError):
        BeamWeights(np.array([np.nan, 1]), Method.MRC)


def test_covariance_set_properties():
    sc = sample_scenario(ScenarioConfig(mx=4, my=4), 1)
    y = synthesize_snapshots(sc, 200, 1)
    cs = CovarianceSet.from_scenario(sc, y)
    for a in (cs.r_desired, cs.r_int_noise, cs.r_sample):
        assert np.linalg.norm(a - a.conj().T) < 1e-10 * np.linalg.norm(a)
    assert np.min(np.linalg.eigvalsh(cs.r_int_noise)) > 0
    assert np.min(np.linalg.eigvalsh(cs.r_sample)) > -1e-12 * np.linalg.norm(cs.r_sample)

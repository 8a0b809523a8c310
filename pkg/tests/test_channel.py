import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfurllc import channel as ch


def trapezoid_corr(beta, phi, delta, m, pts=200_001):
    x = np.linspace(-delta, delta, pts)
    d = np.arange(m)
    r = np.empty((m, m), dtype=complex)
    for i in range(m):
        for j in range(m):
            r[i, j] = np.trapezoid(np.exp(1j * np.pi * (i - j) * np.sin(phi + x)), x) / (2 * delta)
    return beta * r


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-12, 1.0), st.floats(-math.pi, math.pi), st.floats(0.01, 1.0), st.integers(1, 12))
def test_correlation_is_hermitian_psd_with_unit_trace_per_antenna(beta, phi, delta, m):
    r = ch.local_scattering_corr(beta, phi, delta, m)
    np.testing.assert_allclose(r, r.conj().T, atol=1e-14 * beta)
    assert np.min(np.linalg.eigvalsh(r / beta)) > -1e-10
    np.testing.assert_allclose(np.real(np.diag(r)), beta, rtol=1e-12)


@pytest.mark.parametrize("phi,deg,m", [(0.3, 25, 4), (-2.0, 10, 8), (1.4, 40, 16)])
def test_quadrature_matches_trapezoid(phi, deg, m):
    got = ch.local_scattering_corr(1.0, phi, math.radians(deg), m)
    np.testing.assert_allclose(got, trapezoid_corr(1.0, phi, math.radians(deg), m), atol=1e-9)


def test_small_spread_approaches_rank_one():
    phi, m = 0.7, 8
    r = ch.local_scattering_corr(1.0, phi, 1e-5, m)
    a = np.exp(1j * np.pi * np.arange(m) * math.sin(phi))
    np.testing.assert_allclose(r, np.outer(a, a.conj()), atol=1e-8)
    lam = np.linalg.eigvalsh(r)
    assert lam[-1] == pytest.approx(m, rel=1e-8) and lam[-2] < 1e-8


def test_grid_is_cell_centered():
    g = ch.ap_grid(4, 150.0)
    assert sorted(set(g[:, 0])) == [37.5, 112.5] and sorted(set(g[:, 1])) == [37.5, 112.5]
    assert len(ch.ap_grid(64, 150.0)) == 64
    with pytest.raises(ch.ConfigError):
        ch.ap_grid(5, 150.0)


def test_height_offset_bounds_distance():
    rng = np.random.default_rng(0)
    topo = ch.build_topology(64, ch.drop_ues(500, 150.0, rng))
    assert topo.distances.shape == (500, 64)
    assert topo.distances.min() >= 10.0
    # an AP directly above a UE sits exactly at the height offset
    topo = ch.build_topology(4, [[37.5, 37.5]])
    assert topo.distances[0, 0] == pytest.approx(10.0)


def test_pathloss_values_and_monotonicity():
    assert ch.pathloss_db(1.0) == pytest.approx(-30.5)
    assert ch.pathloss_db(10.0, "exp367") == pytest.approx(-67.2)
    assert ch.pathloss_db(100.0, "exp376") == pytest.approx(-105.7)
    d = np.linspace(1, 500, 1000)
    assert np.all(np.diff(ch.pathloss_db(d)) < 0)
    with pytest.raises(ch.InvalidDistanceError):
        ch.pathloss_db(0.5)
    with pytest.raises(ch.ConfigError):
        ch.pathloss_db(5.0, "exp99")


def test_unit_conversions():
    assert ch.dbm_to_watt(30.0) == pytest.approx(1.0)
    assert ch.dbm_to_watt(-96.0) == pytest.approx(10 ** -12.6)
    assert ch.db_to_lin(-10.0) == pytest.approx(0.1)


def test_nonfading_norms_follow_pathloss():
    rng = np.random.default_rng(1)
    topo = ch.build_topology(16, ch.drop_ues(10, 150.0, rng))
    beta = ch.db_to_lin(ch.pathloss_db(topo.distances, "exp367"))
    for phase in ch.NONFADING_PHASES:
        h = ch.nonfading_channels(topo, 4, phase=phase)
        np.testing.assert_allclose(np.sum(np.abs(h) ** 2, axis=-1), 4 * beta, rtol=1e-12)
    with pytest.raises(ch.ConfigError):
        ch.nonfading_channels(topo, 4, phase="random")


def test_nonfading_broadside_is_flat():
    # A UE on the x axis of its AP (phi = 0) sees an all-ones steering vector.
    topo = ch.build_topology(1, [[120.0, 75.0]])
    assert topo.angles[0, 0] == pytest.approx(0.0)
    h = ch.nonfading_channels(topo, 6)
    np.testing.assert_allclose(h[0, 0] / h[0, 0, 0], np.ones(6), atol=1e-12)


def test_los_phase_depends_on_distance():
    topo = ch.build_topology(4, [[10.0, 10.0]])
    a = ch.nonfading_channels(topo, 1, phase="none")[0, :, 0]
    b = ch.nonfading_channels(topo, 1, phase="los")[0, :, 0]
    np.testing.assert_allclose(b / a, np.exp(-2j * np.pi * topo.distances[0] / ch.WAVELENGTH_M))


def test_sampled_channels_have_target_covariance():
    topo = ch.build_topology(4, [[20.0, 50.0], [130.0, 90.0]])
    corr = ch.correlation_set(topo, 4)
    h = ch.sample_channel_batch(corr, np.random.default_rng(2), 40_000)
    assert h.shape == (40_000, 2, 4, 4)
    for k, l in [(0, 0), (1, 3)]:
        x = h[:, k, l, :] / math.sqrt(corr.betas[k, l])
        emp = np.einsum("si,sj->ij", x, x.conj()) / len(x)
        np.testing.assert_allclose(emp, corr.matrices[k, l] / corr.betas[k, l], atol=0.03)
    # independent across APs
    a = h[:, 0, 0, 0] / math.sqrt(corr.betas[0, 0])
    b = h[:, 0, 1, 0] / math.sqrt(corr.betas[0, 1])
    assert abs(np.mean(a * b.conj())) < 4 / math.sqrt(len(a))


def test_single_antenna_channels_scale_with_beta():
    topo = ch.build_topology(16, [[75.0, 75.0]])
    corr = ch.correlation_set(topo, 1)
    h = ch.sample_channel_batch(corr, np.random.default_rng(3), 20_000)
    np.testing.assert_allclose(np.mean(np.abs(h[:, 0, :, 0]) ** 2, axis=0) / corr.betas[0], 1.0, atol=0.05)


def test_collective_and_per_ap_views():
    topo = ch.build_topology(4, [[20.0, 50.0]])
    corr = ch.correlation_set(topo, 2)
    big = corr.collective(0)
    assert big.shape == (8, 8)
    np.testing.assert_allclose(big[2:4, 2:4], corr.matrices[0, 1])
    assert np.all(big[:2, 2:] == 0)
    real = ch.sample_channels(corr, np.random.default_rng(0))
    np.testing.assert_array_equal(real.collective(0)[2:4], real.per_ap(0, 1))


def test_sampling_is_reproducible():
    corr = ch.correlation_set(ch.build_topology(4, [[1.0, 2.0]]), 2)
    a = ch.sample_channel_batch(corr, np.random.default_rng(9), 5)
    b = ch.sample_channel_batch(corr, np.random.default_rng(9), 5)
    np.testing.assert_array_equal(a, b)

import numpy as np
import pytest

from cfurllc import channel as ch
from cfurllc import estimation as est
from cfurllc import fbl
from cfurllc import processing as pr


def random_state(k=3, l=4, m=2, seed=0):
    rng = np.random.default_rng(seed)
    topo = ch.build_topology(l, ch.drop_ues(k, 150.0, rng))
    corr = ch.correlation_set(topo, m)
    filt = est.mmse_filters(corr, 1e-2, k, 1e-12)
    h = ch.sample_channel_batch(corr, rng, 3)
    h_hat = est.apply_filters(filt, est.despread_ul_direct(h, 1e-2, k, 1e-12, rng))
    return corr, filt, h, h_hat


def test_centralized_mmse_matches_direct_inverse():
    corr, filt, h, h_hat = random_state()
    rho, s2 = 1e-2, 1e-12
    u = pr.mmse_combiner_centralized(h_hat, filt.error_cov, rho, s2)
    k, l, m = corr.shape
    for s in range(h.shape[0]):
        hh = h_hat[s].reshape(k, l * m).T
        c = np.zeros((l * m, l * m), dtype=complex)
        for i in range(k):
            c += from_blocks(filt.error_cov[i])
        a = rho * (hh @ hh.conj().T + c) + s2 * np.eye(l * m)
        ref = rho * np.linalg.solve(a, hh)
        np.testing.assert_allclose(u[s].reshape(k, l * m).T, ref, rtol=1e-6, atol=1e-9 * np.abs(ref).max())


def from_blocks(blocks):
    l, m, _ = blocks.shape
    out = np.zeros((l * m, l * m), dtype=complex)
    for j in range(l):
        out[j * m:(j + 1) * m, j * m:(j + 1) * m] = blocks[j]
    return out


@pytest.mark.parametrize("m,k", [(2, 3), (4, 2)])
def test_local_mmse_matches_per_ap_inverse(m, k):
    corr, filt, h, h_hat = random_state(k=k, m=m)
    rho, s2 = 1e-2, 1e-12
    u = pr.mmse_combiner_local(h_hat, filt.error_cov, rho, s2)
    for ap in range(corr.shape[1]):
        hl = h_hat[0, :, ap, :].T
        a = rho * (hl @ hl.conj().T + filt.error_cov[:, ap].sum(axis=0)) + s2 * np.eye(m)
        ref = rho * np.linalg.solve(a, hl)
        np.testing.assert_allclose(u[0, :, ap, :].T, ref, rtol=1e-6, atol=1e-9 * np.abs(ref).max())


def test_two_user_sinr_oracle():
    # Nonfading, perfect CSI: the MMSE SINR has the closed form rho h1^H (rho h2 h2^H + s2 I)^-1 h1.
    h = np.array([[[1.0, 0.5j]], [[0.3, -0.8]]]).reshape(2, 1, 2)
    rho, s2 = 2.0, 0.5
    u = pr.mmse_combiner_centralized(h, np.zeros((2, 1, 2, 2)), rho, s2)
    link = pr.effective_link_ul(u, h, h, 0, rho, s2)
    h1, h2 = h[0, 0], h[1, 0]
    ref = rho * np.real(h1.conj() @ np.linalg.solve(rho * np.outer(h2, h2.conj()) + s2 * np.eye(2), h1))
    assert rho * abs(link.g) ** 2 / link.sigma2_eff == pytest.approx(ref, rel=1e-12)
    assert link.g_hat == pytest.approx(link.g)


def test_ul_effective_link_pieces():
    corr, filt, h, h_hat = random_state()
    u = pr.mr_combiner(h_hat)
    link = pr.effective_link_ul(u, h, h_hat, 1, 1e-2, 1e-12)
    ui = u[:, 1]
    g = np.einsum("slm,slm->s", ui.conj(), h[:, 1])
    np.testing.assert_allclose(link.g, g)
    interf = sum(np.abs(np.einsum("slm,slm->s", ui.conj(), h[:, j])) ** 2 for j in (0, 2))
    np.testing.assert_allclose(link.sigma2_eff, 1e-12 * np.sum(np.abs(ui) ** 2, axis=(1, 2)) + 1e-2 * interf)
    stat = pr.effective_link_ul(u, h, h_hat, 1, 1e-2, 1e-12, g_hat_stat=0.3 + 0.1j)
    assert np.all(stat.g_hat == 0.3 + 0.1j)


def test_small_cell_assignment_and_tie_break():
    betas = np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 2.0], [0.1, 0.2, 5.0]])
    np.testing.assert_array_equal(pr.assign_small_cells(betas), [1, 0, 2])


def test_cellular_uses_only_serving_ap():
    corr, filt, h, h_hat = random_state(k=3, l=4)
    serving = pr.assign_small_cells(corr.betas, 2, 1e-2, 1e-12)
    u = pr.combiners(h_hat, filt.error_cov, "cellular", "mmse", 1e-2, 1e-12, serving)
    loc = pr.mmse_combiner_local(h_hat, filt.error_cov, 1e-2, 1e-12)
    for k in range(3):
        for ap in range(4):
            if ap == serving[k]:
                np.testing.assert_array_equal(u[:, k, ap], loc[:, k, ap])
            else:
                assert np.all(u[:, k, ap] == 0)


def test_unknown_options_rejected():
    _, filt, _, h_hat = random_state()
    with pytest.raises(ValueError):
        pr.combiners(h_hat, filt.error_cov, "centralized", "zf", 1.0, 1.0)
    with pytest.raises(ValueError):
        pr.combiners(h_hat, filt.error_cov, "hybrid", "mmse", 1.0, 1.0)
    with pytest.raises(ValueError):
        pr.precoder_from_combiner(h_hat, 1.0, "peak")


def test_error_probability_invariant_to_combiner_scaling():
    h = np.array([[[0.7 - 0.2j]]])
    u = pr.mr_combiner(h)
    base = pr.effective_link_ul(u, h, h * 0.95, 0, 1.0, 0.3)
    scaled = pr.effective_link_ul(7.0 * u, h, h * 0.95, 0, 1.0, 0.3)
    a = fbl.log_eps_optimized(base.g, base.g_hat, 1.0, base.sigma2_eff, 100, 0.3)
    b = fbl.log_eps_optimized(scaled.g, scaled.g_hat, 1.0, scaled.sigma2_eff, 100, 0.3)
    assert a == pytest.approx(b, rel=1e-9)


def test_precoder_power_normalizations():
    corr, filt, h, h_hat = random_state()
    u = pr.mr_combiner(h_hat)
    w = pr.precoder_from_combiner(u, 0.5, "instantaneous")
    np.testing.assert_allclose(pr.combiner_energy(w), 0.5)
    energy = pr.combiner_energy(u).mean(axis=0)
    w = pr.precoder_from_combiner(u, 0.5, "average", energy)
    np.testing.assert_allclose(pr.combiner_energy(w).mean(axis=0), 0.5)
    zero = pr.precoder_from_combiner(np.zeros((1, 2, 2)), 1.0, "instantaneous")
    assert np.all(zero == 0)


def test_nonfading_statistics_have_zero_variance():
    h = np.array([[[1.0 + 1j, 0.2]], [[0.1, 0.9j]]]).reshape(2, 1, 2)
    batch = np.broadcast_to(h, (50,) + h.shape)
    stats = pr.link_statistics(batch, batch, rho_dl=1.0, normalization="instantaneous")
    np.testing.assert_allclose(stats.precoded_var, 0.0, atol=1e-28)
    np.testing.assert_allclose(stats.mean_combiner_energy, np.sum(np.abs(h) ** 2, axis=(1, 2)))


def test_dl_modes():
    corr, filt, h, h_hat = random_state(k=2, l=4, m=1, seed=3)
    u = pr.mr_combiner(h_hat)
    w = pr.precoder_from_combiner(u, 0.1, "instantaneous")
    genie = pr.effective_link_dl(w, h, 0, 1e-12, "genie")
    np.testing.assert_array_equal(genie.g_hat, genie.g)
    xi = pr.precoded_channels(h, w, 0)
    np.testing.assert_allclose(genie.sigma2_eff, 1e-12 + np.abs(xi[:, 1]) ** 2)
    stats = pr.LinkStatistics(np.zeros(2), np.ones(2), np.array([0.25, 0.5 + 0j]), np.ones(2), 100)
    none = pr.effective_link_dl(w, h, 1, 1e-12, "none", stats=stats)
    assert np.all(none.g_hat == 0.5)
    with pytest.raises(ValueError):
        pr.effective_link_dl(w, h, 0, 1e-12, "ls", rho_dl=0.1, np_dl=0)


def test_dl_ls_error_variance():
    # Pilot-based g_hat = g + z / n_p with z ~ CN(0, sigma2 n_p).
    h = np.broadcast_to(np.array([[[1.0 + 0j]]]), (200_000, 1, 1, 1))
    w = pr.precoder_from_combiner(h, 2.0, "instantaneous")
    link = pr.effective_link_dl(w, h, 0, 0.3, "ls", rho_dl=2.0, np_dl=4, rng=np.random.default_rng(0))
    err = link.g_hat - link.g
    assert abs(err.mean()) < 0.01
    assert np.mean(np.abs(err) ** 2) == pytest.approx(0.3 / 4, rel=0.02)

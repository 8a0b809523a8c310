"""Combining, precoding and effective scalar links for each architecture.

Array conventions: channel-like arrays are (..., K, L, M) with any number of
leading realization axes; error covariances are (K, L, M, M) and do not vary
across realizations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import dl_lmmse_estimate, dl_ls_estimate

ARCHITECTURES = ("centralized", "distributed", "cellular")


@dataclass(frozen=True)
class EffectiveLink:
    g: np.ndarray
    g_hat: np.ndarray
    sigma2_eff: np.ndarray
    rho: float
    direction: str


@dataclass(frozen=True)
class LinkStatistics:
    """Monte-Carlo moments of one placement, shapes (K,)."""

    mean_eff_channel: np.ndarray
    mean_combiner_energy: np.ndarray
    precoded_mean: np.ndarray
    precoded_var: np.ndarray
    n_stat: int


def _noise_plus_error(error_cov, rho, sigma2):
    """``rho * sum_i C_il + sigma2 I`` per AP, shape (L, M, M)."""
    m = error_cov.shape[-1]
    return rho * error_cov.sum(axis=0) + sigma2 * np.eye(m)


def _woodbury_combiners(h_hat, d_inv, rho):
    """``rho (D + rho H H^H)^-1 H`` for all columns of ``H``.

    ``h_hat`` is (..., K, N) with the combining dimension last, ``d_inv`` is
    applied by the callable.  Only a K x K Hermitian system is solved.
    """
    t = d_inv(h_hat)
    k = h_hat.shape[-2]
    gram = np.eye(k) + rho * np.conj(h_hat) @ np.swapaxes(t, -1, -2)
    # U^T = rho Gram^-T T^T; Gram is Hermitian so Gram^T = conj(Gram).
    return rho * np.linalg.solve(np.conj(gram), t)


def _block_inverse(d):
    m = d.shape[-1]
    return np.linalg.solve(d, np.broadcast_to(np.eye(m), d.shape))


def mmse_combiner_centralized(h_hat, error_cov, rho_ul: float, sigma2_ul: float):
    """Centralized MMSE combiners for every UE, shape like ``h_hat``.

    Uses the block-diagonal structure of ``rho sum C + sigma2 I`` so that only a
    K x K system per realization is solved.
    """
    d = _noise_plus_error(error_cov, rho_ul, sigma2_ul)
    if np.all(d == 0):
        raise np.linalg.LinAlgError("singular MMSE system: no noise and no estimation error")
    d_inv = _block_inverse(d)
    shape = h_hat.shape
    k, l, m = shape[-3:]

    def apply(x):
        xb = x.reshape(x.shape[:-1] + (l, m))
        return np.einsum("lmn,...kln->...klm", d_inv, xb).reshape(x.shape)

    flat = h_hat.reshape(shape[:-3] + (k, l * m))
    return _woodbury_combiners(flat, apply, rho_ul).reshape(shape)


def mmse_combiner_local(h_hat, error_cov, rho_ul: float, sigma2_ul: float):
    """Local MMSE combiners ``u_il`` computed independently at every AP.

    Each AP only touches its own slice ``h_hat[..., :, l, :]`` and ``C[:, l]``.
    """
    k, l, m = h_hat.shape[-3:]
    d = _noise_plus_error(error_cov, rho_ul, sigma2_ul)
    hl = np.swapaxes(h_hat, -3, -2)  # (..., L, K, M)
    if m < k:
        a = d + rho_ul * np.einsum("...lkm,...lkn->...lmn", hl, np.conj(hl))
        u = rho_ul * np.swapaxes(np.linalg.solve(a, np.swapaxes(hl, -1, -2)), -1, -2)
    else:
        d_inv = _block_inverse(d)

        def apply(x):
            return np.einsum("lmn,...lkn->...lkm", d_inv, x)

        u = _woodbury_combiners(hl, apply, rho_ul)
    return np.swapaxes(u, -3, -2)


def mr_combiner(h_hat):
    return h_hat


def restrict_to_serving(u, serving):
    """Zero every AP block except the serving AP of each UE."""
    k, l = u.shape[-3], u.shape[-2]
    mask = np.zeros((k, l, 1))
    mask[np.arange(k), serving, 0] = 1.0
    return u * mask


def assign_small_cells(betas, num_antennas: int = 1, rho: float = 1.0, sigma2: float = 1.0):
    """Serving AP per UE: the largest single-link SNR ``rho beta M / sigma2``, lowest index on ties."""
    snr = rho * np.asarray(betas) * num_antennas / sigma2
    return np.argmax(snr, axis=1)


def combiners(h_hat, error_cov, architecture: str, scheme: str, rho_ul: float, sigma2_ul: float,
              serving=None):
    """Collective combiners (..., K, L, M) for one architecture."""
    if scheme == "mr":
        u = mr_combiner(h_hat)
    elif scheme != "mmse":
        raise ValueError(f"unknown combiner {scheme!r}")
    elif architecture == "centralized":
        u = mmse_combiner_centralized(h_hat, error_cov, rho_ul, sigma2_ul)
    elif architecture in ("distributed", "cellular"):
        u = mmse_combiner_local(h_hat, error_cov, rho_ul, sigma2_ul)
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    if architecture == "cellular":
        u = restrict_to_serving(u, serving)
    return u


def inner(a, b):
    """``a^H b`` over the trailing (L, M) axes."""
    return np.einsum("...lm,...lm->...", np.conj(a), b)


def combiner_energy(u):
    return np.sum(np.abs(u) ** 2, axis=(-2, -1))


def precoder_from_combiner(u, rho_dl: float, normalization: str = "average", mean_energy=None):
    """Scale combiners into precoders carrying power ``rho_dl`` per UE.

    ``average`` divides by ``sqrt(E||u||^2)`` (``mean_energy``, shape (K,));
    ``instantaneous`` by ``||u||``.  All-zero combiners map to zero precoders.
    """
    if normalization == "average":
        if mean_energy is None:
            raise ValueError("average normalization needs the mean combiner energy")
        scale = np.asarray(mean_energy, dtype=float)
    elif normalization == "instantaneous":
        scale = combiner_energy(u)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(scale > 0, math.sqrt(rho_dl) / np.sqrt(scale), 0.0)
    return u * factor[..., None, None]


def effective_link_ul(u, h, h_hat, ue: int, rho_ul: float, sigma2_ul: float, g_hat_stat=None) -> EffectiveLink:
    """Scalar UL link of UE ``ue`` after combining.

    ``g_hat_stat`` (distributed operation) replaces the instantaneous
    ``u^H h_hat`` by a known mean.
    """
    ui = u[..., ue, :, :]
    proj = inner(ui[..., None, :, :], h)  # (..., K): u_i^H h_j
    g = proj[..., ue]
    interf = np.sum(np.abs(np.delete(proj, ue, axis=-1)) ** 2, axis=-1)
    sigma2 = sigma2_ul * combiner_energy(ui) + rho_ul * interf
    if g_hat_stat is None:
        g_hat = inner(ui, h_hat[..., ue, :, :])
    else:
        g_hat = np.broadcast_to(np.asarray(g_hat_stat, dtype=complex), g.shape)
    return EffectiveLink(g, g_hat, sigma2, rho_ul, "ul")


def precoded_channels(h, w, ue: int):
    """``h_ue^H w_j`` for all j, shape (..., K)."""
    return inner(h[..., ue, None, :, :], w)


def effective_link_dl(w, h, ue: int, sigma2_dl: float, mode: str = "ls", *, rho_dl: float | None = None,
                      np_dl: int = 0, stats: LinkStatistics | None = None,
                      rng: np.random.Generator | None = None) -> EffectiveLink:
    """Scalar DL link of UE ``ue``; precoders carry the power so the link has ``rho = 1``.

    ``mode`` selects how the UE obtains ``g_hat``: ``none`` (mean from
    statistics), ``ls``/``lmmse`` (precoded DL pilots), or ``genie``.
    """
    xi = precoded_channels(h, w, ue)
    g = xi[..., ue]
    interf = np.sum(np.abs(np.delete(xi, ue, axis=-1)) ** 2, axis=-1)
    sigma2 = sigma2_dl + interf
    if mode == "genie":
        g_hat = g
    elif mode == "none":
        g_hat = np.broadcast_to(np.asarray(stats.precoded_mean[ue], dtype=complex), g.shape)
    elif mode in ("ls", "lmmse"):
        if np_dl < 1:
            raise ValueError("DL pilot estimation needs np_dl >= 1")
        # Pilots ride on the unit-power precoder w / sqrt(rho): y~ = sqrt(rho) n_p xi_bar + z~.
        amp = math.sqrt(rho_dl)
        xi_bar = g / amp
        z = (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)) * math.sqrt(0.5 * sigma2_dl * np_dl)
        y_tilde = amp * np_dl * xi_bar + z
        if mode == "ls":
            est = dl_ls_estimate(y_tilde, rho_dl, np_dl)
        else:
            est = dl_lmmse_estimate(y_tilde, stats.precoded_mean[ue] / amp, stats.precoded_var[ue] / rho_dl,
                                    0.0, sigma2_dl * np_dl, rho_dl, np_dl)
        g_hat = amp * est
    else:
        raise ValueError(f"unknown DL pilot mode {mode!r}")
    return EffectiveLink(g, g_hat, sigma2, 1.0, "dl")


def link_statistics(u_batch, h_batch, rho_dl: float | None = None, normalization: str = "average") -> LinkStatistics:
    """Moments over a batch of independent realizations (leading axis)."""
    n = u_batch.shape[0]
    energy = combiner_energy(u_batch).mean(axis=0)
    gains = np.einsum("sklm,sklm->sk", np.conj(u_batch), h_batch)
    mean_gain = gains.mean(axis=0)
    if rho_dl is None:
        pm = np.zeros_like(mean_gain)
        pv = np.zeros(mean_gain.shape)
    else:
        w = precoder_from_combiner(u_batch, rho_dl, normalization, energy)
        xi = np.einsum("sklm,sklm->sk", np.conj(h_batch), w)
        pm = xi.mean(axis=0)
        pv = np.mean(np.abs(xi - pm) ** 2, axis=0)
    return LinkStatistics(mean_gain, energy, pm, pv, n)

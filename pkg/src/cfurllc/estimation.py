"""Uplink MMSE channel estimation and downlink precoded-pilot estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import CorrelationSet, standard_cn


class UnsupportedConfigError(ValueError):
    pass


def orthogonal_pilots(num_ues: int, length: int) -> np.ndarray:
    """Unit-modulus DFT pilot book, shape (length, K); columns are orthogonal with norm^2 = length."""
    if num_ues > length:
        raise UnsupportedConfigError(
            f"{num_ues} UEs need at least {num_ues} orthogonal pilots, got {length} (pilot contamination unsupported)")
    t = np.arange(length)[:, None]
    k = np.arange(num_ues)[None, :]
    return np.exp(2j * np.pi * t * k / length)


@dataclass(frozen=True)
class PilotBook:
    ul: np.ndarray
    dl: np.ndarray | None
    rho_ul: float
    rho_dl: float

    @classmethod
    def orthogonal(cls, num_ues: int, np_ul: int, np_dl: int, rho_ul: float, rho_dl: float) -> "PilotBook":
        dl = orthogonal_pilots(num_ues, np_dl) if np_dl > 0 else None
        return cls(orthogonal_pilots(num_ues, np_ul), dl, rho_ul, rho_dl)

    @property
    def np_ul(self) -> int:
        return self.ul.shape[0]

    @property
    def np_dl(self) -> int:
        return 0 if self.dl is None else self.dl.shape[0]


# ---------------------------------------------------------------------------
# Uplink
# ---------------------------------------------------------------------------

def ul_pilot_rx(h: np.ndarray, pilots: PilotBook, sigma2_ul: float, rng: np.random.Generator) -> np.ndarray:
    """Received pilot matrices ``Y_l`` for all APs, shape (L, M, n_p).

    ``h`` has shape (K, L, M).
    """
    k, l, m = h.shape
    if k > pilots.np_ul:
        raise UnsupportedConfigError("more UEs than orthogonal UL pilots")
    signal = math.sqrt(pilots.rho_ul) * np.einsum("klm,tk->lmt", h, pilots.ul.conj())
    return signal + math.sqrt(sigma2_ul) * standard_cn(rng, (l, m, pilots.np_ul))


def despread(y_pilot: np.ndarray, pilots: PilotBook) -> np.ndarray:
    """``Y_l phi_i`` for every UE and AP, shape (K, L, M)."""
    return np.einsum("lmt,tk->klm", y_pilot, pilots.ul)


@dataclass(frozen=True)
class MmseFilters:
    """Per-pair estimator ``sqrt(rho) R Q^-1`` and covariance split ``R = Phi + C``."""

    gain: np.ndarray
    phi: np.ndarray
    error_cov: np.ndarray
    regularized: bool


def mmse_filters(corr: CorrelationSet, rho_ul: float, np_ul: int, sigma2_ul: float) -> MmseFilters:
    r = corr.matrices
    m = r.shape[-1]
    eye = np.eye(m)
    q = rho_ul * np_ul * r + sigma2_ul * eye
    regularized = False
    if sigma2_ul == 0:
        ridge = 1e-12 * np.real(np.trace(r, axis1=-2, axis2=-1)) / m
        if np.any(np.linalg.matrix_rank(q) < m):
            q = q + ridge[..., None, None] * eye
            regularized = True
    # R Q^-1 = (Q^-1 R)^H since both are Hermitian and commute.
    q_inv_r = np.linalg.solve(q, r)
    r_q_inv = np.conj(np.swapaxes(q_inv_r, -1, -2))
    phi = rho_ul * np_ul * r_q_inv @ r
    phi = 0.5 * (phi + np.conj(np.swapaxes(phi, -1, -2)))
    return MmseFilters(math.sqrt(rho_ul) * r_q_inv, phi, r - phi, regularized)


@dataclass(frozen=True)
class EstimateSet:
    h_hat: np.ndarray
    phi: np.ndarray
    error_cov: np.ndarray


def apply_filters(filters: MmseFilters, y_despread: np.ndarray) -> np.ndarray:
    """``h_hat = sqrt(rho) R Q^-1 (Y phi)``; ``y_despread`` is (..., K, L, M)."""
    if filters.gain.shape[-1] == 1:
        return filters.gain[..., 0] * y_despread
    return np.einsum("klmn,...kln->...klm", filters.gain, y_despread)


def ul_mmse_estimate(y_pilot: np.ndarray, pilots: PilotBook, corr: CorrelationSet, sigma2_ul: float) -> EstimateSet:
    """MMSE estimates of every ``h_il`` from the per-AP received pilots (orthogonal pilots)."""
    filt = mmse_filters(corr, pilots.rho_ul, pilots.np_ul, sigma2_ul)
    return EstimateSet(apply_filters(filt, despread(y_pilot, pilots)), filt.phi, filt.error_cov)


def despread_ul_direct(h: np.ndarray, rho_ul: float, np_ul: int, sigma2_ul: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw ``Y_l phi_i`` directly: ``sqrt(rho) n_p h + CN(0, sigma2 n_p)`` under orthogonal pilots.

    Equal in distribution to ``despread(ul_pilot_rx(...))`` and avoids
    materializing the (M x n_p) pilot matrices in the Monte-Carlo loop.
    """
    noise = standard_cn(rng, h.shape) * math.sqrt(sigma2_ul * np_ul)
    return math.sqrt(rho_ul) * np_ul * h + noise


# ---------------------------------------------------------------------------
# Downlink
# ---------------------------------------------------------------------------

def dl_pilot_rx_and_despread(xi: np.ndarray, pilots: PilotBook, sigma2_dl: float,
                             rng: np.random.Generator) -> np.ndarray:
    """Despread DL pilot observation ``y_tilde_i`` for each UE.

    ``xi[i, j]`` is the precoded channel from UE j's unit-power precoder to UE i.
    """
    if pilots.dl is None:
        raise UnsupportedConfigError("no DL pilots configured")
    k = xi.shape[0]
    phi = pilots.dl
    # y_i = sqrt(rho) sum_j xi_ij phi_j^H + z_i  (row vectors of length n_p)
    y = math.sqrt(pilots.rho_dl) * xi @ phi.conj().T
    y = y + math.sqrt(sigma2_dl) * standard_cn(rng, (k, pilots.np_dl))
    return np.einsum("kt,tk->k", y, phi)


def dl_ls_estimate(y_tilde, rho_dl: float, np_dl: int):
    if np_dl < 1:
        raise UnsupportedConfigError("LS estimation needs DL pilots")
    return np.asarray(y_tilde) / (math.sqrt(rho_dl) * np_dl)


def dl_lmmse_estimate(y_tilde, mean_xi, var_xi, mean_z, var_z, rho_dl: float, np_dl: int):
    """Linear MMSE estimate of the precoded channel from first and second moments."""
    if np_dl < 1:
        raise UnsupportedConfigError("LMMSE estimation needs DL pilots")
    amp = math.sqrt(rho_dl) * np_dl
    den = amp * amp * np.asarray(var_xi) + np.asarray(var_z)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(den > 0, amp * np.asarray(var_xi) / den, 0.0)
    return mean_xi + gain * (np.asarray(y_tilde) - amp * mean_xi - mean_z)

"""Network geometry, large-scale fading, spatial correlation and small-scale fading."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

PATHLOSS_MODELS = {"exp367": 36.7, "exp376": 37.6}
NONFADING_PHASES = ("none", "los")
WAVELENGTH_M = 0.15  # 2 GHz carrier
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


class InvalidDistanceError(ValueError):
    pass


class InvalidCorrelationError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def pathloss_db(d, model: str = "exp376"):
    """Log-distance channel gain in dB at distance ``d`` meters (``d >= 1``)."""
    try:
        exponent = PATHLOSS_MODELS[model]
    except KeyError:
        raise ConfigError(f"unknown pathloss model {model!r}; choose from {sorted(PATHLOSS_MODELS)}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 1.0):
        raise InvalidDistanceError("distance must be at least 1 m")
    out = -30.5 - exponent * np.log10(d)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Topology:
    """AP and UE positions (meters, 3-D) with derived per-pair geometry.

    ``distances`` and ``angles`` have shape (K, L): UE index first.
    """

    ap_positions: np.ndarray
    ue_positions: np.ndarray
    distances: np.ndarray
    angles: np.ndarray
    area_m: float

    @property
    def num_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def num_ues(self) -> int:
        return self.ue_positions.shape[0]


def ap_grid(num_aps: int, area_m: float) -> np.ndarray:
    """Cell-centered square grid of AP (x, y) coordinates."""
    side = math.isqrt(num_aps)
    if side * side != num_aps:
        raise ConfigError(f"grid placement needs a square number of APs, got L={num_aps}")
    step = area_m / side
    c = (np.arange(side) + 0.5) * step
    xx, yy = np.meshgrid(c, c, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def build_topology(num_aps: int, ue_xy, area_m: float = 150.0, ap_height: float = 10.0) -> Topology:
    """Place ``num_aps`` APs on a grid ``ap_height`` meters above the given UEs."""
    ue_xy = np.atleast_2d(np.asarray(ue_xy, dtype=float))
    ap_xy = ap_grid(num_aps, area_m)
    ap = np.column_stack([ap_xy, np.full(num_aps, ap_height)])
    ue = np.column_stack([ue_xy, np.zeros(len(ue_xy))])
    diff = ue[:, None, :] - ap[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    angles = np.arctan2(diff[..., 1], diff[..., 0])
    return Topology(ap, ue, dist, angles, area_m)


def drop_ues(num_ues: int, area_m: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform i.i.d. UE (x, y) positions in the square area."""
    return rng.uniform(0.0, area_m, size=(num_ues, 2))


def local_scattering_corr(beta: float, phi: float, delta: float, num_antennas: int) -> np.ndarray:
    """Spatial correlation of a half-wavelength ULA under the local scattering model.

    Scatterers are uniform in ``[phi - delta, phi + delta]`` (radians).
    """
    return _local_scattering(np.asarray(beta, float), np.asarray(phi, float), delta, num_antennas)


def _local_scattering(beta, phi, delta, num_antennas):
    if delta <= 0:
        raise ValueError("angular spread must be positive")
    # First column of the Toeplitz matrix: r[d] = E[exp(j pi d sin(phi + x))].
    d = np.arange(num_antennas)
    ang = phi[..., None] + delta * _GL_NODES
    kern = np.exp(1j * np.pi * d[:, None] * np.sin(ang)[..., None, :])
    col = 0.5 * beta[..., None] * (kern @ _GL_WEIGHTS)
    idx = np.arange(num_antennas)
    lag = idx[:, None] - idx[None, :]
    full = col[..., np.abs(lag)]
    return np.where(lag >= 0, full, np.conj(full))


@dataclass(frozen=True)
class CorrelationSet:
    """Per-(UE, AP) correlation matrices, shape (K, L, M, M), and gains (K, L)."""

    matrices: np.ndarray
    betas: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        k, l, m, _ = self.matrices.shape
        return k, l, m

    def collective(self, ue: int) -> np.ndarray:
        """Block-diagonal (LM x LM) correlation of one UE's collective channel."""
        return block_diag(*self.matrices[ue])

    @cached_property
    def sqrt_factors(self) -> np.ndarray:
        """``U diag(sqrt(lambda))`` per pair, for sampling ``CN(0, R)``."""
        lam, vec = np.linalg.eigh(self.matrices)
        lam_max = np.max(lam, axis=-1, keepdims=True)
        if np.any(lam < -1e-10 * np.maximum(lam_max, 0)):
            raise InvalidCorrelationError("correlation matrix is not positive semidefinite")
        return vec * np.sqrt(np.clip(lam, 0.0, None))[..., None, :]


def correlation_set(topology: Topology, num_antennas: int, delta_deg: float = 25.0,
                    model: str = "exp376") -> CorrelationSet:
    betas = db_to_lin(pathloss_db(topology.distances, model))
    if num_antennas == 1:
        mats = betas[..., None, None].astype(complex)
    else:
        mats = _local_scattering(betas, topology.angles, math.radians(delta_deg), num_antennas)
    return CorrelationSet(mats, betas)


@dataclass(frozen=True)
class ChannelRealization:
    """One joint draw of all channels; ``h`` has shape (K, L, M)."""

    h: np.ndarray

    def collective(self, ue: int) -> np.ndarray:
        return self.h[ue].reshape(-1)

    def per_ap(self, ue: int, ap: int) -> np.ndarray:
        return self.h[ue, ap]


def standard_cn(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)


def sample_channel_batch(corr: CorrelationSet, rng: np.random.Generator, num: int) -> np.ndarray:
    """``num`` independent realizations, shape (num, K, L, M)."""
    k, l, m = corr.shape
    x = standard_cn(rng, (num, k, l, m))
    if m == 1:
        return x * np.sqrt(corr.betas)[None, :, :, None]
    return np.einsum("klmn,skln->sklm", corr.sqrt_factors, x)


def sample_channels(corr: CorrelationSet, rng: np.random.Generator) -> ChannelRealization:
    return ChannelRealization(sample_channel_batch(corr, rng, 1)[0])


def nonfading_channels(topology: Topology, num_antennas: int, model: str = "exp367",
                       phase: str = "none") -> np.ndarray:
    """Deterministic channels, shape (K, L, M).

    Single-antenna APs get ``sqrt(beta)``; multi-antenna APs get a ULA steering
    vector towards the UE scaled by ``sqrt(beta)``.  ``phase="los"`` also
    applies the propagation phase ``exp(-j 2 pi d / lambda)`` of each link.
    """
    if phase not in NONFADING_PHASES:
        raise ConfigError(f"unknown nonfading phase model {phase!r}; choose from {NONFADING_PHASES}")
    beta = db_to_lin(pathloss_db(topology.distances, model))
    m = np.arange(num_antennas)
    steer = np.exp(1j * np.pi * m * np.sin(topology.angles)[..., None])
    h = np.sqrt(beta)[..., None] * steer
    if phase == "los":
        h = h * np.exp(-2j * np.pi * topology.distances / WAVELENGTH_M)[..., None]
    return h

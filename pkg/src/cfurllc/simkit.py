"""Monte-Carlo engine: per-placement error probability and network availability."""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import fbl
from .channel import (build_topology, correlation_set, drop_ues, nonfading_channels,
                      sample_channel_batch)
from .estimation import apply_filters, despread_ul_direct, mmse_filters
from .processing import (LinkStatistics, assign_small_cells, combiner_energy, combiners,
                         effective_link_dl, effective_link_ul, precoder_from_combiner)
from .scenario import ExperimentSpec, Scenario

log = logging.getLogger(__name__)

WORKERS_ENV = "CFURLLC_WORKERS"
_CHUNK_ENTRIES = 400_000

# Sub-stream indices inside one placement task.
_PLACEMENT, _FADING, _STATS = range(3)


def rng_streams(seed: int, task_id: int, n_sub: int = 3) -> list[np.random.Generator]:
    """Independent counter-based (Philox) generators for one task.

    Identical ``(seed, task_id)`` always give identical streams; nothing
    depends on execution order.
    """
    root = np.random.SeedSequence(seed, spawn_key=(task_id,))
    return [np.random.Generator(np.random.Philox(ss)) for ss in root.spawn(n_sub)]


@dataclass(frozen=True)
class Placement:
    scenario: Scenario
    ue_xy: np.ndarray
    probe: int
    topology: object
    corr: object
    filters: object
    channels: np.ndarray | None
    serving: np.ndarray


def drop_placement(sc: Scenario, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """UE positions and the uniformly chosen probe UE of one placement."""
    ue_xy = drop_ues(sc.K, sc.area_m, rng)
    if sc.ue_layout == "center":
        ue_xy[0] = sc.area_m / 2
        return ue_xy, 0
    return ue_xy, int(rng.integers(sc.K))


def setup_placement(sc: Scenario, ue_xy, probe: int = 0) -> Placement:
    topo = build_topology(sc.L, ue_xy, sc.area_m, sc.ap_height_m)
    if sc.fading:
        corr = correlation_set(topo, sc.M, sc.delta_deg, sc.pathloss_model)
        filt = mmse_filters(corr, sc.rho_ul, sc.np_ul, sc.sigma2)
        betas, channels = corr.betas, None
    else:
        corr = filt = None
        channels = nonfading_channels(topo, sc.M, sc.pathloss_model, sc.nonfading_phase)
        betas = np.sum(np.abs(channels) ** 2, axis=-1) / sc.M
    serving = assign_small_cells(betas, sc.M, sc.rho_ul, sc.sigma2)
    return Placement(sc, np.asarray(ue_xy), probe, topo, corr, filt, channels, serving)


def _realizations(pl: Placement, num: int, rng: np.random.Generator):
    """Channels, estimates and combiners for ``num`` independent realizations."""
    sc = pl.scenario
    if not sc.fading:
        h = np.broadcast_to(pl.channels, (num,) + pl.channels.shape)
        err = np.zeros(pl.channels.shape + (sc.M,), dtype=complex)
        h_hat = h
    else:
        h = sample_channel_batch(pl.corr, rng, num)
        h_hat = apply_filters(pl.filters, despread_ul_direct(h, sc.rho_ul, sc.np_ul, sc.sigma2, rng))
        err = pl.filters.error_cov
    u = combiners(h_hat, err, sc.architecture, sc.combiner, sc.rho_ul, sc.sigma2, pl.serving)
    return h, h_hat, u


def _chunk_size(sc: Scenario) -> int:
    return max(1, _CHUNK_ENTRIES // (sc.K * sc.L * sc.M))


def _needs_stats(sc: Scenario) -> bool:
    if sc.direction == "ul":
        return sc.architecture == "distributed"
    return sc.normalization == "average" or sc.dl_pilot_mode in ("none", "lmmse")


def estimate_link_statistics(pl: Placement, n_stat: int, rng: np.random.Generator) -> LinkStatistics:
    """Moments of the effective channels over ``n_stat`` independent realizations."""
    sc = pl.scenario
    if not sc.fading:
        n_stat = 1
    elif n_stat < 100:
        raise ValueError("n_stat must be at least 100")
    rho_dl = sc.rho_dl if sc.direction == "dl" else None
    step = _chunk_size(sc)
    energy_parts, gain_parts, batches = [], [], []
    done = 0
    while done < n_stat:
        num = min(step, n_stat - done)
        h, _, u = _realizations(pl, num, rng)
        energy_parts.append(combiner_energy(u))
        gain_parts.append(np.einsum("sklm,sklm->sk", np.conj(u), h))
        if rho_dl is not None:
            batches.append((h, u))
        done += num
    energy = np.concatenate(energy_parts).mean(axis=0)
    mean_gain = np.concatenate(gain_parts).mean(axis=0)
    if rho_dl is None:
        zeros = np.zeros(sc.K)
        return LinkStatistics(mean_gain, energy, zeros.astype(complex), zeros, n_stat)
    xis = []
    for h, u in batches:
        w = precoder_from_combiner(u, rho_dl, sc.normalization, energy)
        xis.append(np.einsum("sklm,sklm->sk", np.conj(h), w))
    xi = np.concatenate(xis)
    pm = xi.mean(axis=0)
    return LinkStatistics(mean_gain, energy, pm, np.mean(np.abs(xi - pm) ** 2, axis=0), n_stat)


@dataclass(frozen=True)
class PlacementEps:
    log_eps: np.ndarray
    outage: np.ndarray
    ues: tuple[int, ...]
    n_fading: int

    @property
    def max_log_eps(self) -> float:
        return float(np.max(self.log_eps))


def per_placement_eps(pl: Placement, n_fading: int, rng: np.random.Generator,
                      stats: LinkStatistics | None = None, ues=None) -> PlacementEps:
    """Average error probability over small-scale fading for the given UEs.

    Every realization runs pilots, estimation, combining/precoding and the
    effective link, then the saddlepoint bound with per-realization optimal
    ``s``.  Averaging is in the linear domain (log-sum-exp).
    """
    sc = pl.scenario
    ues = (pl.probe,) if ues is None else tuple(ues)
    if not sc.fading:
        n_fading = 1
    if stats is None and _needs_stats(sc):
        raise ValueError("this scenario needs link statistics")
    n, rate = sc.n_data, sc.rate_nats
    step = _chunk_size(sc)
    parts = [[] for _ in ues]
    outs = [[] for _ in ues]
    done = 0
    while done < n_fading:
        num = min(step, n_fading - done)
        h, h_hat, u = _realizations(pl, num, rng)
        w = None
        if sc.direction == "dl":
            w = precoder_from_combiner(u, sc.rho_dl, sc.normalization,
                                       None if stats is None else stats.mean_combiner_energy)
        for j, ue in enumerate(ues):
            if sc.direction == "ul":
                ghs = stats.mean_eff_channel[ue] if sc.architecture == "distributed" else None
                link = effective_link_ul(u, h, h_hat, ue, sc.rho_ul, sc.sigma2, ghs)
            else:
                mode = sc.dl_pilot_mode if sc.fading else "genie"
                link = effective_link_dl(w, h, ue, sc.sigma2, mode, rho_dl=sc.rho_dl, np_dl=sc.np_dl,
                                         stats=stats, rng=rng)
            parts[j].append(fbl.log_eps_optimized(link.g, link.g_hat, link.rho, link.sigma2_eff, n, rate))
            snr = link.rho * np.abs(link.g) ** 2 / link.sigma2_eff
            outs[j].append(np.log1p(snr) < rate)
        done += num
    log_eps = np.array([logsumexp(np.concatenate(p)) - math.log(n_fading) for p in parts])
    outage = np.array([np.concatenate(o).mean() for o in outs])
    return PlacementEps(np.minimum(log_eps, 0.0), outage, ues, n_fading)


def evaluate_placement(spec: ExperimentSpec, index: int) -> tuple[float, float]:
    """(log eps, outage probability) of the probe UE in placement ``index``."""
    sc = spec.scenario
    r_place, r_fade, r_stats = rng_streams(spec.seed, index)
    ue_xy, probe = drop_placement(sc, r_place)
    pl = setup_placement(sc, ue_xy, probe)
    stats = estimate_link_statistics(pl, sc.n_stat, r_stats) if _needs_stats(sc) else None
    res = per_placement_eps(pl, spec.effective_n_fading, r_fade, stats)
    return float(res.log_eps[0]), float(res.outage[0])


@dataclass(frozen=True)
class AvailabilityResult:
    eta: float
    wilson_ci_95: tuple[float, float]
    per_placement_eps: np.ndarray
    mean_log10_eps: float
    n_placements: int
    n_fading: int
    runtime_s: float

    @classmethod
    def from_eps(cls, eps, target: float, n_fading: int, runtime_s: float) -> "AvailabilityResult":
        eps = np.asarray(eps, dtype=float)
        hits = int(np.count_nonzero(eps <= target))
        with np.errstate(divide="ignore"):
            l10 = np.log10(eps)
        return cls(hits / len(eps), fbl.wilson_interval(hits, len(eps)), eps,
                   float(np.mean(np.maximum(l10, -300.0))), len(eps), n_fading, runtime_s)


@dataclass(frozen=True)
class ExperimentResult:
    eps: AvailabilityResult
    outage: AvailabilityResult


def _worker_count(spec: ExperimentSpec) -> int:
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else max(1, spec.workers)


def _evaluate_all(spec: ExperimentSpec, indices, workers: int):
    if workers <= 1:
        return [evaluate_placement(spec, i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(evaluate_placement, [spec] * len(indices), indices,
                             chunksize=max(1, len(indices) // (4 * workers))))


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentResult:
    """Evaluate every placement once; both availability metrics share the same draws."""
    t0 = time.perf_counter()
    workers = _worker_count(spec) if workers is None else workers
    rows = _evaluate_all(spec, list(range(spec.n_placements)), workers)
    dt = time.perf_counter() - t0
    log_eps = np.array([r[0] for r in rows])
    outage = np.array([r[1] for r in rows])
    target = spec.scenario.eps_target
    nf = spec.effective_n_fading
    log.info("%d placements in %.1fs (eta=%.3f)", spec.n_placements, dt, np.mean(log_eps <= math.log(target)))
    return ExperimentResult(AvailabilityResult.from_eps(np.exp(log_eps), target, nf, dt),
                            AvailabilityResult.from_eps(outage, target, nf, dt))


def network_availability(spec: ExperimentSpec, workers: int | None = None) -> AvailabilityResult:
    return run_experiment(spec, workers).eps


def outage_availability(spec: ExperimentSpec, workers: int | None = None) -> AvailabilityResult:
    if not spec.scenario.fading:
        raise ValueError("outage availability needs a fading scenario")
    return run_experiment(spec, workers).outage

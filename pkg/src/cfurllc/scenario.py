"""Scenario and experiment configuration."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .channel import NONFADING_PHASES, PATHLOSS_MODELS, dbm_to_watt
from .processing import ARCHITECTURES

DL_PILOT_MODES = ("none", "ls", "lmmse", "genie")
# Below this many antennas per AP, statistics-based decoding in distributed mode
# has little channel hardening to rely on.
HARDENING_WARN_M = 4


@dataclass(frozen=True)
class Scenario:
    architecture: str = "centralized"
    L: int = 64
    M: int = 1
    K: int = 40
    area_m: float = 150.0
    ap_height_m: float = 10.0
    rho_ul_dbm: float = -10.0
    rho_dl_dbm: float = -10.0
    noise_dbm: float = -96.0
    n_total: int = 300
    np_ul: int = 40
    np_dl: int = 40
    bits: float = 160.0
    eps_target: float = 1e-5
    direction: str = "ul"
    combiner: str = "mmse"
    dl_pilot_mode: str = "ls"
    pathloss_model: str = "exp376"
    delta_deg: float = 25.0
    fading: bool = True
    normalization: str = "average"
    n_stat: int = 2000
    ue_layout: str = "uniform"
    nonfading_phase: str = "none"

    @property
    def sigma2(self) -> float:
        return float(dbm_to_watt(self.noise_dbm))

    @property
    def rho_ul(self) -> float:
        return float(dbm_to_watt(self.rho_ul_dbm))

    @property
    def rho_dl(self) -> float:
        return float(dbm_to_watt(self.rho_dl_dbm))

    @property
    def uses_dl_pilots(self) -> bool:
        return self.direction == "dl" and self.dl_pilot_mode in ("ls", "lmmse")

    @property
    def n_data(self) -> int:
        """Data channel uses of the evaluated link.

        Fading scenarios split ``n_total`` into UL and DL halves, each carrying
        its pilots; nonfading scenarios use all ``n_total`` uses for data.
        """
        if not self.fading:
            return self.n_total
        half = self.n_total // 2
        if self.direction == "ul":
            return half - self.np_ul
        return half - (self.np_dl if self.uses_dl_pilots else 0)

    @property
    def rate_nats(self) -> float:
        return self.bits * math.log(2.0) / self.n_data

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: Scenario
    n_placements: int = 400
    n_fading: int = 5000
    seed: int = 0
    workers: int = 1

    @property
    def effective_n_fading(self) -> int:
        return self.n_fading if self.scenario.fading else 1


SCENARIO_KEYS = tuple(f.name for f in dataclasses.fields(Scenario))
EXPERIMENT_KEYS = ("n_placements", "n_fading", "seed")


@dataclass
class Diagnostics:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_scenario(sc: Scenario) -> Diagnostics:
    d = Diagnostics()
    if math.isqrt(sc.L) ** 2 != sc.L:
        d.errors.append(f"L={sc.L} is not a perfect square (grid placement needs integer sqrt(L))")
    if sc.K < 1 or sc.M < 1 or sc.L < 1:
        d.errors.append("K, L and M must be positive")
    if sc.architecture not in ARCHITECTURES:
        d.errors.append(f"architecture must be one of {ARCHITECTURES}")
    if sc.direction not in ("ul", "dl"):
        d.errors.append("direction must be 'ul' or 'dl'")
    if sc.combiner not in ("mmse", "mr"):
        d.errors.append("combiner must be 'mmse' or 'mr'")
    if sc.dl_pilot_mode not in DL_PILOT_MODES:
        d.errors.append(f"dl_pilot_mode must be one of {DL_PILOT_MODES}")
    if sc.normalization not in ("average", "instantaneous"):
        d.errors.append("normalization must be 'average' or 'instantaneous'")
    if sc.pathloss_model not in PATHLOSS_MODELS:
        d.errors.append(f"pathloss_model must be one of {sorted(PATHLOSS_MODELS)}")
    if sc.ue_layout not in ("uniform", "center"):
        d.errors.append("ue_layout must be 'uniform' or 'center'")
    if sc.nonfading_phase not in NONFADING_PHASES:
        d.errors.append(f"nonfading_phase must be one of {NONFADING_PHASES}")
    for name in ("rho_ul_dbm", "rho_dl_dbm", "noise_dbm", "bits", "area_m", "delta_deg"):
        if not math.isfinite(getattr(sc, name)):
            d.errors.append(f"{name} must be finite")
    if sc.fading:
        if sc.K > sc.np_ul:
            d.errors.append(f"K={sc.K} exceeds np_ul={sc.np_ul}: pilot contamination is unsupported")
        if sc.uses_dl_pilots and sc.np_dl < 1:
            d.errors.append(f"dl_pilot_mode={sc.dl_pilot_mode} needs np_dl >= 1")
        if sc.uses_dl_pilots and sc.K > sc.np_dl:
            d.errors.append(f"K={sc.K} exceeds np_dl={sc.np_dl}: pilot contamination is unsupported")
        if sc.n_total % 2:
            d.errors.append("n_total must be even (equal UL/DL halves)")
        if sc.n_stat < 100:
            d.errors.append("n_stat must be at least 100")
    if sc.n_data < 1:
        d.errors.append(f"no data channel uses left (n_data={sc.n_data})")
    if sc.bits <= 0:
        d.errors.append("bits must be positive")
    if not 0 < sc.eps_target <= 1:
        d.errors.append("eps_target must be in (0, 1]")
    if sc.architecture == "distributed" and sc.M < HARDENING_WARN_M:
        d.warnings.append(f"distributed operation with M={sc.M} antennas per AP: weak channel hardening")
    if sc.architecture != "cellular" and sc.fading is False and sc.M > 1 and sc.L > 1:
        d.warnings.append("nonfading multi-antenna APs use ULA steering vectors per AP")
    return d


def summary(sc: Scenario) -> str:
    rows = [
        ("architecture", sc.architecture), ("direction", sc.direction),
        ("area", f"{sc.area_m:g} m x {sc.area_m:g} m"), ("L x M", f"{sc.L} x {sc.M}"),
        ("K", sc.K), ("noise", f"{sc.noise_dbm:g} dBm"),
        ("rho_ul / rho_dl", f"{sc.rho_ul_dbm:g} / {sc.rho_dl_dbm:g} dBm"),
        ("bits b", f"{sc.bits:g}"), ("n", sc.n_total), ("n/2", sc.n_total // 2),
        ("np_ul / np_dl", f"{sc.np_ul} / {sc.np_dl}"),
        ("n_ul data", sc.replace(direction="ul").n_data), ("n_dl data", sc.replace(direction="dl").n_data),
        ("rate", f"{sc.rate_nats:.4f} nats/use"), ("eps_target", f"{sc.eps_target:g}"),
        ("combiner", sc.combiner), ("dl_pilot_mode", sc.dl_pilot_mode),
        ("pathloss", sc.pathloss_model), ("fading", sc.fading), ("delta", f"{sc.delta_deg:g} deg"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"  {k:<{width}}  {v}" for k, v in rows)

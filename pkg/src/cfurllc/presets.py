"""Experiment plans: named presets and INI configuration files.

A plan is a base scenario, a set of curves (scenario overrides, optionally an
antenna split rule for a given total antenna count LM) and one swept
parameter.  Each curve yields one CSV.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
import os
from dataclasses import dataclass, field

from .scenario import EXPERIMENT_KEYS, SCENARIO_KEYS, Scenario

SPLIT_RULES = ("centralized", "distributed", "cellular4", "cellular1")
SWEEP_PARAMS = ("K", "L", "M", "LM", "rho", "rho_ul_dbm", "rho_dl_dbm")
METRICS = ("eps", "outage")

DEFAULT_SWEEPS = {
    "K": tuple(range(1, 41)),
    "rho": tuple(range(-20, 21, 2)),
    "rho_ul_dbm": tuple(range(-20, 21, 4)),
    "rho_dl_dbm": tuple(range(-20, 21, 4)),
    "L": tuple(k * k for k in range(4, 15)),
    "LM": (64, 144, 256, 400),
    "M": (1, 2, 4, 8, 16),
}

_ARCH_OF_RULE = {"centralized": "centralized", "distributed": "distributed",
                 "cellular4": "cellular", "cellular1": "cellular"}


class PlanError(ValueError):
    pass


def split_antennas(rule: str, lm: int) -> tuple[int, int] | None:
    """(L, M) realizing ``lm`` total antennas under ``rule``, or None if impossible.

    centralized: single-antenna APs (L = LM, needs a square).
    distributed: the smallest square L >= 16 dividing LM.
    cellular4 / cellular1: 4 or 1 multi-antenna BSs.
    """
    if rule == "centralized":
        return (lm, 1) if math.isqrt(lm) ** 2 == lm else None
    if rule == "distributed":
        for side in range(4, math.isqrt(lm) + 1):
            if lm % (side * side) == 0:
                return side * side, lm // (side * side)
        return None
    if rule == "cellular4":
        return (4, lm // 4) if lm % 4 == 0 else None
    if rule == "cellular1":
        return 1, lm
    raise PlanError(f"unknown split rule {rule!r}; choose from {SPLIT_RULES}")


@dataclass(frozen=True)
class Curve:
    name: str
    overrides: dict = field(default_factory=dict)
    split: str | None = None


@dataclass(frozen=True)
class Plan:
    name: str
    base: Scenario
    curves: tuple[Curve, ...]
    sweep_param: str
    sweep_values: tuple
    lm: int | None = None
    n_placements: int = 400
    n_fading: int = 5000
    seed: int = 0
    metrics: tuple[str, ...] = ("eps",)

    def replace(self, **changes) -> "Plan":
        return dataclasses.replace(self, **changes)

    def scenario_for(self, curve: Curve, value) -> Scenario | None:
        """Resolved scenario of one (curve, sweep value) point; None if the split is impossible."""
        sc = self.base.replace(**curve.overrides)
        lm = value if self.sweep_param == "LM" else self.lm
        if curve.split is not None:
            if lm is None:
                raise PlanError(f"curve {curve.name!r} has a split rule but no LM is set")
            lm_split = split_antennas(curve.split, int(lm))
            if lm_split is None:
                return None
            sc = sc.replace(architecture=_ARCH_OF_RULE[curve.split], L=lm_split[0], M=lm_split[1])
        if self.sweep_param == "rho":
            return sc.replace(rho_ul_dbm=float(value), rho_dl_dbm=float(value))
        if self.sweep_param == "LM":
            return sc
        return sc.replace(**{self.sweep_param: _coerce(self.sweep_param, value)})


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_NONFADING = Scenario(fading=False, n_total=100, bits=60.0, pathloss_model="exp367", K=10)
_THREE_WAY = (
    Curve("cell-free", {"architecture": "centralized", "L": 64, "M": 1}),
    Curve("small-cells", {"architecture": "cellular", "L": 64, "M": 1}),
    Curve("massive-mimo", {"architecture": "cellular", "L": 1, "M": 64}),
)
_ARCH_CURVES = tuple(Curve(name, {}, rule) for name, rule in (
    ("cf-centralized", "centralized"), ("cf-distributed", "distributed"),
    ("cellular-L4", "cellular4"), ("cellular-L1", "cellular1")))


def _dl_curves(modes=("ls", "none")):
    return tuple(Curve(f"{c.name}-{m}", {**c.overrides, "dl_pilot_mode": m}, c.split)
                 for m in modes for c in _ARCH_CURVES)


def _presets() -> dict[str, Plan]:
    table1 = Scenario()
    dl = table1.replace(direction="dl")
    return {
        "nonfading-3way": Plan("nonfading-3way", _NONFADING, _THREE_WAY, "K", DEFAULT_SWEEPS["K"],
                               n_placements=400, n_fading=1),
        "ul-antenna-sweep": Plan("ul-antenna-sweep", table1, _ARCH_CURVES, "LM", DEFAULT_SWEEPS["LM"],
                                 n_placements=200, n_fading=2000),
        "ul-power-sweep": Plan("ul-power-sweep", table1, _ARCH_CURVES, "rho_ul_dbm",
                               DEFAULT_SWEEPS["rho_ul_dbm"], lm=100, n_placements=200, n_fading=2000),
        "dl-hardening-single-ue": Plan(
            "dl-hardening-single-ue",
            dl.replace(K=1, ue_layout="center", architecture="centralized", M=1, combiner="mr"),
            tuple(Curve(m, {"dl_pilot_mode": m}) for m in ("ls", "none", "genie")),
            "L", DEFAULT_SWEEPS["L"], n_placements=1, n_fading=10_000),
        "dl-antenna-sweep": Plan("dl-antenna-sweep", dl, _dl_curves(), "LM", DEFAULT_SWEEPS["LM"],
                                 n_placements=200, n_fading=2000),
        "dl-power-sweep": Plan("dl-power-sweep", dl, _dl_curves(), "rho_dl_dbm", DEFAULT_SWEEPS["rho_dl_dbm"],
                               lm=100, n_placements=200, n_fading=2000),
        "outage-comparison": Plan("outage-comparison", dl, _dl_curves(("ls",)), "LM", DEFAULT_SWEEPS["LM"],
                                  n_placements=200, n_fading=2000, metrics=("eps", "outage")),
    }


PRESETS = _presets()


def preset(name: str) -> Plan:
    try:
        return PRESETS[name]
    except KeyError:
        raise PlanError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


# ---------------------------------------------------------------------------
# Value parsing and INI round trip
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: type(f.default) for f in dataclasses.fields(Scenario)}


def _coerce(key: str, raw):
    if key in ("K", "L", "M", "LM"):
        return int(raw)
    if key == "rho":
        return float(raw)
    typ = _FIELD_TYPES.get(key)
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise PlanError(f"{key} expects a boolean, got {raw!r}")
    if typ in (int, float):
        return typ(raw)
    return str(raw).strip()


def parse_scenario_items(items, where: str) -> dict:
    out = {}
    for key, raw in items:
        if key not in SCENARIO_KEYS:
            raise PlanError(f"unknown key {key!r} in {where}; valid keys: {', '.join(SCENARIO_KEYS)}")
        try:
            out[key] = _coerce(key, raw)
        except ValueError as exc:
            raise PlanError(f"bad value for {key!r} in {where}: {exc}") from None
    return out


def parse_values(text: str, param: str) -> tuple:
    vals = [v.strip() for v in str(text).split(",") if v.strip()]
    if not vals:
        raise PlanError("empty sweep value list")
    return tuple(_coerce(param, v) for v in vals)


_PLAN_KEYS = EXPERIMENT_KEYS
_SWEEP_KEYS = ("param", "values", "LM", "metrics")
_CURVE_PREFIX = "curve "


def _optionxform(name: str) -> str:
    return name  # keep case: K, L, M, LM


def load_config(path: str) -> Plan:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = _optionxform
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    known = ("plan", "scenario", "experiment", "sweep")
    for sec in cp.sections():
        if sec not in known and not sec.startswith(_CURVE_PREFIX):
            raise PlanError(f"unknown section [{sec}]; valid: [plan], [scenario], [experiment], [sweep], [curve <name>]")
    base = Scenario(**parse_scenario_items(cp.items("scenario") if cp.has_section("scenario") else [],
                                           "[scenario]"))
    exp = {}
    if cp.has_section("experiment"):
        for key, raw in cp.items("experiment"):
            if key not in _PLAN_KEYS:
                raise PlanError(f"unknown key {key!r} in [experiment]; valid keys: {', '.join(_PLAN_KEYS)}")
            exp[key] = int(raw)
    sweep = dict(cp.items("sweep")) if cp.has_section("sweep") else {}
    for key in sweep:
        if key not in _SWEEP_KEYS:
            raise PlanError(f"unknown key {key!r} in [sweep]; valid keys: {', '.join(_SWEEP_KEYS)}")
    param = sweep.get("param", "K")
    if param not in SWEEP_PARAMS:
        raise PlanError(f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}")
    values = parse_values(sweep["values"], param) if "values" in sweep else (
        (getattr(base, param),) if param in SCENARIO_KEYS else DEFAULT_SWEEPS[param])
    metrics = tuple(m.strip() for m in sweep.get("metrics", "eps").split(",") if m.strip())
    for m in metrics:
        if m not in METRICS:
            raise PlanError(f"unknown metric {m!r}; valid: {', '.join(METRICS)}")
    curves = []
    for sec in cp.sections():
        if sec.startswith(_CURVE_PREFIX):
            items = dict(cp.items(sec))
            split = items.pop("split", None)
            if split is not None and split not in SPLIT_RULES:
                raise PlanError(f"unknown split {split!r} in [{sec}]; valid: {', '.join(SPLIT_RULES)}")
            curves.append(Curve(sec[len(_CURVE_PREFIX):].strip(),
                                parse_scenario_items(items.items(), f"[{sec}]"), split))
    if not curves:
        curves = [Curve("default")]
    name = os.path.splitext(os.path.basename(path))[0]
    if cp.has_section("plan"):
        for key in cp["plan"]:
            if key != "name":
                raise PlanError(f"unknown key {key!r} in [plan]; valid keys: name")
        name = cp["plan"].get("name", name)
    return Plan(name, base, tuple(curves), param, values,
                lm=int(sweep["LM"]) if "LM" in sweep else None,
                n_placements=exp.get("n_placements", 400), n_fading=exp.get("n_fading", 5000),
                seed=exp.get("seed", 0), metrics=metrics)


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def plan_to_ini(plan: Plan) -> str:
    """INI text that loads back into an equivalent plan."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = _optionxform
    cp["plan"] = {"name": plan.name}
    cp["scenario"] = {k: _fmt(getattr(plan.base, k)) for k in SCENARIO_KEYS}
    cp["experiment"] = {"n_placements": str(plan.n_placements), "n_fading": str(plan.n_fading),
                        "seed": str(plan.seed)}
    sweep = {"param": plan.sweep_param, "values": ", ".join(_fmt(v) for v in plan.sweep_values),
             "metrics": ", ".join(plan.metrics)}
    if plan.lm is not None:
        sweep["LM"] = str(plan.lm)
    cp["sweep"] = sweep
    for c in plan.curves:
        sec = {k: _fmt(v) for k, v in c.overrides.items()}
        if c.split:
            sec["split"] = c.split
        cp[_CURVE_PREFIX + c.name] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()

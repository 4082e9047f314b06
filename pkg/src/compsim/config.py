"""Run configuration: presets, overrides, validation and digests."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, asdict, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .channel import ChannelParams, default_channel_params
from .scenario import LayoutParams, ScenarioKind
from .scheduler import SchemeMode

PRESETS = {
    ScenarioKind.INH_4GHZ: "inh_4ghz.yaml",
    ScenarioKind.DU_4GHZ: "du_4ghz.yaml",
    ScenarioKind.INH_30GHZ: "inh_30ghz.yaml",
    ScenarioKind.DU_30GHZ: "du_30ghz.yaml",
}

PRESET_ALIASES = {
    "inh4": ScenarioKind.INH_4GHZ, "du4": ScenarioKind.DU_4GHZ,
    "inh30": ScenarioKind.INH_30GHZ, "du30": ScenarioKind.DU_30GHZ,
}


class ConfigError(ValueError):
    """Invalid configuration; `problems` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


@dataclass(frozen=True)
class SimConfig:
    """Everything a single simulation run depends on, apart from the seed."""

    scenario: ScenarioKind
    scheme: SchemeMode = SchemeMode.BASELINE
    n_tx: int = 2
    scale: str = "desk"
    lambda_per_s: float = 0.0
    tti_s: float = 1e-3
    bandwidth_hz: float = 20e6
    noise_figure_db: float = 9.0
    tx_power_dbm: float = 24.0
    warmup_ttis: int = 2000
    measure_ttis: int = 20000
    min_transfers: int = 500
    max_measure_ttis: int = 80000
    max_drain_ttis: int = 20000
    pf_beta: float = 0.01
    pf_floor_bps: float = 1e3
    pf_init_bps: float = 1e3
    top_k: Optional[int] = 4
    third_trp_with_ncjt: bool = True
    se_cap: float = 7.8
    log_schedule: bool = False
    channel: ChannelParams = None
    layout: LayoutParams = field(default_factory=LayoutParams)

    def __post_init__(self):
        object.__setattr__(self, "scenario", ScenarioKind(self.scenario))
        object.__setattr__(self, "scheme", SchemeMode(self.scheme))
        if self.channel is None:
            object.__setattr__(self, "channel", default_channel_params(self.scenario))

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    @property
    def noise_power_w(self) -> float:
        dbm = -174.0 + 10 * math.log10(self.bandwidth_hz) + self.noise_figure_db
        return 10 ** ((dbm - 30.0) / 10.0)

    @property
    def tx_power_w(self) -> float:
        return 10 ** ((self.tx_power_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class CalibrationSettings:
    tolerance: float = 0.01
    n_seeds: int = 3
    max_expansions: int = 12
    max_iterations: int = 30


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig
    target_ru: Optional[float] = None
    seeds: tuple = (1,)
    output_dir: str = "out"
    workers: int = 1
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    ru_targets: tuple = (0.1, 0.2, 0.4)
    schemes: tuple = ("baseline", "dps", "ncjt")
    sweep_cells: tuple = ()  # (scenario, n_tx) pairs; empty = the configured scenario only


# ---------------------------------------------------------------------------
# loading

def load_preset(kind) -> dict:
    kind = ScenarioKind(PRESET_ALIASES.get(kind, kind))
    text = resources.files("compsim.presets").joinpath(PRESETS[kind]).read_text()
    return yaml.safe_load(text)


def load_raw(path_or_preset) -> dict:
    """Raw config mapping, merged over the scenario preset it names."""
    p = Path(str(path_or_preset))
    if p.exists():
        raw = yaml.safe_load(p.read_text()) or {}
    elif str(path_or_preset) in PRESET_ALIASES or str(path_or_preset) in {k.value for k in PRESETS}:
        return load_preset(str(path_or_preset))
    else:
        raise ConfigError([f"config: no such file or preset {path_or_preset!r}"])
    if "scenario" not in raw:
        raise ConfigError(["scenario: missing"])
    try:
        base = load_preset(raw["scenario"])
    except ValueError:
        raise ConfigError([f"scenario: unknown kind {raw['scenario']!r}"])
    return deep_merge(base, raw)


def deep_merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as YAML scalars."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([f"override {item!r}: expected key=value"])
        key, value = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {key}: {part} is not a section"])
        parsed = yaml.safe_load(value)
        if isinstance(parsed, str):
            # YAML 1.1 leaves forms like 1e-9 as strings
            try:
                parsed = float(parsed)
            except ValueError:
                pass
        node[parts[-1]] = parsed
    return out


_SCHEDULER_KEYS = ("pf_beta", "pf_floor_bps", "pf_init_bps", "top_k", "third_trp_with_ncjt")
_ENGINE_KEYS = {f.name for f in fields(SimConfig)} - {"scenario", "scheme", "n_tx", "scale",
                                                        "channel", "layout"}


def build_run_config(raw: dict) -> RunConfig:
    """Validate a raw mapping and turn it into a RunConfig.

    Every problem is collected before raising, so the error lists all
    offending fields at once.
    """
    problems = []
    raw = copy.deepcopy(raw)
    try:
        kind = ScenarioKind(raw.get("scenario"))
    except ValueError:
        raise ConfigError([f"scenario: unknown kind {raw.get('scenario')!r}"])
    try:
        scheme = SchemeMode(raw.get("scheme", "baseline"))
    except ValueError:
        problems.append(f"scheme: unknown scheme {raw.get('scheme')!r}")
        scheme = SchemeMode.BASELINE

    n_tx = raw.get("n_tx", 2)
    if kind.is_mmwave:
        if n_tx != 2:
            problems.append(f"n_tx: fixed at 2 per analog beam for {kind.value}, got {n_tx}")
    elif n_tx not in (2, 4):
        problems.append(f"n_tx: must be 2 or 4 for {kind.value}, got {n_tx}")
    scale = raw.get("scale", "desk")
    if scale not in ("full", "desk"):
        problems.append(f"scale: must be 'full' or 'desk', got {scale!r}")

    engine = dict(raw.get("engine", {}) or {})
    sched = raw.get("scheduler", {}) or {}
    for k in sorted(set(engine) & set(sched)):
        problems.append(f"engine.{k}: belongs in the scheduler section")
    engine.update(sched)
    unknown = set(engine) - _ENGINE_KEYS
    for k in sorted(unknown):
        problems.append(f"engine.{k}: unknown key")
        engine.pop(k)
    if "lambda_per_s" in raw:
        engine["lambda_per_s"] = raw["lambda_per_s"]

    channel_raw = raw.get("channel", {}) or {}
    valid_channel = {f.name for f in fields(ChannelParams)}
    for k in sorted(set(channel_raw) - valid_channel):
        problems.append(f"channel.{k}: unknown key")
    channel = default_channel_params(kind, **{k: v for k, v in channel_raw.items()
                                              if k in valid_channel})
    layout_raw = raw.get("layout", {}) or {}
    valid_layout = {f.name for f in fields(LayoutParams)}
    for k in sorted(set(layout_raw) - valid_layout):
        problems.append(f"layout.{k}: unknown key")
    layout = LayoutParams(**{k: v for k, v in layout_raw.items() if k in valid_layout})

    positive = ("tti_s", "bandwidth_hz", "pf_beta", "pf_floor_bps", "pf_init_bps", "se_cap")
    for k in positive:
        if k in engine and not _positive(engine[k]):
            problems.append(f"{k}: must be strictly positive, got {engine[k]!r}")
    if "lambda_per_s" in engine and not (_number(engine["lambda_per_s"])
                                         and engine["lambda_per_s"] >= 0):
        problems.append(f"lambda_per_s: must be non-negative, got {engine['lambda_per_s']!r}")
    for k in ("warmup_ttis", "measure_ttis", "max_measure_ttis", "max_drain_ttis"):
        if k in engine and not (isinstance(engine[k], int) and engine[k] >= 0):
            problems.append(f"{k}: must be a non-negative integer, got {engine[k]!r}")
    if "pf_beta" in engine and _number(engine["pf_beta"]) and not 0 < engine["pf_beta"] < 1:
        problems.append("pf_beta: must lie in (0, 1)")
    if "tx_power_dbm" in engine and not _number(engine["tx_power_dbm"]):
        problems.append("tx_power_dbm: must be a number")
    if "top_k" in engine and engine["top_k"] is not None and not (
            isinstance(engine["top_k"], int) and engine["top_k"] > 0):
        problems.append(f"top_k: must be a positive integer or null, got {engine['top_k']!r}")
    for k in ("rho",):
        if k in channel_raw and not (_number(channel_raw[k]) and 0 <= channel_raw[k] < 1):
            problems.append(f"channel.{k}: must lie in [0, 1)")

    target = raw.get("target_ru")
    if target is not None and not (_number(target) and 0 < target <= 0.7):
        problems.append(f"target_ru: must lie in (0, 0.7], got {target!r}")
    seeds = raw.get("seeds", [1])
    if isinstance(seeds, int):
        seeds = list(range(1, seeds + 1))
    if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        problems.append(f"seeds: must be a non-empty list of non-negative integers, got {seeds!r}")
        seeds = [1]
    workers = raw.get("workers", 1)
    if not (isinstance(workers, int) and workers >= 1):
        problems.append(f"workers: must be a positive integer, got {workers!r}")
        workers = 1

    calib_raw = raw.get("calibration", {}) or {}
    valid_calib = {f.name for f in fields(CalibrationSettings)}
    for k in sorted(set(calib_raw) - valid_calib):
        problems.append(f"calibration.{k}: unknown key")
    calib = CalibrationSettings(**{k: v for k, v in calib_raw.items() if k in valid_calib})
    if not _positive(calib.tolerance):
        problems.append("calibration.tolerance: must be strictly positive")

    sweep = raw.get("sweep", {}) or {}
    ru_targets = tuple(sweep.get("ru_targets", (0.1, 0.2, 0.4)))
    for r in ru_targets:
        if not (_number(r) and 0 < r <= 0.7):
            problems.append(f"sweep.ru_targets: {r!r} outside (0, 0.7]")
    schemes = tuple(sweep.get("schemes", ("baseline", "dps", "ncjt")))
    for s in schemes:
        if s not in {m.value for m in SchemeMode}:
            problems.append(f"sweep.schemes: unknown scheme {s!r}")
    cells = []
    for c in sweep.get("cells", []) or []:
        try:
            ck = ScenarioKind(c["scenario"])
            cn = int(c.get("n_tx", 2))
            if (ck.is_mmwave and cn != 2) or cn not in (2, 4):
                problems.append(f"sweep.cells: invalid n_tx {cn} for {ck.value}")
            cells.append((ck.value, cn))
        except (KeyError, ValueError, TypeError):
            problems.append(f"sweep.cells: invalid entry {c!r}")

    if problems:
        raise ConfigError(problems)
    sim = SimConfig(scenario=kind, scheme=scheme, n_tx=n_tx, scale=scale, channel=channel,
                    layout=layout, **engine)
    return RunConfig(sim=sim, target_ru=target, seeds=tuple(seeds),
                     output_dir=str(raw.get("output_dir", "out")), workers=workers,
                     calibration=calib, ru_targets=ru_targets, schemes=schemes,
                     sweep_cells=tuple(cells))


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _positive(v) -> bool:
    return _number(v) and v > 0


def load_config(path_or_preset, overrides=()) -> RunConfig:
    return build_run_config(apply_overrides(load_raw(path_or_preset), overrides))


def preset_config(kind, **sim_changes) -> SimConfig:
    """SimConfig of a scenario preset with optional field changes."""
    cfg = build_run_config(load_preset(kind)).sim
    return cfg.with_(**sim_changes) if sim_changes else cfg


# ---------------------------------------------------------------------------
# serialisation

def sim_to_dict(sim: SimConfig) -> dict:
    d = {}
    for f in fields(SimConfig):
        v = getattr(sim, f.name)
        if f.name in ("channel", "layout"):
            v = asdict(v)
        elif hasattr(v, "value"):
            v = v.value
        d[f.name] = v
    return d


def run_to_dict(rc: RunConfig) -> dict:
    """Effective configuration as a plain mapping (round-trips through build_run_config)."""
    sim = sim_to_dict(rc.sim)
    d = {
        "scenario": sim.pop("scenario"),
        "scheme": sim.pop("scheme"),
        "n_tx": sim.pop("n_tx"),
        "scale": sim.pop("scale"),
        "channel": sim.pop("channel"),
        "layout": sim.pop("layout"),
        "scheduler": {k: sim.pop(k) for k in _SCHEDULER_KEYS},
        "engine": sim,
        "target_ru": rc.target_ru,
        "seeds": list(rc.seeds),
        "output_dir": rc.output_dir,
        "workers": rc.workers,
        "calibration": asdict(rc.calibration),
        "sweep": {"ru_targets": list(rc.ru_targets), "schemes": list(rc.schemes),
                  "cells": [{"scenario": s, "n_tx": n} for s, n in rc.sweep_cells]},
    }
    return d


def digest(obj) -> str:
    """Short SHA-256 digest of a JSON-serialisable object or SimConfig."""
    if isinstance(obj, SimConfig):
        obj = sim_to_dict(obj)
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]

"""Scenario configuration: a single YAML (or JSON) file drives every command.

Layout::

    model:
      regimes:
        - b: [0.05]
          sigma: [[0.2]]
          jumps:                      # optional
            intensity: 1.0
            marks:
              - {x: [-0.1], p: 0.4}
              - {x: [0.15], p: 0.6}
      generator: [[-1.0, 1.0], [1.0, -1.0]]
      initial_state: 1                # 1-based regime index
      horizon: 1.0
      S0: [1.0]
      x0: 1.0
    utility: {kind: power, p: 0.5}    # kind: log | power | exponential
    simulation: {paths: 100000, steps_per_unit_time: 512, seed: 1}
    output: {directory: out, formats: [csv, json]}

Parsing is strict: unknown or missing fields are reported with their
key path rather than silently ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from .measure import UtilitySpec
from .models import JumpSpec, LevyTriplet, SwitchingModel


class ConfigError(ValueError):
    """Malformed scenario file; message carries the offending key path."""


@dataclass
class SimulationSettings:
    paths: int = 10000
    steps_per_unit_time: int = 512
    seed: int = 1
    workers: int = 1


@dataclass
class OutputSettings:
    directory: str = "out"
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ScenarioConfig:
    model: SwitchingModel
    utility: UtilitySpec
    simulation: SimulationSettings
    output: OutputSettings


def _require(mapping, key, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping")
    if key not in mapping:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return mapping[key]


def _reject_unknown(mapping, allowed, where):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _vector(value, where):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric vector ({exc})") from None
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ConfigError(f"{where}: expected a vector, got shape {arr.shape}")
    return arr


def _matrix(value, where):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric matrix ({exc})") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ConfigError(f"{where}: expected a matrix, got shape {arr.shape}")
    return arr


def _parse_jumps(raw, where):
    if raw is None:
        return None
    _reject_unknown(raw, ("intensity", "marks"), where)
    intensity = float(_require(raw, "intensity", where))
    marks = _require(raw, "marks", where)
    if not isinstance(marks, list) or not marks:
        raise ConfigError(f"{where}.marks: expected a non-empty list")
    atoms, probs = [], []
    for i, mark in enumerate(marks):
        mwhere = f"{where}.marks[{i}]"
        _reject_unknown(mark, ("x", "p"), mwhere)
        atoms.append(_vector(_require(mark, "x", mwhere), f"{mwhere}.x"))
        probs.append(float(_require(mark, "p", mwhere)))
    return JumpSpec(intensity=intensity, atoms=np.stack(atoms), probs=np.asarray(probs))


def _parse_regime(raw, idx):
    where = f"model.regimes[{idx}]"
    _reject_unknown(raw, ("b", "sigma", "jumps"), where)
    drift = _vector(_require(raw, "b", where), f"{where}.b")
    sigma = _matrix(_require(raw, "sigma", where), f"{where}.sigma")
    jumps = _parse_jumps(raw.get("jumps"), f"{where}.jumps")
    return LevyTriplet(drift=drift, sigma=sigma, jumps=jumps)


def _parse_model(raw):
    where = "model"
    _reject_unknown(raw, ("regimes", "generator", "initial_state", "horizon", "S0", "x0"), where)
    regimes_raw = _require(raw, "regimes", where)
    if not isinstance(regimes_raw, list) or not regimes_raw:
        raise ConfigError("model.regimes: expected a non-empty list")
    regimes = [_parse_regime(r, i) for i, r in enumerate(regimes_raw)]
    generator = _matrix(_require(raw, "generator", where), "model.generator")
    initial_state = int(_require(raw, "initial_state", where))
    if not 1 <= initial_state <= len(regimes):
        raise ConfigError(
            f"model.initial_state: must be a 1-based regime index in 1..{len(regimes)}, "
            f"got {initial_state}"
        )
    return SwitchingModel(
        regimes=regimes,
        generator=generator,
        initial_state=initial_state - 1,
        horizon=float(_require(raw, "horizon", where)),
        s0=_vector(_require(raw, "S0", where), "model.S0"),
        x0=float(_require(raw, "x0", where)),
    )


def _parse_utility(raw):
    _reject_unknown(raw, ("kind", "p"), "utility")
    kind = _require(raw, "kind", "utility")
    try:
        return UtilitySpec(kind=kind, p=raw.get("p"))
    except ValueError as exc:
        raise ConfigError(f"utility: {exc}") from None


def _parse_simulation(raw):
    if raw is None:
        return SimulationSettings()
    _reject_unknown(raw, ("paths", "steps_per_unit_time", "seed", "workers"), "simulation")
    settings = SimulationSettings(
        paths=int(raw.get("paths", 10000)),
        steps_per_unit_time=int(raw.get("steps_per_unit_time", 512)),
        seed=int(raw.get("seed", 1)),
        workers=int(raw.get("workers", 1)),
    )
    if settings.paths < 2 or settings.steps_per_unit_time < 1 or settings.workers < 1:
        raise ConfigError("simulation: paths >= 2, steps_per_unit_time >= 1, workers >= 1")
    return settings


def _parse_output(raw):
    if raw is None:
        return OutputSettings()
    _reject_unknown(raw, ("directory", "formats"), "output")
    formats = raw.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or any(f not in ("csv", "json") for f in formats):
        raise ConfigError("output.formats: entries must be 'csv' or 'json'")
    return OutputSettings(directory=str(raw.get("directory", "out")), formats=formats)


def parse_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    _reject_unknown(raw, ("model", "utility", "simulation", "output"), "top level")
    return ScenarioConfig(
        model=_parse_model(_require(raw, "model", "top level")),
        utility=_parse_utility(_require(raw, "utility", "top level")),
        simulation=_parse_simulation(raw.get("simulation")),
        output=_parse_output(raw.get("output")),
    )


def load_config(path) -> ScenarioConfig:
    """Parse a scenario file.  YAML is a superset of JSON, so both work."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not parseable ({exc})") from None
    return parse_config(raw)

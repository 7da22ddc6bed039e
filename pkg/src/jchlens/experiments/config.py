"""Experiment configuration: YAML schema, defaults and lattice construction."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..lattice import GrinProfile, LatticeSpec, RegionMap, RegionParams, SiteTable, build_lattice

EXPERIMENTS = (
    "band_report",
    "negative_refraction",
    "focal_retune",
    "point_source_imaging",
    "grin_scan",
    "reflection_tradeoff",
    "reflection_strip",
    "ewe_scan",
    "ewe_timeseries",
    "surface_band_report",
)


class ConfigError(ValueError):
    """Schema violation in an experiment config."""


@dataclass
class ExperimentConfig:
    """Parsed experiment description.

    ``regions`` entries carry ``name``, ``x: [start, stop)`` and the
    physical parameters; ``delta`` values are detuning labels, turned into
    physical detunings with the resolved sign convention unless
    ``detuning: physical`` is set.
    """

    experiment: str
    lattice: dict = field(default_factory=dict)
    regions: list = field(default_factory=list)
    packet: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    convention: Any = "auto"
    detuning: str = "label"
    tol: float = 1e-8
    seed: int = 0
    out: str | None = None
    paper_scale: bool = False
    source: str | None = None  # path the config was read from

    def to_dict(self) -> dict:
        d = {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}
        return d

    def option(self, key, default=None):
        return self.options.get(key, default)


_TOP_KEYS = set(ExperimentConfig.__dataclass_fields__)


def config_from_dict(raw: dict, source: str | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in raw:
        raise ConfigError("config needs an 'experiment' key")
    cfg = ExperimentConfig(**{k: copy.deepcopy(v) for k, v in raw.items()})
    cfg.source = source if source is not None else cfg.source
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw, str(path))


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; choose from {EXPERIMENTS}")
    if cfg.detuning not in ("label", "physical"):
        raise ConfigError("detuning must be 'label' or 'physical'")
    if not (1e-14 < float(cfg.tol) < 1e-4):
        raise ConfigError("tol must lie in (1e-14, 1e-4)")
    names = set()
    for r in cfg.regions:
        if "name" not in r or "x" not in r:
            raise ConfigError(f"region entry needs 'name' and 'x': {r}")
        names.add(r["name"])
        extra = set(r) - {"name", "x", "omega", "delta", "beta", "kappa", "grin"}
        if extra:
            raise ConfigError(f"region {r['name']}: unknown keys {sorted(extra)}")
    for key in ("measure_regions",):
        for nm in cfg.options.get(key, []):
            if nm not in names:
                raise ConfigError(f"option {key} references unknown region {nm!r}")
    for axis, values in cfg.sweep.items():
        if isinstance(values, dict):
            continue
        if not values:
            raise ConfigError(f"sweep axis {axis!r} is empty")


def sweep_values(spec) -> np.ndarray:
    """A sweep axis is a list or ``{start, stop, num}`` (inclusive linspace)."""
    if isinstance(spec, dict):
        if spec.get("num", 0) < 1:
            raise ConfigError("sweep axis needs num >= 1")
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, dtype=float)


def resolve_k(value, k_diag: float) -> float:
    """Momenta in configs may be numbers or the strings 'k', '-k', 'pi/6' etc."""
    if isinstance(value, (int, float)):
        return float(value)
    s = str(value).strip().replace(" ", "")
    sign = -1.0 if s.startswith("-") else 1.0
    s = s.lstrip("+-")
    if s == "k":
        return sign * k_diag
    if s.startswith("pi"):
        rest = s[2:]
        if not rest:
            return sign * math.pi
        if rest.startswith("/"):
            return sign * math.pi / float(rest[1:])
    raise ConfigError(f"cannot parse momentum {value!r}")


def region_params(entry: dict, delta_sign: int, detuning: str) -> RegionParams:
    d = float(entry.get("delta", 0.0))
    if detuning == "label":
        d *= delta_sign
    return RegionParams(
        omega=float(entry.get("omega", 0.0)),
        delta=d,
        beta=float(entry.get("beta", 100.0)),
        kappa=float(entry.get("kappa", 1.0)),
    )


def lattice_spec(cfg: ExperimentConfig, **override) -> LatticeSpec:
    lat = dict(cfg.lattice)
    lat.update(override)
    bc = lat.get("boundary", "open")
    if isinstance(bc, list):
        bc = tuple(bc)
    try:
        return LatticeSpec(
            int(lat["nx"]), int(lat["ny"]), lat.get("orientation", "rotated"), float(lat.get("d", 1.0)), bc
        )
    except KeyError as exc:
        raise ConfigError(f"lattice needs {exc}") from None


def build_sites(
    cfg: ExperimentConfig,
    delta_sign: int,
    *,
    overrides: dict[str, dict] | None = None,
    lattice_override: dict | None = None,
) -> SiteTable:
    """Resolve the config's lattice; ``overrides`` patch region entries by name."""
    spec = lattice_spec(cfg, **(lattice_override or {}))
    slabs = []
    for r in cfg.regions:
        entry = dict(r)
        if overrides and r["name"] in overrides:
            entry.update(overrides[r["name"]])
        grin = None
        if entry.get("grin"):
            g = entry["grin"]
            if float(g.get("w", 0)) > 0:
                s = delta_sign if cfg.detuning == "label" else 1
                grin = GrinProfile(
                    s * float(g["delta1"]),
                    s * float(g["delta2"]),
                    float(g["w"]),
                    int(g["W"]) if g.get("W") is not None else None,
                    bool(g.get("literal", False)),
                )
        slabs.append(
            {
                "x": [int(v) for v in entry["x"]],
                "params": region_params(entry, delta_sign, cfg.detuning),
                "name": entry["name"],
                "grin": grin,
            }
        )
    regions = RegionMap.from_x_slabs(spec, slabs)
    return build_lattice(spec, regions, interface_kappa=cfg.lattice.get("interface_kappa", "geometric"))


def region_entry(cfg: ExperimentConfig, name: str) -> dict:
    for r in cfg.regions:
        if r["name"] == name:
            return r
    raise ConfigError(f"no region named {name!r}")

"""Experiment configuration: strict JSON schema, defaults, and seed streams."""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .arrays import (
    SPEED_OF_LIGHT,
    ArraySpec,
    PatternModel,
    build_rectangular,
    build_virtual_cylinder,
    default_cylinder_radius,
)
from .channel import FrequencyGrid, Mpc, ScenarioRanges
from .clean import CleanConfig
from .drift import METHODS, DriftSearch
from .sounder import REF_MODES, OutlierConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unknown keys, bad types, or out-of-range settings."""


def _check_keys(d: dict, path: str, allowed: set[str]) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) at {path}: {', '.join(unknown)}")


def _get(d: dict, key: str, default, path: str):
    value = d.get(key, default)
    if value is None and default is not None:
        return default
    return value


def _pair(value, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path} must be a two-element list")
    return float(value[0]), float(value[1])


@dataclass(frozen=True)
class PatternSection:
    kind: str = "isotropic"
    az_3db_deg: float = 360.0
    el_3db_deg: float = 360.0
    front_to_back_db: float = 30.0

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "PatternSection":
        _check_keys(d, path, {"kind", "az_3db_deg", "el_3db_deg", "front_to_back_db"})
        base = cls()
        return cls(
            kind=_get(d, "kind", base.kind, path),
            az_3db_deg=float(_get(d, "az_3db_deg", base.az_3db_deg, path)),
            el_3db_deg=float(_get(d, "el_3db_deg", base.el_3db_deg, path)),
            front_to_back_db=float(_get(d, "front_to_back_db", base.front_to_back_db, path)),
        )

    def build(self) -> PatternModel:
        try:
            return PatternModel(
                kind=self.kind,
                az_3db_deg=self.az_3db_deg,
                el_3db_deg=self.el_3db_deg,
                front_to_back_db=self.front_to_back_db,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "az_3db_deg": self.az_3db_deg,
            "el_3db_deg": self.el_3db_deg,
            "front_to_back_db": self.front_to_back_db,
        }


@dataclass(frozen=True)
class ArraySection:
    """Either a cylinder (rings x per_ring) or a rectangular (n_az x n_el) array."""

    kind: str = "cylinder"
    rings: int = 8
    per_ring: int = 60
    n_az: int = 1
    n_el: int = 1
    radius_m: float | None = None
    ring_spacing_m: float | None = None
    spacing_m: float | None = None
    pattern: PatternSection = field(default_factory=PatternSection)

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "ArraySection":
        kind = d.get("kind", "cylinder")
        if kind == "cylinder":
            _check_keys(d, path, {"kind", "rings", "per_ring", "radius_m", "ring_spacing_m", "pattern"})
            return cls(
                kind=kind,
                rings=int(_get(d, "rings", 8, path)),
                per_ring=int(_get(d, "per_ring", 60, path)),
                radius_m=d.get("radius_m"),
                ring_spacing_m=d.get("ring_spacing_m"),
                pattern=PatternSection.from_dict(d.get("pattern", {}), path + ".pattern"),
            )
        if kind == "rect":
            _check_keys(d, path, {"kind", "n_az", "n_el", "spacing_m", "pattern"})
            return cls(
                kind=kind,
                n_az=int(_get(d, "n_az", 1, path)),
                n_el=int(_get(d, "n_el", 1, path)),
                spacing_m=d.get("spacing_m"),
                pattern=PatternSection.from_dict(d.get("pattern", {}), path + ".pattern"),
            )
        raise ConfigError(f"{path}.kind must be 'cylinder' or 'rect'")

    def build(self, wavelength: float) -> ArraySpec:
        pattern = self.pattern.build()
        if self.kind == "cylinder":
            radius = self.radius_m
            if radius is None:
                radius = default_cylinder_radius(self.per_ring, wavelength)
            spacing = self.ring_spacing_m
            if spacing is None:
                spacing = wavelength / 2.0
            return build_virtual_cylinder(
                self.rings, self.per_ring, spacing, radius, wavelength, pattern
            )
        spacing = self.spacing_m if self.spacing_m is not None else wavelength / 2.0
        return build_rectangular(self.n_az, self.n_el, spacing, wavelength, pattern)

    def to_dict(self) -> dict:
        if self.kind == "cylinder":
            return {
                "kind": self.kind,
                "rings": self.rings,
                "per_ring": self.per_ring,
                "radius_m": self.radius_m,
                "ring_spacing_m": self.ring_spacing_m,
                "pattern": self.pattern.to_dict(),
            }
        return {
            "kind": self.kind,
            "n_az": self.n_az,
            "n_el": self.n_el,
            "spacing_m": self.spacing_m,
            "pattern": self.pattern.to_dict(),
        }


@dataclass(frozen=True)
class GridSection:
    f_start_hz: float = 2.52e9
    f_stop_hz: float = 2.54e9
    n_points: int = 257

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "GridSection":
        _check_keys(d, path, {"f_start_hz", "f_stop_hz", "n_points"})
        base = cls()
        return cls(
            f_start_hz=float(_get(d, "f_start_hz", base.f_start_hz, path)),
            f_stop_hz=float(_get(d, "f_stop_hz", base.f_stop_hz, path)),
            n_points=int(_get(d, "n_points", base.n_points, path)),
        )

    def build(self) -> FrequencyGrid:
        try:
            return FrequencyGrid.from_band(self.f_start_hz, self.f_stop_hz, self.n_points)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {"f_start_hz": self.f_start_hz, "f_stop_hz": self.f_stop_hz, "n_points": self.n_points}


@dataclass(frozen=True)
class MpcSection:
    source: str = "random"
    n_paths: int = 1
    snap_to_grid: bool = True
    ranges: ScenarioRanges = field(default_factory=ScenarioRanges)
    paths: tuple[dict, ...] = ()

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "MpcSection":
        source = d.get("source", "random")
        if source == "random":
            _check_keys(d, path, {"source", "n_paths", "snap_to_grid", "ranges"})
            rd = d.get("ranges", {})
            _check_keys(
                rd, path + ".ranges",
                {"aod_deg", "eod_deg", "aoa_deg", "eoa_deg", "delay_m", "amplitude"},
            )
            base = ScenarioRanges()
            try:
                ranges = ScenarioRanges(
                    aod_deg=_pair(rd.get("aod_deg", base.aod_deg), path + ".ranges.aod_deg"),
                    eod_deg=_pair(rd.get("eod_deg", base.eod_deg), path + ".ranges.eod_deg"),
                    aoa_deg=_pair(rd.get("aoa_deg", base.aoa_deg), path + ".ranges.aoa_deg"),
                    eoa_deg=_pair(rd.get("eoa_deg", base.eoa_deg), path + ".ranges.eoa_deg"),
                    delay_m=_pair(rd.get("delay_m", base.delay_m), path + ".ranges.delay_m"),
                    amplitude=_pair(rd.get("amplitude", base.amplitude), path + ".ranges.amplitude"),
                )
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            return cls(
                source=source,
                n_paths=int(_get(d, "n_paths", 1, path)),
                snap_to_grid=bool(_get(d, "snap_to_grid", True, path)),
                ranges=ranges,
            )
        if source == "explicit":
            _check_keys(d, path, {"source", "paths"})
            paths = d.get("paths", [])
            if not paths:
                raise ConfigError(f"{path}.paths must not be empty")
            cols = {"gain_re", "gain_im", "delay_m", "aod_deg", "eod_deg", "aoa_deg", "eoa_deg"}
            for i, p in enumerate(paths):
                _check_keys(p, f"{path}.paths[{i}]", cols)
                missing = sorted(cols - set(p))
                if missing:
                    raise ConfigError(f"{path}.paths[{i}] missing: {', '.join(missing)}")
            return cls(source=source, paths=tuple(dict(p) for p in paths))
        raise ConfigError(f"{path}.source must be 'random' or 'explicit'")

    def to_dict(self) -> dict:
        if self.source == "random":
            r = self.ranges
            return {
                "source": "random",
                "n_paths": self.n_paths,
                "snap_to_grid": self.snap_to_grid,
                "ranges": {
                    "aod_deg": list(r.aod_deg),
                    "eod_deg": list(r.eod_deg),
                    "aoa_deg": list(r.aoa_deg),
                    "eoa_deg": list(r.eoa_deg),
                    "delay_m": list(r.delay_m),
                    "amplitude": list(r.amplitude),
                },
            }
        return {"source": "explicit", "paths": [dict(p) for p in self.paths]}


@dataclass(frozen=True)
class ScheduleSection:
    pair_duration_s: float = 12.85e-6
    switch_delay_s: float = 12.85e-6
    rotor_delay_s: float = 10.0
    snapshots: int = 10
    ports_per_element: int = 2
    ref_mode: str = "column-start"
    rotor_positions_deg: tuple[float, ...] | None = None

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "ScheduleSection":
        _check_keys(
            d, path,
            {"pair_duration_s", "switch_delay_s", "rotor_delay_s", "snapshots",
             "ports_per_element", "ref_mode", "rotor_positions_deg"},
        )
        base = cls()
        ref_mode = _get(d, "ref_mode", base.ref_mode, path)
        if ref_mode not in REF_MODES:
            raise ConfigError(f"{path}.ref_mode must be one of {REF_MODES}")
        rotor = d.get("rotor_positions_deg")
        return cls(
            pair_duration_s=float(_get(d, "pair_duration_s", base.pair_duration_s, path)),
            switch_delay_s=float(_get(d, "switch_delay_s", base.switch_delay_s, path)),
            rotor_delay_s=float(_get(d, "rotor_delay_s", base.rotor_delay_s, path)),
            snapshots=int(_get(d, "snapshots", base.snapshots, path)),
            ports_per_element=int(_get(d, "ports_per_element", base.ports_per_element, path)),
            ref_mode=ref_mode,
            rotor_positions_deg=None if rotor is None else tuple(float(v) for v in rotor),
        )

    def to_dict(self) -> dict:
        return {
            "pair_duration_s": self.pair_duration_s,
            "switch_delay_s": self.switch_delay_s,
            "rotor_delay_s": self.rotor_delay_s,
            "snapshots": self.snapshots,
            "ports_per_element": self.ports_per_element,
            "ref_mode": self.ref_mode,
            "rotor_positions_deg": None
            if self.rotor_positions_deg is None
            else list(self.rotor_positions_deg),
        }


@dataclass(frozen=True)
class CleanSection:
    angle_grid_deg: float = 1.0
    delay_grid_m: float = 3.0
    dynamic_range_db: float = 20.0
    alt_iterations: int = 3
    max_paths: int = 50
    delay_range_m: tuple[float, float] | None = None  # None: scenario support + guard
    tx_az_range_deg: tuple[float, float] = (-180.0, 180.0)
    tx_el_range_deg: tuple[float, float] = (-90.0, 90.0)
    rx_az_range_deg: tuple[float, float] = (-180.0, 180.0)
    rx_el_range_deg: tuple[float, float] = (-90.0, 90.0)
    noise_gate_db: float = 6.0

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "CleanSection":
        _check_keys(
            d, path,
            {"angle_grid_deg", "delay_grid_m", "dynamic_range_db", "alt_iterations",
             "max_paths", "delay_range_m", "tx_az_range_deg", "tx_el_range_deg",
             "rx_az_range_deg", "rx_el_range_deg", "noise_gate_db"},
        )
        base = cls()
        delay_range = d.get("delay_range_m")
        return cls(
            angle_grid_deg=float(_get(d, "angle_grid_deg", base.angle_grid_deg, path)),
            delay_grid_m=float(_get(d, "delay_grid_m", base.delay_grid_m, path)),
            dynamic_range_db=float(_get(d, "dynamic_range_db", base.dynamic_range_db, path)),
            alt_iterations=int(_get(d, "alt_iterations", base.alt_iterations, path)),
            max_paths=int(_get(d, "max_paths", base.max_paths, path)),
            delay_range_m=None if delay_range is None else _pair(delay_range, path + ".delay_range_m"),
            tx_az_range_deg=_pair(d.get("tx_az_range_deg", base.tx_az_range_deg), path + ".tx_az_range_deg"),
            tx_el_range_deg=_pair(d.get("tx_el_range_deg", base.tx_el_range_deg), path + ".tx_el_range_deg"),
            rx_az_range_deg=_pair(d.get("rx_az_range_deg", base.rx_az_range_deg), path + ".rx_az_range_deg"),
            rx_el_range_deg=_pair(d.get("rx_el_range_deg", base.rx_el_range_deg), path + ".rx_el_range_deg"),
            noise_gate_db=float(_get(d, "noise_gate_db", base.noise_gate_db, path)),
        )

    def build(self, delay_range_m: tuple[float, float]) -> CleanConfig:
        try:
            return CleanConfig(
                angle_grid_deg=self.angle_grid_deg,
                delay_grid_m=self.delay_grid_m,
                dynamic_range_db=self.dynamic_range_db,
                alt_iterations=self.alt_iterations,
                max_paths=self.max_paths,
                delay_range_m=delay_range_m,
                tx_az_range_deg=self.tx_az_range_deg,
                tx_el_range_deg=self.tx_el_range_deg,
                rx_az_range_deg=self.rx_az_range_deg,
                rx_el_range_deg=self.rx_el_range_deg,
                noise_gate_db=self.noise_gate_db,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "angle_grid_deg": self.angle_grid_deg,
            "delay_grid_m": self.delay_grid_m,
            "dynamic_range_db": self.dynamic_range_db,
            "alt_iterations": self.alt_iterations,
            "max_paths": self.max_paths,
            "delay_range_m": None if self.delay_range_m is None else list(self.delay_range_m),
            "tx_az_range_deg": list(self.tx_az_range_deg),
            "tx_el_range_deg": list(self.tx_el_range_deg),
            "rx_az_range_deg": list(self.rx_az_range_deg),
            "rx_el_range_deg": list(self.rx_el_range_deg),
            "noise_gate_db": self.noise_gate_db,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run needs; one master seed drives all randomness."""

    master_seed: int = 0
    tx_array: ArraySection = field(default_factory=ArraySection)
    rx_array: ArraySection = field(
        default_factory=lambda: ArraySection(kind="cylinder", rings=2, per_ring=12)
    )
    grid: GridSection = field(default_factory=GridSection)
    mpcs: MpcSection = field(default_factory=MpcSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    allan_dev_1s: float = 0.0
    noise_power: float = 0.0
    outliers: OutlierConfig = field(default_factory=OutlierConfig)
    prep_rel_tol: float = 0.20
    drift_method: str = "primary"
    drift_peak_ratio_min: float = 3.0
    clean: CleanSection = field(default_factory=CleanSection)
    sector_deg: tuple[float, float] | None = None
    save_tensors: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(
            d, "config",
            {"schema_version", "master_seed", "tx_array", "rx_array", "grid", "mpcs",
             "schedule", "allan_dev_1s", "noise_power", "outliers", "prep_rel_tol",
             "drift_method", "drift_peak_ratio_min", "clean", "sector_deg", "save_tensors"},
        )
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
        od = d.get("outliers", {})
        _check_keys(od, "config.outliers", {"probability", "scale_range", "scale_exclude", "delay_shift_m"})
        try:
            outliers = OutlierConfig(
                probability=float(od.get("probability", 0.0)),
                scale_range=_pair(od.get("scale_range", (0.1, 3.0)), "config.outliers.scale_range"),
                scale_exclude=None
                if od.get("scale_exclude") is None
                else _pair(od["scale_exclude"], "config.outliers.scale_exclude"),
                delay_shift_m=float(od.get("delay_shift_m", 3.0)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        method = d.get("drift_method", "primary")
        if method not in METHODS:
            raise ConfigError(f"config.drift_method must be one of {METHODS}")
        sector = d.get("sector_deg")
        base = cls()
        return cls(
            master_seed=int(_get(d, "master_seed", 0, "config")),
            tx_array=ArraySection.from_dict(d.get("tx_array", {}), "config.tx_array"),
            rx_array=ArraySection.from_dict(
                d.get("rx_array", {"kind": "cylinder", "rings": 2, "per_ring": 12}),
                "config.rx_array",
            ),
            grid=GridSection.from_dict(d.get("grid", {}), "config.grid"),
            mpcs=MpcSection.from_dict(d.get("mpcs", {}), "config.mpcs"),
            schedule=ScheduleSection.from_dict(d.get("schedule", {}), "config.schedule"),
            allan_dev_1s=float(_get(d, "allan_dev_1s", 0.0, "config")),
            noise_power=float(_get(d, "noise_power", 0.0, "config")),
            outliers=outliers,
            prep_rel_tol=float(_get(d, "prep_rel_tol", base.prep_rel_tol, "config")),
            drift_method=method,
            drift_peak_ratio_min=float(_get(d, "drift_peak_ratio_min", 3.0, "config")),
            clean=CleanSection.from_dict(d.get("clean", {}), "config.clean"),
            sector_deg=None if sector is None else _pair(sector, "config.sector_deg"),
            save_tensors=bool(_get(d, "save_tensors", True, "config")),
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "master_seed": self.master_seed,
            "tx_array": self.tx_array.to_dict(),
            "rx_array": self.rx_array.to_dict(),
            "grid": self.grid.to_dict(),
            "mpcs": self.mpcs.to_dict(),
            "schedule": self.schedule.to_dict(),
            "allan_dev_1s": self.allan_dev_1s,
            "noise_power": self.noise_power,
            "outliers": {
                "probability": self.outliers.probability,
                "scale_range": list(self.outliers.scale_range),
                "scale_exclude": None
                if self.outliers.scale_exclude is None
                else list(self.outliers.scale_exclude),
                "delay_shift_m": self.outliers.delay_shift_m,
            },
            "prep_rel_tol": self.prep_rel_tol,
            "drift_method": self.drift_method,
            "drift_peak_ratio_min": self.drift_peak_ratio_min,
            "clean": self.clean.to_dict(),
            "sector_deg": None if self.sector_deg is None else list(self.sector_deg),
            "save_tensors": self.save_tensors,
        }

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # derived builders ----------------------------------------------------

    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.grid.build().carrier

    def delay_range_m(self) -> tuple[float, float]:
        if self.clean.delay_range_m is not None:
            return self.clean.delay_range_m
        if self.mpcs.source == "random":
            lo, hi = self.mpcs.ranges.delay_m
        else:
            delays = [p["delay_m"] for p in self.mpcs.paths]
            lo, hi = min(delays), max(delays)
        guard = 5.0 * self.clean.delay_grid_m
        return (max(0.0, lo - guard), hi + guard)

    def clean_config(self) -> CleanConfig:
        return self.clean.build(self.delay_range_m())

    def drift_search(self) -> DriftSearch:
        cc = self.clean
        return DriftSearch(
            delay_range_m=self.delay_range_m(),
            delay_grid_m=cc.delay_grid_m,
            az_range_deg=cc.rx_az_range_deg,
            el_range_deg=cc.rx_el_range_deg,
            angle_grid_deg=cc.angle_grid_deg,
            peak_ratio_min=self.drift_peak_ratio_min,
        )


def seed_stream(master_seed: int, name: str, index: int | None = None) -> np.random.SeedSequence:
    """Named, reproducible child seed of the master seed."""
    key = (zlib.crc32(name.encode()),) if index is None else (zlib.crc32(name.encode()), index)
    return np.random.SeedSequence(master_seed, spawn_key=key)

"""Antenna array geometry, element patterns, and steering vectors."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
"""Speed of light in m/s."""


@dataclass(frozen=True)
class Direction:
    """A look direction: azimuth in [-180, 180) deg, elevation in [-90, 90] deg.

    Positive elevation points toward the ground (downlink convention), so the
    z-component of the propagation unit vector is -sin(elevation).
    """

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not math.isfinite(self.azimuth) or not math.isfinite(self.elevation):
            raise ValueError("direction angles must be finite")
        if abs(self.elevation) > 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        object.__setattr__(self, "azimuth", wrap_azimuth(self.azimuth))


def wrap_azimuth(deg: float | np.ndarray) -> float | np.ndarray:
    """Wrap azimuth angle(s) into [-180, 180)."""
    return (deg + 180.0) % 360.0 - 180.0


def unit_vector(azimuth_deg, elevation_deg) -> np.ndarray:
    """Propagation unit vector(s) for the given angles, shape (..., 3).

    z points up; elevation is positive toward the ground, hence the -sin term.
    """
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=float))
    el = np.deg2rad(np.asarray(elevation_deg, dtype=float))
    return np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), -np.sin(el)], axis=-1
    )


@dataclass(frozen=True)
class PatternModel:
    """Element amplitude pattern: isotropic or a separable cosine lobe.

    The cosine-lobe exponents are chosen so the power response is -3 dB at
    half the stated beamwidths; the response never falls below the
    front-to-back floor.
    """

    kind: str = "isotropic"
    az_3db_deg: float = 360.0
    el_3db_deg: float = 360.0
    front_to_back_db: float = 30.0

    def __post_init__(self):
        if self.kind not in ("isotropic", "cosine-lobe"):
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.kind == "cosine-lobe":
            for name, width in (("az_3db_deg", self.az_3db_deg), ("el_3db_deg", self.el_3db_deg)):
                if not 0.0 < width < 360.0:
                    raise ValueError(f"{name}={width} outside (0, 360)")
        if self.front_to_back_db < 0.0:
            raise ValueError("front_to_back_db must be >= 0")

    def _exponent(self, width_deg: float) -> float:
        # cos^(2p) at width/2 equals 0.5; widths >= 180 deg clamp to a near-flat lobe
        half = math.radians(min(width_deg, 179.9) / 2.0)
        return math.log(0.5) / (2.0 * math.log(math.cos(half)))

    def gains(self, off_az_rad: np.ndarray, off_el_rad: np.ndarray) -> np.ndarray:
        """Amplitude gain for off-boresight angles (radians)."""
        if self.kind == "isotropic":
            return np.ones(np.broadcast(off_az_rad, off_el_rad).shape)
        p_az = self._exponent(self.az_3db_deg)
        p_el = self._exponent(self.el_3db_deg)
        c_az = np.clip(np.cos(off_az_rad), 0.0, None)
        c_el = np.clip(np.cos(off_el_rad), 0.0, None)
        floor = 10.0 ** (-self.front_to_back_db / 20.0)
        return np.maximum(c_az**p_az * c_el**p_el, floor)


@dataclass(frozen=True)
class ArraySpec:
    """Element positions (meters), per-element boresights, and a shared pattern."""

    positions: np.ndarray  # (N, 3) float
    boresights: tuple[Direction, ...]
    carrier_wavelength: float
    pattern: PatternModel = field(default_factory=PatternModel)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must be a nonempty (N, 3) array")
        if not np.all(np.isfinite(pos)):
            raise ValueError("element positions must be finite")
        if len(self.boresights) != pos.shape[0]:
            raise ValueError("one boresight per element required")
        if not self.carrier_wavelength > 0.0:
            raise ValueError("carrier wavelength must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "boresights", tuple(self.boresights))

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    def to_dict(self) -> dict:
        return {
            "carrier_wavelength_m": self.carrier_wavelength,
            "pattern": {
                "kind": self.pattern.kind,
                "az_3db_deg": self.pattern.az_3db_deg,
                "el_3db_deg": self.pattern.el_3db_deg,
                "front_to_back_db": self.pattern.front_to_back_db,
            },
            "elements": [
                {
                    "position_m": [float(x) for x in p],
                    "boresight_deg": [b.azimuth, b.elevation],
                }
                for p, b in zip(self.positions, self.boresights)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArraySpec":
        pat = d["pattern"]
        return cls(
            positions=np.array([e["position_m"] for e in d["elements"]], dtype=float),
            boresights=tuple(
                Direction(e["boresight_deg"][0], e["boresight_deg"][1]) for e in d["elements"]
            ),
            carrier_wavelength=d["carrier_wavelength_m"],
            pattern=PatternModel(
                kind=pat["kind"],
                az_3db_deg=pat["az_3db_deg"],
                el_3db_deg=pat["el_3db_deg"],
                front_to_back_db=pat["front_to_back_db"],
            ),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ArraySpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SteeringVector:
    """Complex per-element response toward one direction."""

    gains: np.ndarray  # (N,) complex

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex)
        if g.ndim != 1 or g.size < 1:
            raise ValueError("steering vector must be a nonempty 1-D array")
        object.__setattr__(self, "gains", g)


def element_gains(spec: ArraySpec, azimuth_deg, elevation_deg) -> np.ndarray:
    """Per-element amplitude gains toward the given direction(s).

    Angles may be arrays; the result broadcasts to shape (..., N).  Each
    element's pattern is evaluated in its own boresight frame (rotate about z
    to zero the boresight azimuth, then about y to zero its elevation).
    """
    if spec.pattern.kind == "isotropic":
        shape = np.broadcast(np.asarray(azimuth_deg), np.asarray(elevation_deg)).shape
        return np.ones(shape + (spec.n_elements,))

    u = unit_vector(azimuth_deg, elevation_deg)  # (..., 3)
    out = np.empty(u.shape[:-1] + (spec.n_elements,))
    # group elements by boresight: virtual cylinders share one per column
    groups: dict[tuple[float, float], list[int]] = {}
    for n, b in enumerate(spec.boresights):
        groups.setdefault((b.azimuth, b.elevation), []).append(n)
    for (b_az, b_el), idx in groups.items():
        ca, sa = math.cos(math.radians(-b_az)), math.sin(math.radians(-b_az))
        rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
        cb, sb = math.cos(math.radians(-b_el)), math.sin(math.radians(-b_el))
        ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
        v = u @ (ry @ rz).T
        off_az = np.arctan2(v[..., 1], v[..., 0])
        off_el = np.arcsin(np.clip(-v[..., 2], -1.0, 1.0))
        g = spec.pattern.gains(off_az, off_el)
        out[..., idx] = g[..., None]
    return out


def steering_vector(spec: ArraySpec, direction: Direction) -> SteeringVector:
    """Array response toward ``direction``.

    Entry n is g_n(direction) * exp(+j 2 pi (k_hat . p_n) / wavelength), with
    k_hat the propagation unit vector and g_n the element gain in its own
    boresight frame.
    """
    k_hat = unit_vector(direction.azimuth, direction.elevation)
    phase = 2.0 * np.pi * (spec.positions @ k_hat) / spec.carrier_wavelength
    g = element_gains(spec, direction.azimuth, direction.elevation)
    return SteeringVector(gains=g * np.exp(1j * phase))


def steering_matrix(spec: ArraySpec, azimuth_deg: np.ndarray, elevation_deg: np.ndarray) -> np.ndarray:
    """Steering vectors for a batch of directions, shape (n_dirs, N)."""
    az = np.asarray(azimuth_deg, dtype=float)
    el = np.asarray(elevation_deg, dtype=float)
    u = unit_vector(az, el)  # (n_dirs, 3)
    phase = 2.0 * np.pi * (u @ spec.positions.T) / spec.carrier_wavelength
    return element_gains(spec, az, el) * np.exp(1j * phase)


def default_cylinder_radius(per_ring: int, wavelength: float) -> float:
    """Radius giving roughly half-wavelength arc spacing between ring neighbors."""
    return per_ring * wavelength / (4.0 * np.pi)


def build_virtual_cylinder(
    rings: int,
    per_ring: int,
    ring_spacing: float,
    radius: float,
    wavelength: float,
    pattern: PatternModel | None = None,
) -> ArraySpec:
    """Cylindrical array: ``rings`` stacked rings of ``per_ring`` elements.

    Element ordering is azimuth-position major (all ring elements of one
    column, then the next column), matching the order in which a rotor-swept
    vertical column acquires them.  Boresights point radially outward.
    """
    if rings < 1 or per_ring < 1:
        raise ValueError("rings and per_ring must be >= 1")
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    if rings > 1 and not ring_spacing > 0.0:
        raise ValueError("ring spacing must be positive")

    positions = []
    boresights = []
    for j in range(per_ring):
        az = wrap_azimuth(360.0 * j / per_ring)
        x, y = radius * math.cos(math.radians(az)), radius * math.sin(math.radians(az))
        for i in range(rings):
            positions.append([x, y, i * ring_spacing])
            boresights.append(Direction(az, 0.0))
    return ArraySpec(
        positions=np.array(positions),
        boresights=tuple(boresights),
        carrier_wavelength=wavelength,
        pattern=pattern or PatternModel(),
    )


def build_rectangular(
    n_az: int,
    n_el: int,
    spacing: float,
    wavelength: float,
    pattern: PatternModel | None = None,
) -> ArraySpec:
    """Planar grid in the y-z plane, all boresights at azimuth 0, elevation 0."""
    if n_az < 1 or n_el < 1:
        raise ValueError("element counts must be >= 1")
    if not spacing > 0.0:
        raise ValueError("spacing must be positive")
    positions = [
        [0.0, j * spacing, i * spacing] for j in range(n_az) for i in range(n_el)
    ]
    bore = Direction(0.0, 0.0)
    return ArraySpec(
        positions=np.array(positions),
        boresights=tuple(bore for _ in positions),
        carrier_wavelength=wavelength,
        pattern=pattern or PatternModel(),
    )


def build_reference_antenna(wavelength: float, position=(0.0, 0.0, 0.0)) -> ArraySpec:
    """Single stationary omni element used as the over-the-air phase reference."""
    return ArraySpec(
        positions=np.array([position], dtype=float),
        boresights=(Direction(0.0, 0.0),),
        carrier_wavelength=wavelength,
        pattern=PatternModel(kind="isotropic"),
    )


def column_subarray(cylinder: ArraySpec, column: int, rings: int) -> ArraySpec:
    """Extract one vertical column (one azimuth position) from a cylinder spec."""
    sl = slice(column * rings, (column + 1) * rings)
    return ArraySpec(
        positions=cylinder.positions[sl],
        boresights=cylinder.boresights[sl],
        carrier_wavelength=cylinder.carrier_wavelength,
        pattern=cylinder.pattern,
    )

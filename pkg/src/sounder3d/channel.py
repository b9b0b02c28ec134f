"""Multipath channel synthesis, random scenarios, noise, and tensor file I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .arrays import SPEED_OF_LIGHT, ArraySpec, Direction, steering_vector

_TENSOR_MAGIC = b"S3DT"
_TENSOR_VERSION = 1


@dataclass(frozen=True)
class Mpc:
    """One discrete multipath component."""

    gain: complex
    delay: float  # seconds
    aod: Direction
    aoa: Direction

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("path gain must be finite")
        if not np.isfinite(self.delay) or self.delay < 0.0:
            raise ValueError("path delay must be finite and >= 0")

    @property
    def delay_m(self) -> float:
        return self.delay * SPEED_OF_LIGHT

    @property
    def power_db(self) -> float:
        return 20.0 * np.log10(abs(self.gain))


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniformly spaced frequency points in Hz."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("grid must be a nonempty 1-D array")
        if pts.size > 1:
            steps = np.diff(pts)
            if np.any(steps <= 0):
                raise ValueError("grid points must be strictly increasing")
            if np.any(np.abs(steps - steps[0]) > 1e-9 * abs(steps[0])):
                raise ValueError("grid spacing must be uniform to 1e-9 relative")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_band(cls, f_start: float, f_stop: float, n_points: int) -> "FrequencyGrid":
        if n_points < 1:
            raise ValueError("n_points must be >= 1")
        if n_points == 1:
            return cls(points=np.array([f_start]))
        return cls(points=np.linspace(f_start, f_stop, n_points))

    @property
    def n_points(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0]) if self.n_points > 1 else 0.0

    @property
    def carrier(self) -> float:
        """Band center, used as the clock carrier frequency."""
        return float(0.5 * (self.points[0] + self.points[-1]))


@dataclass
class TransferTensor:
    """Channel transfer functions indexed (rotor, tx, rx, freq, snapshot).

    ``timestamps`` holds one acquisition time per TX-RX pair sweep per
    snapshot, indexed (rotor, tx, rx, snapshot), in seconds from the start.
    ``ordered`` marks a raw acquisition whose timestamps must strictly
    increase along the schedule; snapshot-averaged tensors carry mean times
    and set it False.
    """

    values: np.ndarray
    timestamps: np.ndarray
    grid: FrequencyGrid
    rotor_positions_deg: np.ndarray | None = None
    ordered: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        t = np.asarray(self.timestamps, dtype=float)
        if v.ndim != 5:
            raise ValueError("values must be 5-D (rotor, tx, rx, freq, snapshot)")
        if any(s < 1 for s in v.shape):
            raise ValueError("all tensor dimensions must be >= 1")
        if t.shape != v.shape[:3] + v.shape[4:]:
            raise ValueError("timestamps must be indexed (rotor, tx, rx, snapshot)")
        if v.shape[3] != self.grid.n_points:
            raise ValueError("frequency axis does not match the grid")
        if self.ordered:
            # acquisition order is rotor-major, then snapshot, then tx, then rx
            seq = t.transpose(0, 3, 1, 2).reshape(-1)
            if seq.size > 1 and np.any(np.diff(seq) <= 0):
                raise ValueError("timestamps must increase along the acquisition order")
        self.values = v
        self.timestamps = t
        if self.rotor_positions_deg is not None:
            self.rotor_positions_deg = np.asarray(self.rotor_positions_deg, dtype=float)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def power(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))


def synthesize(
    mpcs: list[Mpc], tx: ArraySpec, rx: ArraySpec, grid: FrequencyGrid
) -> np.ndarray:
    """Noiseless single-snapshot transfer functions, shape (N_T, N_R, N_f).

    Each path contributes gain * b_t b_r^T * exp(-j 2 pi f tau); the result is
    the exact linear superposition of the paths in list order.
    """
    out = np.zeros((tx.n_elements, rx.n_elements, grid.n_points), dtype=complex)
    for mpc in mpcs:
        if mpc.delay < 0.0:
            raise ValueError("path delay must be >= 0")
        b_t = steering_vector(tx, mpc.aod).gains
        b_r = steering_vector(rx, mpc.aoa).gains
        ramp = np.exp(-2j * np.pi * grid.points * mpc.delay)
        out += mpc.gain * b_t[:, None, None] * b_r[None, :, None] * ramp[None, None, :]
    return out


@dataclass(frozen=True)
class ScenarioRanges:
    """Parameter ranges for random scenario paths (delay in meters)."""

    aod_deg: tuple[float, float] = (-180.0, 180.0)
    eod_deg: tuple[float, float] = (-20.0, 20.0)
    aoa_deg: tuple[float, float] = (-180.0, 180.0)
    eoa_deg: tuple[float, float] = (-20.0, 20.0)
    delay_m: tuple[float, float] = (150.0, 300.0)
    amplitude: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        for name in ("aod_deg", "eod_deg", "aoa_deg", "eoa_deg", "delay_m", "amplitude"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"empty range for {name}: ({lo}, {hi})")


def sample_scenario(
    seed, n_paths: int, ranges: ScenarioRanges | None = None
) -> list[Mpc]:
    """Draw ``n_paths`` random paths, deterministic for a fixed seed.

    Amplitudes are drawn from ``ranges.amplitude`` with an independent uniform
    phase; delays are drawn in meters and stored in seconds.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    ranges = ranges or ScenarioRanges()
    rng = np.random.default_rng(seed)
    mpcs = []
    for _ in range(n_paths):
        aod = rng.uniform(*ranges.aod_deg)
        eod = rng.uniform(*ranges.eod_deg)
        aoa = rng.uniform(*ranges.aoa_deg)
        eoa = rng.uniform(*ranges.eoa_deg)
        delay = rng.uniform(*ranges.delay_m) / SPEED_OF_LIGHT
        amp = rng.uniform(*ranges.amplitude)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        mpcs.append(
            Mpc(
                gain=amp * np.exp(1j * phase),
                delay=delay,
                aod=Direction(aod, eod),
                aoa=Direction(aoa, eoa),
            )
        )
    return mpcs


def add_noise(tensor: TransferTensor, noise_power: float, seed) -> TransferTensor:
    """Add circular complex Gaussian noise with per-sample variance ``noise_power``."""
    if noise_power < 0.0:
        raise ValueError("noise power must be >= 0")
    values = tensor.values.copy()
    if noise_power > 0.0:
        rng = np.random.default_rng(seed)
        sigma = np.sqrt(noise_power / 2.0)
        values += rng.normal(scale=sigma, size=values.shape) + 1j * rng.normal(
            scale=sigma, size=values.shape
        )
    return TransferTensor(
        values=values,
        timestamps=tensor.timestamps.copy(),
        grid=tensor.grid,
        rotor_positions_deg=tensor.rotor_positions_deg,
        ordered=tensor.ordered,
    )


def flatten_tensor(tensor: TransferTensor) -> np.ndarray:
    """Stack rotor blocks along the TX axis: (R*T, N_R, N_f).

    Requires a snapshot-averaged tensor (snapshot axis of length 1).
    """
    r, t, x, f, s = tensor.values.shape
    if s != 1:
        raise ValueError("flatten requires a snapshot-averaged tensor")
    return tensor.values[..., 0].reshape(r * t, x, f)


def save_tensor(tensor: TransferTensor, path) -> None:
    """Write the little-endian binary layout: header, timestamps, re/im floats."""
    r, t, x, f, s = tensor.values.shape
    grid = tensor.grid
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(struct.pack("<I", _TENSOR_VERSION))
        fh.write(struct.pack("<5I", r, t, x, f, s))
        fh.write(struct.pack("<B", 1 if tensor.ordered else 0))
        fh.write(struct.pack("<2d", grid.points[0], grid.spacing))
        rp = tensor.rotor_positions_deg
        if rp is None:
            fh.write(struct.pack("<I", 0))
        else:
            fh.write(struct.pack("<I", rp.size))
            fh.write(rp.astype("<f8").tobytes())
        fh.write(tensor.timestamps.astype("<f8").tobytes())
        inter = np.empty(tensor.values.size * 2)
        inter[0::2] = tensor.values.real.reshape(-1)
        inter[1::2] = tensor.values.imag.reshape(-1)
        fh.write(inter.astype("<f8").tobytes())


def load_tensor(path) -> TransferTensor:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _TENSOR_MAGIC:
            raise ValueError(f"not a tensor file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _TENSOR_VERSION:
            raise ValueError(f"unsupported tensor file version {version}")
        r, t, x, f, s = struct.unpack("<5I", fh.read(20))
        (flags,) = struct.unpack("<B", fh.read(1))
        f_start, f_step = struct.unpack("<2d", fh.read(16))
        (n_rotor,) = struct.unpack("<I", fh.read(4))
        rotor = None
        if n_rotor:
            rotor = np.frombuffer(fh.read(8 * n_rotor), dtype="<f8").copy()
        n_ts = r * t * x * s
        timestamps = np.frombuffer(fh.read(8 * n_ts), dtype="<f8").reshape(r, t, x, s).copy()
        inter = np.frombuffer(fh.read(16 * r * t * x * f * s), dtype="<f8")
        values = (inter[0::2] + 1j * inter[1::2]).reshape(r, t, x, f, s)
    if f == 1:
        grid = FrequencyGrid(points=np.array([f_start]))
    else:
        grid = FrequencyGrid(points=f_start + f_step * np.arange(f))
    return TransferTensor(
        values=values,
        timestamps=timestamps,
        grid=grid,
        rotor_positions_deg=rotor,
        ordered=bool(flags & 1),
    )


def save_tensor_csv(tensor: TransferTensor, path, max_cells: int = 2_000_000) -> None:
    """CSV export for small tensors, one sample per row."""
    if tensor.values.size > max_cells:
        raise ValueError(
            f"tensor has {tensor.values.size} samples, above the CSV cap {max_cells}"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rotor", "tx", "rx", "freq_hz", "snapshot", "re", "im"])
        r, t, x, f, s = tensor.values.shape
        for ir in range(r):
            for it in range(t):
                for ix in range(x):
                    for k in range(f):
                        for isn in range(s):
                            v = tensor.values[ir, it, ix, k, isn]
                            writer.writerow(
                                [
                                    ir,
                                    it,
                                    ix,
                                    "%.12g" % tensor.grid.points[k],
                                    isn,
                                    "%.17g" % v.real,
                                    "%.17g" % v.imag,
                                ]
                            )

"""Timed switched/virtual-array acquisition: schedule, clock drift, outliers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import SPEED_OF_LIGHT, ArraySpec, column_subarray
from .channel import FrequencyGrid, Mpc, TransferTensor, synthesize

REF_MODES = ("none", "column-start", "per-snapshot")


@dataclass(frozen=True)
class Schedule:
    """Acquisition timing for the hybrid switched/virtual array.

    Per rotor position the order is: optional reference SIMO block, then
    ``snapshots`` repetitions of {per TX element: full RX sweep}.  Dual
    polarized hardware is modeled through ``ports_per_element``: only the
    vertically polarized ports are synthesized, the other ports occupy dead
    time so aggregate timings match the physical switch sequence.
    """

    pair_duration: float
    switch_delay: float
    rotor_delay: float
    snapshots: int
    rotor_positions_deg: np.ndarray
    n_tx: int
    n_rx: int
    ports_per_element: int = 2
    ref_mode: str = "column-start"
    order: str = (
        "per rotor: [reference SIMO] + snapshots x {per TX element: full RX sweep};"
        " other-polarization ports are dead time"
    )

    def __post_init__(self):
        for name in ("pair_duration", "switch_delay", "rotor_delay"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("element counts must be >= 1")
        if self.ports_per_element < 1:
            raise ValueError("ports_per_element must be >= 1")
        if self.ref_mode not in REF_MODES:
            raise ValueError(f"ref_mode must be one of {REF_MODES}")
        pos = np.asarray(self.rotor_positions_deg, dtype=float)
        if pos.size < 1:
            raise ValueError("rotor position list must not be empty")
        object.__setattr__(self, "rotor_positions_deg", pos)

    @property
    def n_rotor(self) -> int:
        return self.rotor_positions_deg.size

    @property
    def slot(self) -> float:
        return self.pair_duration + self.switch_delay

    @property
    def simo_duration(self) -> float:
        """One TX port's full RX sweep, including the TX switch at its end."""
        return self.n_rx * self.ports_per_element * self.slot + self.switch_delay

    @property
    def snapshot_duration(self) -> float:
        ports = self.n_tx * self.ports_per_element
        if self.ref_mode == "per-snapshot" and self.ports_per_element == 1:
            ports += 1  # no dead port to reuse; the reference gets its own slot
        return ports * self.simo_duration

    @property
    def ref_head(self) -> float:
        return self.simo_duration if self.ref_mode == "column-start" else 0.0

    @property
    def block_duration(self) -> float:
        return self.ref_head + self.snapshots * self.snapshot_duration

    @property
    def total_duration(self) -> float:
        return self.n_rotor * self.block_duration + (self.n_rotor - 1) * self.rotor_delay

    def _rx_slot(self) -> np.ndarray:
        # vertical ports are measured after the other-polarization ports
        return (self.ports_per_element - 1) * self.n_rx + np.arange(self.n_rx)

    def rotor_start(self, r: np.ndarray | int):
        return np.asarray(r) * (self.block_duration + self.rotor_delay)

    def main_timestamps(self) -> np.ndarray:
        """Start time of each measured pair sweep, shape (R, T, X, S)."""
        r = self.rotor_start(np.arange(self.n_rotor))[:, None, None, None]
        i = (np.arange(self.n_tx) * self.simo_duration)[None, :, None, None]
        j = (self._rx_slot() * self.slot)[None, None, :, None]
        s = (np.arange(self.snapshots) * self.snapshot_duration)[None, None, None, :]
        return r + self.ref_head + s + i + j

    def ref_timestamps(self) -> np.ndarray | None:
        """Reference pair sweep start times, shape (R, 1, X, S_ref)."""
        if self.ref_mode == "none":
            return None
        r = self.rotor_start(np.arange(self.n_rotor))[:, None, None, None]
        j = (self._rx_slot() * self.slot)[None, None, :, None]
        if self.ref_mode == "column-start":
            return r + j
        ref_slot = self.n_tx * self.ports_per_element - 1
        if self.ports_per_element == 1:
            ref_slot = self.n_tx
        s = (np.arange(self.snapshots) * self.snapshot_duration)[None, None, None, :]
        return r + s + ref_slot * self.simo_duration + j


def make_schedule(
    n_tx: int,
    n_rx: int,
    rotor_positions_deg,
    pair_duration_s: float = 12.85e-6,
    switch_delay_s: float = 12.85e-6,
    rotor_delay_s: float = 10.0,
    snapshots: int = 10,
    ports_per_element: int = 2,
    ref_mode: str = "column-start",
) -> Schedule:
    """Build the acquisition schedule; defaults follow the measured hardware."""
    return Schedule(
        pair_duration=pair_duration_s,
        switch_delay=switch_delay_s,
        rotor_delay=rotor_delay_s,
        snapshots=snapshots,
        rotor_positions_deg=np.asarray(rotor_positions_deg, dtype=float),
        n_tx=n_tx,
        n_rx=n_rx,
        ports_per_element=ports_per_element,
        ref_mode=ref_mode,
    )


@dataclass
class DriftTrace:
    """Clock phase (radians) realized at every schedule timestamp.

    The phase is a random walk: the increment over a gap dt has zero mean and
    variance (2 pi f_c sigma_y)^2 * dt * (1 s), with sigma_y the 1-second
    Allan deviation.  The first scheduled event has phase zero.
    """

    allan_dev_1s: float
    carrier_hz: float
    seed: object
    main_phases: np.ndarray  # (R, T, X, S)
    ref_phases: np.ndarray | None  # (R, 1, X, S_ref)

    @classmethod
    def constant(cls, schedule: Schedule, theta: float) -> "DriftTrace":
        """A frozen offset at every timestamp; useful for injection tests."""
        main = np.full(schedule.main_timestamps().shape, float(theta))
        ref_ts = schedule.ref_timestamps()
        ref = None if ref_ts is None else np.full(ref_ts.shape, float(theta))
        return cls(allan_dev_1s=0.0, carrier_hz=0.0, seed=None, main_phases=main, ref_phases=ref)


def realize_drift(
    schedule: Schedule, allan_dev_1s: float, carrier_hz: float, seed
) -> DriftTrace:
    """Sample one random-walk phase realization over the schedule's timeline."""
    if allan_dev_1s < 0.0:
        raise ValueError("allan deviation must be >= 0")
    main_ts = schedule.main_timestamps()
    ref_ts = schedule.ref_timestamps()
    times = main_ts.reshape(-1)
    n_main = times.size
    if ref_ts is not None:
        times = np.concatenate([times, ref_ts.reshape(-1)])

    if allan_dev_1s == 0.0:
        phases = np.zeros_like(times)
    else:
        order = np.argsort(times, kind="stable")
        sorted_times = times[order]
        gaps = np.diff(sorted_times)
        rng = np.random.default_rng(seed)
        sigma = 2.0 * np.pi * carrier_hz * allan_dev_1s
        increments = rng.standard_normal(gaps.size) * sigma * np.sqrt(gaps)
        walk = np.concatenate([[0.0], np.cumsum(increments)])
        phases = np.empty_like(walk)
        phases[order] = walk

    main = phases[:n_main].reshape(main_ts.shape)
    ref = None if ref_ts is None else phases[n_main:].reshape(ref_ts.shape)
    return DriftTrace(
        allan_dev_1s=allan_dev_1s,
        carrier_hz=carrier_hz,
        seed=seed,
        main_phases=main,
        ref_phases=ref,
    )


@dataclass(frozen=True)
class OutlierConfig:
    """Switching-glitch model: a snapshot is occasionally replaced by a
    delayed, rescaled copy of itself."""

    probability: float = 0.0
    scale_range: tuple[float, float] = (0.1, 3.0)
    scale_exclude: tuple[float, float] | None = None
    delay_shift_m: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("outlier probability must be in [0, 1]")
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ValueError("scale range must satisfy 0 < lo <= hi")

    def draw_scale(self, rng: np.random.Generator) -> float:
        lo, hi = self.scale_range
        if self.scale_exclude is None:
            return float(rng.uniform(lo, hi))
        ex_lo, ex_hi = self.scale_exclude
        seg_a = (lo, min(ex_lo, hi))
        seg_b = (max(ex_hi, lo), hi)
        len_a = max(0.0, seg_a[1] - seg_a[0])
        len_b = max(0.0, seg_b[1] - seg_b[0])
        if len_a + len_b <= 0.0:
            raise ValueError("scale exclusion removes the whole range")
        u = rng.uniform(0.0, len_a + len_b)
        if u < len_a:
            return float(seg_a[0] + u)
        return float(seg_b[0] + (u - len_a))


@dataclass
class AcquisitionResult:
    tensor: TransferTensor
    ref_tensor: TransferTensor
    outlier_mask: np.ndarray  # (R, T, X, S) bool
    drift: DriftTrace


def acquire(
    mpcs: list[Mpc],
    tx: ArraySpec,
    rx: ArraySpec,
    reference: ArraySpec,
    grid: FrequencyGrid,
    schedule: Schedule,
    drift: DriftTrace,
    noise_power: float,
    outlier_cfg: OutlierConfig | None,
    seed,
) -> AcquisitionResult:
    """Simulate the full timed acquisition.

    ``tx`` is the virtual cylinder restricted to the scheduled rotor
    positions (azimuth-position-major element order); the reference antenna
    is stationary and measured once per rotor position (or per snapshot,
    depending on the schedule's ref mode).  Each measured block is the
    noiseless synthesis times exp(j phase(t)) plus noise.
    """
    if schedule.ref_mode == "none":
        raise ValueError("acquisition requires a schedule with a reference block")
    if reference.n_elements != 1:
        raise ValueError("reference antenna must be a single stationary element")
    n_rotor, n_tx = schedule.n_rotor, schedule.n_tx
    if tx.n_elements != n_rotor * n_tx:
        raise ValueError(
            f"tx array has {tx.n_elements} elements; schedule expects {n_rotor * n_tx}"
        )
    for j in range(n_rotor):
        bore = tx.boresights[j * n_tx].azimuth
        want = schedule.rotor_positions_deg[j]
        if abs((bore - want + 180.0) % 360.0 - 180.0) > 1e-6:
            raise ValueError("tx column order does not match the rotor position list")
    if rx.n_elements != schedule.n_rx:
        raise ValueError("rx array does not match the schedule")

    main_ts = schedule.main_timestamps()
    ref_ts = schedule.ref_timestamps()
    outlier_cfg = outlier_cfg or OutlierConfig()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    outlier_ss, noise_main_ss, noise_ref_ss = ss.spawn(3)

    n_f, n_snap = grid.n_points, schedule.snapshots
    values = np.empty((n_rotor, n_tx, schedule.n_rx, n_f, n_snap), dtype=complex)
    for j in range(n_rotor):
        block = synthesize(mpcs, column_subarray(tx, j, n_tx), rx, grid)
        values[j] = block[:, :, :, None] * np.exp(1j * drift.main_phases[j])[:, :, None, :]

    ref_clean = synthesize(mpcs, reference, rx, grid)
    ref_values = (
        ref_clean[None, :, :, :, None] * np.exp(1j * drift.ref_phases)[:, :, :, None, :]
    )

    mask = np.zeros((n_rotor, n_tx, schedule.n_rx, n_snap), dtype=bool)
    if outlier_cfg.probability > 0.0:
        rng = np.random.default_rng(outlier_ss)
        mask = rng.random(mask.shape) < outlier_cfg.probability
        shift = np.exp(
            -2j * np.pi * grid.points * (outlier_cfg.delay_shift_m / SPEED_OF_LIGHT)
        )
        for r, t, x, s in zip(*np.nonzero(mask)):
            values[r, t, x, :, s] *= outlier_cfg.draw_scale(rng) * shift

    if noise_power < 0.0:
        raise ValueError("noise power must be >= 0")
    if noise_power > 0.0:
        sigma = np.sqrt(noise_power / 2.0)
        rng_m = np.random.default_rng(noise_main_ss)
        values += rng_m.normal(scale=sigma, size=values.shape) + 1j * rng_m.normal(
            scale=sigma, size=values.shape
        )
        rng_r = np.random.default_rng(noise_ref_ss)
        ref_values = ref_values + rng_r.normal(
            scale=sigma, size=ref_values.shape
        ) + 1j * rng_r.normal(scale=sigma, size=ref_values.shape)

    tensor = TransferTensor(
        values=values,
        timestamps=main_ts,
        grid=grid,
        rotor_positions_deg=schedule.rotor_positions_deg,
    )
    ref_tensor = TransferTensor(
        values=ref_values,
        timestamps=ref_ts,
        grid=grid,
        rotor_positions_deg=schedule.rotor_positions_deg,
    )
    return AcquisitionResult(
        tensor=tensor, ref_tensor=ref_tensor, outlier_mask=mask, drift=drift
    )

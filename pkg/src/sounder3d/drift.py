"""Per-rotor clock-phase estimation from the reference antenna, and correction."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .arrays import SPEED_OF_LIGHT, ArraySpec
from .channel import FrequencyGrid, TransferTensor
from .gridsearch import SearchTables, delays_from_meters, make_axis, search_peak

METHODS = ("primary", "a1", "a2", "a3", "a4")


@dataclass(frozen=True)
class DriftSearch:
    """Grid ranges for the reference-path search (primary method only)."""

    delay_range_m: tuple[float, float] = (0.0, 450.0)
    delay_grid_m: float = 3.0
    az_range_deg: tuple[float, float] = (-180.0, 180.0)
    el_range_deg: tuple[float, float] = (-90.0, 90.0)
    angle_grid_deg: float = 1.0
    peak_ratio_min: float = 3.0  # low-confidence gate on peak/median objective

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        step = self.angle_grid_deg
        lo, hi = self.az_range_deg
        if hi - lo >= 360.0 - 0.5 * step:
            hi = lo + 360.0 - step
        az = make_axis(lo, hi, step)
        el = make_axis(self.el_range_deg[0], self.el_range_deg[1], step)
        delays = delays_from_meters(self.delay_range_m[0], self.delay_range_m[1], self.delay_grid_m)
        return az, el, delays


@dataclass
class RotorPhaseEstimate:
    """Per-rotor phase estimates plus reference-path diagnostics."""

    method: str
    phases: np.ndarray  # (R,) radians
    delay_s: np.ndarray = field(default=None)
    aoa_deg: np.ndarray = field(default=None)
    eoa_deg: np.ndarray = field(default=None)
    gain_abs: np.ndarray = field(default=None)
    peak_ratio: np.ndarray = field(default=None)
    low_confidence: np.ndarray = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.phases, dtype=float)
        if p.ndim != 1 or p.size < 1 or not np.all(np.isfinite(p)):
            raise ValueError("phases must be a finite 1-D array, one per rotor")
        self.phases = p
        n = p.size
        for name in ("delay_s", "aoa_deg", "eoa_deg", "gain_abs", "peak_ratio"):
            if getattr(self, name) is None:
                setattr(self, name, np.full(n, np.nan))
        if self.low_confidence is None:
            self.low_confidence = np.zeros(n, dtype=bool)


def _ref_matrix(ref_tensor: TransferTensor) -> np.ndarray:
    """Reference transfer functions as (R, N_R, N_f); requires averaged input."""
    r, t, x, f, s = ref_tensor.values.shape
    if t != 1:
        raise ValueError("reference tensor must have a single TX element")
    if s != 1:
        raise ValueError("reference tensor must be snapshot-averaged first")
    return ref_tensor.values[:, 0, :, :, 0]


def estimate_reference(
    ref_tensor: TransferTensor,
    rx_spec: ArraySpec,
    grid: FrequencyGrid,
    search: DriftSearch | None = None,
) -> RotorPhaseEstimate:
    """Primary method: per rotor, single-path ML search on the reference SIMO.

    For each rotor position the strongest path's (delay, AoA, EoA) maximizes
    |sum_k exp(-j2 pi f_k tau) B_R(az, el) H_ref(f_k)^H|; its complex gain is
    then alpha_r = sum_k exp(+j2 pi f_k tau) H_ref(f_k) B_R^H
                   / (N_f ||B_R||^2)
    and the rotor phase estimate is angle(alpha_r).  Rotors whose
    peak-to-median objective ratio falls below the gate are flagged
    low-confidence.
    """
    search = search or DriftSearch()
    href = _ref_matrix(ref_tensor)
    az, el, delays = search.axes()
    tables = SearchTables.build(rx_spec, grid.points, az, el, delays)

    n_rotor = href.shape[0]
    phases = np.empty(n_rotor)
    delay_s = np.empty(n_rotor)
    aoa = np.empty(n_rotor)
    eoa = np.empty(n_rotor)
    gain_abs = np.empty(n_rotor)
    ratio = np.empty(n_rotor)
    low = np.zeros(n_rotor, dtype=bool)
    for r in range(n_rotor):
        peak = search_peak(np.conj(href[r]), tables)
        b_r = tables.steering[peak.indices[1] * el.size + peak.indices[2]]
        ramp = np.exp(2j * np.pi * grid.points * peak.delay_s)
        alpha = np.einsum("k,xk,x->", ramp, href[r], np.conj(b_r)) / (
            grid.n_points * np.sum(np.abs(b_r) ** 2)
        )
        phases[r] = np.angle(alpha)
        delay_s[r] = peak.delay_s
        aoa[r] = peak.az_deg
        eoa[r] = peak.el_deg
        gain_abs[r] = abs(alpha)
        ratio[r] = peak.value / peak.median if peak.median > 0 else np.inf
        low[r] = ratio[r] < search.peak_ratio_min
    return RotorPhaseEstimate(
        method="primary",
        phases=phases,
        delay_s=delay_s,
        aoa_deg=aoa,
        eoa_deg=eoa,
        gain_abs=gain_abs,
        peak_ratio=ratio,
        low_confidence=low,
    )


def estimate_appendix(
    method: str, ref_tensor: TransferTensor, grid: FrequencyGrid
) -> RotorPhaseEstimate:
    """Alternative estimators working directly on the reference channel.

    a1: angle of the sum over antennas and frequency;
    a2: angle of the frequency sum at the strongest-SNR antenna;
    a3: angle of the antenna sum of impulse-response peak values;
    a4: angle of the impulse-response peak at the strongest-SNR antenna.
    """
    if method not in ("a1", "a2", "a3", "a4"):
        raise ValueError(f"unknown appendix method {method!r}")
    href = _ref_matrix(ref_tensor)  # (R, X, F)
    n_rotor = href.shape[0]
    if method == "a1":
        phases = np.angle(href.sum(axis=(1, 2)))
    elif method == "a2":
        snr = np.sum(np.abs(href) ** 2, axis=2)  # (R, X)
        best = np.argmax(snr, axis=1)
        phases = np.angle(href[np.arange(n_rotor), best].sum(axis=1))
    else:
        h_time = np.fft.ifft(href, axis=2)
        peaks = np.argmax(np.abs(h_time), axis=2)  # (R, X)
        r_idx = np.arange(n_rotor)[:, None]
        x_idx = np.arange(href.shape[1])[None, :]
        peak_vals = h_time[r_idx, x_idx, peaks]  # (R, X)
        if method == "a3":
            phases = np.angle(peak_vals.sum(axis=1))
        else:
            snr = np.sum(np.abs(href) ** 2, axis=2)
            best = np.argmax(snr, axis=1)
            phases = np.angle(peak_vals[np.arange(n_rotor), best])
    return RotorPhaseEstimate(method=method, phases=phases)


def estimate(
    method: str,
    ref_tensor: TransferTensor,
    rx_spec: ArraySpec,
    grid: FrequencyGrid,
    search: DriftSearch | None = None,
) -> RotorPhaseEstimate:
    """Dispatch between the primary and appendix estimators."""
    if method == "primary":
        return estimate_reference(ref_tensor, rx_spec, grid, search)
    return estimate_appendix(method, ref_tensor, grid)


def apply_correction(tensor: TransferTensor, phases: np.ndarray) -> TransferTensor:
    """Multiply every sample in rotor block r by exp(-j phases[r])."""
    phases = np.asarray(phases, dtype=float)
    if phases.ndim != 1 or phases.size != tensor.values.shape[0]:
        raise ValueError("need exactly one phase per rotor block")
    rot = np.exp(-1j * phases)[:, None, None, None, None]
    return TransferTensor(
        values=tensor.values * rot,
        timestamps=tensor.timestamps.copy(),
        grid=tensor.grid,
        rotor_positions_deg=tensor.rotor_positions_deg,
        ordered=tensor.ordered,
    )


def reference_phase_by_rotor(ref_tensor: TransferTensor) -> np.ndarray:
    """Per-antenna phase of the frequency-summed reference channel, (R, N_R).

    This is the quantity used to visualize drift before/after correction.
    """
    href = _ref_matrix(ref_tensor)
    return np.angle(href.sum(axis=2))


def phase_spread(phases: np.ndarray) -> float:
    """RMS deviation (radians) from the circular mean across rotor positions."""
    z = np.exp(1j * np.asarray(phases, dtype=float))
    mean = np.angle(z.mean())
    dev = np.angle(z * np.exp(-1j * mean))
    return float(np.sqrt(np.mean(dev**2)))


def write_drift_report(est: RotorPhaseEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["rotor", "phase_rad", "delay_m", "aoa_deg", "eoa_deg", "gain_abs",
             "peak_ratio", "low_confidence"]
        )
        for r in range(est.phases.size):
            writer.writerow(
                [
                    r,
                    "%.12g" % est.phases[r],
                    "%.12g" % (est.delay_s[r] * SPEED_OF_LIGHT),
                    "%.12g" % est.aoa_deg[r],
                    "%.12g" % est.eoa_deg[r],
                    "%.12g" % est.gain_abs[r],
                    "%.12g" % est.peak_ratio[r],
                    int(est.low_confidence[r]),
                ]
            )

"""Post-extraction analytics: angular spreads, user separability, and uplink
capacity with linear detectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .arrays import ArraySpec, steering_matrix, wrap_azimuth
from .channel import FrequencyGrid, Mpc

DOMAINS = ("aod", "eod", "aoa", "eoa")
DETECTORS = ("mrc", "zf", "mmse")


def _angles_and_weights(mpcs: list[Mpc], domain: str) -> tuple[np.ndarray, np.ndarray]:
    if not mpcs:
        raise ValueError("MPC list must not be empty")
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}")
    powers = np.array([abs(m.gain) ** 2 for m in mpcs])
    if not np.all(np.isfinite(powers)) or powers.sum() <= 0.0:
        raise ValueError("MPC gains must be finite with positive total power")
    angles = {
        "aod": lambda m: m.aod.azimuth,
        "eod": lambda m: m.aod.elevation,
        "aoa": lambda m: m.aoa.azimuth,
        "eoa": lambda m: m.aoa.elevation,
    }[domain]
    return np.array([angles(m) for m in mpcs]), powers / powers.sum()


def _circular_mean_spread(angles: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Power-weighted mean and RMS spread of azimuth angles.

    The spread function of a rigid rotation is piecewise constant with
    breakpoints at the samples, so minimizing over windows starting at each
    sample realizes the wrap-invariant (rotation-minimized) spread.
    """
    best = None
    for cut in angles:
        shifted = cut + (angles - cut) % 360.0
        mean = float(np.sum(weights * shifted))
        spread = float(np.sqrt(np.sum(weights * (shifted - mean) ** 2)))
        if best is None or spread < best[1]:
            best = (float(wrap_azimuth(mean)), spread)
    return best


def angular_spread(mpcs: list[Mpc], domain: str) -> float:
    """Power-weighted RMS spread (degrees) in one angular domain.

    Elevation spreads are plain second moments; azimuth spreads use the
    rotation of angles that minimizes the spread, making them wrap-invariant.
    """
    angles, w = _angles_and_weights(mpcs, domain)
    if domain in ("eod", "eoa"):
        mean = np.sum(w * angles)
        return float(np.sqrt(np.sum(w * (angles - mean) ** 2)))
    return _circular_mean_spread(angles, w)[1]


def mean_angle(mpcs: list[Mpc], domain: str) -> float:
    """Power-weighted mean angle (degrees); azimuth uses the min-spread frame."""
    angles, w = _angles_and_weights(mpcs, domain)
    if domain in ("eod", "eoa"):
        return float(np.sum(w * angles))
    return _circular_mean_spread(angles, w)[0]


@dataclass(frozen=True)
class SpreadStats:
    """RMS angular spreads and power-weighted mean angles, all in degrees."""

    asd: float
    esd: float
    asa: float
    esa: float
    mean_aod: float
    mean_eod: float
    mean_aoa: float
    mean_eoa: float

    def __post_init__(self):
        for name in ("asd", "esd", "asa", "esa"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


def spread_stats(mpcs: list[Mpc]) -> SpreadStats:
    return SpreadStats(
        asd=angular_spread(mpcs, "aod"),
        esd=angular_spread(mpcs, "eod"),
        asa=angular_spread(mpcs, "aoa"),
        esa=angular_spread(mpcs, "eoa"),
        mean_aod=mean_angle(mpcs, "aod"),
        mean_eod=mean_angle(mpcs, "eod"),
        mean_aoa=mean_angle(mpcs, "aoa"),
        mean_eoa=mean_angle(mpcs, "eoa"),
    )


def filter_sector(mpcs: list[Mpc], az_min: float, az_max: float) -> list[Mpc]:
    """Keep paths whose AoD lies inside [az_min, az_max] degrees."""
    return [m for m in mpcs if az_min <= m.aod.azimuth <= az_max]


def separability(stats_i: SpreadStats, stats_j: SpreadStats) -> float:
    """Elevation separability r_ij = |mean EoD_i - mean EoD_j| - ESD_i - ESD_j.

    Positive values indicate users distinguishable by elevation beamforming.
    """
    return abs(stats_i.mean_eod - stats_j.mean_eod) - stats_i.esd - stats_j.esd


def reconstruct_channel(
    mpcs: list[Mpc], bs_spec: ArraySpec, grid: FrequencyGrid, seed
) -> np.ndarray:
    """One small-scale fading realization of the BS-side channel, (N_f, N_T).

    H(f_k) = sum_l |alpha_l| exp(j theta_l) B_T(aod_l) exp(-j2 pi f_k tau_l)
    with theta_l drawn i.i.d. uniform on [0, 2 pi) per call.
    """
    if not mpcs:
        raise ValueError("MPC list must not be empty")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=len(mpcs))
    amps = np.array([abs(m.gain) for m in mpcs]) * np.exp(1j * theta)
    b = steering_matrix(
        bs_spec,
        np.array([m.aod.azimuth for m in mpcs]),
        np.array([m.aod.elevation for m in mpcs]),
    )  # (L, N_T)
    ramps = np.exp(-2j * np.pi * np.outer(grid.points, [m.delay for m in mpcs]))  # (N_f, L)
    return (ramps * amps[None, :]) @ b


def capacity_single(h: np.ndarray, noise_power: float) -> float:
    """Single-user uplink capacity in b/s/Hz.

    C = (1/N_f) sum_k log2(1 + ||H(f_k)||^2 / (N_T N_0)) for h of shape
    (N_f, N_T).
    """
    if not noise_power > 0.0:
        raise ValueError("noise power must be positive")
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    n_t = h.shape[1]
    snr = np.sum(np.abs(h) ** 2, axis=1) / (n_t * noise_power)
    return float(np.mean(np.log2(1.0 + snr)))


def detector_weights(
    h_i: np.ndarray, h_j: np.ndarray, noise_power: float, kind: str
) -> np.ndarray:
    """Per-frequency combining weights for user i against interferer j.

    mrc:  W = H_i
    zf:   W = [G (G^H G)^-1]_1
    mmse: W = [G (G^H G + N_0 I)^-1]_1
    with G = [H_i, H_j] of shape (N_T, 2) per bin and [.]_1 its first column.
    """
    if kind not in DETECTORS:
        raise ValueError(f"kind must be one of {DETECTORS}")
    h_i = np.atleast_2d(np.asarray(h_i, dtype=complex))
    h_j = np.atleast_2d(np.asarray(h_j, dtype=complex))
    if h_i.shape != h_j.shape:
        raise ValueError("user channels must share a shape")
    if kind == "mrc":
        return h_i.copy()
    g = np.stack([h_i, h_j], axis=2)  # (N_f, N_T, 2)
    gram = np.einsum("knu,knv->kuv", g.conj(), g)  # (N_f, 2, 2)
    if kind == "zf":
        scale = np.abs(gram[:, 0, 0]) * np.abs(gram[:, 1, 1])
        det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] * gram[:, 1, 0]
        if np.any(np.abs(det) <= 1e-12 * np.maximum(scale, 1e-300)):
            raise ValueError("rank-deficient user channels: ZF weights undefined")
    else:
        if not noise_power > 0.0:
            raise ValueError("noise power must be positive for MMSE")
        gram = gram + noise_power * np.eye(2)[None, :, :]
    inv = np.linalg.inv(gram)
    return np.einsum("knu,ku->kn", g, inv[:, :, 0])


def capacity_two_user(
    h_i: np.ndarray, h_j: np.ndarray, noise_power: float, kind: str
) -> float:
    """Two-user uplink capacity (b/s/Hz) of user i under interferer j.

    C = (1/N_f) sum_k log2(1 + (1/N_T) |H_i^H W|^2
                                / (|H_j^H W|^2 + ||W||^2 N_0)).
    """
    if not noise_power > 0.0:
        raise ValueError("noise power must be positive")
    h_i = np.atleast_2d(np.asarray(h_i, dtype=complex))
    h_j = np.atleast_2d(np.asarray(h_j, dtype=complex))
    w = detector_weights(h_i, h_j, noise_power, kind)
    sig = np.abs(np.einsum("kn,kn->k", h_i.conj(), w)) ** 2
    intf = np.abs(np.einsum("kn,kn->k", h_j.conj(), w)) ** 2
    norm = np.sum(np.abs(w) ** 2, axis=1)
    n_t = h_i.shape[1]
    sinr = sig / (n_t * (intf + norm * noise_power))
    return float(np.mean(np.log2(1.0 + sinr)))


@dataclass
class CapacityReport:
    """Capacity samples across fading realizations for one detector/array."""

    detector: str
    capacities: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.capacities, dtype=float)
        if np.any(c < 0.0):
            raise ValueError("capacities must be >= 0")
        self.capacities = c

    @property
    def mean(self) -> float:
        return float(self.capacities.mean())

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.sort(self.capacities)
        q = np.arange(1, s.size + 1) / s.size
        return s, q


def capacity_cdf(capacities: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return CapacityReport(detector="", capacities=capacities).cdf()


def write_spreads_csv(rows: list[tuple[str, SpreadStats]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["label", "esd_deg", "asd_deg", "esa_deg", "asa_deg",
             "mean_eod_deg", "mean_aod_deg", "mean_eoa_deg", "mean_aoa_deg"]
        )
        for label, st in rows:
            writer.writerow(
                [label] + ["%.12g" % v for v in
                           (st.esd, st.asd, st.esa, st.asa,
                            st.mean_eod, st.mean_aod, st.mean_eoa, st.mean_aoa)]
            )


def write_separability_csv(labels: list[str], stats: list[SpreadStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_i", "user_j", "r_ij_deg", "separable"])
        for i in range(len(stats)):
            for j in range(i + 1, len(stats)):
                r = separability(stats[i], stats[j])
                writer.writerow([labels[i], labels[j], "%.12g" % r, int(r > 0.0)])


def write_capacity_cdf_csv(report: CapacityReport, path) -> None:
    values, quantiles = report.cdf()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["capacity_bps_hz", "quantile"])
        for v, q in zip(values, quantiles):
            writer.writerow(["%.12g" % v, "%.12g" % q])

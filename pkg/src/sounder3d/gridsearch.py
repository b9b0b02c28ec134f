"""Delay/angle grid-search kernel shared by the extractor and drift estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import SPEED_OF_LIGHT, ArraySpec, steering_matrix


def make_axis(lo: float, hi: float, step: float) -> np.ndarray:
    """Inclusive grid [lo, hi] with the given step; collapses to [lo] if hi <= lo."""
    if step <= 0.0:
        raise ValueError("grid step must be positive")
    if hi <= lo:
        return np.array([lo])
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


@dataclass
class SearchTables:
    """Precomputed steering/delay tables for one (array, grid) combination.

    The steering table rows follow azimuth-major, elevation-minor order so a
    C-order argmax over (delay, azimuth, elevation) realizes the lowest
    (delay, az, el) lexicographic tie-break.
    """

    az_deg: np.ndarray
    el_deg: np.ndarray
    delays_s: np.ndarray
    steering: np.ndarray  # (n_az * n_el, N)
    delay_table: np.ndarray  # (n_delay, N_f)

    @classmethod
    def build(
        cls,
        spec: ArraySpec,
        freqs: np.ndarray,
        az_deg: np.ndarray,
        el_deg: np.ndarray,
        delays_s: np.ndarray,
    ) -> "SearchTables":
        az_flat = np.repeat(az_deg, el_deg.size)
        el_flat = np.tile(el_deg, az_deg.size)
        steering = steering_matrix(spec, az_flat, el_flat)
        delay_table = np.exp(-2j * np.pi * np.outer(delays_s, freqs))
        return cls(
            az_deg=np.asarray(az_deg, dtype=float),
            el_deg=np.asarray(el_deg, dtype=float),
            delays_s=np.asarray(delays_s, dtype=float),
            steering=steering,
            delay_table=delay_table,
        )

    def steering_for(self, az: float, el: float) -> np.ndarray:
        i_az = int(np.argmin(np.abs(self.az_deg - az)))
        i_el = int(np.argmin(np.abs(self.el_deg - el)))
        return self.steering[i_az * self.el_deg.size + i_el]


@dataclass
class PeakResult:
    delay_s: float
    az_deg: float
    el_deg: float
    value: float
    median: float
    indices: tuple[int, int, int]


def search_peak(collapsed: np.ndarray, tables: SearchTables) -> PeakResult:
    """Argmax of |sum_k exp(-j2 pi f_k tau) sum_m A[g,m] C[m,k]| over the grid.

    ``collapsed`` is the (M, N_f) matrix left after absorbing the fixed side
    of the transfer tensor; ties break toward the lowest (delay, az, el) grid
    index.  Returns the peak and the grid median of the objective (used by
    noise gates).
    """
    w = collapsed @ tables.delay_table.T  # (M, n_delay)
    obj = np.abs(tables.steering @ w)  # (n_grid, n_delay)
    n_el = tables.el_deg.size
    n_az = tables.az_deg.size
    # reorder to (delay, az, el) so C-order argmax matches the tie-break rule
    obj = obj.T.reshape(tables.delays_s.size, n_az, n_el)
    flat = int(np.argmax(obj))
    i_d, rem = divmod(flat, n_az * n_el)
    i_az, i_el = divmod(rem, n_el)
    return PeakResult(
        delay_s=float(tables.delays_s[i_d]),
        az_deg=float(tables.az_deg[i_az]),
        el_deg=float(tables.el_deg[i_el]),
        value=float(obj[i_d, i_az, i_el]),
        median=float(np.median(obj)),
        indices=(i_d, i_az, i_el),
    )


def delays_from_meters(lo_m: float, hi_m: float, step_m: float) -> np.ndarray:
    return make_axis(lo_m, hi_m, step_m) / SPEED_OF_LIGHT

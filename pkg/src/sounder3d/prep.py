"""Outlier snapshot suppression and coherent snapshot averaging."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import TransferTensor


@dataclass(frozen=True)
class SnapshotCorrelation:
    """Pairwise snapshot correlation matrix and its column sums."""

    K: np.ndarray  # (S, S), symmetric, nonnegative
    g: np.ndarray  # (S,)


def correlation_matrix(snapshots: np.ndarray, delta_f: float = 1.0) -> SnapshotCorrelation:
    """K_ij = |sum_k h_i(f_k) conj(h_j(f_k)) df| for snapshot vectors (S, N_f)."""
    h = np.asarray(snapshots, dtype=complex)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("snapshots must be a nonempty (S, N_f) array")
    k = np.abs(h @ h.conj().T * delta_f)
    k = 0.5 * (k + k.T)  # symmetric up to rounding; enforce exactly
    return SnapshotCorrelation(K=k, g=k.sum(axis=1))


def median_lower(values: np.ndarray) -> float:
    """Median as a realized sample: the lower middle element of the sorted list."""
    s = np.sort(np.asarray(values))
    return float(s[(s.size - 1) // 2])


def filter_outliers(corr: SnapshotCorrelation, rel_tol: float = 0.20) -> np.ndarray:
    """Indices of snapshots whose column sum is within rel_tol of the median.

    The median witness is always kept.  Raises on degenerate all-zero input.
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must be in (0, 1)")
    med = median_lower(corr.g)
    if med == 0.0:
        raise ValueError("degenerate input: median snapshot correlation is zero")
    keep = np.abs(corr.g - med) <= rel_tol * med
    return np.nonzero(keep)[0]


def average_snapshots(snapshots: np.ndarray, kept: np.ndarray) -> np.ndarray:
    """Coherent complex mean of the kept snapshots."""
    kept = np.asarray(kept, dtype=int)
    if kept.size == 0:
        raise ValueError("kept snapshot set must not be empty")
    return np.mean(np.asarray(snapshots, dtype=complex)[kept], axis=0)


@dataclass
class OutlierRecord:
    rotor: int
    tx: int
    rx: int
    removed: list[int]
    g: np.ndarray


@dataclass
class PrepResult:
    averaged: TransferTensor
    kept_mask: np.ndarray  # (R, T, X, S) bool
    records: list[OutlierRecord]  # one per pair with removals


def suppress_outliers(tensor: TransferTensor, rel_tol: float = 0.20) -> PrepResult:
    """Filter and average every TX-RX pair of the tensor independently.

    Pairs whose snapshot correlations are degenerate (all-zero) are rejected,
    matching the per-pair contract of :func:`filter_outliers`.
    """
    r_n, t_n, x_n, f_n, s_n = tensor.values.shape
    delta_f = tensor.grid.spacing if f_n > 1 else 1.0
    v = tensor.values
    # K over all pairs at once: (R, T, X, S, S)
    k = np.abs(np.einsum("rtxfi,rtxfj->rtxij", v.conj(), v) * delta_f)
    g = k.sum(axis=-1)  # (R, T, X, S)
    med = np.sort(g, axis=-1)[..., (s_n - 1) // 2]
    if np.any(med == 0.0):
        bad = np.argwhere(med == 0.0)[0]
        raise ValueError(
            f"degenerate snapshots at rotor={bad[0]} tx={bad[1]} rx={bad[2]}"
        )
    keep = np.abs(g - med[..., None]) <= rel_tol * med[..., None]

    counts = keep.sum(axis=-1)
    averaged = np.einsum("rtxfs,rtxs->rtxf", v, keep.astype(float)) / counts[..., None]
    mean_ts = np.sum(tensor.timestamps * keep, axis=-1) / counts

    records = []
    for r, t, x in zip(*np.nonzero(~keep.all(axis=-1))):
        removed = np.nonzero(~keep[r, t, x])[0]
        records.append(
            OutlierRecord(
                rotor=int(r), tx=int(t), rx=int(x),
                removed=[int(i) for i in removed], g=g[r, t, x].copy(),
            )
        )

    avg_tensor = TransferTensor(
        values=averaged[..., None],
        timestamps=mean_ts[..., None],
        grid=tensor.grid,
        rotor_positions_deg=tensor.rotor_positions_deg,
        ordered=False,
    )
    return PrepResult(averaged=avg_tensor, kept_mask=keep, records=records)


def write_outlier_report(records: list[OutlierRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rotor", "tx", "rx", "removed_snapshots", "g"])
        for rec in records:
            writer.writerow(
                [
                    rec.rotor,
                    rec.tx,
                    rec.rx,
                    ";".join(str(i) for i in rec.removed),
                    ";".join("%.12g" % v for v in rec.g),
                ]
            )

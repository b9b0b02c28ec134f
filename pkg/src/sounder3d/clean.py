"""Iterative 3D CLEAN extraction of multipath parameters from transfer tensors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .arrays import SPEED_OF_LIGHT, ArraySpec, Direction, steering_vector, wrap_azimuth
from .channel import FrequencyGrid, Mpc, synthesize
from .gridsearch import PeakResult, SearchTables, delays_from_meters, make_axis


@dataclass(frozen=True)
class CleanConfig:
    """Grid sizes, stop rules, and search ranges for the extractor."""

    angle_grid_deg: float = 1.0
    delay_grid_m: float = 3.0
    dynamic_range_db: float = 20.0
    alt_iterations: int = 3
    max_paths: int = 50
    delay_range_m: tuple[float, float] = (0.0, 450.0)
    tx_az_range_deg: tuple[float, float] = (-180.0, 180.0)
    tx_el_range_deg: tuple[float, float] = (-90.0, 90.0)
    rx_az_range_deg: tuple[float, float] = (-180.0, 180.0)
    rx_el_range_deg: tuple[float, float] = (-90.0, 90.0)
    noise_gate_db: float = 6.0

    def __post_init__(self):
        if self.angle_grid_deg <= 0.0 or self.delay_grid_m <= 0.0:
            raise ValueError("grid sizes must be positive")
        if self.dynamic_range_db <= 0.0:
            raise ValueError("dynamic range must be positive")
        if self.alt_iterations < 1:
            raise ValueError("alt_iterations must be >= 1")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")

    def azimuth_axis(self, lo: float, hi: float) -> np.ndarray:
        # a full-circle range must not duplicate the wrapped endpoint
        step = self.angle_grid_deg
        if hi - lo >= 360.0 - 0.5 * step:
            hi = lo + 360.0 - step
        return make_axis(lo, hi, step)


@dataclass
class CleanTables:
    """Reusable steering/delay tables for repeated extractions on one setup."""

    tx: SearchTables
    rx: SearchTables
    freqs: np.ndarray


def build_tables(
    tx_spec: ArraySpec, rx_spec: ArraySpec, grid: FrequencyGrid, cfg: CleanConfig
) -> CleanTables:
    delays = delays_from_meters(cfg.delay_range_m[0], cfg.delay_range_m[1], cfg.delay_grid_m)
    tx_tables = SearchTables.build(
        tx_spec,
        grid.points,
        cfg.azimuth_axis(*cfg.tx_az_range_deg),
        make_axis(cfg.tx_el_range_deg[0], cfg.tx_el_range_deg[1], cfg.angle_grid_deg),
        delays,
    )
    rx_tables = SearchTables.build(
        rx_spec,
        grid.points,
        cfg.azimuth_axis(*cfg.rx_az_range_deg),
        make_axis(cfg.rx_el_range_deg[0], cfg.rx_el_range_deg[1], cfg.angle_grid_deg),
        delays,
    )
    return CleanTables(tx=tx_tables, rx=rx_tables, freqs=grid.points)


@dataclass
class ExtractionResult:
    """Ordered extracted paths plus per-iteration diagnostics."""

    mpcs: list[Mpc]
    residual_power: np.ndarray  # input power, then power after each subtraction
    peak_objectives: np.ndarray  # joint objective at each accepted peak
    stop_reason: str = ""

    @property
    def empty(self) -> bool:
        return len(self.mpcs) == 0


def init_tx_beamform(
    tensor: np.ndarray, tx_spec: ArraySpec, grid: FrequencyGrid, cfg: CleanConfig,
    tables: CleanTables | None = None,
) -> tuple[float, float, float]:
    """Transmit-side beamforming initialization.

    Maximizes |sum_k exp(-j2 pi f_k tau) H^(n)(f_k)^H B_T(az, el)| jointly over
    the (delay, az, el) grid and the receive antenna index n.  Returns
    (delay_s, az_deg, el_deg).
    """
    if tables is None:
        delays = delays_from_meters(
            cfg.delay_range_m[0], cfg.delay_range_m[1], cfg.delay_grid_m
        )
        tx_tables = SearchTables.build(
            tx_spec,
            grid.points,
            cfg.azimuth_axis(*cfg.tx_az_range_deg),
            make_axis(cfg.tx_el_range_deg[0], cfg.tx_el_range_deg[1], cfg.angle_grid_deg),
            delays,
        )
        tables = CleanTables(tx=tx_tables, rx=tx_tables, freqs=grid.points)
    peak = _init_peak(tensor, tables)
    return peak.delay_s, peak.az_deg, peak.el_deg


def _init_peak(tensor: np.ndarray, tables: CleanTables) -> PeakResult:
    best = None
    conj_t = np.conj(tensor)
    for n in range(tensor.shape[1]):
        res = _search(conj_t[:, n, :], tables.tx)
        if best is None or res.value > best.value:
            best = res
    return best


def _search(collapsed: np.ndarray, tables: SearchTables) -> PeakResult:
    from .gridsearch import search_peak

    return search_peak(collapsed, tables)


def alternate_search(
    tensor: np.ndarray,
    tx_spec: ArraySpec,
    rx_spec: ArraySpec,
    grid: FrequencyGrid,
    cfg: CleanConfig,
    fixed_side: str,
    fixed_direction: Direction,
    tables: CleanTables | None = None,
) -> tuple[float, Direction]:
    """One 3D grid search with one side's steering vector held fixed.

    With ``fixed_side="tx"`` the search runs over (delay, RX azimuth, RX
    elevation); with ``"rx"`` over the transmit side.  Ties break toward the
    lowest (delay, az, el) grid index.
    """
    tables = tables or build_tables(tx_spec, rx_spec, grid, cfg)
    if fixed_side == "tx":
        b = steering_vector(tx_spec, fixed_direction).gains
        collapsed = np.einsum("trk,t->rk", np.conj(tensor), b)
        res = _search(collapsed, tables.rx)
    elif fixed_side == "rx":
        b = steering_vector(rx_spec, fixed_direction).gains
        collapsed = np.einsum("trk,r->tk", np.conj(tensor), b)
        res = _search(collapsed, tables.tx)
    else:
        raise ValueError("fixed_side must be 'tx' or 'rx'")
    return res.delay_s, Direction(res.az_deg, res.el_deg)


def estimate_gain(
    tensor: np.ndarray,
    delay_s: float,
    aod: Direction,
    aoa: Direction,
    tx_spec: ArraySpec,
    rx_spec: ArraySpec,
    grid: FrequencyGrid,
) -> complex:
    """Matched-filter path gain at the given parameters.

    alpha = sum_k exp(+j2 pi f_k tau) B_T^H H(f_k) B_R^H
            / (N_f ||B_T||^2 ||B_R||^2);
    exact for a noiseless single on-grid path.
    """
    b_t = steering_vector(tx_spec, aod).gains
    b_r = steering_vector(rx_spec, aoa).gains
    ramp = np.exp(2j * np.pi * grid.points * delay_s)
    num = np.einsum("t,trk,r,k->", np.conj(b_t), tensor, np.conj(b_r), ramp)
    den = grid.n_points * np.sum(np.abs(b_t) ** 2) * np.sum(np.abs(b_r) ** 2)
    return complex(num / den)


def subtract(
    tensor: np.ndarray,
    mpc: Mpc,
    tx_spec: ArraySpec,
    rx_spec: ArraySpec,
    grid: FrequencyGrid,
) -> np.ndarray:
    """Remove one path's rank-one, phase-ramp contribution."""
    return tensor - synthesize([mpc], tx_spec, rx_spec, grid)


def extract(
    tensor: np.ndarray,
    tx_spec: ArraySpec,
    rx_spec: ArraySpec,
    grid: FrequencyGrid,
    cfg: CleanConfig,
    tables: CleanTables | None = None,
) -> ExtractionResult:
    """Iterative CLEAN loop: find, estimate, subtract, repeat.

    ``tensor`` is the drift-corrected, snapshot-averaged data flattened to
    (N_T, N_R, N_f).  Extraction stops when a new path falls outside the
    dynamic range of the first, fails the noise gate (peak below
    ``noise_gate_db`` over the grid median of the objective), or after
    ``max_paths`` paths.
    """
    tensor = np.asarray(tensor, dtype=complex)
    if tensor.ndim != 3:
        raise ValueError("tensor must be (N_T, N_R, N_f)")
    tables = tables or build_tables(tx_spec, rx_spec, grid, cfg)

    residual = tensor
    mpcs: list[Mpc] = []
    powers = [float(np.sum(np.abs(residual) ** 2))]
    objectives: list[float] = []
    gate = 10.0 ** (cfg.noise_gate_db / 20.0)
    floor_rel = 10.0 ** (-cfg.dynamic_range_db / 20.0)
    first_gain = None
    stop = "max_paths"

    while len(mpcs) < cfg.max_paths:
        peak = _init_peak(residual, tables)
        aod = Direction(peak.az_deg, peak.el_deg)
        delay = peak.delay_s
        aoa = None
        for _ in range(cfg.alt_iterations):
            delay, new_aoa = alternate_search(
                residual, tx_spec, rx_spec, grid, cfg, "tx", aod, tables
            )
            delay, new_aod = alternate_search(
                residual, tx_spec, rx_spec, grid, cfg, "rx", new_aoa, tables
            )
            if new_aoa == aoa and new_aod == aod:
                break
            aoa, aod = new_aoa, new_aod
        # re-evaluate the joint objective at the converged point for the gate
        b_r = tables.rx.steering_for(aoa.azimuth, aoa.elevation)
        collapsed = np.einsum("trk,r->tk", np.conj(residual), b_r)
        final = _search(collapsed, tables.tx)
        if not (final.value > 0.0 and final.value >= gate * final.median):
            stop = "noise_gate"
            break
        gain = estimate_gain(residual, delay, aod, aoa, tx_spec, rx_spec, grid)
        if first_gain is None:
            first_gain = abs(gain)
        elif abs(gain) < first_gain * floor_rel:
            stop = "dynamic_range"
            break
        mpc = Mpc(gain=gain, delay=delay, aod=aod, aoa=aoa)
        residual = subtract(residual, mpc, tx_spec, rx_spec, grid)
        mpcs.append(mpc)
        powers.append(float(np.sum(np.abs(residual) ** 2)))
        objectives.append(final.value)

    order = sorted(range(len(mpcs)), key=lambda i: -abs(mpcs[i].gain))
    return ExtractionResult(
        mpcs=[mpcs[i] for i in order],
        residual_power=np.array(powers),
        peak_objectives=np.array([objectives[i] for i in order]),
        stop_reason=stop,
    )


def snap_to_grids(mpcs: list[Mpc], cfg: CleanConfig) -> list[Mpc]:
    """Snap path parameters to the extractor's search grids (nearest point)."""
    delays = delays_from_meters(cfg.delay_range_m[0], cfg.delay_range_m[1], cfg.delay_grid_m)
    tx_az = cfg.azimuth_axis(*cfg.tx_az_range_deg)
    tx_el = make_axis(cfg.tx_el_range_deg[0], cfg.tx_el_range_deg[1], cfg.angle_grid_deg)
    rx_az = cfg.azimuth_axis(*cfg.rx_az_range_deg)
    rx_el = make_axis(cfg.rx_el_range_deg[0], cfg.rx_el_range_deg[1], cfg.angle_grid_deg)

    def near(axis, value):
        return float(axis[np.argmin(np.abs(axis - value))])

    def near_az(axis, value):
        return float(axis[np.argmin(np.abs(wrap_azimuth(axis - value)))])

    return [
        Mpc(
            gain=m.gain,
            delay=near(delays, m.delay),
            aod=Direction(near_az(tx_az, m.aod.azimuth), near(tx_el, m.aod.elevation)),
            aoa=Direction(near_az(rx_az, m.aoa.azimuth), near(rx_el, m.aoa.elevation)),
        )
        for m in mpcs
    ]


def match_mpcs(
    estimated: list[Mpc],
    truth: list[Mpc],
    angle_grid_deg: float = 1.0,
    delay_grid_m: float = 3.0,
) -> list[tuple[int, int]]:
    """Greedy nearest-neighbor association in grid-normalized parameter space.

    Each dimension is scaled by its grid step; azimuth differences wrap.
    Pairs are taken globally closest-first; unmatched estimates are dropped.
    """
    if not estimated or not truth:
        return []
    dist = np.empty((len(estimated), len(truth)))
    for i, e in enumerate(estimated):
        for j, t in enumerate(truth):
            d2 = ((e.delay - t.delay) * SPEED_OF_LIGHT / delay_grid_m) ** 2
            d2 += (wrap_azimuth(e.aod.azimuth - t.aod.azimuth) / angle_grid_deg) ** 2
            d2 += ((e.aod.elevation - t.aod.elevation) / angle_grid_deg) ** 2
            d2 += (wrap_azimuth(e.aoa.azimuth - t.aoa.azimuth) / angle_grid_deg) ** 2
            d2 += ((e.aoa.elevation - t.aoa.elevation) / angle_grid_deg) ** 2
            dist[i, j] = d2
    pairs = []
    used_e, used_t = set(), set()
    order = np.argsort(dist, axis=None)
    for flat in order:
        i, j = divmod(int(flat), len(truth))
        if i in used_e or j in used_t:
            continue
        pairs.append((i, j))
        used_e.add(i)
        used_t.add(j)
        if len(pairs) == min(len(estimated), len(truth)):
            break
    return pairs


MPC_CSV_COLUMNS = [
    "index",
    "power_db",
    "delay_m",
    "aod_deg",
    "eod_deg",
    "aoa_deg",
    "eoa_deg",
    "gain_re",
    "gain_im",
]


def write_mpcs_csv(mpcs: list[Mpc], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MPC_CSV_COLUMNS)
        for i, m in enumerate(mpcs):
            writer.writerow(
                [
                    i,
                    "%.6f" % m.power_db,
                    "%.12g" % m.delay_m,
                    "%.12g" % m.aod.azimuth,
                    "%.12g" % m.aod.elevation,
                    "%.12g" % m.aoa.azimuth,
                    "%.12g" % m.aoa.elevation,
                    "%.17g" % m.gain.real,
                    "%.17g" % m.gain.imag,
                ]
            )


def read_mpcs_csv(path) -> list[Mpc]:
    mpcs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            mpcs.append(
                Mpc(
                    gain=float(row["gain_re"]) + 1j * float(row["gain_im"]),
                    delay=float(row["delay_m"]) / SPEED_OF_LIGHT,
                    aod=Direction(float(row["aod_deg"]), float(row["eod_deg"])),
                    aoa=Direction(float(row["aoa_deg"]), float(row["eoa_deg"])),
                )
            )
    return mpcs

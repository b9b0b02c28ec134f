"""End-to-end pipeline stages, studies, and the output-directory layout."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .arrays import SPEED_OF_LIGHT, ArraySpec, build_reference_antenna, wrap_azimuth
from .channel import (
    FrequencyGrid,
    Mpc,
    TransferTensor,
    load_tensor,
    sample_scenario,
    save_tensor,
)
from .clean import (
    CleanConfig,
    CleanTables,
    ExtractionResult,
    build_tables,
    extract,
    match_mpcs,
    read_mpcs_csv,
    snap_to_grids,
    write_mpcs_csv,
)
from .config import ArraySection, ConfigError, ExperimentConfig, GridSection, seed_stream
from .drift import (
    apply_correction,
    estimate,
    phase_spread,
    reference_phase_by_rotor,
    write_drift_report,
)
from .metrics import (
    CapacityReport,
    capacity_single,
    capacity_two_user,
    filter_sector,
    reconstruct_channel,
    spread_stats,
    write_capacity_cdf_csv,
    write_separability_csv,
    write_spreads_csv,
    separability,
)
from .prep import suppress_outliers, write_outlier_report
from .sounder import DriftTrace, Schedule, acquire, make_schedule, realize_drift
from . import plots

STAGES = ("simulate", "prep", "drift", "extract", "analyze", "study")

FILES = {
    "config": "config.json",
    "manifest": "manifest.json",
    "tensor": "tensor.bin",
    "ref_tensor": "ref_tensor.bin",
    "truth_mpcs": "truth_mpcs.csv",
    "truth_drift_main": "truth_drift_main.npy",
    "truth_drift_ref": "truth_drift_ref.npy",
    "truth_outlier_mask": "truth_outlier_mask.npy",
    "averaged": "averaged.bin",
    "ref_averaged": "ref_averaged.bin",
    "outliers": "outliers.csv",
    "drift_report": "drift.csv",
    "corrected": "corrected.bin",
    "ref_corrected": "ref_corrected.bin",
    "mpcs": "mpcs.csv",
    "extraction": "extraction.csv",
    "spreads": "spreads.csv",
    "separability": "separability.csv",
    "rmse": "rmse.csv",
}


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for exit codes."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass
class Setup:
    """Concrete objects derived from an experiment config."""

    grid: FrequencyGrid
    tx_full: ArraySpec
    tx_measured: ArraySpec
    rx: ArraySpec
    reference: ArraySpec
    schedule: Schedule
    clean_cfg: CleanConfig


def measured_subarray(cylinder: ArraySpec, rings: int, positions_deg) -> ArraySpec:
    """Columns of the cylinder at the scheduled rotor positions, in order."""
    per_ring = cylinder.n_elements // rings
    column_az = [cylinder.boresights[j * rings].azimuth for j in range(per_ring)]
    pos, bores = [], []
    for want in positions_deg:
        matches = [
            j for j, az in enumerate(column_az)
            if abs(wrap_azimuth(az - want)) <= 1e-6
        ]
        if not matches:
            raise ConfigError(f"rotor position {want} deg is not a cylinder column")
        j = matches[0]
        pos.append(cylinder.positions[j * rings : (j + 1) * rings])
        bores.extend(cylinder.boresights[j * rings : (j + 1) * rings])
    return ArraySpec(
        positions=np.concatenate(pos, axis=0),
        boresights=tuple(bores),
        carrier_wavelength=cylinder.carrier_wavelength,
        pattern=cylinder.pattern,
    )


def build_setup(cfg: ExperimentConfig) -> Setup:
    if cfg.tx_array.kind != "cylinder":
        raise ConfigError("the acquisition transmitter must be a cylinder array")
    grid = cfg.grid.build()
    wavelength = SPEED_OF_LIGHT / grid.carrier
    tx_full = cfg.tx_array.build(wavelength)
    rx = cfg.rx_array.build(wavelength)
    rings = cfg.tx_array.rings
    if cfg.schedule.rotor_positions_deg is None:
        per_ring = cfg.tx_array.per_ring
        positions = [tx_full.boresights[j * rings].azimuth for j in range(per_ring)]
    else:
        positions = list(cfg.schedule.rotor_positions_deg)
    tx_measured = measured_subarray(tx_full, rings, positions)
    schedule = make_schedule(
        n_tx=rings,
        n_rx=rx.n_elements,
        rotor_positions_deg=positions,
        pair_duration_s=cfg.schedule.pair_duration_s,
        switch_delay_s=cfg.schedule.switch_delay_s,
        rotor_delay_s=cfg.schedule.rotor_delay_s,
        snapshots=cfg.schedule.snapshots,
        ports_per_element=cfg.schedule.ports_per_element,
        ref_mode=cfg.schedule.ref_mode,
    )
    return Setup(
        grid=grid,
        tx_full=tx_full,
        tx_measured=tx_measured,
        rx=rx,
        reference=build_reference_antenna(wavelength),
        schedule=schedule,
        clean_cfg=cfg.clean_config(),
    )


def scenario_mpcs(cfg: ExperimentConfig, clean_cfg: CleanConfig) -> list[Mpc]:
    if cfg.mpcs.source == "explicit":
        return [
            Mpc(
                gain=p["gain_re"] + 1j * p["gain_im"],
                delay=p["delay_m"] / SPEED_OF_LIGHT,
                aod=_direction(p["aod_deg"], p["eod_deg"]),
                aoa=_direction(p["aoa_deg"], p["eoa_deg"]),
            )
            for p in cfg.mpcs.paths
        ]
    mpcs = sample_scenario(
        seed_stream(cfg.master_seed, "scenario"), cfg.mpcs.n_paths, cfg.mpcs.ranges
    )
    if cfg.mpcs.snap_to_grid:
        mpcs = snap_to_grids(mpcs, clean_cfg)
    return mpcs


def _direction(az: float, el: float):
    from .arrays import Direction

    return Direction(az, el)


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def stage_simulate(cfg: ExperimentConfig, out: Path):
    """Acquire the scenario and write raw tensors plus the ground-truth sidecar."""
    setup = build_setup(cfg)
    mpcs = scenario_mpcs(cfg, setup.clean_cfg)
    drift_trace = realize_drift(
        setup.schedule,
        cfg.allan_dev_1s,
        setup.grid.carrier,
        seed_stream(cfg.master_seed, "drift"),
    )
    result = acquire(
        mpcs,
        setup.tx_measured,
        setup.rx,
        setup.reference,
        setup.grid,
        setup.schedule,
        drift_trace,
        cfg.noise_power,
        cfg.outliers,
        seed_stream(cfg.master_seed, "acquisition"),
    )
    if cfg.save_tensors:
        save_tensor(result.tensor, out / FILES["tensor"])
        save_tensor(result.ref_tensor, out / FILES["ref_tensor"])
    write_mpcs_csv(mpcs, out / FILES["truth_mpcs"])
    np.save(out / FILES["truth_drift_main"], drift_trace.main_phases)
    np.save(out / FILES["truth_drift_ref"], drift_trace.ref_phases)
    np.save(out / FILES["truth_outlier_mask"], result.outlier_mask)
    return setup, mpcs, result


def stage_prep(cfg: ExperimentConfig, out: Path, tensor=None, ref_tensor=None):
    tensor = tensor if tensor is not None else load_tensor(out / FILES["tensor"])
    ref_tensor = (
        ref_tensor if ref_tensor is not None else load_tensor(out / FILES["ref_tensor"])
    )
    prep_main = suppress_outliers(tensor, cfg.prep_rel_tol)
    prep_ref = suppress_outliers(ref_tensor, cfg.prep_rel_tol)
    if cfg.save_tensors:
        save_tensor(prep_main.averaged, out / FILES["averaged"])
        save_tensor(prep_ref.averaged, out / FILES["ref_averaged"])
    write_outlier_report(prep_main.records, out / FILES["outliers"])
    return prep_main, prep_ref


def stage_drift(cfg: ExperimentConfig, out: Path, averaged=None, ref_averaged=None, figures=True):
    averaged = averaged if averaged is not None else load_tensor(out / FILES["averaged"])
    ref_averaged = (
        ref_averaged
        if ref_averaged is not None
        else load_tensor(out / FILES["ref_averaged"])
    )
    grid = averaged.grid
    wavelength = SPEED_OF_LIGHT / grid.carrier
    rx = cfg.rx_array.build(wavelength)
    est = estimate(cfg.drift_method, ref_averaged, rx, grid, cfg.drift_search())
    corrected = apply_correction(averaged, est.phases)
    ref_corrected = apply_correction(ref_averaged, est.phases)
    write_drift_report(est, out / FILES["drift_report"])
    if cfg.save_tensors:
        save_tensor(corrected, out / FILES["corrected"])
        save_tensor(ref_corrected, out / FILES["ref_corrected"])
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plots.plot_reference_phases(
            reference_phase_by_rotor(ref_averaged),
            reference_phase_by_rotor(ref_corrected),
            fig_dir / "reference_phase.png",
        )
    return est, corrected, ref_corrected


def stage_extract(cfg: ExperimentConfig, out: Path, corrected=None, setup: Setup | None = None, figures=True):
    corrected = corrected if corrected is not None else load_tensor(out / FILES["corrected"])
    setup = setup or build_setup(cfg)
    from .channel import flatten_tensor

    flat = flatten_tensor(corrected)
    result = extract(flat, setup.tx_measured, setup.rx, setup.grid, setup.clean_cfg)
    write_mpcs_csv(result.mpcs, out / FILES["mpcs"])
    with open(out / FILES["extraction"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual_power", "stop_reason"])
        for i, p in enumerate(result.residual_power):
            writer.writerow([i, "%.12g" % p, result.stop_reason if i == len(result.residual_power) - 1 else ""])
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plots.plot_mpcs(result.mpcs, fig_dir / "mpcs.png")
        plots.plot_residual_power(result.residual_power, fig_dir / "residual_power.png")
    return result


def stage_analyze(cfg: ExperimentConfig, out: Path, mpc_files: list[Path] | None = None, figures=True):
    """Spread statistics and pairwise separability for one or more MPC lists."""
    if not mpc_files:
        mpc_files = [out / FILES["mpcs"]]
    rows = []
    for path in mpc_files:
        mpcs = read_mpcs_csv(path)
        if cfg.sector_deg is not None:
            mpcs = filter_sector(mpcs, cfg.sector_deg[0], cfg.sector_deg[1])
        if not mpcs:
            raise StageError("analyze", f"no paths to analyze in {path}")
        rows.append((Path(path).stem, spread_stats(mpcs)))
    write_spreads_csv(rows, out / FILES["spreads"])
    labels = [label for label, _ in rows]
    stats = [st for _, st in rows]
    write_separability_csv(labels, stats, out / FILES["separability"])
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plots.plot_spreads(rows, fig_dir / "spreads.png")
        if len(stats) > 1:
            r = np.zeros((len(stats), len(stats)))
            for i in range(len(stats)):
                for j in range(len(stats)):
                    if i != j:
                        r[i, j] = separability(stats[i], stats[j])
            plots.plot_separability(labels, r, fig_dir / "separability.png")
    return rows


# --------------------------------------------------------------------------
# manifest and the full pipeline
# --------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: ExperimentConfig, out: Path, stages: dict) -> dict:
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != FILES["manifest"]:
            rel = path.relative_to(out).as_posix()
            files[rel] = {"sha256": _sha256(path), "bytes": path.stat().st_size}
    manifest = {
        "schema_version": 1,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_sha256": cfg.sha256(),
        "seed_streams": {
            name: int(seed_stream(cfg.master_seed, name).generate_state(1)[0])
            for name in ("scenario", "drift", "acquisition", "phases")
        },
        "stages": stages,
        "complete": all(s.get("status") == "ok" for s in stages.values()),
        "files": files,
    }
    with open(out / FILES["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def run_pipeline(cfg: ExperimentConfig, out, figures: bool = True) -> dict:
    """simulate -> prep -> drift-correct -> extract -> analyze, with manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / FILES["config"])
    stages: dict[str, dict] = {}

    def _run(name, fn):
        try:
            value = fn()
            stages[name] = {"status": "ok"}
            return value
        except Exception as exc:
            stages[name] = {"status": "failed", "error": str(exc)}
            write_manifest(cfg, out, stages)
            raise StageError(name, f"{name}: {exc}") from exc

    setup, mpcs, acq = _run("simulate", lambda: stage_simulate(cfg, out))
    prep_main, prep_ref = _run(
        "prep", lambda: stage_prep(cfg, out, acq.tensor, acq.ref_tensor)
    )
    est, corrected, _ = _run(
        "drift",
        lambda: stage_drift(cfg, out, prep_main.averaged, prep_ref.averaged, figures),
    )
    _run("extract", lambda: stage_extract(cfg, out, corrected, setup, figures))
    _run("analyze", lambda: stage_analyze(cfg, out, None, figures))
    return write_manifest(cfg, out, stages)


# --------------------------------------------------------------------------
# studies
# --------------------------------------------------------------------------

RMSE_DIMS = ("aod", "eod", "aoa", "eoa")


def run_single_trial(
    cfg: ExperimentConfig,
    setup: Setup,
    tables: CleanTables,
    trial: int,
    allan_dev: float,
) -> dict[str, float] | None:
    """One drift-study trial: acquire, correct, extract, per-dimension |error|.

    Returns None when the extractor reports no paths (never expected at the
    study's SNR, but kept explicit rather than silently scoring zeros).
    """
    from .channel import flatten_tensor

    mpcs = sample_scenario(
        seed_stream(cfg.master_seed, "scenario", trial), cfg.mpcs.n_paths, cfg.mpcs.ranges
    )
    if cfg.mpcs.snap_to_grid:
        mpcs = snap_to_grids(mpcs, setup.clean_cfg)
    drift_trace = realize_drift(
        setup.schedule,
        allan_dev,
        setup.grid.carrier,
        seed_stream(cfg.master_seed, "drift", trial),
    )
    acq = acquire(
        mpcs,
        setup.tx_measured,
        setup.rx,
        setup.reference,
        setup.grid,
        setup.schedule,
        drift_trace,
        cfg.noise_power,
        cfg.outliers,
        seed_stream(cfg.master_seed, "acquisition", trial),
    )
    prep_main = suppress_outliers(acq.tensor, cfg.prep_rel_tol)
    prep_ref = suppress_outliers(acq.ref_tensor, cfg.prep_rel_tol)
    est = estimate(
        cfg.drift_method, prep_ref.averaged, setup.rx, setup.grid, cfg.drift_search()
    )
    corrected = apply_correction(prep_main.averaged, est.phases)
    result = extract(
        flatten_tensor(corrected), setup.tx_measured, setup.rx, setup.grid,
        setup.clean_cfg, tables,
    )
    if result.empty:
        return None
    pairs = match_mpcs(
        result.mpcs, mpcs, setup.clean_cfg.angle_grid_deg, setup.clean_cfg.delay_grid_m
    )
    errors = {dim: [] for dim in RMSE_DIMS}
    for ei, ti in pairs:
        e, t = result.mpcs[ei], mpcs[ti]
        errors["aod"].append(wrap_azimuth(e.aod.azimuth - t.aod.azimuth))
        errors["eod"].append(e.aod.elevation - t.aod.elevation)
        errors["aoa"].append(wrap_azimuth(e.aoa.azimuth - t.aoa.azimuth))
        errors["eoa"].append(e.aoa.elevation - t.aoa.elevation)
    return {dim: float(np.mean(np.square(errors[dim]))) for dim in RMSE_DIMS}


def run_drift_study(
    cfg: ExperimentConfig, allan_devs, trials: int, out, figures: bool = True
) -> dict[float, dict[str, float]]:
    """RMSE of the corrected-pipeline angle estimates per Allan-deviation level.

    Trials share scenario and drift seeds across levels so the sweep is a
    common-random-numbers comparison.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    setup = build_setup(cfg)
    tables = build_tables(setup.tx_measured, setup.rx, setup.grid, setup.clean_cfg)
    table: dict[float, dict[str, float]] = {}
    for allan in allan_devs:
        sq = {dim: [] for dim in RMSE_DIMS}
        for trial in range(trials):
            errs = run_single_trial(cfg, setup, tables, trial, float(allan))
            if errs is None:
                raise StageError("study", f"extraction empty at allan={allan} trial={trial}")
            for dim in RMSE_DIMS:
                sq[dim].append(errs[dim])
        table[float(allan)] = {
            dim: float(np.sqrt(np.mean(sq[dim]))) for dim in RMSE_DIMS
        }
    with open(out / FILES["rmse"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["allan_dev_1s", "trials"] + [f"rmse_{d}_deg" for d in RMSE_DIMS])
        for allan in allan_devs:
            row = table[float(allan)]
            writer.writerow(
                ["%.12g" % allan, trials] + ["%.12g" % row[d] for d in RMSE_DIMS]
            )
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        devs = np.array([float(a) for a in allan_devs])
        plots.plot_rmse_vs_allan(
            devs,
            {d: np.array([table[float(a)][d] for a in allan_devs]) for d in RMSE_DIMS},
            fig_dir / "rmse_vs_allan.png",
        )
    return table


def parse_array_descriptor(text: str) -> ArraySection:
    """Array shorthand for studies: 'rect:8x60' or 'cyl:8x60' (rings x per-ring)."""
    try:
        kind, dims = text.split(":")
        a, b = (int(v) for v in dims.split("x"))
    except ValueError as exc:
        raise ConfigError(f"bad array descriptor {text!r}; want kind:AxB") from exc
    if kind == "rect":
        return ArraySection(kind="rect", n_az=a, n_el=b)
    if kind in ("cyl", "cylinder"):
        return ArraySection(kind="cylinder", rings=a, per_ring=b)
    raise ConfigError(f"unknown array kind {kind!r}")


PATCH_PATTERN = {"kind": "cosine-lobe", "az_3db_deg": 26.0, "el_3db_deg": 100.0,
                 "front_to_back_db": 30.0}


def run_capacity_study(
    mpc_csvs: list,
    arrays: list[str],
    detectors: list[str],
    noise_power: float,
    realizations: int,
    master_seed: int,
    out,
    grid_section: GridSection | None = None,
    pattern: dict | None = None,
    figures: bool = True,
) -> dict[str, CapacityReport]:
    """Single-user capacity per array, or two-user detector comparison.

    One MPC list runs the single-user study across the requested arrays; two
    lists run the interference study (first array entry only) across the
    requested detectors, including a no-interference reference.
    """
    if not mpc_csvs:
        raise ValueError("at least one MPC list is required")
    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    grid = (grid_section or GridSection()).build()
    wavelength = SPEED_OF_LIGHT / grid.carrier
    from .config import PatternSection

    pattern_section = PatternSection.from_dict(pattern or PATCH_PATTERN, "pattern")
    mpc_lists = [read_mpcs_csv(p) for p in mpc_csvs]
    reports: dict[str, CapacityReport] = {}

    if len(mpc_lists) == 1:
        for text in arrays:
            section = parse_array_descriptor(text)
            section = ArraySection(**{**section.__dict__, "pattern": pattern_section})
            spec = section.build(wavelength)
            caps = np.empty(realizations)
            for r in range(realizations):
                h = reconstruct_channel(
                    mpc_lists[0], spec, grid, seed_stream(master_seed, "phases", r)
                )
                caps[r] = capacity_single(h, noise_power)
            label = text.replace(":", "_")
            reports[text] = CapacityReport(detector="single", capacities=caps)
            write_capacity_cdf_csv(reports[text], out / f"capacity_{label}.csv")
    else:
        section = parse_array_descriptor(arrays[0])
        section = ArraySection(**{**section.__dict__, "pattern": pattern_section})
        spec = section.build(wavelength)
        caps = {kind: np.empty(realizations) for kind in detectors}
        caps["no-interference"] = np.empty(realizations)
        for r in range(realizations):
            h_i = reconstruct_channel(
                mpc_lists[0], spec, grid, seed_stream(master_seed, "phases", r)
            )
            h_j = reconstruct_channel(
                mpc_lists[1], spec, grid, seed_stream(master_seed, "phases-intf", r)
            )
            caps["no-interference"][r] = capacity_single(h_i, noise_power)
            for kind in detectors:
                caps[kind][r] = capacity_two_user(h_i, h_j, noise_power, kind)
        for kind, values in caps.items():
            reports[kind] = CapacityReport(detector=kind, capacities=values)
            write_capacity_cdf_csv(reports[kind], out / f"capacity_two_user_{kind}.csv")

    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plots.plot_capacity_cdfs(reports, fig_dir / "capacity_cdf.png")
    return reports

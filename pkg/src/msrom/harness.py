"""Experiment registry: configs, metrics, trajectory ensembles, result export.

An experiment runs a set of solver modes over shared noise paths, measures
per-step errors against the fine reference, and writes deterministic CSV
files (17 significant digits, fixed column order) plus timing JSON and final
field dumps.  Trajectory-level parallelism uses threads over immutable
operators; results are reduced in trajectory order, so outputs are
byte-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
import json
from pathlib import Path
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError, DataError
from .fem import OperatorSet, PermeabilityField, build_operators, load_permeability
from .grid import StructuredMesh, build_mesh
from .integrator import (
    CoupledConfig,
    DeimSetup,
    NewtonConfig,
    Problem,
    SOLVER_MODES,
    TimeGrid,
    make_nonlinearity,
    run_trajectory,
)
from .msbasis import MultiscaleSpace, build_multiscale_space, load_basis, save_basis
from .noise import NoiseModel, QWienerField, ScalarBrownian, sample_path
from .rom import build_offline_model, mean_states, nonlinear_snapshots, save_snapshots

# ---------------------------------------------------------------------------
# metrics


def relative_l2_error(u: np.ndarray, u_ref: np.ndarray, M) -> float:
    """Mass-weighted relative L2 distance."""
    d = np.asarray(u) - np.asarray(u_ref)
    ref = float(np.asarray(u_ref) @ (M @ np.asarray(u_ref)))
    if ref <= 0.0:
        raise DataError("reference field has zero L2 norm")
    return float(np.sqrt((d @ (M @ d)) / ref))


def relative_energy_error(u: np.ndarray, u_ref: np.ndarray, A) -> float:
    """Stiffness-weighted relative distance.

    On interior unknowns the eliminated stiffness matrix is positive
    definite, so even a constant interior shift carries energy (the shift
    has nonzero gradient across the boundary layer).
    """
    d = np.asarray(u) - np.asarray(u_ref)
    ref = float(np.asarray(u_ref) @ (A @ np.asarray(u_ref)))
    if ref <= 0.0:
        raise DataError("reference field has zero energy norm")
    return float(np.sqrt((d @ (A @ d)) / ref))


def deviation(u_traj: np.ndarray, u_mean: np.ndarray, M) -> float:
    """Square root of the relative L2 distance of a realization from the mean."""
    return float(np.sqrt(relative_l2_error(u_traj, u_mean, M)))


# ---------------------------------------------------------------------------
# snapshot windows


def snapshot_windows(case: str, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Offline/online snapshot step indices for the three window variants.

    Case I: both phases use the first half of the interval.  Case II: the
    offline mean snapshots cover the whole interval.  Case III: the online
    update sees the whole interval subsampled to the Case-I count.
    """
    half = steps // 2
    if half < 1:
        raise ConfigurationError("need at least 2 steps for snapshot windows")
    first_half = np.arange(1, half + 1)
    full = np.arange(1, steps + 1)
    if case == "I":
        return first_half, first_half
    if case == "II":
        return full, first_half
    if case == "III":
        sparse = np.linspace(1, steps, half).round().astype(int)
        return first_half, np.unique(sparse)
    raise ConfigurationError(f"unknown snapshot case {case!r}; use I, II or III")


# ---------------------------------------------------------------------------
# synthetic permeability


def synthetic_permeability(mesh: StructuredMesh, background: float = 1.0,
                           channels: list[dict] | tuple = (),
                           inclusions: list[dict] | tuple = ()) -> PermeabilityField:
    """Cellwise raster from a background plus channels and box inclusions.

    Channels are horizontal bands of given `value`, centered at `y_center`
    with `thickness`, optionally meandering as a sine of `amplitude` and
    `period` in x.  Inclusions are axis-aligned boxes.  Cell membership is
    decided at cell centers.
    """
    if background <= 0:
        raise DataError("background permeability must be positive")
    nx, ny = mesh.nx_fine, mesh.ny_fine
    cx = (np.arange(nx) + 0.5) * mesh.hx
    cy = (np.arange(ny) + 0.5) * mesh.hy
    X, Y = np.meshgrid(cx, cy)
    values = np.full((ny, nx), float(background))
    for ch in channels:
        value = float(ch["value"])
        if value <= 0:
            raise DataError("channel permeability must be positive")
        center = ch["y_center"] + ch.get("amplitude", 0.0) * np.sin(
            2.0 * np.pi * X / ch.get("period", 1.0)
        )
        mask = np.abs(Y - center) <= ch["thickness"] / 2.0
        values[mask] = value
    for box in inclusions:
        value = float(box["value"])
        if value <= 0:
            raise DataError("inclusion permeability must be positive")
        mask = (
            (X >= box["x0"]) & (X <= box["x1"]) & (Y >= box["y0"]) & (Y <= box["y1"])
        )
        values[mask] = value
    return PermeabilityField(values)


DEFAULT_CHANNEL_SPEC = {
    "background": 1.0,
    "channels": [
        {"y_center": 0.22, "thickness": 0.05, "value": 800.0, "amplitude": 0.06, "period": 0.9},
        {"y_center": 0.55, "thickness": 0.04, "value": 300.0, "amplitude": 0.04, "period": 0.5},
        {"y_center": 0.80, "thickness": 0.05, "value": 1000.0, "amplitude": 0.05, "period": 0.7},
    ],
    "inclusions": [
        {"x0": 0.10, "x1": 0.22, "y0": 0.35, "y1": 0.47, "value": 500.0},
        {"x0": 0.62, "x1": 0.74, "y0": 0.06, "y1": 0.16, "value": 400.0},
        {"x0": 0.40, "x1": 0.50, "y0": 0.62, "y1": 0.72, "value": 600.0},
    ],
}


# ---------------------------------------------------------------------------
# initial conditions


def make_initial_condition(name: str, amplitude: float, mesh: StructuredMesh) -> np.ndarray:
    xy = mesh.node_xy
    if name == "sine_product":
        return amplitude * np.sin(2 * np.pi * xy[:, 0]) * np.sin(2 * np.pi * xy[:, 1])
    if name == "constant":
        return np.full(mesh.n_nodes, float(amplitude))
    raise ConfigurationError(f"unknown initial condition {name!r}")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    nx_fine: int
    ny_fine: int
    nx_coarse: int
    ny_coarse: int
    permeability_source: str = "synthetic"
    permeability_path: str | None = None
    permeability_spec: dict = dc_field(default_factory=lambda: dict(DEFAULT_CHANNEL_SPEC))
    n_local: int = 4
    layers: int = 4
    final_time: float = 1.0
    steps: int = 100
    drift_name: str = "scaled_cos"
    drift_params: dict = dc_field(default_factory=lambda: {"amplitude": 10.0})
    diffusion_name: str = "zero"
    diffusion_params: dict = dc_field(default_factory=dict)
    initial_name: str = "sine_product"
    initial_amplitude: float = 1.0
    noise_kind: str = "scalar"
    noise_q: float = 1.0
    noise_alpha: float = 0.0005
    noise_j1: int = 16
    noise_j2: int = 16
    rom_m_drift: int = 30
    rom_m_noise: int = 30
    rom_case: str = "I"
    offline_trajectories: int = 0
    heldout_trajectories: int = 1
    seed: int = 0
    modes: tuple = ("fine-reference", "ms-newton")
    workers: int = 1
    include_deterministic: bool = False
    coupled_enabled: bool = False
    coupled_theta: float = 10.0
    coupled_sigma: float = 1.0 / np.sqrt(0.1)
    coupled_v_initial: float = 2.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 25

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for mode in self.modes:
            if mode not in SOLVER_MODES:
                raise ConfigurationError(f"unknown solver mode {mode!r}")
        if self.rom_case not in ("I", "II", "III"):
            raise ConfigurationError(f"snapshot case must be I/II/III, got {self.rom_case!r}")
        needs_rom = any(m.startswith("ms-deim") for m in self.modes)
        if needs_rom and self.offline_trajectories < 1:
            raise ConfigurationError("interpolation modes need offline_trajectories >= 1")
        if self.permeability_source not in ("synthetic", "file"):
            raise ConfigurationError("permeability source must be 'synthetic' or 'file'")
        if self.permeability_source == "file" and not self.permeability_path:
            raise ConfigurationError("permeability source 'file' needs a path")
        if self.noise_kind not in ("scalar", "q_wiener"):
            raise ConfigurationError("noise kind must be 'scalar' or 'q_wiener'")
        # instantiating validates the registry names and parameters up front
        make_nonlinearity(self.drift_name, **self.drift_params)
        make_nonlinearity(self.diffusion_name, **self.diffusion_params)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        def section(name: str) -> dict:
            value = raw.get(name, {})
            if not isinstance(value, dict):
                raise ConfigurationError(f"config section [{name}] must be a table")
            return value

        mesh = section("mesh")
        try:
            kwargs = dict(
                nx_fine=int(mesh["nx_fine"]),
                ny_fine=int(mesh["ny_fine"]),
                nx_coarse=int(mesh["nx_coarse"]),
                ny_coarse=int(mesh["ny_coarse"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"config [mesh] is missing key {exc}") from exc
        perm = section("permeability")
        if perm:
            kwargs["permeability_source"] = perm.get("source", "synthetic")
            kwargs["permeability_path"] = perm.get("path")
            spec = {k: perm[k] for k in ("background", "channels", "inclusions") if k in perm}
            if spec:
                kwargs["permeability_spec"] = spec
        space = section("space")
        kwargs["n_local"] = int(space.get("n_local", 4))
        kwargs["layers"] = int(space.get("layers", 4))
        tgrid = section("time")
        kwargs["final_time"] = float(tgrid.get("final_time", 1.0))
        kwargs["steps"] = int(tgrid.get("steps", 100))
        drift = section("drift")
        if drift:
            kwargs["drift_name"] = drift.get("name", "scaled_cos")
            kwargs["drift_params"] = drift.get("params", {})
        diffusion = section("diffusion")
        if diffusion:
            kwargs["diffusion_name"] = diffusion.get("name", "zero")
            kwargs["diffusion_params"] = diffusion.get("params", {})
        initial = section("initial")
        if initial:
            kwargs["initial_name"] = initial.get("name", "sine_product")
            kwargs["initial_amplitude"] = float(initial.get("amplitude", 1.0))
        noise = section("noise")
        if noise:
            kwargs["noise_kind"] = noise.get("kind", "scalar")
            kwargs["noise_q"] = float(noise.get("q", 1.0))
            kwargs["noise_alpha"] = float(noise.get("alpha", 0.0005))
            kwargs["noise_j1"] = int(noise.get("j1", 16))
            kwargs["noise_j2"] = int(noise.get("j2", 16))
        rom = section("rom")
        if rom:
            kwargs["rom_m_drift"] = int(rom.get("m_drift", 30))
            kwargs["rom_m_noise"] = int(rom.get("m_noise", rom.get("m_drift", 30)))
            kwargs["rom_case"] = rom.get("case", "I")
            kwargs["offline_trajectories"] = int(rom.get("offline_trajectories", 0))
        run = section("run")
        if run:
            kwargs["heldout_trajectories"] = int(run.get("heldout_trajectories", 1))
            kwargs["seed"] = int(run.get("seed", 0))
            kwargs["modes"] = tuple(run.get("modes", ["fine-reference", "ms-newton"]))
            kwargs["workers"] = int(run.get("workers", 1))
            kwargs["include_deterministic"] = bool(run.get("include_deterministic", False))
        coupled = section("coupled")
        if coupled:
            kwargs["coupled_enabled"] = bool(coupled.get("enabled", False))
            kwargs["coupled_theta"] = float(coupled.get("theta", 10.0))
            kwargs["coupled_sigma"] = float(coupled.get("sigma", 1.0 / np.sqrt(0.1)))
            kwargs["coupled_v_initial"] = float(coupled.get("v_initial", 2.0))
        newton = section("newton")
        if newton:
            kwargs["newton_tol"] = float(newton.get("tol", 1e-10))
            kwargs["newton_max_iter"] = int(newton.get("max_iter", 25))
        return cls(**kwargs)

    def noise_model(self) -> NoiseModel:
        if self.noise_kind == "scalar":
            return ScalarBrownian(q=self.noise_q, seed=self.seed)
        return QWienerField(alpha=self.noise_alpha, j1=self.noise_j1,
                            j2=self.noise_j2, seed=self.seed)


# ---------------------------------------------------------------------------
# experiment runner


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path
    modes: tuple
    heldout_ids: list[int]
    curves: dict           # (mode, tid) -> dict of per-step arrays (u errors)
    v_curves: dict         # same for the particle field in coupled runs
    final_rel_l2: dict     # mode -> {tid: final-time value}
    rel_l2_at: dict        # mode -> {tid: full per-step array}
    timings: dict
    basis_diagnostics: dict
    failures: dict


def _build_permeability(config: ExperimentConfig, mesh: StructuredMesh) -> PermeabilityField:
    if config.permeability_source == "file":
        return load_permeability(config.permeability_path, mesh)
    return synthetic_permeability(mesh, **config.permeability_spec)


def build_problem(config: ExperimentConfig, ops: OperatorSet,
                  space: MultiscaleSpace | None,
                  deim: DeimSetup | None = None) -> Problem:
    mesh = ops.mesh
    drift = make_nonlinearity(config.drift_name, **config.drift_params)
    diffusion = make_nonlinearity(config.diffusion_name, **config.diffusion_params)
    u0 = make_initial_condition(config.initial_name, config.initial_amplitude, mesh)
    coupled = None
    if config.coupled_enabled:
        coupled = CoupledConfig(
            theta=config.coupled_theta,
            sigma=config.coupled_sigma,
            v0=np.full(ops.interior.size, config.coupled_v_initial),
        )
    return Problem.build(
        ops,
        space,
        drift=drift,
        diffusion=diffusion,
        u0_full=u0,
        grid=TimeGrid(config.final_time, config.steps),
        newton=NewtonConfig(config.newton_tol, config.newton_max_iter),
        deim=deim,
        coupled=coupled,
    )


def build_offline_rom(config: ExperimentConfig, problem: Problem,
                      noise: NoiseModel, mesh: StructuredMesh,
                      workers: int = 1, archive_dir: Path | None = None) -> DeimSetup:
    """Mean-of-ensemble snapshots -> offline interpolation models + window spec."""
    offline_window, online_window = snapshot_windows(config.rom_case, config.steps)
    ids = list(range(config.offline_trajectories))
    times = problem.grid.times

    def one(tid: int):
        path = sample_path(noise, mesh, times, tid)
        res = run_trajectory(problem, path, "ms-newton")
        out = [res.fine_states(problem)]
        out.append(res.v_states if res.v_states is not None else None)
        return out

    # single-threaded BLAS inside worker threads: concurrent multithreaded
    # kernels change their blocking with pool contention, which would make
    # results depend on the worker count
    with threadpool_limits(limits=1):
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(one, ids))
    states = np.stack([r[0] for r in results])
    mean_traj = mean_states(states)
    aux_traj = None
    if results[0][1] is not None:
        aux_traj = mean_states(np.stack([r[1] for r in results]))

    sel = offline_window
    aux_sel = None if aux_traj is None else aux_traj[sel]
    f_snap = nonlinear_snapshots(mean_traj[sel], problem.drift, aux_sel)
    drift_model, _ = build_offline_model(f_snap, config.rom_m_drift)
    noise_model = None
    if not problem.diffusion.is_zero:
        g_snap = nonlinear_snapshots(mean_traj[sel], problem.diffusion, aux_sel)
        noise_model, _ = build_offline_model(g_snap, config.rom_m_noise)
        if archive_dir is not None:
            save_snapshots(archive_dir / "snapshots_noise.npz", g_snap, sel,
                           "mean-of-trajectories",
                           {"nonlinearity": problem.diffusion.name})
    if archive_dir is not None:
        save_snapshots(archive_dir / "snapshots_drift.npz", f_snap, sel,
                       "mean-of-trajectories", {"nonlinearity": problem.drift.name})
    return DeimSetup(drift_model=drift_model, noise_model=noise_model,
                     online_window=online_window)


def _csv_write(path: Path, times: np.ndarray, columns: dict[str, np.ndarray]) -> None:
    names = ["step", "t", "rel_l2", "rel_energy", "deviation"]
    lines = ["step,t,rel_l2,rel_energy,deviation"]
    n = times.size
    for k in range(n):
        row = [str(k), _fmt(times[k])]
        for name in names[2:]:
            row.append(_fmt(columns[name][k]))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return "%.17g" % x


def _error_columns(fields: np.ndarray, ref: np.ndarray | None,
                   mean_ref: np.ndarray | None, M, A) -> dict[str, np.ndarray]:
    n = fields.shape[0]
    out = {
        "rel_l2": np.full(n, np.nan),
        "rel_energy": np.full(n, np.nan),
        "deviation": np.full(n, np.nan),
    }
    for k in range(n):
        if ref is not None:
            out["rel_l2"][k] = relative_l2_error(fields[k], ref[k], M)
            out["rel_energy"][k] = relative_energy_error(fields[k], ref[k], A)
        if ref is not None and mean_ref is not None:
            out["deviation"][k] = deviation(ref[k], mean_ref[k], M)
    return out


def run_experiment(config: ExperimentConfig, out_dir, workers: int | None = None) -> ExperimentResult:
    """Run all requested solver modes over shared noise paths; export results."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = config.workers if workers is None else workers
    timings: dict[str, float] = {}
    failures: dict = {}

    mesh = build_mesh(config.nx_fine, config.ny_fine, config.nx_coarse, config.ny_coarse)
    kappa = _build_permeability(config, mesh)
    t0 = time.perf_counter()
    ops = build_operators(mesh, kappa)
    timings["assembly"] = time.perf_counter() - t0

    needs_space = any(m != "fine-reference" for m in config.modes)
    space = None
    basis_diag: dict = {}
    if needs_space:
        t0 = time.perf_counter()
        cache = out_dir / "basis_cache.npz"
        if cache.exists():
            space = load_basis(cache, mesh, kappa)
        else:
            space = build_multiscale_space(mesh, kappa, config.n_local, config.layers)
            save_basis(cache, space, mesh, kappa)
        timings["basis_build"] = time.perf_counter() - t0
        basis_diag = {
            "n_columns": space.n_columns,
            "lambda_min_discarded": space.lambda_min_discarded,
            "kappa_contrast": kappa.contrast,
        }

    noise = config.noise_model()
    base_problem = build_problem(config, ops, space)

    deim = None
    needs_rom = any(m.startswith("ms-deim") for m in config.modes)
    if needs_rom:
        t0 = time.perf_counter()
        deim = build_offline_rom(config, base_problem, noise, mesh,
                                 workers=workers, archive_dir=out_dir)
        timings["offline_rom"] = time.perf_counter() - t0
    problem = build_problem(config, ops, space, deim=deim)

    k_off = config.offline_trajectories
    heldout = list(range(k_off, k_off + config.heldout_trajectories))
    times_arr = problem.grid.times
    mode_times: dict[str, dict[str, float]] = {m: {} for m in config.modes}

    def run_one(tid: int):
        path = sample_path(noise, mesh, times_arr, tid)
        per_mode = {}
        errs = {}
        for mode in config.modes:
            try:
                res = run_trajectory(problem, path, mode)
                per_mode[mode] = res
            except Exception as exc:  # recorded per trajectory, run continues
                errs[mode] = repr(exc)
        return tid, per_mode, errs

    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            runs = list(pool.map(run_one, heldout))
    timings["trajectories"] = time.perf_counter() - t0

    results_by_tid = {}
    for tid, per_mode, errs in runs:
        results_by_tid[tid] = per_mode
        if errs:
            failures[tid] = errs

    fine_by_tid = {
        tid: per["fine-reference"].fine_states(problem)
        for tid, per in results_by_tid.items()
        if "fine-reference" in per
    }
    mean_fine = None
    if fine_by_tid:
        mean_fine = np.mean(np.stack([fine_by_tid[t] for t in sorted(fine_by_tid)]), axis=0)
    mean_fine_v = None
    if config.coupled_enabled and fine_by_tid:
        v_stack = [results_by_tid[t]["fine-reference"].v_states for t in sorted(fine_by_tid)]
        mean_fine_v = np.mean(np.stack(v_stack), axis=0)

    M, A = problem.M_int, problem.A_int
    curves: dict = {}
    v_curves: dict = {}
    final_rel_l2: dict = {m: {} for m in config.modes}
    rel_l2_at: dict = {m: {} for m in config.modes}
    for tid in heldout:
        per_mode = results_by_tid.get(tid, {})
        ref = fine_by_tid.get(tid)
        for mode, res in sorted(per_mode.items()):
            fields = res.fine_states(problem)
            cols = _error_columns(fields, ref, mean_fine, M, A)
            curves[(mode, tid)] = cols
            _csv_write(out_dir / f"errors_{mode}_{tid:04d}.csv", times_arr, cols)
            np.save(out_dir / f"final_{mode}_{tid:04d}.npy", ops.expand(fields[-1]))
            if ref is not None:
                final_rel_l2[mode][tid] = cols["rel_l2"][-1]
                rel_l2_at[mode][tid] = cols["rel_l2"]
            if config.coupled_enabled and res.v_states is not None:
                ref_v = (results_by_tid[tid]["fine-reference"].v_states
                         if "fine-reference" in per_mode else None)
                vcols = _error_columns(res.v_states, ref_v, mean_fine_v, M, A)
                v_curves[(mode, tid)] = vcols
                _csv_write(out_dir / f"errors_v_{mode}_{tid:04d}.csv", times_arr, vcols)
        for mode, res in per_mode.items():
            for phase, sec in res.timings.items():
                mode_times[mode][phase] = mode_times[mode].get(phase, 0.0) + sec

    if mean_fine is not None and len(fine_by_tid) > 1:
        for mode in config.modes:
            stack = [results_by_tid[t][mode].fine_states(problem)
                     for t in sorted(fine_by_tid) if mode in results_by_tid[t]]
            if stack:
                mode_mean = np.mean(np.stack(stack), axis=0)
                cols = _error_columns(mode_mean, mean_fine, None, M, A)
                _csv_write(out_dir / f"errors_mean_{mode}.csv", times_arr, cols)

    if config.include_deterministic and not config.coupled_enabled:
        det_results = {}
        for mode in config.modes:
            try:
                det_results[mode] = run_trajectory(problem, None, mode)
            except Exception as exc:
                failures[f"det:{mode}"] = repr(exc)
        det_ref = (det_results["fine-reference"].fine_states(problem)
                   if "fine-reference" in det_results else None)
        for mode, res in sorted(det_results.items()):
            cols = _error_columns(res.fine_states(problem), det_ref, None, M, A)
            _csv_write(out_dir / f"errors_det_{mode}.csv", times_arr, cols)

    timings["per_mode"] = mode_times
    (out_dir / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True))
    summary = {
        "modes": list(config.modes),
        "heldout_ids": heldout,
        "final_rel_l2": {m: {str(t): _fmt(v) for t, v in d.items()}
                         for m, d in final_rel_l2.items()},
        "failures": {str(k): v for k, v in failures.items()},
        "basis": basis_diag,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))

    if failures and all(not per for per in results_by_tid.values()):
        raise ConfigurationError(f"all trajectories failed: {failures}")

    return ExperimentResult(
        config=config,
        out_dir=out_dir,
        modes=config.modes,
        heldout_ids=heldout,
        curves=curves,
        v_curves=v_curves,
        final_rel_l2=final_rel_l2,
        rel_l2_at=rel_l2_at,
        timings=timings,
        basis_diagnostics=basis_diag,
        failures=failures,
    )


def report(out_dir) -> str:
    """Human-readable summary of a result directory."""
    out_dir = Path(out_dir)
    summary = json.loads((out_dir / "summary.json").read_text())
    timings = json.loads((out_dir / "timings.json").read_text())
    lines = [f"results in {out_dir}"]
    lines.append(f"modes: {', '.join(summary['modes'])}")
    lines.append(f"held-out trajectories: {len(summary['heldout_ids'])}")
    for mode, vals in summary["final_rel_l2"].items():
        if vals:
            arr = np.array([float(v) for v in vals.values()])
            lines.append(
                f"  {mode:16s} final rel L2: mean {arr.mean():.6e}  "
                f"min {arr.min():.6e}  max {arr.max():.6e}"
            )
    per_mode = timings.get("per_mode", {})
    for mode, phases in per_mode.items():
        if phases:
            desc = "  ".join(f"{k}={v:.3f}s" for k, v in sorted(phases.items()))
            lines.append(f"  {mode:16s} {desc}")
    for phase in ("assembly", "basis_build", "offline_rom", "trajectories"):
        if phase in timings:
            lines.append(f"  {phase}: {timings[phase]:.3f}s")
    if summary.get("failures"):
        lines.append(f"  failures: {summary['failures']}")
    return "\n".join(lines)

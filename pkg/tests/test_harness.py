import json
from pathlib import Path

import numpy as np
import pytest

from msrom import (
    ConfigurationError,
    DataError,
    ExperimentConfig,
    build_mesh,
    build_operators,
    deviation,
    relative_energy_error,
    relative_l2_error,
    report,
    run_experiment,
    sample_path,
    snapshot_windows,
    synthetic_permeability,
)
from msrom.harness import DEFAULT_CHANNEL_SPEC

GOLDEN_RASTER_SHA256 = "341389fd7e5f2e5fc90c66752a910b414016e9db96b6f2ab81d8c3b1fb41ab00"


# --- metrics ------------------------------------------------------------------

@pytest.fixture(scope="module")
def weighted_ops():
    mesh = build_mesh(8, 8, 2, 2)
    rng = np.random.default_rng(0)
    ops = build_operators(mesh, rng.uniform(0.5, 20.0, mesh.n_cells))
    return ops


def test_error_identity_and_homogeneity(weighted_ops):
    ops = weighted_ops
    rng = np.random.default_rng(1)
    u = rng.standard_normal(ops.interior.size)
    assert relative_l2_error(u, u, ops.M_int) == 0.0
    assert np.isclose(relative_l2_error(2 * u, u, ops.M_int), 1.0, atol=1e-12)
    assert relative_energy_error(u, u, ops.A_int) == 0.0


def test_errors_match_dense_quadrature_oracle(weighted_ops):
    ops = weighted_ops
    rng = np.random.default_rng(2)
    u = rng.standard_normal(ops.interior.size)
    v = rng.standard_normal(ops.interior.size)
    M = ops.M_int.toarray()
    A = ops.A_int.toarray()
    l2 = np.sqrt((u - v) @ M @ (u - v) / (v @ M @ v))
    en = np.sqrt((u - v) @ A @ (u - v) / (v @ A @ v))
    assert np.isclose(relative_l2_error(u, v, ops.M_int), l2, atol=1e-12)
    assert np.isclose(relative_energy_error(u, v, ops.A_int), en, atol=1e-12)


def test_constant_interior_shift_carries_energy(weighted_ops):
    # the eliminated stiffness matrix is definite: an interior-constant shift
    # has gradient across the boundary layer, hence nonzero energy error
    ops = weighted_ops
    rng = np.random.default_rng(3)
    u = rng.standard_normal(ops.interior.size)
    shifted = u + 1.0
    assert relative_energy_error(shifted, u, ops.A_int) > 0.01


def test_zero_reference_rejected(weighted_ops):
    ops = weighted_ops
    u = np.ones(ops.interior.size)
    with pytest.raises(DataError):
        relative_l2_error(u, np.zeros_like(u), ops.M_int)
    with pytest.raises(DataError):
        deviation(u, np.zeros_like(u), ops.M_int)


def test_deviation_is_square_root_of_relative_distance(weighted_ops):
    ops = weighted_ops
    M = ops.M_int
    u_mean = np.ones(ops.interior.size)
    assert deviation(u_mean, u_mean, M) == 0.0
    # build a perturbation with relative M-distance exactly 0.25
    d = np.zeros_like(u_mean)
    d[0] = 1.0
    scale = 0.25 * np.sqrt(u_mean @ (M @ u_mean)) / np.sqrt(d @ (M @ d))
    dev = deviation(u_mean + scale * d, u_mean, M)
    assert np.isclose(dev, 0.5, atol=1e-12)


# --- snapshot windows ------------------------------------------------------------

def test_snapshot_window_cases():
    off1, on1 = snapshot_windows("I", 100)
    assert off1.tolist() == list(range(1, 51)) and on1.tolist() == list(range(1, 51))
    off2, on2 = snapshot_windows("II", 100)
    assert off2.tolist() == list(range(1, 101)) and on2.tolist() == on1.tolist()
    off3, on3 = snapshot_windows("III", 100)
    assert off3.tolist() == off1.tolist()
    assert len(on3) == 50 and on3.min() >= 1 and on3.max() == 100
    with pytest.raises(ConfigurationError):
        snapshot_windows("IV", 100)


# --- synthetic permeability ---------------------------------------------------

def test_empty_spec_gives_constant_field():
    mesh = build_mesh(6, 6, 2, 2)
    field = synthetic_permeability(mesh, background=2.5)
    assert np.all(field.values == 2.5)
    assert field.contrast == 1.0


def test_inclusion_contrast_by_construction():
    mesh = build_mesh(10, 10, 2, 2)
    field = synthetic_permeability(
        mesh, background=1.0,
        inclusions=[{"x0": 0.3, "x1": 0.6, "y0": 0.3, "y1": 0.6, "value": 1e4}],
    )
    assert field.contrast == 1e4


def test_channel_spec_reproduces_golden_checksum():
    mesh = build_mesh(20, 20, 4, 4)
    field = synthetic_permeability(mesh, **DEFAULT_CHANNEL_SPEC)
    assert field.checksum() == GOLDEN_RASTER_SHA256


def test_nonpositive_synthetic_values_rejected():
    mesh = build_mesh(4, 4, 2, 2)
    with pytest.raises(DataError):
        synthetic_permeability(mesh, background=-1.0)
    with pytest.raises(DataError):
        synthetic_permeability(mesh, channels=[{"y_center": 0.5, "thickness": 0.2, "value": 0.0}])


# --- configuration -----------------------------------------------------------

CONFIG_TOML = """
[mesh]
nx_fine = 10
ny_fine = 10
nx_coarse = 2
ny_coarse = 2

[space]
n_local = 2
layers = 1

[time]
final_time = 0.1
steps = 10

[drift]
name = "scaled_cos"
params = { amplitude = 10.0 }

[diffusion]
name = "quadratic_plus"
params = { offset = 10.0 }

[noise]
kind = "scalar"
q = 0.01

[rom]
m_drift = 4
case = "I"
offline_trajectories = 3

[run]
heldout_trajectories = 2
seed = 5
modes = ["fine-reference", "ms-newton", "ms-deim-offline", "ms-deim-online"]
"""


def test_config_from_toml(tmp_path):
    fn = tmp_path / "exp.toml"
    fn.write_text(CONFIG_TOML)
    cfg = ExperimentConfig.from_toml(fn)
    assert cfg.nx_fine == 10 and cfg.rom_m_drift == 4
    assert cfg.drift_params == {"amplitude": 10.0}
    assert cfg.modes[-1] == "ms-deim-online"


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(nx_fine=8, ny_fine=8, nx_coarse=2, ny_coarse=2,
                         modes=("warp-drive",))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(nx_fine=8, ny_fine=8, nx_coarse=2, ny_coarse=2,
                         modes=("ms-deim-offline",), offline_trajectories=0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(nx_fine=8, ny_fine=8, nx_coarse=2, ny_coarse=2,
                         rom_case="V")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(nx_fine=8, ny_fine=8, nx_coarse=2, ny_coarse=2,
                         drift_name="not-registered")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"mesh": {"nx_fine": 8}})


# --- experiment runner ----------------------------------------------------------

def _stable_config(**overrides):
    base = dict(
        nx_fine=10, ny_fine=10, nx_coarse=2, ny_coarse=2,
        n_local=2, layers=1,
        final_time=0.2, steps=20,
        drift_name="scaled_cos", drift_params={"amplitude": 10.0},
        diffusion_name="quadratic_plus", diffusion_params={"offset": 10.0},
        initial_name="sine_product", initial_amplitude=float(2 * np.pi),
        noise_kind="scalar", noise_q=0.01,
        rom_m_drift=4, rom_m_noise=4, rom_case="I", offline_trajectories=3,
        heldout_trajectories=2, seed=5,
        modes=("fine-reference", "ms-newton", "ms-deim-offline", "ms-deim-online"),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_run_experiment_writes_expected_files(tmp_path):
    cfg = _stable_config(include_deterministic=True)
    res = run_experiment(cfg, tmp_path)
    assert not res.failures
    for mode in cfg.modes:
        for tid in res.heldout_ids:
            assert (tmp_path / f"errors_{mode}_{tid:04d}.csv").exists()
            assert (tmp_path / f"final_{mode}_{tid:04d}.npy").exists()
        assert (tmp_path / f"errors_det_{mode}.csv").exists()
        assert (tmp_path / f"errors_mean_{mode}.csv").exists()
    assert (tmp_path / "timings.json").exists()
    assert (tmp_path / "summary.json").exists()
    assert (tmp_path / "snapshots_drift.npz").exists()
    header = (tmp_path / f"errors_ms-newton_{res.heldout_ids[0]:04d}.csv").read_text()
    assert header.splitlines()[0] == "step,t,rel_l2,rel_energy,deviation"
    # fine reference error against itself is zero at every step
    fine = res.curves[("fine-reference", res.heldout_ids[0])]
    assert np.all(fine["rel_l2"] == 0.0)


def test_rerun_with_different_workers_is_byte_identical(tmp_path):
    cfg = _stable_config()
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(cfg, a, workers=1)
    run_experiment(cfg, b, workers=3)
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs == sorted(p.name for p in b.glob("*.csv"))
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_modes_share_noise_paths(tmp_path):
    # the path consumed by every mode is regenerated from (seed, trajectory id)
    cfg = _stable_config()
    mesh = build_mesh(cfg.nx_fine, cfg.ny_fine, cfg.nx_coarse, cfg.ny_coarse)
    model = cfg.noise_model()
    times = np.linspace(0.0, cfg.final_time, cfg.steps + 1)
    p1 = sample_path(model, mesh, times, 3)
    p2 = sample_path(model, mesh, times, 3)
    assert np.array_equal(p1.increments, p2.increments)


def test_trajectory_failures_recorded_not_fatal(tmp_path):
    cfg = _stable_config(
        drift_name="quadratic_plus", drift_params={"offset": 0.0},
        diffusion_name="zero", diffusion_params={},
        initial_amplitude=50.0,
        final_time=40.0, steps=2,
        modes=("fine-reference", "ms-newton"),
        offline_trajectories=0, rom_m_drift=2, rom_m_noise=2,
        newton_max_iter=2,
    )
    with pytest.raises(ConfigurationError, match="all trajectories failed"):
        run_experiment(cfg, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["failures"]
    assert all("StepError" in v for per in summary["failures"].values() for v in per.values())


def test_deviations_exceed_reduced_model_errors(tmp_path):
    # strong-noise ensemble: trajectory novelty (deviation) dwarfs the
    # reduced-model error on the same trajectories
    cfg = _stable_config(
        noise_q=1.0,
        heldout_trajectories=3,
        modes=("fine-reference", "ms-newton", "ms-deim-offline", "ms-deim-online"),
    )
    res = run_experiment(cfg, tmp_path)
    assert not res.failures
    for tid in res.heldout_ids:
        on = res.curves[("ms-deim-online", tid)]
        assert np.nanmean(on["deviation"][1:]) > np.nanmean(on["rel_l2"][1:])


def test_coupled_experiment_writes_paired_fields(tmp_path):
    cfg = _stable_config(
        drift_name="exp2v_sin", drift_params={"amplitude": 10.0},
        diffusion_name="zero", diffusion_params={},
        initial_name="constant", initial_amplitude=1.0,
        final_time=0.02, steps=20,
        coupled_enabled=True,
        modes=("fine-reference", "ms-newton"),
        offline_trajectories=0,
    )
    res = run_experiment(cfg, tmp_path)
    assert not res.failures
    for tid in res.heldout_ids:
        assert (tmp_path / f"errors_ms-newton_{tid:04d}.csv").exists()
        assert (tmp_path / f"errors_v_ms-newton_{tid:04d}.csv").exists()
    assert ("ms-newton", res.heldout_ids[0]) in res.v_curves


def test_report_summarizes_results(tmp_path):
    cfg = _stable_config()
    run_experiment(cfg, tmp_path)
    text = report(tmp_path)
    assert "ms-newton" in text
    assert "final rel L2" in text


def test_summary_json_contents(tmp_path):
    cfg = _stable_config()
    res = run_experiment(cfg, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["modes"] == list(cfg.modes)
    assert summary["heldout_ids"] == res.heldout_ids
    assert summary["basis"]["n_columns"] == 8

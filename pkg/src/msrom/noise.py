"""Stochastic forcing: scalar Brownian motion and truncated Q-Wiener fields.

The Q = 0.01 / 1 / 100 "covariance coefficient" processes are implemented as
scalar Brownian motion, spatially constant with variance Q*t.  The space-time
field uses the exponential-eigenvalue covariance with complex-exponential
eigenfunctions realified into cosine/sine pairs carrying independent Brownian
coefficients, which preserves the (real part of the) covariance kernel.

Every (seed, trajectory id, step) triple owns an independent substream, so
paths are bit-reproducible regardless of sampling order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import json

import numpy as np

from .errors import ConfigurationError, DataError
from .grid import StructuredMesh

_MODE_MATRIX_CACHE_LIMIT = 4096


@dataclass(frozen=True)
class ScalarBrownian:
    """Spatially constant Brownian motion with Var[W(t)] = q * t."""

    q: float
    seed: int = 0

    def __post_init__(self):
        if self.q <= 0:
            raise ConfigurationError(f"covariance coefficient q must be > 0, got {self.q}")

    kind = "scalar"


@dataclass(frozen=True)
class QWienerField:
    """Truncated Karhunen-Loeve field with eigenvalues exp(-alpha*(j1^2+j2^2))."""

    alpha: float
    j1: int
    j2: int
    a1: float = 1.0
    a2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"decay rate alpha must be > 0, got {self.alpha}")
        if self.j1 <= 0 or self.j1 % 2 or self.j2 <= 0 or self.j2 % 2:
            raise ConfigurationError("truncation orders j1, j2 must be positive and even")

    kind = "q_wiener"

    def mode_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (j1, j2) pairs of the truncation box, fixed order."""
        k1 = np.arange(-self.j1 // 2 + 1, self.j1 // 2 + 1)
        k2 = np.arange(-self.j2 // 2 + 1, self.j2 // 2 + 1)
        K1, K2 = np.meshgrid(k1, k2, indexing="ij")
        return K1.ravel(), K2.ravel()

    def eigenvalues(self) -> np.ndarray:
        k1, k2 = self.mode_indices()
        return np.exp(-self.alpha * (k1.astype(float) ** 2 + k2.astype(float) ** 2))


NoiseModel = ScalarBrownian | QWienerField


@dataclass(frozen=True)
class NoisePath:
    """Per-step increment fields for one trajectory on a uniform time grid."""

    trajectory_id: int
    times: np.ndarray       # M + 1 points
    increments: np.ndarray  # (M, n_nodes)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


def _step_rng(seed: int, trajectory_id: int, step: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trajectory_id, step))
    return np.random.Generator(np.random.PCG64(ss))


def _mode_angles(model: QWienerField, xy: np.ndarray,
                 k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
    return 2.0 * np.pi * (
        np.outer(xy[:, 0], k1) / model.a1 + np.outer(xy[:, 1], k2) / model.a2
    )


@lru_cache(maxsize=8)
def _cached_mode_matrices(model: QWienerField, nx: int, ny: int):
    mesh = StructuredMesh(nx, ny, 1, 1)
    k1, k2 = model.mode_indices()
    theta = _mode_angles(model, mesh.node_xy, k1, k2)
    scale = 1.0 / np.sqrt(model.a1 * model.a2)
    return scale * np.cos(theta), scale * np.sin(theta)


def _field_step_increment(model: QWienerField, mesh: StructuredMesh, dt: float,
                          rng: np.random.Generator,
                          nodes: np.ndarray | None = None) -> np.ndarray:
    """One increment field; draws all modes in fixed order, then projects."""
    k1, k2 = model.mode_indices()
    n_modes = k1.size
    z = rng.standard_normal(2 * n_modes) * np.sqrt(dt)
    amp_cos = np.sqrt(model.eigenvalues()) * z[:n_modes]
    amp_sin = np.sqrt(model.eigenvalues()) * z[n_modes:]
    if nodes is None and n_modes <= _MODE_MATRIX_CACHE_LIMIT:
        cos_mat, sin_mat = _cached_mode_matrices(model, mesh.nx_fine, mesh.ny_fine)
        return cos_mat @ amp_cos + sin_mat @ amp_sin
    xy = mesh.node_xy if nodes is None else mesh.node_xy[nodes]
    out = np.zeros(xy.shape[0])
    scale = 1.0 / np.sqrt(model.a1 * model.a2)
    for lo in range(0, n_modes, _MODE_MATRIX_CACHE_LIMIT):
        hi = min(lo + _MODE_MATRIX_CACHE_LIMIT, n_modes)
        theta = _mode_angles(model, xy, k1[lo:hi], k2[lo:hi])
        out += scale * (np.cos(theta) @ amp_cos[lo:hi] + np.sin(theta) @ amp_sin[lo:hi])
    return out


def _increment_at(model: NoiseModel, mesh: StructuredMesh, dt: float,
                  trajectory_id: int, step: int,
                  nodes: np.ndarray | None = None) -> np.ndarray:
    rng = _step_rng(model.seed, trajectory_id, step)
    if isinstance(model, ScalarBrownian):
        n = mesh.n_nodes if nodes is None else len(nodes)
        return np.full(n, np.sqrt(model.q * dt) * rng.standard_normal())
    return _field_step_increment(model, mesh, dt, rng, nodes)


def sample_path(model: NoiseModel, mesh: StructuredMesh, times: np.ndarray,
                trajectory_id: int) -> NoisePath:
    """Sample all increment fields of one trajectory on a uniform time grid."""
    times = np.asarray(times, dtype=float)
    dts = np.diff(times)
    if dts.size == 0 or not np.allclose(dts, dts[0]):
        raise ConfigurationError("noise sampling requires a uniform time grid")
    increments = np.empty((dts.size, mesh.n_nodes))
    for k in range(dts.size):
        increments[k] = _increment_at(model, mesh, dts[0], trajectory_id, k)
    return NoisePath(trajectory_id=trajectory_id, times=times, increments=increments)


def truncated_trace(model: NoiseModel) -> float:
    """Trace of the truncated covariance (direct summation)."""
    if isinstance(model, ScalarBrownian):
        return model.q
    return float(model.eigenvalues().sum())


def analytic_covariance(model: NoiseModel, mesh: StructuredMesh, dt: float,
                        probe_nodes: np.ndarray) -> np.ndarray:
    """Exact covariance of one increment at the probe nodes."""
    probe_nodes = np.asarray(probe_nodes)
    if isinstance(model, ScalarBrownian):
        return np.full((probe_nodes.size, probe_nodes.size), model.q * dt)
    k1, k2 = model.mode_indices()
    theta = _mode_angles(model, mesh.node_xy[probe_nodes], k1, k2)
    mu = model.eigenvalues()
    scale = dt / (model.a1 * model.a2)
    return scale * (
        (np.cos(theta) * mu) @ np.cos(theta).T + (np.sin(theta) * mu) @ np.sin(theta).T
    )


def default_probe_nodes(mesh: StructuredMesh, count: int = 5) -> np.ndarray:
    """Deterministic interior probe set, spread across the domain."""
    interior = mesh.interior_nodes
    picks = np.linspace(0, interior.size - 1, count).astype(int)
    return interior[picks]


def covariance_check(model: NoiseModel, mesh: StructuredMesh, n_paths: int,
                     dt: float = 0.01,
                     probe_nodes: np.ndarray | None = None) -> float:
    """Max |empirical - analytic| covariance entry over the probe set."""
    if n_paths < 1000:
        raise ConfigurationError("covariance check needs at least 10^3 paths")
    if probe_nodes is None:
        probe_nodes = default_probe_nodes(mesh)
    samples = np.empty((n_paths, len(probe_nodes)))
    for tid in range(n_paths):
        samples[tid] = _increment_at(model, mesh, dt, tid, 0, probe_nodes)
    empirical = (samples.T @ samples) / n_paths  # increments have zero mean
    return float(np.max(np.abs(empirical - analytic_covariance(model, mesh, dt, probe_nodes))))


def save_noise_path(path, model: NoiseModel, mesh: StructuredMesh,
                    noise_path: NoisePath) -> None:
    """Binary archive so reference and reduced runs consume identical noise."""
    header = {
        "kind": model.kind,
        "params": {k: v for k, v in model.__dict__.items()},
        "nx_fine": mesh.nx_fine,
        "ny_fine": mesh.ny_fine,
        "trajectory_id": noise_path.trajectory_id,
    }
    np.savez(
        path,
        header=json.dumps(header, sort_keys=True),
        times=noise_path.times,
        increments=noise_path.increments,
    )


def load_noise_path(path, mesh: StructuredMesh) -> NoisePath:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if (header["nx_fine"], header["ny_fine"]) != (mesh.nx_fine, mesh.ny_fine):
            raise DataError("noise archive grid dims do not match the mesh")
        return NoisePath(
            trajectory_id=int(header["trajectory_id"]),
            times=z["times"],
            increments=z["increments"],
        )

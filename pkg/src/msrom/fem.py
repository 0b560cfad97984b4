"""Fine-grid FEM core: bilinear elements, heterogeneous diffusion, Dirichlet handling.

Permeability rasters are interpreted cellwise (one positive value per fine
cell, used as-is; SPE10-style fields are loaded raw, without a log transform).
All element integrals use 2x2 Gauss quadrature, which is exact for the
bilinear mass matrix and for stiffness with cellwise-constant coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import hashlib

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .grid import StructuredMesh

# 2-point Gauss rule on [0,1]
_GP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GW = np.array([0.5, 0.5])


def _shape_values(xi: float, eta: float) -> np.ndarray:
    """Bilinear shape functions in tensor corner order (00, 10, 01, 11)."""
    return np.array(
        [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta]
    )


def _shape_gradients(xi: float, eta: float) -> np.ndarray:
    """(4, 2) reference gradients (d/dxi, d/deta)."""
    return np.array(
        [
            [-(1 - eta), -(1 - xi)],
            [(1 - eta), -xi],
            [-eta, (1 - xi)],
            [eta, xi],
        ]
    )


def local_matrices(hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    """Element mass and unit-coefficient stiffness on an hx-by-hy cell."""
    m = np.zeros((4, 4))
    k = np.zeros((4, 4))
    for qx, wx in zip(_GP, _GW):
        for qy, wy in zip(_GP, _GW):
            w = wx * wy * hx * hy
            n = _shape_values(qx, qy)
            g = _shape_gradients(qx, qy)
            gx = g[:, 0] / hx
            gy = g[:, 1] / hy
            m += w * np.outer(n, n)
            k += w * (np.outer(gx, gx) + np.outer(gy, gy))
    return m, k


def _assemble(mesh: StructuredMesh, local: np.ndarray, coeff: np.ndarray,
              cells: np.ndarray | None = None) -> sp.csr_matrix:
    """Scatter coeff[c] * local over the given cells into a global CSR matrix."""
    conn = mesh.cell_nodes if cells is None else mesh.cell_nodes[cells]
    c = coeff if cells is None else coeff[cells]
    data = local[None, :, :] * c[:, None, None]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    mat = sp.coo_matrix(
        (data.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
    )
    return mat.tocsr()


def assemble_mass(mesh: StructuredMesh, weight: np.ndarray | None = None,
                  cells: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent mass matrix, optionally with a cellwise-constant weight."""
    m_loc, _ = local_matrices(mesh.hx, mesh.hy)
    if weight is None:
        weight = np.ones(mesh.n_cells)
    return _assemble(mesh, m_loc, np.asarray(weight, dtype=float), cells)


def assemble_stiffness(mesh: StructuredMesh, kappa: np.ndarray,
                       cells: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness matrix with cellwise-constant permeability kappa."""
    kappa = np.asarray(kappa, dtype=float).ravel()
    if kappa.size != mesh.n_cells:
        raise DataError(
            f"kappa has {kappa.size} entries, mesh has {mesh.n_cells} cells"
        )
    if np.any(kappa <= 0):
        raise DataError("permeability must be strictly positive on every cell")
    _, k_loc = local_matrices(mesh.hx, mesh.hy)
    return _assemble(mesh, k_loc, kappa, cells)


@dataclass(frozen=True)
class PermeabilityField:
    """Cellwise-constant permeability raster, shape (ny_fine, nx_fine)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DataError("permeability raster must be 2-dimensional")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise DataError("permeability values must be finite and positive")
        object.__setattr__(self, "values", v)

    @property
    def per_cell(self) -> np.ndarray:
        """Flat per-cell values in global cell order (row-major, x fastest)."""
        return self.values.ravel()

    @property
    def contrast(self) -> float:
        return float(self.values.max() / self.values.min())

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()


def load_permeability(path, mesh: StructuredMesh) -> PermeabilityField:
    """Read a whitespace-separated raster: one line per grid row, bottom row first."""
    values = np.loadtxt(path, dtype=float, ndmin=2)
    if values.shape != (mesh.ny_fine, mesh.nx_fine):
        raise DataError(
            f"raster shape {values.shape} does not match fine grid "
            f"({mesh.ny_fine}, {mesh.nx_fine})"
        )
    return PermeabilityField(values)


def save_permeability(path, field: PermeabilityField) -> None:
    np.savetxt(path, field.values, fmt="%.17g")


@dataclass(frozen=True)
class OperatorSet:
    """Assembled fine operators plus the Dirichlet boundary index set."""

    mesh: StructuredMesh
    M: sp.csr_matrix
    A: sp.csr_matrix
    boundary: np.ndarray
    interior: np.ndarray

    @cached_property
    def M_int(self) -> sp.csr_matrix:
        return self.M[self.interior][:, self.interior].tocsr()

    @cached_property
    def A_int(self) -> sp.csr_matrix:
        return self.A[self.interior][:, self.interior].tocsr()

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[..., self.interior]

    def expand(self, interior_values: np.ndarray) -> np.ndarray:
        """Zero-pad an interior vector (or stack of them) to all fine nodes."""
        interior_values = np.asarray(interior_values)
        full = np.zeros(interior_values.shape[:-1] + (self.mesh.n_nodes,))
        full[..., self.interior] = interior_values
        return full


def build_operators(mesh: StructuredMesh, kappa: np.ndarray | PermeabilityField) -> OperatorSet:
    if isinstance(kappa, PermeabilityField):
        kappa = kappa.per_cell
    return OperatorSet(
        mesh=mesh,
        M=assemble_mass(mesh),
        A=assemble_stiffness(mesh, kappa),
        boundary=mesh.boundary_nodes,
        interior=mesh.interior_nodes,
    )


def apply_dirichlet(ops: OperatorSet, rhs: np.ndarray | None = None):
    """Eliminate boundary rows/columns; returns (M_int, A_int[, rhs_int])."""
    if rhs is None:
        return ops.M_int, ops.A_int
    return ops.M_int, ops.A_int, np.asarray(rhs)[ops.interior]


def solve_reference(problem, noise_path):
    """Fine-grid reference trajectory with the shared full-implicit scheme."""
    from .integrator import run_trajectory

    return run_trajectory(problem, noise_path, "fine-reference")

"""Structured fine/coarse grids on the unit square.

Fine and coarse grids are uniform tensor grids on D = [0,1]^2 with the fine
grid an integer refinement of the coarse one.  Node and cell numbering is
row-major with x running fastest; this ordering is fixed globally so that
assembled operators and dumped files are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class StructuredMesh:
    """Conforming fine/coarse rectangular grids with block membership maps."""

    nx_fine: int
    ny_fine: int
    nx_coarse: int
    ny_coarse: int

    @property
    def n_nodes(self) -> int:
        return (self.nx_fine + 1) * (self.ny_fine + 1)

    @property
    def n_cells(self) -> int:
        return self.nx_fine * self.ny_fine

    @property
    def n_blocks(self) -> int:
        return self.nx_coarse * self.ny_coarse

    @property
    def n_coarse_nodes(self) -> int:
        return (self.nx_coarse + 1) * (self.ny_coarse + 1)

    @property
    def hx(self) -> float:
        return 1.0 / self.nx_fine

    @property
    def hy(self) -> float:
        return 1.0 / self.ny_fine

    @property
    def cells_per_block_x(self) -> int:
        return self.nx_fine // self.nx_coarse

    @property
    def cells_per_block_y(self) -> int:
        return self.ny_fine // self.ny_coarse

    @cached_property
    def node_xy(self) -> np.ndarray:
        """(n_nodes, 2) coordinates, node id = j*(nx_fine+1) + i."""
        x = np.linspace(0.0, 1.0, self.nx_fine + 1)
        y = np.linspace(0.0, 1.0, self.ny_fine + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Sorted ids of nodes with a coordinate on {0, 1}."""
        i = np.arange(self.n_nodes) % (self.nx_fine + 1)
        j = np.arange(self.n_nodes) // (self.nx_fine + 1)
        on_bnd = (i == 0) | (i == self.nx_fine) | (j == 0) | (j == self.ny_fine)
        return np.flatnonzero(on_bnd)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 4) corner node ids in tensor order (00, 10, 01, 11)."""
        cx = np.arange(self.n_cells) % self.nx_fine
        cy = np.arange(self.n_cells) // self.nx_fine
        n00 = cy * (self.nx_fine + 1) + cx
        return np.column_stack(
            [n00, n00 + 1, n00 + self.nx_fine + 1, n00 + self.nx_fine + 2]
        )

    @cached_property
    def cell_block(self) -> np.ndarray:
        """Coarse block id owning each fine cell."""
        cx = np.arange(self.n_cells) % self.nx_fine
        cy = np.arange(self.n_cells) // self.nx_fine
        bx = cx // self.cells_per_block_x
        by = cy // self.cells_per_block_y
        return by * self.nx_coarse + bx

    def block_cells(self, block_index: int) -> np.ndarray:
        """Fine cell ids tiling coarse block `block_index`."""
        bx, by = self._block_xy(block_index)
        cx = np.arange(bx * self.cells_per_block_x, (bx + 1) * self.cells_per_block_x)
        cy = np.arange(by * self.cells_per_block_y, (by + 1) * self.cells_per_block_y)
        CX, CY = np.meshgrid(cx, cy)
        return (CY * self.nx_fine + CX).ravel()

    def block_nodes(self, block_index: int) -> np.ndarray:
        """Fine node ids of the closed coarse block (includes its boundary)."""
        bx, by = self._block_xy(block_index)
        return self._rect_nodes(
            bx * self.cells_per_block_x,
            (bx + 1) * self.cells_per_block_x,
            by * self.cells_per_block_y,
            (by + 1) * self.cells_per_block_y,
        )

    def _block_xy(self, block_index: int) -> tuple[int, int]:
        if not 0 <= block_index < self.n_blocks:
            raise ConfigurationError(
                f"block index {block_index} outside 0..{self.n_blocks - 1}"
            )
        return block_index % self.nx_coarse, block_index // self.nx_coarse

    def _rect_nodes(self, ix0: int, ix1: int, iy0: int, iy1: int) -> np.ndarray:
        """Node ids of the closed fine-node rectangle [ix0..ix1] x [iy0..iy1]."""
        i = np.arange(ix0, ix1 + 1)
        j = np.arange(iy0, iy1 + 1)
        I, J = np.meshgrid(i, j)
        return (J * (self.nx_fine + 1) + I).ravel()


@dataclass(frozen=True)
class OversampleRegion:
    """A coarse block enlarged by `layers` coarse layers, clipped to D."""

    block_index: int
    layers: int
    # coarse-block extent (inclusive) after clipping
    bx0: int
    bx1: int
    by0: int
    by1: int
    nodes: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)

    @property
    def n_blocks_spanned(self) -> tuple[int, int]:
        return self.bx1 - self.bx0 + 1, self.by1 - self.by0 + 1

    def contains_block(self, mesh: StructuredMesh, block_index: int) -> bool:
        bx, by = block_index % mesh.nx_coarse, block_index // mesh.nx_coarse
        return self.bx0 <= bx <= self.bx1 and self.by0 <= by <= self.by1

    def blocks(self, mesh: StructuredMesh) -> np.ndarray:
        """Ids of the coarse blocks covered by the region."""
        bx = np.arange(self.bx0, self.bx1 + 1)
        by = np.arange(self.by0, self.by1 + 1)
        BX, BY = np.meshgrid(bx, by)
        return (BY * mesh.nx_coarse + BX).ravel()


def build_mesh(nx_fine: int, ny_fine: int, nx_coarse: int, ny_coarse: int) -> StructuredMesh:
    """Build conforming fine/coarse grids; fine counts must tile the coarse ones."""
    for name, v in (
        ("nx_fine", nx_fine),
        ("ny_fine", ny_fine),
        ("nx_coarse", nx_coarse),
        ("ny_coarse", ny_coarse),
    ):
        if v <= 0:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    if nx_fine % nx_coarse != 0 or ny_fine % ny_coarse != 0:
        raise ConfigurationError(
            f"fine grid {nx_fine}x{ny_fine} is not an integer refinement of "
            f"coarse grid {nx_coarse}x{ny_coarse}"
        )
    return StructuredMesh(nx_fine, ny_fine, nx_coarse, ny_coarse)


def oversample(mesh: StructuredMesh, block_index: int, m: int) -> OversampleRegion:
    """Extend coarse block `block_index` by m coarse layers, clipped to D."""
    if m < 0:
        raise ConfigurationError(f"oversampling layers must be >= 0, got {m}")
    bx, by = mesh._block_xy(block_index)
    bx0, bx1 = max(0, bx - m), min(mesh.nx_coarse - 1, bx + m)
    by0, by1 = max(0, by - m), min(mesh.ny_coarse - 1, by + m)

    ix0 = bx0 * mesh.cells_per_block_x
    ix1 = (bx1 + 1) * mesh.cells_per_block_x
    iy0 = by0 * mesh.cells_per_block_y
    iy1 = (by1 + 1) * mesh.cells_per_block_y
    nodes = mesh._rect_nodes(ix0, ix1, iy0, iy1)

    i = nodes % (mesh.nx_fine + 1)
    j = nodes // (mesh.nx_fine + 1)
    inner = (i > ix0) & (i < ix1) & (j > iy0) & (j < iy1)
    return OversampleRegion(
        block_index=block_index,
        layers=m,
        bx0=bx0,
        bx1=bx1,
        by0=by0,
        by1=by1,
        nodes=nodes,
        interior=nodes[inner],
    )

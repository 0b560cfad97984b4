"""Coarse-space construction by constraint energy minimization.

Each coarse block carries a local auxiliary space (lowest eigenpairs of a
kappa-weighted spectral problem with natural boundary conditions); the coarse
basis functions are energy minimizers on oversampling regions subject to
orthogonality constraints against every auxiliary function whose block lies
inside the region.  The partition of unity is the bilinear coarse hat basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import json

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DataError, EigenSolveError, SaddleSolveError
from .fem import PermeabilityField, assemble_mass, assemble_stiffness
from .grid import StructuredMesh, oversample


def partition_of_unity(mesh: StructuredMesh) -> sp.csr_matrix:
    """Coarse bilinear hats at fine nodes, one row per coarse node.

    Rows sum to one at every fine node; each hat equals one at its own coarse
    node and zero at all others.
    """
    Hx = 1.0 / mesh.nx_coarse
    Hy = 1.0 / mesh.ny_coarse
    xy = mesh.node_xy
    rows, cols, vals = [], [], []
    for cj in range(mesh.ny_coarse + 1):
        for ci in range(mesh.nx_coarse + 1):
            hat_x = np.maximum(0.0, 1.0 - np.abs(xy[:, 0] - ci * Hx) / Hx)
            hat_y = np.maximum(0.0, 1.0 - np.abs(xy[:, 1] - cj * Hy) / Hy)
            v = hat_x * hat_y
            nz = np.flatnonzero(v > 0)
            rows.append(np.full(nz.size, cj * (mesh.nx_coarse + 1) + ci))
            cols.append(nz)
            vals.append(v[nz])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_coarse_nodes, mesh.n_nodes),
    )


def gradient_energy_weight(mesh: StructuredMesh, kappa: np.ndarray) -> np.ndarray:
    """kappa * sum_i |grad chi_i|^2 per fine cell, evaluated at cell centers.

    Only the four hats of the coarse cell containing a point are nonzero
    there, so the sum reduces to a closed form in the coarse-local
    coordinates of the fine-cell center.
    """
    kappa = np.asarray(kappa, dtype=float).ravel()
    Hx = 1.0 / mesh.nx_coarse
    Hy = 1.0 / mesh.ny_coarse
    cx = (np.arange(mesh.n_cells) % mesh.nx_fine + 0.5) * mesh.hx
    cy = (np.arange(mesh.n_cells) // mesh.nx_fine + 0.5) * mesh.hy
    s = np.mod(cx, Hx) / Hx
    t = np.mod(cy, Hy) / Hy
    grad_sq = 2.0 * ((1 - t) ** 2 + t**2) / Hx**2 + 2.0 * ((1 - s) ** 2 + s**2) / Hy**2
    return kappa * grad_sq


@dataclass(frozen=True)
class AuxiliaryBlock:
    """Lowest eigenpairs of the local spectral problem on one coarse block."""

    block_index: int
    nodes: np.ndarray
    eigenvalues: np.ndarray          # n_local + 1 values, ascending
    vectors: np.ndarray              # (n_block_nodes, n_local), s-orthonormal
    constraint_vectors: np.ndarray   # S_block @ vectors, same shape

    @property
    def n_local(self) -> int:
        return self.vectors.shape[1]

    @property
    def discarded_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])


@dataclass(frozen=True)
class AuxiliarySpace:
    blocks: list[AuxiliaryBlock]
    kappa_tilde: np.ndarray

    @property
    def lambda_min_discarded(self) -> float:
        """Smallest discarded eigenvalue across blocks (error-bound diagnostic)."""
        return min(b.discarded_eigenvalue for b in self.blocks)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def solve_auxiliary_spectral(mesh: StructuredMesh, kappa: np.ndarray,
                             kappa_tilde: np.ndarray, block_index: int,
                             n_local: int) -> AuxiliaryBlock:
    """First n_local eigenpairs (plus the next eigenvalue) on one block.

    Shift-invert ARPACK targeting the smallest eigenvalues; falls back to a
    dense solve when the requested count is too close to the block size.
    """
    cells = mesh.block_cells(block_index)
    nodes = mesh.block_nodes(block_index)
    a_blk = assemble_stiffness(mesh, kappa, cells)[nodes][:, nodes].tocsc()
    s_blk = assemble_mass(mesh, kappa_tilde, cells)[nodes][:, nodes].tocsc()
    n = nodes.size
    k = n_local + 1
    if k > n:
        raise EigenSolveError(
            f"block {block_index} has {n} nodes, cannot return {k} eigenpairs",
            block_index,
        )
    try:
        if k < n - 1:
            sigma = -1e-4 * (a_blk.diagonal().sum() / s_blk.diagonal().sum())
            # deterministic start vector: ARPACK would otherwise draw one from
            # the global RNG, making repeated builds differ bitwise
            v0 = np.random.Generator(np.random.PCG64(block_index)).standard_normal(n)
            vals, vecs = spla.eigsh(a_blk, k=k, M=s_blk, sigma=sigma, which="LM", v0=v0)
        else:
            vals, vecs = sla.eigh(a_blk.toarray(), s_blk.toarray())
            vals, vecs = vals[:k], vecs[:, :k]
    except (spla.ArpackError, sla.LinAlgError) as exc:
        raise EigenSolveError(
            f"spectral solve failed on block {block_index}: {exc}", block_index
        ) from exc
    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order][:, :n_local]
    # enforce s-orthonormality and the reproducible sign convention
    norms = np.sqrt(np.einsum("ij,ij->j", vecs, s_blk @ vecs))
    vecs = _fix_signs(vecs / norms)
    return AuxiliaryBlock(
        block_index=block_index,
        nodes=nodes,
        eigenvalues=vals,
        vectors=vecs,
        constraint_vectors=s_blk @ vecs,
    )


def build_auxiliary_space(mesh: StructuredMesh, kappa: np.ndarray,
                          n_local: int) -> AuxiliarySpace:
    kt = gradient_energy_weight(mesh, kappa)
    blocks = [
        solve_auxiliary_spectral(mesh, kappa, kt, i, n_local)
        for i in range(mesh.n_blocks)
    ]
    return AuxiliarySpace(blocks=blocks, kappa_tilde=kt)


class _BlockSaddle:
    """Factorized constrained-minimization system for one block/region pair."""

    def __init__(self, mesh: StructuredMesh, a_full: sp.csr_matrix,
                 aux: AuxiliarySpace, block_index: int, layers: int):
        self.region = oversample(mesh, block_index, layers)
        self.free = self.region.interior
        region_blocks = self.region.blocks(mesh)

        con_rows = []
        self.constraint_owner: list[tuple[int, int]] = []
        for b in region_blocks:
            blk = aux.blocks[b]
            for j in range(blk.n_local):
                vec = np.zeros(mesh.n_nodes)
                vec[blk.nodes] = blk.constraint_vectors[:, j]
                con_rows.append(vec[self.free])
                self.constraint_owner.append((b, j))
        bmat = sp.csr_matrix(np.vstack(con_rows))
        self.n_con = bmat.shape[0]

        a_ff = a_full[self.free][:, self.free]
        saddle = sp.bmat([[a_ff, bmat.T], [bmat, None]], format="csc")
        try:
            self.lu = spla.splu(saddle)
        except RuntimeError as exc:
            raise SaddleSolveError(
                f"singular saddle system on block {block_index} "
                f"({self.n_con} constraints): {exc}",
                block_index,
                self.n_con,
            ) from exc
        self.n_nodes = mesh.n_nodes
        self.block_index = block_index

    def solve_column(self, local_index: int) -> np.ndarray:
        pos = self.constraint_owner.index((self.block_index, local_index))
        rhs = np.zeros(self.free.size + self.n_con)
        rhs[self.free.size + pos] = 1.0
        sol = self.lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SaddleSolveError(
                f"saddle solve returned non-finite values on block "
                f"{self.block_index} ({self.n_con} constraints)",
                self.block_index,
                self.n_con,
            )
        col = np.zeros(self.n_nodes)
        col[self.free] = sol[: self.free.size]
        return col


def solve_constrained_minimization(mesh: StructuredMesh, a_full: sp.csr_matrix,
                                   aux: AuxiliarySpace, block_index: int,
                                   local_index: int, layers: int) -> np.ndarray:
    """Energy minimizer on the oversampling region for one auxiliary function."""
    ctx = _BlockSaddle(mesh, a_full, aux, block_index, layers)
    return ctx.solve_column(local_index)


@dataclass(frozen=True)
class MultiscaleSpace:
    """Fine-by-coarse basis matrix with per-column provenance."""

    R: sp.csr_matrix
    column_block: np.ndarray
    column_local: np.ndarray
    n_local: int
    layers: int
    lambda_min_discarded: float
    block_eigenvalues: np.ndarray = field(repr=False)  # (n_blocks, n_local + 1)

    @property
    def n_columns(self) -> int:
        return self.R.shape[1]


def build_multiscale_space(mesh: StructuredMesh, kappa: np.ndarray | PermeabilityField,
                           n_local: int, layers: int,
                           aux: AuxiliarySpace | None = None,
                           a_full: sp.csr_matrix | None = None) -> MultiscaleSpace:
    """Assemble the coarse basis matrix column by column."""
    if isinstance(kappa, PermeabilityField):
        kappa = kappa.per_cell
    if aux is None:
        aux = build_auxiliary_space(mesh, kappa, n_local)
    if a_full is None:
        a_full = assemble_stiffness(mesh, kappa)

    cols, blocks_meta, local_meta = [], [], []
    for i in range(mesh.n_blocks):
        ctx = _BlockSaddle(mesh, a_full, aux, i, layers)
        for j in range(n_local):
            cols.append(ctx.solve_column(j))
            blocks_meta.append(i)
            local_meta.append(j)
    R = sp.csr_matrix(np.column_stack(cols))
    return MultiscaleSpace(
        R=R,
        column_block=np.array(blocks_meta),
        column_local=np.array(local_meta),
        n_local=n_local,
        layers=layers,
        lambda_min_discarded=aux.lambda_min_discarded,
        block_eigenvalues=np.vstack([b.eigenvalues for b in aux.blocks]),
    )


def localization_decay(mesh: StructuredMesh, kappa: np.ndarray,
                       n_local: int, layers: int, block_index: int,
                       local_index: int = 0,
                       aux: AuxiliarySpace | None = None) -> float:
    """Energy fraction of the global-support minimizer outside the m-layer region.

    Diagnostic for the exponential-decay behaviour that justifies
    localization; recorded, not asserted.
    """
    if isinstance(kappa, PermeabilityField):
        kappa = kappa.per_cell
    if aux is None:
        aux = build_auxiliary_space(mesh, kappa, n_local)
    a_full = assemble_stiffness(mesh, kappa)
    m_global = max(mesh.nx_coarse, mesh.ny_coarse)
    phi = solve_constrained_minimization(mesh, a_full, aux, block_index,
                                         local_index, m_global)
    region = oversample(mesh, block_index, layers)
    outside = np.setdiff1d(np.arange(mesh.n_cells),
                           np.concatenate([mesh.block_cells(b)
                                           for b in region.blocks(mesh)]))
    a_out = assemble_stiffness(mesh, kappa, outside)
    total = float(phi @ (a_full @ phi))
    return float(phi @ (a_out @ phi)) / total


def save_basis(path, space: MultiscaleSpace, mesh: StructuredMesh,
               kappa: np.ndarray | PermeabilityField) -> None:
    """Binary basis cache with a header binding it to mesh and kappa."""
    checksum = _kappa_checksum(kappa)
    header = {
        "nx_fine": mesh.nx_fine,
        "ny_fine": mesh.ny_fine,
        "nx_coarse": mesh.nx_coarse,
        "ny_coarse": mesh.ny_coarse,
        "n_local": space.n_local,
        "layers": space.layers,
        "kappa_sha256": checksum,
    }
    np.savez(
        path,
        header=json.dumps(header, sort_keys=True),
        data=space.R.data,
        indices=space.R.indices,
        indptr=space.R.indptr,
        shape=np.array(space.R.shape),
        column_block=space.column_block,
        column_local=space.column_local,
        lambda_min=np.array([space.lambda_min_discarded]),
        block_eigenvalues=space.block_eigenvalues,
    )


def load_basis(path, mesh: StructuredMesh,
               kappa: np.ndarray | PermeabilityField) -> MultiscaleSpace:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        expected = {
            "nx_fine": mesh.nx_fine,
            "ny_fine": mesh.ny_fine,
            "nx_coarse": mesh.nx_coarse,
            "ny_coarse": mesh.ny_coarse,
        }
        for key, val in expected.items():
            if header[key] != val:
                raise DataError(f"basis cache {key}={header[key]} does not match {val}")
        if header["kappa_sha256"] != _kappa_checksum(kappa):
            raise DataError("basis cache permeability checksum mismatch")
        R = sp.csr_matrix(
            (z["data"], z["indices"], z["indptr"]), shape=tuple(z["shape"])
        )
        return MultiscaleSpace(
            R=R,
            column_block=z["column_block"],
            column_local=z["column_local"],
            n_local=int(header["n_local"]),
            layers=int(header["layers"]),
            lambda_min_discarded=float(z["lambda_min"][0]),
            block_eigenvalues=z["block_eigenvalues"],
        )


def _kappa_checksum(kappa: np.ndarray | PermeabilityField) -> str:
    if isinstance(kappa, PermeabilityField):
        return kappa.checksum()
    arr = np.ascontiguousarray(np.asarray(kappa, dtype=float))
    return hashlib.sha256(arr.tobytes()).hexdigest()

"""Reduction of nonlinear terms: POD, greedy interpolation, online basis updates.

Interpolation operates on fine-grid nodal values of the nonlinearities; the
coarse-space projection is folded into a cached factor so that reduced
evaluations never materialize full-length vectors.  Models are immutable;
an online update returns a new model and keeps the interpolation points.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

import numpy as np
import scipy.linalg as sla

from .errors import DataError


@dataclass(frozen=True)
class PodInfo:
    singular_values: np.ndarray
    discarded_energy: float


def pod(snapshots: np.ndarray, r: int | None = None,
        energy: float | None = None) -> tuple[np.ndarray, PodInfo]:
    """First r left singular vectors of the snapshot matrix.

    Exactly one of `r` and `energy` selects the dimension: `r` directly,
    `energy` as the smallest rank capturing that fraction of the squared
    singular-value mass.
    """
    Y = np.asarray(snapshots, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise DataError("snapshot matrix must be 2-dimensional with >= 1 column")
    if (r is None) == (energy is None):
        raise DataError("specify exactly one of r and energy")
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    tol = max(Y.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if energy is not None:
        if not 0.0 < energy <= 1.0:
            raise DataError(f"energy fraction must be in (0, 1], got {energy}")
        total = float(np.sum(s**2))
        cum = np.cumsum(s**2)
        r = int(np.searchsorted(cum, energy * total - 1e-15) + 1)
        r = min(r, rank)
    if r < 1 or r > rank:
        raise DataError(f"requested rank {r} not achievable; snapshot rank is {rank}")
    discarded = float(np.sum(s[r:] ** 2))
    return U[:, :r].copy(), PodInfo(singular_values=s, discarded_energy=discarded)


def deim_points(basis: np.ndarray) -> np.ndarray:
    """Greedy interpolation indices; keeps every prefix of P^T U nonsingular."""
    U = np.asarray(basis, dtype=float)
    n, m = U.shape
    points = np.empty(m, dtype=int)
    points[0] = int(np.argmax(np.abs(U[:, 0])))
    for k in range(1, m):
        sel = points[:k]
        coeff = np.linalg.solve(U[sel, :k], U[sel, k])
        residual = U[:, k] - U[:, :k] @ coeff
        p = int(np.argmax(np.abs(residual)))
        if p in points[:k]:
            raise DataError(
                f"duplicate interpolation index {p} at step {k}; basis columns dependent"
            )
        points[k] = p
    return points


@dataclass(frozen=True)
class DeimModel:
    """Interpolation basis, point set, and the cached point-space factor."""

    basis: np.ndarray     # (n, m), columns span the approximation range
    indices: np.ndarray   # m pairwise-distinct row indices
    _ptu_factor: tuple    # LU factorization of basis[indices]

    @classmethod
    def from_basis(cls, basis: np.ndarray,
                   indices: np.ndarray | None = None) -> "DeimModel":
        basis = np.asarray(basis, dtype=float)
        if indices is None:
            indices = deim_points(basis)
        indices = np.asarray(indices, dtype=int)
        ptu = basis[indices]
        if ptu.shape[0] != ptu.shape[1]:
            raise DataError("index count must equal basis dimension")
        return cls(basis=basis, indices=indices, _ptu_factor=sla.lu_factor(ptu))

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    def coefficients(self, rows: np.ndarray) -> np.ndarray:
        """Solve (P^T U) c = rows; `rows` holds values at self.indices."""
        return sla.lu_solve(self._ptu_factor, rows)

    def apply_from_rows(self, rows: np.ndarray) -> np.ndarray:
        """Full-space oblique reconstruction from the m sampled entries."""
        return self.basis @ self.coefficients(rows)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.apply_from_rows(np.asarray(values)[self.indices])

    def point_condition(self) -> float:
        return float(np.linalg.cond(self.basis[self.indices]))


def projection_factor(model: DeimModel, weights: np.ndarray) -> np.ndarray:
    """weights @ U (P^T U)^{-1}; reduced evaluation is then factor @ rows."""
    wu = weights @ model.basis
    ptu = model.basis[model.indices]
    return np.linalg.solve(ptu.T, wu.T).T


@dataclass(frozen=True)
class OnlineUpdateRecord:
    coefficients: np.ndarray
    residual: np.ndarray
    increment: np.ndarray
    accepted: bool
    point_condition: float
    message: str = ""


def _projector_amplification(basis: np.ndarray, indices: np.ndarray) -> float:
    """Spectral norm of U (P^T U)^{-1}, the oblique-projector gain."""
    return float(np.linalg.norm(
        np.linalg.solve(basis[indices].T, basis.T).T, 2
    ))


def online_update(model: DeimModel, F: np.ndarray,
                  C: np.ndarray | None = None,
                  rank_rtol: float = 1e-10,
                  cond_limit: float = 1e12,
                  amplification_ratio_limit: float = 5.0) -> tuple[DeimModel, OnlineUpdateRecord]:
    """Residual-driven basis correction; interpolation points stay fixed.

    The increment solves min ||(U + dU) C - F||_F over the sampled rows via
    dU = -R C^T (C C^T)^{-1} with R = U C - F, falling back to the
    pseudo-inverse when C is row-rank deficient.  An update is rejected (the
    original model is returned) if it would make the point-space factor
    ill-conditioned, or if it would inflate the oblique-projector gain
    ||U (P^T U)^{-1}|| by more than `amplification_ratio_limit`: the sampled
    rows are unchanged by consistent updates, so the point-space condition
    alone cannot detect a fit that turns the reconstruction unstable.
    """
    F = np.asarray(F, dtype=float)
    if F.shape[0] != model.n:
        raise DataError(f"evaluation matrix has {F.shape[0]} rows, model dimension is {model.n}")
    if C is None:
        C = model.coefficients(F[model.indices])
    C = np.asarray(C, dtype=float)
    residual = model.basis @ C - F

    s = np.linalg.svd(C, compute_uv=False)
    if s.size and np.sum(s > rank_rtol * s[0]) == min(C.shape):
        gram = C @ C.T
        increment = -np.linalg.solve(gram, (residual @ C.T).T).T
    else:
        increment = -residual @ np.linalg.pinv(C, rcond=rank_rtol)

    updated = model.basis + increment
    ptu = updated[model.indices]
    cond = float(np.linalg.cond(ptu))

    def rejected(message: str) -> tuple[DeimModel, OnlineUpdateRecord]:
        return model, OnlineUpdateRecord(
            coefficients=C,
            residual=residual,
            increment=increment,
            accepted=False,
            point_condition=cond,
            message=message,
        )

    if not np.isfinite(cond) or cond > cond_limit:
        return rejected(
            f"update rejected: point-space condition {cond:.3e} exceeds {cond_limit:.0e}"
        )
    gain_before = _projector_amplification(model.basis, model.indices)
    gain_after = _projector_amplification(updated, model.indices)
    if not np.isfinite(gain_after) or gain_after > amplification_ratio_limit * gain_before:
        return rejected(
            f"update rejected: projector gain {gain_after:.3e} exceeds "
            f"{amplification_ratio_limit:g} x {gain_before:.3e}"
        )
    new_model = DeimModel(
        basis=updated,
        indices=model.indices,
        _ptu_factor=sla.lu_factor(ptu),
    )
    record = OnlineUpdateRecord(
        coefficients=C,
        residual=residual,
        increment=increment,
        accepted=True,
        point_condition=cond,
    )
    return new_model, record


def mean_states(ensemble: np.ndarray) -> np.ndarray:
    """Mean trajectory over a (k, steps, dim) stack of state trajectories."""
    ensemble = np.asarray(ensemble, dtype=float)
    if ensemble.ndim != 3:
        raise DataError("ensemble must be (trajectories, time levels, dim)")
    return ensemble.mean(axis=0)


def nonlinear_snapshots(states: np.ndarray, nonlin, aux: np.ndarray | None = None) -> np.ndarray:
    """Columns f(state at t_i); the nonlinearity sees the state, not its mean image."""
    states = np.asarray(states, dtype=float)
    cols = []
    for i in range(states.shape[0]):
        a = None if aux is None else aux[i]
        cols.append(nonlin(states[i], a))
    return np.column_stack(cols)


def build_offline_model(snapshots: np.ndarray, m: int) -> tuple[DeimModel, PodInfo]:
    """POD of the mean-state snapshots followed by greedy point selection."""
    basis, info = pod(snapshots, r=m)
    return DeimModel.from_basis(basis), info


class ReducedDeimOperator:
    """Evaluate one nodewise nonlinearity in the coarse space from m rows."""

    def __init__(self, model: DeimModel, nonlin, coarse_rows: np.ndarray,
                 factor: np.ndarray):
        self.model = model
        self.nonlin = nonlin
        self.coarse_rows = coarse_rows          # (m, N_r) rows of R at the points
        self.factor = factor                    # (N_r, m) projected factor

    @classmethod
    def build(cls, model: DeimModel, nonlin, coarse_basis: np.ndarray,
              weights: np.ndarray) -> "ReducedDeimOperator":
        return cls(
            model=model,
            nonlin=nonlin,
            coarse_rows=np.ascontiguousarray(coarse_basis[model.indices]),
            factor=projection_factor(model, weights),
        )

    def state_rows(self, coeffs: np.ndarray) -> np.ndarray:
        return self.coarse_rows @ coeffs

    def term(self, coeffs: np.ndarray, aux_rows: np.ndarray | None = None) -> np.ndarray:
        return self.factor @ self.nonlin(self.state_rows(coeffs), aux_rows)

    def term_jacobian(self, coeffs: np.ndarray,
                      aux_rows: np.ndarray | None = None) -> np.ndarray:
        fp = self.nonlin.derivative(self.state_rows(coeffs), aux_rows)
        return self.factor @ (fp[:, None] * self.coarse_rows)

    def hadamard_term(self, coeffs: np.ndarray, dw_rows: np.ndarray,
                      aux_rows: np.ndarray | None = None) -> np.ndarray:
        """Row selection commutes with the Hadamard product with an increment."""
        return self.factor @ (self.nonlin(self.state_rows(coeffs), aux_rows) * dw_rows)


def reduced_nonlinear_terms(coeffs: np.ndarray, drift_op: ReducedDeimOperator,
                            noise_op: ReducedDeimOperator | None,
                            dw_rows: np.ndarray | None,
                            drift_aux_rows: np.ndarray | None = None,
                            noise_aux_rows: np.ndarray | None = None):
    """Reduced drift and noise vectors plus the drift Jacobian contribution."""
    drift = drift_op.term(coeffs, drift_aux_rows)
    jac = drift_op.term_jacobian(coeffs, drift_aux_rows)
    if noise_op is None or dw_rows is None:
        noise_vec = np.zeros_like(drift)
    else:
        noise_vec = noise_op.hadamard_term(coeffs, dw_rows, noise_aux_rows)
    return drift, noise_vec, jac


def save_snapshots(path, snapshots: np.ndarray, window: np.ndarray,
                   provenance: str, extra: dict | None = None) -> None:
    """Column-major snapshot archive with a self-describing header."""
    snapshots = np.asfortranarray(snapshots, dtype=float)
    header = {
        "n": snapshots.shape[0],
        "columns": snapshots.shape[1],
        "window": [int(w) for w in np.asarray(window).ravel()],
        "provenance": provenance,
    }
    if extra:
        header.update(extra)
    np.savez(path, header=json.dumps(header, sort_keys=True), snapshots=snapshots)


def load_snapshots(path) -> tuple[np.ndarray, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        F = z["snapshots"]
        if F.shape != (header["n"], header["columns"]):
            raise DataError("snapshot archive payload does not match its header")
        return F, header

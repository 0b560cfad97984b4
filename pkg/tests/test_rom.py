import numpy as np
import pytest

from msrom import (
    DataError,
    DeimModel,
    build_offline_model,
    deim_points,
    load_snapshots,
    make_nonlinearity,
    mean_states,
    nonlinear_snapshots,
    online_update,
    pod,
    projection_factor,
    reduced_nonlinear_terms,
    save_snapshots,
)
from msrom.rom import ReducedDeimOperator


def _random_orthonormal(rng, n, m):
    q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    return q


# --- POD ---------------------------------------------------------------------

def test_pod_rank_one_by_hand():
    Y = np.array([[3.0, 0.0], [4.0, 0.0]])
    V, info = pod(Y, r=1)
    assert np.allclose(np.abs(V[:, 0]), [0.6, 0.8], atol=1e-14)
    assert info.discarded_energy <= 1e-28


def test_pod_exact_for_orthogonal_columns():
    rng = np.random.default_rng(0)
    Y = _random_orthonormal(rng, 10, 4) * np.array([5.0, 3.0, 2.0, 1.0])
    V, _ = pod(Y, r=4)
    assert np.linalg.norm(Y - V @ (V.T @ Y)) <= 1e-12


def test_pod_reconstruction_identity_vs_svd_oracle():
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((8, 5))
    s = np.linalg.svd(Y, compute_uv=False)
    for r in (1, 2, 3):
        V, info = pod(Y, r=r)
        frob = np.linalg.norm(Y - V @ (V.T @ Y)) ** 2
        assert np.isclose(frob, np.sum(s[r:] ** 2), atol=1e-10)
        assert np.isclose(info.discarded_energy, np.sum(s[r:] ** 2), atol=1e-10)


def test_pod_optimality_against_random_bases():
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((12, 6))
    V, _ = pod(Y, r=3)
    best = np.linalg.norm(Y - V @ (V.T @ Y))
    for _ in range(20):
        W = _random_orthonormal(rng, 12, 3)
        assert best <= np.linalg.norm(Y - W @ (W.T @ Y)) + 1e-12


def test_pod_rank_error_names_achievable_rank():
    Y = np.array([[3.0, 6.0], [4.0, 8.0]])  # rank 1
    with pytest.raises(DataError, match="rank is 1"):
        pod(Y, r=2)


def test_pod_energy_fraction_selection():
    Y = np.diag([4.0, 2.0, 1.0])
    V, _ = pod(Y, energy=16.0 / 21.0)  # first mode carries 16/21 of the energy
    assert V.shape[1] == 1
    V2, _ = pod(Y, energy=0.99)
    assert V2.shape[1] == 3


# --- greedy interpolation points ---------------------------------------------

def test_greedy_points_hand_trace():
    U = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    assert deim_points(U).tolist() == [0, 1]


def test_single_column_argmax():
    U = np.array([[0.1], [0.9], [0.3]])
    assert deim_points(U).tolist() == [1]


def test_greedy_prefixes_nonsingular():
    rng = np.random.default_rng(3)
    U = _random_orthonormal(rng, 30, 8)
    p = deim_points(U)
    assert len(set(p.tolist())) == 8
    for k in range(1, 9):
        det = np.linalg.det(U[p[:k], :k])
        assert abs(det) > 0


def test_square_interpolation_exact_for_all_vectors():
    rng = np.random.default_rng(4)
    U = _random_orthonormal(rng, 6, 6)
    model = DeimModel.from_basis(U)
    for _ in range(5):
        f = rng.standard_normal(6)
        assert np.allclose(model.apply(f), f, atol=1e-10)


# --- oblique reconstruction ---------------------------------------------------

def test_vectors_in_range_reproduced():
    rng = np.random.default_rng(5)
    U = _random_orthonormal(rng, 25, 6)
    model = DeimModel.from_basis(U)
    f = U @ rng.standard_normal(6)
    approx = model.apply(f)
    assert np.linalg.norm(approx - f) <= 1e-10 * np.linalg.norm(f)


def test_interpolation_residual_vanishes_at_points():
    rng = np.random.default_rng(6)
    U = _random_orthonormal(rng, 40, 7)
    model = DeimModel.from_basis(U)
    f = rng.standard_normal(40)
    approx = model.apply(f)
    assert np.abs((approx - f)[model.indices]).max() <= 1e-13 * np.abs(f).max()


def test_reconstruction_matches_dense_formula_oracle():
    rng = np.random.default_rng(7)
    U = _random_orthonormal(rng, 20, 5)
    model = DeimModel.from_basis(U)
    f = rng.standard_normal(20)
    P = np.zeros((20, 5))
    P[model.indices, np.arange(5)] = 1.0
    oracle = U @ np.linalg.inv(P.T @ U) @ (P.T @ f)
    assert np.allclose(model.apply(f), oracle, atol=1e-12)


def test_oblique_projector_idempotent():
    rng = np.random.default_rng(8)
    U = _random_orthonormal(rng, 30, 6)
    model = DeimModel.from_basis(U)
    f = rng.standard_normal(30)
    once = model.apply(f)
    twice = model.apply(once)
    assert np.allclose(once, twice, atol=1e-12)


# --- online update -------------------------------------------------------------

def test_online_update_hand_example():
    model = DeimModel.from_basis(np.array([[1.0], [0.0]]))
    C = np.array([[1.0, 1.0]])
    F = np.array([[1.0, 1.0], [1.0, 1.0]])
    updated, record = online_update(model, F, C=C)
    assert np.array_equal(record.residual, np.array([[0.0, 0.0], [-1.0, -1.0]]))
    assert np.array_equal(record.increment, np.array([[0.0], [1.0]]))
    assert np.array_equal(updated.basis, np.array([[1.0], [1.0]]))
    assert np.array_equal(updated.basis @ C, F)
    assert np.array_equal(updated.indices, model.indices)


def test_zero_residual_is_a_noop():
    rng = np.random.default_rng(9)
    U = _random_orthonormal(rng, 15, 4)
    model = DeimModel.from_basis(U)
    C = rng.standard_normal((4, 10))
    F = U @ C
    updated, record = online_update(model, F, C=C)
    assert np.allclose(record.increment, 0.0, atol=1e-12)
    assert np.allclose(updated.basis, U, atol=1e-12)


def test_update_monotone_on_sampled_rows():
    rng = np.random.default_rng(10)
    for _ in range(10):
        U = _random_orthonormal(rng, 30, 5)
        model = DeimModel.from_basis(U)
        C = rng.standard_normal((5, 12))
        F = rng.standard_normal((30, 12))
        updated, record = online_update(model, F, C=C,
                                        amplification_ratio_limit=float("inf"))
        assert record.accepted
        p = model.indices
        before = np.linalg.norm((U @ C - F)[p])
        after = np.linalg.norm((updated.basis @ C - F)[p])
        assert after <= before + 1e-12


def test_update_rows_orthogonal_to_coefficient_rowspace():
    rng = np.random.default_rng(11)
    U = _random_orthonormal(rng, 20, 4)
    model = DeimModel.from_basis(U)
    C = rng.standard_normal((4, 9))
    F = rng.standard_normal((20, 9))
    updated, record = online_update(model, F, C=C,
                                    amplification_ratio_limit=float("inf"))
    assert record.accepted
    assert np.abs((updated.basis @ C - F) @ C.T).max() <= 1e-10


def test_consistent_coefficients_leave_points_unchanged():
    rng = np.random.default_rng(12)
    U = _random_orthonormal(rng, 25, 5)
    model = DeimModel.from_basis(U)
    F = rng.standard_normal((25, 8))
    updated, record = online_update(model, F)  # C from the model itself
    p = model.indices
    assert np.abs(record.increment[p]).max() <= 1e-12
    assert np.allclose(updated.basis[p], U[p], atol=1e-12)


def test_ill_conditioned_update_rejected():
    model = DeimModel.from_basis(np.eye(2))
    C = np.eye(2)
    F = np.diag([0.0, 1e-13])  # residual wipes out the sampled rows
    updated, record = online_update(model, F, C=C)
    assert not record.accepted
    assert updated is model
    assert "rejected" in record.message


def test_rank_deficient_coefficients_use_pseudo_inverse():
    rng = np.random.default_rng(13)
    U = _random_orthonormal(rng, 12, 3)
    model = DeimModel.from_basis(U)
    c_row = rng.standard_normal(6)
    C = np.vstack([c_row, 2 * c_row, -c_row])  # rank 1
    F = rng.standard_normal((12, 6))
    updated, record = online_update(model, F, C=C)
    R = U @ C - F
    oracle = -R @ np.linalg.pinv(C, rcond=1e-10)
    assert np.allclose(record.increment, oracle, atol=1e-10)


# --- snapshots and offline model ------------------------------------------------

def test_mean_snapshots_evaluate_nonlinearity_at_mean_state():
    rng = np.random.default_rng(14)
    ensemble = rng.standard_normal((3, 4, 6))  # 3 trajectories, 4 levels, dim 6
    quad = make_nonlinearity("quadratic_plus", offset=0.0)
    mean = mean_states(ensemble)
    snaps = nonlinear_snapshots(mean, quad)
    expected = (ensemble.mean(axis=0) ** 2).T
    mean_of_f = (ensemble**2).mean(axis=0).T
    assert np.allclose(snaps, expected, atol=1e-14)
    assert not np.allclose(snaps, mean_of_f, atol=1e-6)


def test_single_trajectory_mean_is_identity():
    rng = np.random.default_rng(15)
    ensemble = rng.standard_normal((1, 5, 4))
    assert np.array_equal(mean_states(ensemble), ensemble[0])


def test_build_offline_model_rank_guard():
    rng = np.random.default_rng(16)
    snaps = np.outer(rng.standard_normal(10), rng.standard_normal(4))  # rank 1
    with pytest.raises(DataError, match="rank is 1"):
        build_offline_model(snaps, 3)


def test_snapshot_archive_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    F = rng.standard_normal((12, 7))
    fn = tmp_path / "snaps.npz"
    save_snapshots(fn, F, np.arange(1, 8), "mean-of-trajectories", {"nonlinearity": "x"})
    loaded, header = load_snapshots(fn)
    assert np.array_equal(loaded, F)
    assert header["provenance"] == "mean-of-trajectories"
    assert header["window"] == list(range(1, 8))
    assert header["nonlinearity"] == "x"


# --- reduced evaluation -----------------------------------------------------------

def _tiny_reduced_setup(rng, n=18, n_r=4, m=None):
    m = n if m is None else m
    R = rng.standard_normal((n, n_r))
    W = rng.standard_normal((n_r, n))  # stands in for R^T M
    U = _random_orthonormal(rng, n, m)
    model = DeimModel.from_basis(U)
    nonlin = make_nonlinearity("scaled_cos", amplitude=2.0)
    op = ReducedDeimOperator.build(model, nonlin, R, W)
    return R, W, model, nonlin, op


def test_square_reduction_reproduces_galerkin_terms():
    rng = np.random.default_rng(18)
    R, W, model, nonlin, op = _tiny_reduced_setup(rng)
    g_nonlin = make_nonlinearity("quadratic_plus", offset=2.0)
    g_op = ReducedDeimOperator.build(model, g_nonlin, R, W)
    c = rng.standard_normal(4)
    dw = rng.standard_normal(18)
    drift, noise, jac = reduced_nonlinear_terms(c, op, g_op, dw[model.indices])
    assert np.allclose(drift, W @ nonlin(R @ c), atol=1e-10)
    assert np.allclose(noise, W @ (g_nonlin(R @ c) * dw), atol=1e-10)
    fp = nonlin.derivative(R @ c)
    assert np.allclose(jac, W @ (fp[:, None] * R), atol=1e-9)


def test_reduced_evaluation_touches_m_entries_only():
    rng = np.random.default_rng(19)
    sizes = []

    def recording(u):
        sizes.append(u.size)
        return np.cos(u)

    from msrom.integrator import Nonlinearity

    nonlin = Nonlinearity("probe", recording, lambda u: -np.sin(u))
    U = _random_orthonormal(rng, 50, 6)
    model = DeimModel.from_basis(U)
    op = ReducedDeimOperator.build(model, nonlin, rng.standard_normal((50, 5)),
                                   rng.standard_normal((5, 50)))
    op.term(rng.standard_normal(5))
    assert sizes == [6]


def test_projection_factor_matches_dense_formula():
    rng = np.random.default_rng(20)
    U = _random_orthonormal(rng, 16, 4)
    model = DeimModel.from_basis(U)
    W = rng.standard_normal((3, 16))
    E = projection_factor(model, W)
    oracle = W @ U @ np.linalg.inv(U[model.indices])
    assert np.allclose(E, oracle, atol=1e-12)

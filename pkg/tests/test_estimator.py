import warnings

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from mdfa.errors import DimensionError, InvalidInput, NotPsd
from mdfa.estimator import (
    FitOptions,
    concentrated_loss,
    fit_mdfa,
    fit_mdfa_cov,
    fit_ols,
    fit_pca,
    joint_loss,
    ols_objective,
    update_params,
    update_scores,
)
from mdfa.model import Bounds, Denominator, FactorParams, ScoreMatrix, center_columns, check_scores, covariance
from mdfa.simulation import desk_setting, gen_dataset, gen_true_params, se_lambda

from helpers import feasible_scores, random_data, random_params, random_rotation


def reference_loss(phi, S):
    """Two-term concentrated loss written directly with scipy primitives."""
    p = phi.shape[0]
    M = phi.T @ S @ phi
    w, V = np.linalg.eigh(M)
    top = V[:, np.argsort(w)[::-1][:p]]
    A = phi @ top @ top.T @ np.linalg.pinv(phi)
    R = np.eye(p) - A
    root = np.real(scipy.linalg.sqrtm(M))
    return np.trace(R.T @ S @ R) + np.linalg.norm(np.linalg.pinv(phi.T) @ root - phi) ** 2


def instance(rng, n, p, m, den=Denominator.N_MINUS_1):
    X = center_columns(random_data(rng, n, p, m))
    params = random_params(rng, p, m)
    return X, params, covariance(X, den)


@pytest.mark.parametrize("den", list(Denominator))
def test_profile_identity_small(den):
    rng = np.random.default_rng(0)
    X, params, S = instance(rng, 10, 2, 1, den)
    Z = update_scores(X, params, den)
    assert abs(joint_loss(X, Z, params) - concentrated_loss(params, S)) < 1e-8
    assert check_scores(Z).passed


def test_profile_identity_p3_m1_n12():
    rng = np.random.default_rng(1)
    X, params, S = instance(rng, 12, 3, 1)
    Z = update_scores(X, params)
    assert abs(joint_loss(X, Z, params) - concentrated_loss(params, S)) < 1e-8


def test_concentrated_loss_matches_reference():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p = rng.integers(3, 7)
        m = rng.integers(1, 3)
        X, params, S = instance(rng, rng.integers(20, 60), p, m)
        assert abs(concentrated_loss(params, S) - reference_loss(params.phi, S.s)) < 1e-8


def test_concentrated_loss_zero_loadings_direct_formula():
    rng = np.random.default_rng(3)
    _, _, S = instance(rng, 40, 4, 2)
    psi = rng.uniform(0.5, 1.5, 4)
    params = FactorParams(np.zeros((4, 2)), psi)
    Psi = np.diag(psi)
    direct = np.linalg.norm(np.diag(1 / psi) @ np.real(scipy.linalg.sqrtm(Psi @ S.s @ Psi)) - Psi) ** 2
    assert abs(concentrated_loss(params, S) - direct) < 1e-10


def test_concentrated_loss_zero_at_truth():
    rng = np.random.default_rng(4)
    for _ in range(20):
        params = random_params(rng, 6, 2)
        assert concentrated_loss(params, params.covariance()) < 1e-10


def test_update_scores_beats_random_feasible():
    rng = np.random.default_rng(5)
    X, params, _ = instance(rng, 25, 4, 1)
    best = joint_loss(X, update_scores(X, params), params)
    for _ in range(100):
        Zr = feasible_scores(rng, 25, 1, 4, Denominator.N_MINUS_1)
        assert best <= joint_loss(X, Zr, params) + 1e-12


def test_update_scores_dimension_errors():
    rng = np.random.default_rng(6)
    params = random_params(rng, 4, 2)
    with pytest.raises(DimensionError):
        update_scores(center_columns(rng.standard_normal((6, 4))), params)


def test_update_params_exact_decomposition():
    rng = np.random.default_rng(7)
    truth = random_params(rng, 5, 2)
    Z = feasible_scores(rng, 40, 2, 5, Denominator.N)
    X = Z.f @ truth.loadings.T + Z.e * truth.psi
    est = update_params(X, Z)
    assert np.abs(est.loadings - truth.loadings).max() < 1e-10
    assert np.abs(est.psi - truth.psi).max() < 1e-10


def test_update_params_matches_elementwise_products():
    rng = np.random.default_rng(8)
    X, _, _ = instance(rng, 30, 4, 2)
    Z = feasible_scores(rng, 30, 2, 4, Denominator.N_MINUS_1)
    est = update_params(X, Z)
    n, p = X.shape
    for j in range(p):
        for k in range(2):
            assert abs(est.loadings[j, k] - sum(X[i, j] * Z.f[i, k] for i in range(n)) / (n - 1)) < 1e-12
        assert abs(est.psi[j] - sum(X[i, j] * Z.e[i, j] for i in range(n)) / (n - 1)) < 1e-12


def test_update_params_minimizes_for_fixed_scores():
    rng = np.random.default_rng(9)
    X, _, _ = instance(rng, 30, 4, 2)
    Z = feasible_scores(rng, 30, 2, 4, Denominator.N_MINUS_1)
    est = update_params(X, Z)
    base = joint_loss(X, Z, est)
    for _ in range(50):
        pert = FactorParams(est.loadings + 0.05 * rng.standard_normal((4, 2)),
                            est.psi + 0.05 * rng.standard_normal(4))
        assert base <= joint_loss(X, Z, pert) + 1e-12


def test_update_params_sparsity_and_ic5():
    rng = np.random.default_rng(10)
    X, _, _ = instance(rng, 30, 5, 2)
    Z = feasible_scores(rng, 30, 2, 5, Denominator.N_MINUS_1)
    full = update_params(X, Z)
    est = update_params(X, Z, ic5=True, sparsity_k=4)
    assert est.loadings[0, 1] == 0.0
    assert np.count_nonzero(est.loadings) <= 4
    kept = est.loadings != 0
    np.testing.assert_array_equal(est.loadings[kept], full.loadings[kept])


def test_sparsity_tie_break_keeps_lower_index():
    X = np.zeros((8, 2))
    Z = ScoreMatrix(np.zeros((8, 2)), np.zeros((8, 2)), Denominator.N)
    from mdfa.estimator import _project
    G = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 0.5, 0.0, 1.0]])
    out = _project(G, 2, sparsity_k=2)
    np.testing.assert_array_equal(out.loadings, [[1.0, 1.0], [0.0, 0.0]])
    del X, Z


def test_fit_mdfa_monotone_and_feasible():
    rng = np.random.default_rng(11)
    for _ in range(20):
        X = random_data(rng, 80, 6, 2)
        res = fit_mdfa(X, 2, FitOptions(max_iter=500))
        assert np.all(np.diff(res.loss_trace) <= 1e-12)
        assert check_scores(res.scores).passed
        assert np.all(res.params.psi2 >= 0)
        assert res.loss == pytest.approx(
            concentrated_loss(res.params, covariance(center_columns(X), Denominator.N_MINUS_1)), abs=1e-8)


def test_fit_mdfa_options():
    rng = np.random.default_rng(12)
    X = random_data(rng, 100, 6, 2)
    res = fit_mdfa(X, 2, FitOptions(ic5=True, keep_scores=True))
    assert res.params.loadings[0, 1] == 0.0
    assert np.all(np.diag(res.params.loadings[:2]) >= 0)
    assert check_scores(res.scores).passed
    res = fit_mdfa(X, 2, FitOptions(init="random", seed=1, keep_scores=False))
    assert res.scores is None
    with pytest.raises(DimensionError):
        fit_mdfa(X, 6)
    with pytest.raises(DimensionError):
        fit_mdfa(X[:7], 2)
    with pytest.raises(InvalidInput):
        FitOptions(init="nope")
    with pytest.raises(InvalidInput):
        FitOptions(tol=0)


def test_fit_mdfa_sparse_support_budget():
    rng = np.random.default_rng(13)
    spec = desk_setting(1)
    for rep in range(10):
        truth = gen_true_params(spec, rng)
        X = gen_dataset(truth.sigma, 300, rng)
        res = fit_mdfa(X, 2, FitOptions(sparsity_k=8))
        assert np.count_nonzero(res.params.loadings) <= 8
        assert np.all(np.diff(res.loss_trace) <= 1e-12)


def test_rotation_invariance_of_loss():
    rng = np.random.default_rng(14)
    X, _, S = instance(rng, 60, 6, 3)
    res = fit_mdfa(X, 3)
    base = concentrated_loss(res.params, S)
    for _ in range(100):
        R = random_rotation(rng, 3)
        rot = FactorParams(res.params.loadings @ R, res.params.psi)
        assert abs(concentrated_loss(rot, S) - base) < 1e-10


def test_rotated_fixed_point_stays_fixed():
    rng = np.random.default_rng(15)
    X, _, S = instance(rng, 60, 6, 2)
    res = fit_mdfa_cov(S, 2, FitOptions(tol=1e-15, max_iter=20000))
    R = random_rotation(rng, 2)
    rot = FactorParams(res.params.loadings @ R, res.params.psi)
    again = fit_mdfa_cov(S, 2, FitOptions(init=rot, max_iter=1, tol=1e-15))
    assert np.linalg.norm(again.params.phi - rot.phi) < 1e-5


@pytest.mark.parametrize("den", list(Denominator))
def test_cov_path_matches_data_path(den):
    rng = np.random.default_rng(16)
    for _ in range(10):
        X = random_data(rng, 100, 6, 2)
        opts = FitOptions(denominator=den, tol=1e-13)
        a = fit_mdfa(X, 2, opts)
        b = fit_mdfa_cov(covariance(center_columns(X), den), 2, opts)
        assert np.linalg.norm(a.params.phi - b.params.phi) < 1e-6


def test_cov_path_fixed_point_at_truth():
    rng = np.random.default_rng(17)
    params = random_params(rng, 6, 2)
    res = fit_mdfa_cov(params.covariance(), 2, FitOptions(init=params, max_iter=5))
    assert np.linalg.norm(res.params.phi - params.phi) < 1e-10
    assert res.loss < 1e-10


def test_cov_path_monotone_and_rejects_singular():
    rng = np.random.default_rng(18)
    for _ in range(20):
        B = rng.standard_normal((5, 8))
        S = B @ B.T / 8 + np.diag(rng.uniform(0.1, 1.0, 5))
        res = fit_mdfa_cov(S, 2, FitOptions(max_iter=500))
        assert np.all(np.diff(res.loss_trace) <= 1e-12)
    with pytest.raises(NotPsd):
        fit_mdfa_cov(np.ones((4, 4)), 1)


def test_fit_pca_planted_svd():
    rng = np.random.default_rng(19)
    n, p, m = 50, 6, 2
    K, _ = np.linalg.qr(rng.standard_normal((n, p)))
    L, _ = np.linalg.qr(rng.standard_normal((p, p)))
    D = np.array([9.0, 7.0, 3.0, 2.0, 1.0, 0.5])
    X = K * D @ L.T
    lam, F = fit_pca(X, m, Denominator.N)
    ref = L[:, :m] * D[:m] / np.sqrt(n)
    s = np.sign(np.sum(lam * ref, axis=0))
    assert np.abs(lam * s - ref).max() < 1e-10
    off = lam.T @ lam
    assert abs(off[0, 1]) < 1e-10
    resid = np.linalg.norm(X - F @ lam.T) ** 2 / n
    assert abs(resid - np.sum(D[m:] ** 2) / n) < 1e-8


def test_fit_ols_exact_model():
    rng = np.random.default_rng(20)
    truth = random_params(rng, 8, 2)
    res = fit_ols(truth.covariance(), 2, FitOptions(tol=1e-16, max_iter=20000))
    assert ols_objective(truth.covariance(), res.params) < 1e-10


def test_fit_ols_monotone_and_nested():
    rng = np.random.default_rng(21)
    for _ in range(30):
        B = rng.standard_normal((6, 10))
        S = B @ B.T / 10
        r1 = fit_ols(S, 1)
        r5 = fit_ols(S, 5)
        assert np.all(np.diff(r1.loss_trace) <= 1e-12)
        assert np.all(np.diff(r5.loss_trace) <= 1e-12)
        assert r5.loss <= r1.loss + 1e-10


def test_mdfa_beats_pca_setting1():
    spec = desk_setting(1)
    se_m, se_p = [], []
    for rep in range(50):
        rng = np.random.default_rng([42, rep])
        truth = gen_true_params(spec, rng)
        X = center_columns(gen_dataset(truth.sigma, 2000, rng))
        se_m.append(se_lambda(fit_mdfa(X, 2, FitOptions(keep_scores=False)).params.loadings, truth.loadings))
        se_p.append(se_lambda(fit_pca(X, 2)[0], truth.loadings))
    assert np.median(se_m) < np.median(se_p)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 6), st.integers(1, 2), st.integers(20, 60), st.integers(0, 2**32 - 1))
def test_profile_identity_property(p, m, n, seed):
    rng = np.random.default_rng(seed)
    X, params, S = instance(rng, n, p, m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        Z = update_scores(X, params)
    assert abs(joint_loss(X, Z, params) - concentrated_loss(params, S)) < 1e-8


def test_bounds_respected_by_fit():
    rng = np.random.default_rng(22)
    X = 10 * random_data(rng, 100, 5, 1)
    b = Bounds(c_lambda=2.0, c_lower=0.1, c_upper=3.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = fit_mdfa(X, 1, FitOptions(bounds=b))
    assert res.params.is_valid()
    assert np.all(np.diff(res.loss_trace) <= 1e-12)

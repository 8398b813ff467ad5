import warnings

import numpy as np
import pytest

from rot_sdr import cert as C
from rot_sdr.errors import DegenerateExtraction, InvalidArgument
from rot_sdr.policy import resolve_c_sq
from rot_sdr.rotmath import quat_angle, random_quat
from rot_sdr.sdr import (SolverOptions, assemble_B, assemble_bigQ, assemble_bigQ_yc, block, constraint_residual,
                         constraint_residual_yc, extract_quaternion, lift, lift_yc, project_affine,
                         project_affine_yc, project_psd, rank1_ratio, sdr_objective, sdr_yc_objective,
                         solve_sdr, solve_sdr_yc, solver_tight)
from rot_sdr.synth import GenConfig, gen_instance
from rot_sdr.tls import tls_by_classification, tls_objective


def _inst(**kw):
    return gen_instance(GenConfig(**kw))


def test_assembly_structure():
    inst = _inst(ell=1, kstar=1, outliers="none", seed=0)
    Q = assemble_bigQ(inst.Qs, 0.5)
    assert Q.shape == (8, 8)
    np.testing.assert_allclose(block(Q, 0, 1), 0.5 * (inst.Qs[0] - 0.5 * np.eye(4)))
    np.testing.assert_array_equal(block(Q, 0, 0), 0.0)
    np.testing.assert_array_equal(block(Q, 1, 1), 0.0)
    assert np.trace(Q) == 0.0
    B = assemble_B(3)
    assert B.shape == (16, 16) and np.trace(B) == 4
    with pytest.raises(InvalidArgument):
        assemble_bigQ(inst.Qs, [1.0, 2.0])


def test_lift_objective_equals_tls():
    rng = np.random.default_rng(1)
    inst = _inst(ell=8, kstar=5, sigma=0.05, seed=1)
    c = np.full(8, 0.7)
    Q = assemble_bigQ(inst.Qs, c)
    for _ in range(20):
        w = random_quat(rng)
        theta = rng.integers(0, 2, 8).astype(float)
        W = lift(w, theta)
        direct = sum(t * (w @ Qi @ w) + (1 - t) * ci for t, Qi, ci in zip(theta, inst.Qs, c))
        assert sdr_objective(Q, c, W) == pytest.approx(direct, abs=1e-12)
        assert constraint_residual(W) <= 1e-12
        best = (np.einsum("a,iab,b->i", w, inst.Qs, w) < c).astype(float)
        assert sdr_objective(Q, c, lift(w, best)) == pytest.approx(tls_objective(w, inst.Qs, c), abs=1e-12)
    assert sdr_objective(Q, c, lift(w, np.zeros(8))) == pytest.approx(c.sum())


def test_lift_all_kept_clean_is_zero():
    inst = _inst(ell=6, kstar=6, outliers="none", seed=2)
    Q = assemble_bigQ(inst.Qs, 1.0)
    assert sdr_objective(Q, np.ones(6), lift(inst.w_star, np.ones(6))) == pytest.approx(0.0, abs=1e-12)


def test_yc_lift_objective():
    rng = np.random.default_rng(3)
    inst = _inst(ell=6, kstar=4, sigma=0.05, seed=3)
    c = np.full(6, 0.6)
    Qp, Q = assemble_bigQ_yc(inst.Qs, c)
    w = random_quat(rng)
    # s_i = +1 keeps a pair, -1 truncates it
    signs = np.where(np.einsum("a,iab,b->i", w, inst.Qs, w) < c, 1.0, -1.0)
    A = lift_yc(w, signs)
    assert sdr_yc_objective(Qp, Q, c, A) == pytest.approx(tls_objective(w, inst.Qs, c), abs=1e-12)
    assert constraint_residual_yc(A) <= 1e-12


def test_projections_idempotent_and_feasible():
    rng = np.random.default_rng(4)
    n = 4 * 6
    V = rng.standard_normal((n, n))
    V = V + V.T
    P = project_affine(V)
    assert constraint_residual(P) <= 1e-12
    np.testing.assert_allclose(project_affine(P), P, atol=1e-12)
    # optimality of the projection: V - P is orthogonal to feasible directions
    F1, F2 = project_affine(rng.standard_normal((n, n))), project_affine(np.zeros((n, n)))
    assert abs(np.sum((V - P) * (F1 - F2))) <= 1e-9
    Y = project_affine_yc(V)
    assert constraint_residual_yc(Y) <= 1e-12
    np.testing.assert_allclose(project_affine_yc(Y), Y, atol=1e-12)
    Z = project_psd(V)
    assert np.linalg.eigvalsh(Z)[0] >= -1e-10
    np.testing.assert_allclose(project_psd(Z), Z, atol=1e-10)


def test_rank1_ratio_and_extraction():
    inst = _inst(ell=5, kstar=5, outliers="none", seed=5)
    W = lift(inst.w_star, np.ones(5))
    w, ratio = extract_quaternion(W)
    assert quat_angle(w, inst.w_star) < 1e-7
    assert ratio == float("inf") or ratio > 1e12
    assert rank1_ratio(np.diag([2.0, 1.0, 0, 0])) == 2.0
    with pytest.raises(DegenerateExtraction):
        extract_quaternion(np.diag([0.0, 0, 0, 0, 1.0, 0, 0, 0]))


def test_solver_options():
    assert SolverOptions.from_dict({"tol": 1e-8, "adapt": False}).tol == 1e-8
    with pytest.raises(InvalidArgument):
        SolverOptions.from_dict({"tolerance": 1})
    with pytest.raises(InvalidArgument):
        SolverOptions.from_dict({"tol": -1})


def test_clean_solve_tight():
    inst = _inst(ell=10, kstar=10, outliers="none", seed=6)
    c = np.ones(10)
    sol = solve_sdr(assemble_bigQ(inst.Qs, c), c)
    assert sol.converged
    assert abs(sol.objective) <= 1e-7
    assert sol.rank1_ratio >= 1e6
    assert sol.min_eig >= -1e-8 * (1 + np.linalg.norm(sol.W))
    assert sol.constraint_residual <= 1e-7
    w, _ = extract_quaternion(sol.W)
    assert quat_angle(w, inst.w_star) < 1e-4


def test_noisy_solve_matches_certificate_and_tls():
    inst = _inst(ell=8, kstar=8, sigma=0.01, outliers="none", seed=7)
    c = resolve_c_sq({"kind": "noisy"}, inst)
    sol = solve_sdr(assemble_bigQ(inst.Qs, c), c)
    tls = tls_by_classification(inst.Qs, c, range(8))
    cert = C.cert_noisy(inst.Qs, c)
    tol = 1e-9
    assert sol.converged
    # strong duality at a verified certificate
    assert abs(sol.objective - (cert.mu_hat + c.sum())) <= 10 * tol * max(1.0, sol.objective) + 1e-8
    assert solver_tight(sol.objective, tls.value, sol.rank1_ratio)
    w, _ = extract_quaternion(sol.W)
    assert quat_angle(w, tls.w_hat) <= 1e-4


def test_relaxation_below_every_lift():
    rng = np.random.default_rng(8)
    inst = _inst(ell=8, kstar=6, outliers="clustered", cl_dot=0.9, seed=8)
    c = np.ones(8)
    Q = assemble_bigQ(inst.Qs, c)
    sol = solve_sdr(Q, c)
    for _ in range(20):
        W = lift(random_quat(rng), rng.integers(0, 2, 8).astype(float))
        assert sol.objective <= sdr_objective(Q, c, W) + 1e-8
    truth = sdr_objective(Q, c, lift(inst.w_star, inst.inlier.astype(float)))
    assert sol.objective < truth - 10 * 1e-9
    # non-tight: the solution is far from rank one (observed, recorded here as a sanity bound)
    assert sol.rank1_ratio < 1e3


def test_solver_determinism_and_cap():
    inst = _inst(ell=6, kstar=6, sigma=0.01, outliers="none", seed=9)
    c = np.full(6, 0.1)
    Q = assemble_bigQ(inst.Qs, c)
    a = solve_sdr(Q, c, record=True)
    b = solve_sdr(Q, c, record=True)
    np.testing.assert_array_equal(a.W, b.W)
    assert a.history == b.history
    capped = solve_sdr(Q, c, SolverOptions(max_iter=5))
    assert not capped.converged and capped.iterations <= 6
    assert capped.primal_residual > 1e-9


def test_weak_duality_with_certificate():
    inst = _inst(ell=7, kstar=4, seed=10)
    c = resolve_c_sq({"kind": "small_outliers"}, inst)
    cert = C.cert_outliers_small_c(inst.Qs, c, 4)
    sol = solve_sdr(assemble_bigQ(inst.Qs, c), c)
    assert sol.objective >= cert.mu_hat + c.sum() - 1e-8


def test_yc_agrees_on_clean():
    inst = _inst(ell=6, kstar=6, outliers="none", seed=11)
    c = np.ones(6)
    Qp, Q = assemble_bigQ_yc(inst.Qs, c)
    sol = solve_sdr_yc(Qp, Q, c)
    assert sol.converged and abs(sol.objective) <= 1e-7 and sol.rank1_ratio >= 1e6


def test_against_interior_point_solver():
    cp = pytest.importorskip("cvxpy")
    if "CLARABEL" not in cp.installed_solvers():
        pytest.skip("Clarabel not available")
    for seed, kw in enumerate([dict(ell=5, kstar=3), dict(ell=6, kstar=4, outliers="clustered", cl_dot=0.9),
                               dict(ell=5, kstar=5, sigma=0.05, outliers="none")]):
        inst = _inst(seed=seed, **kw)
        c = np.full(inst.ell, 0.5)
        Q = assemble_bigQ(inst.Qs, c)
        n = Q.shape[0]
        W = cp.Variable((n, n), symmetric=True)
        cons = [W >> 0, cp.trace(W[:4, :4]) == 1]
        for i in range(1, inst.ell + 1):
            blk = W[4 * i:4 * i + 4, 4 * i:4 * i + 4]
            off = W[:4, 4 * i:4 * i + 4]
            cons.append(off == blk)
        prob = cp.Problem(cp.Minimize(cp.trace(Q @ W) + c.sum()), cons)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            ref = prob.solve(solver="CLARABEL")
        assert prob.status in ("optimal", "optimal_inaccurate")
        ours = solve_sdr(Q, c).objective
        assert abs(ours - ref) <= 1e-6 * max(1.0, abs(ref))

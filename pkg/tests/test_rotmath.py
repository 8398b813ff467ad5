import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from rot_sdr.errors import InvalidArgument
from rot_sdr.rotmath import (axis_angle_rot, build_Q, canonical_quat, decompose_inlier, q_eigvals,
                             q_spectrum_closed_form, quat_angle, quat_to_rot, random_quat, rot_angle,
                             rot_to_axis_angle, rot_to_quat, u_matrix)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def test_identity_and_half_turn():
    np.testing.assert_array_equal(quat_to_rot([1.0, 0, 0, 0]), np.eye(3))
    np.testing.assert_array_equal(quat_to_rot([0.0, 1, 0, 0]), np.diag([1.0, -1, -1]))
    np.testing.assert_array_equal(rot_to_quat(np.eye(3)), [1.0, 0, 0, 0])
    np.testing.assert_allclose(rot_to_quat(np.diag([1.0, -1, -1])), [0.0, 1, 0, 0], atol=1e-15)


def test_quat_to_rot_matches_scipy(rng):
    # scipy stores quaternions scalar-last
    for _ in range(200):
        w = random_quat(rng)
        ref = Rotation.from_quat([w[1], w[2], w[3], w[0]]).as_matrix()
        np.testing.assert_allclose(quat_to_rot(w), ref, atol=1e-13)


def test_rotation_is_orthogonal(rng):
    for _ in range(100):
        R = quat_to_rot(random_quat(rng))
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_round_trip_1000(rng):
    worst = 0.0
    for _ in range(1000):
        R = Rotation.random(random_state=rng).as_matrix()
        worst = max(worst, np.max(np.abs(quat_to_rot(rot_to_quat(R)) - R)))
    assert worst <= 1e-9


def test_rot_to_quat_is_canonical(rng):
    for _ in range(100):
        w = rot_to_quat(quat_to_rot(random_quat(rng)))
        first = w[np.flatnonzero(np.abs(w) > 1e-12)[0]]
        assert first > 0


def test_canonical_sign():
    np.testing.assert_array_equal(canonical_quat([-0.5, 0.5, 0.5, 0.5]), [0.5, -0.5, -0.5, -0.5])
    np.testing.assert_array_equal(canonical_quat([0.0, -1.0, 0, 0]), [0.0, 1.0, 0, 0])


@pytest.mark.parametrize("bad", [[1.0, 1.0, 0, 0], [0.5, 0, 0, 0], [np.nan, 0, 0, 1]])
def test_non_unit_rejected(bad):
    with pytest.raises(InvalidArgument):
        quat_to_rot(bad)


def test_non_rotation_rejected():
    with pytest.raises(InvalidArgument):
        rot_to_quat(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidArgument):
        rot_to_quat(2 * np.eye(3))


def test_spectrum_examples():
    np.testing.assert_allclose(q_eigvals(build_Q([1.0, 0, 0], [1.0, 0, 0])), [0, 0, 4, 4], atol=1e-14)
    y = np.array([0.0, 2.0, 0.0])
    x = np.array([0.6, 0.0, 0.8])
    np.testing.assert_allclose(q_spectrum_closed_form(y, x), [9, 9, 1, 1])
    np.testing.assert_allclose(q_eigvals(build_Q(y, x)), [1, 1, 9, 9], atol=1e-13)
    np.testing.assert_array_equal(q_spectrum_closed_form(np.zeros(3), np.zeros(3)), np.zeros(4))


def test_quadratic_form_is_residual(rng):
    for _ in range(200):
        y, x = rng.standard_normal(3), rng.standard_normal(3)
        w = random_quat(rng)
        res = np.sum((y - quat_to_rot(w) @ x) ** 2)
        assert abs(w @ build_Q(y, x) @ w - res) <= 1e-10 * max(1.0, res)


def test_build_Q_symmetric_and_batched(rng):
    ys, xs = rng.standard_normal((7, 3)), rng.standard_normal((7, 3))
    Qs = build_Q(ys, xs)
    assert Qs.shape == (7, 4, 4)
    np.testing.assert_allclose(Qs, np.swapaxes(Qs, 1, 2), atol=1e-15)
    for i in range(7):
        np.testing.assert_allclose(Qs[i], build_Q(ys[i], xs[i]))


def test_u_matrix_linear_in_each_argument(rng):
    y1, y2, x = rng.standard_normal((3, 3))
    np.testing.assert_allclose(u_matrix(y1 + 2 * y2, x), u_matrix(y1, x) + 2 * u_matrix(y2, x), atol=1e-13)


def test_min_quadratic_form_is_lambda_min(rng):
    # minimum of w^T Q w over the sphere, brute force over many samples vs (|y| - |x|)^2
    y, x = rng.standard_normal(3), rng.standard_normal(3)
    lam = (np.linalg.norm(y) - np.linalg.norm(x)) ** 2
    assert abs(np.linalg.eigvalsh(build_Q(y, x))[0] - lam) < 1e-10
    ws = rng.standard_normal((20000, 4))
    ws /= np.linalg.norm(ws, axis=1, keepdims=True)
    vals = np.einsum("na,ab,nb->n", ws, build_Q(y, x), ws)
    assert vals.min() >= lam - 1e-12


def test_decompose_noiseless():
    R = axis_angle_rot([0, 0, 1], 0.3)
    d = decompose_inlier([1.0, 2.0, 3.0], R, np.zeros(3))
    assert d.eps_sq == 0.0
    np.testing.assert_array_equal(d.E, np.zeros((4, 4)))
    np.testing.assert_allclose(d.P, build_Q(R @ [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]))


def test_decompose_inlier_claims(rng):
    for _ in range(200):
        w_star = random_quat(rng)
        R = quat_to_rot(w_star)
        x, eps = rng.standard_normal(3), 0.1 * rng.standard_normal(3)
        y = R @ x + eps
        d = decompose_inlier(x, R, eps)
        Q = build_Q(y, x)
        assert np.linalg.norm(d.P + d.E + d.eps_sq * np.eye(4) - Q) <= 1e-10 * np.linalg.norm(Q)
        assert np.linalg.norm(d.P @ w_star) <= 1e-12 * (1 + np.linalg.norm(d.P))
        nx = np.linalg.norm(x)
        np.testing.assert_allclose(np.linalg.eigvalsh(d.P), [0, 0, 4 * nx**2, 4 * nx**2], atol=1e-10)
        a, b = 2 * eps @ (R @ x), 2 * np.linalg.norm(eps) * nx
        np.testing.assert_allclose(np.linalg.eigvalsh(d.E), [a - b, a - b, a + b, a + b], atol=1e-10)
        w = random_quat(rng)
        assert abs(w @ d.E @ w - 2 * eps @ (R @ x - quat_to_rot(w) @ x)) < 1e-10


def test_quat_angle_examples(rng):
    w = random_quat(rng)
    assert quat_angle(w, w) == pytest.approx(0.0, abs=1e-7)
    assert quat_angle(w, -w) == pytest.approx(0.0, abs=1e-7)
    assert quat_angle([1.0, 0, 0, 0], [0.0, 1, 0, 0]) == pytest.approx(np.pi)
    with pytest.raises(InvalidArgument):
        quat_angle([1.0, 0, 0, 0], [2.0, 0, 0, 0])


def test_quat_angle_matches_trace(rng):
    for _ in range(500):
        w1, w2 = random_quat(rng), random_quat(rng)
        ref = rot_angle(quat_to_rot(w1).T @ quat_to_rot(w2))
        assert abs(quat_angle(w1, w2) - ref) <= 1e-7
        # the trace formula loses precision near 0 and pi; compare cosines there
        assert abs(np.cos(quat_angle(w1, w2) / 2) - abs(w1 @ w2)) <= 1e-8


def test_half_angle_composition(rng):
    # cos(phi_12 / 2) from the quaternion dot and from axis/angle of each rotation
    for _ in range(200):
        w1, w2 = random_quat(rng), random_quat(rng)
        b1, p1 = rot_to_axis_angle(quat_to_rot(w1))
        b2, p2 = rot_to_axis_angle(quat_to_rot(w2))
        two_way = np.cos(p1 / 2) * np.cos(p2 / 2) + (b1 @ b2) * np.sin(p1 / 2) * np.sin(p2 / 2)
        # rot_to_axis_angle returns canonical quaternions, so compare magnitudes
        assert abs(abs(two_way) - abs(w1 @ w2)) <= 1e-8


def test_axis_angle_round_trip(rng):
    for _ in range(100):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        ang = rng.uniform(0, np.pi)
        b, phi = rot_to_axis_angle(axis_angle_rot(axis, ang))
        assert phi == pytest.approx(ang, abs=1e-7)
        assert abs(np.linalg.norm(b) - 1) < 1e-12
        if ang > 1e-3:
            np.testing.assert_allclose(b, axis, atol=1e-7)

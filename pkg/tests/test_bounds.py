import numpy as np
import pytest

from rot_sdr.bounds import (RATIO_COLUMNS, band_probability, concentration_report, ell_condition, error_bound,
                            lambda_min2_closed_form, lambda_min2_direct, ratio_experiment, write_ratio_csv)
from rot_sdr.errors import InvalidArgument
from rot_sdr.rotmath import decompose_inlier, quat_to_rot, random_quat
from rot_sdr.synth import GenConfig, gen_instance
from rot_sdr.tls import tls_by_classification


def test_closed_form_examples():
    assert lambda_min2_closed_form([[1.0, 2.0, 3.0]]) == pytest.approx(0.0, abs=1e-12)
    assert lambda_min2_closed_form(np.eye(3)) == pytest.approx(8.0)
    P = sum(decompose_inlier(x, np.eye(3), np.zeros(3)).P for x in np.eye(3))
    assert np.linalg.eigvalsh(P)[1] == pytest.approx(8.0)
    with pytest.raises(InvalidArgument):
        lambda_min2_closed_form(np.zeros((0, 3)))


def test_closed_form_matches_direct():
    rng = np.random.default_rng(0)
    for _ in range(50):
        xs = rng.standard_normal((100, 3))
        R = quat_to_rot(random_quat(rng))
        a, b = lambda_min2_closed_form(xs), lambda_min2_direct(xs, R)
        assert abs(a - b) <= 1e-8 * abs(b)


def test_error_bound_noiseless():
    inst = gen_instance(GenConfig(ell=10, kstar=10, outliers="none", seed=1))
    rep = error_bound(inst, inst.w_star)
    assert rep.sin_sq_tau == pytest.approx(0.0, abs=1e-14) and rep.rhs == 0.0 and rep.holds


def test_error_bound_noisy_and_restricted():
    for seed in range(10):
        inst = gen_instance(GenConfig(ell=100, kstar=100, sigma=0.01, outliers="none", seed=seed))
        w = tls_by_classification(inst.Qs, 1.0, inst.inlier_set).w_hat
        assert error_bound(inst, w).holds
    inst = gen_instance(GenConfig(ell=60, kstar=50, sigma=0.01, seed=3))
    w = tls_by_classification(inst.Qs, 1.0, inst.inlier_set).w_hat
    rep = error_bound(inst, w, inst.inlier_set)
    assert rep.holds and 0 <= rep.sin_sq_tau <= 1


def test_error_bound_needs_ground_truth():
    inst = gen_instance(GenConfig(ell=4, kstar=4, outliers="none", seed=1))
    inst.eps = None
    with pytest.raises(InvalidArgument):
        error_bound(inst, inst.w_star)


def test_ratio_experiment_and_csv(tmp_path):
    s = ratio_experiment(100, 50, seed=1)
    assert s.ratios.shape == (50,)
    assert np.all(s.ratios >= 0.25)
    assert not s.band_asserted
    assert ratio_experiment(400, 2, seed=1).band_asserted
    p = tmp_path / "r.csv"
    write_ratio_csv([s], p)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(RATIO_COLUMNS) and len(lines) == 51


def test_ell_condition_and_probability():
    assert ell_condition(400, 4.0) and not ell_condition(300, 4.0)
    assert band_probability(4.0) == pytest.approx(1 - np.exp(-8) - 2 * np.exp(-6))


def test_concentration_report_consistent():
    rep = concentration_report(200, 400, seed=2, t=2.0)
    assert rep.consistent
    assert rep.norm_frequency >= rep.norm_claim

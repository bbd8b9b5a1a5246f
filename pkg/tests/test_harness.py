import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from egofuse.errors import EmptyOverlap, SingularCovariance, TimestampMismatch
from egofuse.fusion import FilterConfig, inject_error
from egofuse.geom import attitude_error, quat_to_rot
from egofuse.harness import (align, chi2_bounds, coarse_init, compute_metrics, compute_nees,
                             format_triple, monte_carlo, nees_series, perturbed_init, run_one,
                             thread_count)
from egofuse.inertial import ImuSample, NominalState
from egofuse.sim import Scenario, euler_to_quat, generate_truth

series = st.integers(1, 40).flatmap(
    lambda n: st.tuples(arrays(np.float64, (n, 3), elements=st.floats(-10, 10)),
                        arrays(np.float64, (n, 3), elements=st.floats(-10, 10))))


def test_metrics_examples():
    t = np.arange(5) * 0.01
    gt = np.random.default_rng(0).normal(size=(5, 3))
    m = compute_metrics(t, gt, t, gt)
    assert m.mse.tolist() == [0, 0, 0] and m.mae.tolist() == [0, 0, 0] and m.n == 5
    m = compute_metrics(t, gt + [0.1, 0, 0], t, gt)
    assert m.mae[0] == pytest.approx(0.1, abs=1e-15)
    assert m.mse[0] == pytest.approx(0.01, abs=1e-15)
    assert format_triple([0.0183, 0.009, 0.0028]) == "0.0183, 0.0090, 0.0028"
    assert m.as_dict()["n"] == 5 and "MSE" in m.table_row()


@given(series)
def test_jensen_and_sign_symmetry(pair):
    est, gt = pair
    t = np.arange(len(est), dtype=float)
    m = compute_metrics(t, est, t, gt)
    assert np.all(m.mae ** 2 <= m.mse * (1 + 1e-12) + 1e-300)
    neg = compute_metrics(t, -est, t, -gt)
    np.testing.assert_array_equal(neg.mse, m.mse)
    np.testing.assert_array_equal(neg.mae, m.mae)


def test_alignment_is_exact():
    gt_t = np.array([0.0, 0.1, 0.2, 0.3])
    np.testing.assert_array_equal(align([0.3, 0.1], gt_t), [3, 1])
    with pytest.raises(TimestampMismatch):
        align([0.15], gt_t)
    with pytest.raises(EmptyOverlap):
        align([], gt_t)


def test_chi2_bounds():
    lo, hi = chi2_bounds(50)
    assert lo == pytest.approx(2.36, abs=0.005) and hi == pytest.approx(3.72, abs=0.005)


def test_nees_examples():
    rng = np.random.default_rng(1)
    P = np.tile(np.diag([0.1, 0.2, 0.3]), (20, 1, 1))
    zero = [(np.zeros((20, 3)), P, np.zeros((20, 3)))] * 3
    assert compute_nees(zero).mean_nees == 0.0
    runs = [(np.zeros((20, 3)), P, rng.normal(size=(20, 3))) for _ in range(5)]
    a = compute_nees(runs).mean_nees
    b = compute_nees([(e, 4 * p, g) for e, p, g in runs]).mean_nees
    assert b == pytest.approx(a / 4, rel=1e-14)
    diag = nees_series(runs[0][0], np.diagonal(P, axis1=1, axis2=2), runs[0][2])
    np.testing.assert_allclose(diag, nees_series(*runs[0]), rtol=1e-14)


def test_nees_of_consistent_errors_within_bounds():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(3, 3))
    P = A @ A.T + 0.1 * np.eye(3)
    Lc = np.linalg.cholesky(P)
    runs = [(np.zeros((100, 3)), np.tile(P, (100, 1, 1)), rng.standard_normal((100, 3)) @ Lc.T)
            for _ in range(50)]
    stats = compute_nees(runs, nis=[rng.chisquare(3, 30) for _ in range(50)])
    assert stats.nees_ok
    lo, hi = stats.nis_bounds
    assert lo <= stats.mean_nis <= hi


def test_nees_singular():
    with pytest.raises(SingularCovariance):
        nees_series(np.zeros((2, 3)), np.zeros((2, 3, 3)), np.ones((2, 3)))
    with pytest.raises(SingularCovariance):
        nees_series(np.zeros((2, 3)), np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(EmptyOverlap):
        compute_nees([])


def test_coarse_init():
    q = euler_to_quat(0.1, -0.2, 0.0)
    f = quat_to_rot(q).T @ [0, 0, 9.80665]
    s = coarse_init([ImuSample(0.0, np.zeros(3), f)])
    assert np.abs(attitude_error(q, s.q)).max() < 1e-12
    np.testing.assert_array_equal(s.v, np.zeros(3))


def test_perturbed_init_is_inverse_of_injection():
    truth0 = NominalState(q=euler_to_quat(0.2, 0.1, 1.0), v=[1, 2, 3])
    P0 = FilterConfig().P0
    x0 = perturbed_init(truth0, P0, np.random.default_rng(4))
    dx = np.random.default_rng(4).multivariate_normal(np.zeros(12), P0, method="cholesky")
    back = inject_error(x0, dx)
    np.testing.assert_allclose(back.q, truth0.q, atol=1e-12)
    np.testing.assert_allclose(back.v, truth0.v, atol=1e-12)
    np.testing.assert_allclose(back.bg, 0, atol=1e-15)


def test_run_one_and_monte_carlo_thread_independence():
    sc = Scenario(duration=4.0)
    cfg = FilterConfig()
    r = run_one(sc, cfg)
    assert len(r.t) == len(generate_truth(sc)) and len(r.nis) == 21
    s1, res1 = monte_carlo(sc, cfg, 4, threads=1)
    s3, res3 = monte_carlo(sc, cfg, 4, threads=3)
    assert [x.seed for x in res3] == [0, 1, 2, 3]
    assert s1.mean_nees == s3.mean_nees and s1.mean_nis == s3.mean_nis
    for a, b in zip(res1, res3):
        assert a.est_v.tobytes() == b.est_v.tobytes()


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("EGOFUSE_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("EGOFUSE_THREADS", "junk")
    assert thread_count(2) == 2
    monkeypatch.delenv("EGOFUSE_THREADS")
    assert thread_count(5) == 5

import numpy as np
import pytest

from liporbit.action import action_value
from liporbit.linking import (
    InfeasibleGeometryError,
    LinkingGeometry,
    NonCoerciveError,
    alpha_lower_bound,
    calibrate_saddle,
    calibrate_superquadratic,
    certify_linking,
    outer_boundary_bound,
    sphere_sample,
    threshold_period,
    unit_direction,
)
from liporbit.potentials import PotentialModel, make_maxpair, make_quartic, make_subq32
from liporbit.trajectory import PeriodicTrajectory, l2_norm, sup_norm

TWO_PI = 2.0 * np.pi

QUARTIC_CERTS = {"A": 0.25, "radius": 1.0, "a1": 0.25, "a2": 0.0, "mu1": 4.0}


# -- the quadratic lower bound ------------------------------------------


def test_alpha_bound_threshold_boundary_case():
    # At T = pi sqrt(2/A) the coefficient vanishes identically.
    assert alpha_lower_bound(1.0, np.pi * np.sqrt(2.0), 1.0) == 0.0


def test_alpha_bound_plugin_value():
    assert np.isclose(alpha_lower_bound(1.0, np.pi, 1.0), 0.25, rtol=1e-15)


def test_alpha_bound_zero_radius():
    assert alpha_lower_bound(2.0, 1.0, 0.0) == 0.0


def test_alpha_bound_quadratic_in_rho():
    A, T = 0.7, 1.3
    base = alpha_lower_bound(A, T, 1.0)
    for rho in (0.5, 2.0, 3.7):
        assert np.isclose(alpha_lower_bound(A, T, rho), base * rho ** 2, rtol=1e-14)


def test_alpha_bound_decreasing_in_T_with_exact_sign_flip():
    A = 0.8
    thr = threshold_period(A)
    Ts = np.linspace(0.1, thr * 0.999, 50)
    vals = [alpha_lower_bound(A, T, 1.0) for T in Ts]
    assert np.all(np.diff(vals) < 0)
    # the flip sits at the threshold to rounding accuracy
    assert abs(alpha_lower_bound(A, thr, 1.0)) < 1e-14
    assert alpha_lower_bound(A, thr * (1.0 + 1e-13), 1.0) < 0.0
    assert alpha_lower_bound(A, thr * (1.0 - 1e-13), 1.0) > 0.0


def test_unit_direction_is_normalized_zero_mean():
    e = unit_direction(TWO_PI, 2)
    assert np.isclose(l2_norm(e.derivative()), 1.0, rtol=1e-14)
    assert np.all(e.a0 == 0.0)


# -- superquadratic calibration -----------------------------------------


def test_calibrate_quartic_positive_alpha():
    V = make_quartic(1)
    geom = calibrate_superquadratic(V, QUARTIC_CERTS, TWO_PI)
    assert geom.alpha_bound > 0
    assert geom.r2 > geom.rho > 0
    assert geom.r1 == geom.r2 / 4.0
    # rho capped by the Sobolev map into the certificate ball
    assert np.isclose(np.sqrt(TWO_PI / 12.0) * geom.rho, 1.0, rtol=1e-12)


def test_calibrate_refuses_at_threshold():
    V = make_quartic(1)
    certs = dict(QUARTIC_CERTS, A=1.0)
    T_thr = threshold_period(1.0)
    with pytest.raises(InfeasibleGeometryError, match="threshold"):
        calibrate_superquadratic(V, certs, T_thr)
    with pytest.raises(InfeasibleGeometryError):
        calibrate_superquadratic(V, certs, T_thr * 1.5)


def test_calibrate_alpha_positive_below_threshold():
    V = make_quartic(1)
    certs = dict(QUARTIC_CERTS, A=1.0)
    geom = calibrate_superquadratic(V, certs, 0.9 * threshold_period(1.0))
    assert geom.alpha_bound > 0


def test_calibrate_r2_nonincreasing_in_a1():
    V = make_quartic(1)
    r2s = []
    for a1 in (0.05, 0.25, 1.0, 5.0):
        geom = calibrate_superquadratic(V, dict(QUARTIC_CERTS, a1=a1), TWO_PI)
        r2s.append(geom.r2)
    assert all(x >= y for x, y in zip(r2s, r2s[1:]))


def test_calibrate_validates_constants():
    V = make_quartic(1)
    with pytest.raises(ValueError, match="mu1 > 2"):
        calibrate_superquadratic(V, dict(QUARTIC_CERTS, mu1=1.5), 1.0)
    with pytest.raises(ValueError, match="a1"):
        calibrate_superquadratic(V, dict(QUARTIC_CERTS, a1=0.0), 1.0)


def test_outer_bound_dominates_f_on_rays():
    # The Jensen bound must sit above the true action along x1 + s e.
    V = make_quartic(1)
    geom = calibrate_superquadratic(V, QUARTIC_CERTS, TWO_PI)
    e = geom.e.pad_modes(8)
    e_l2sq = l2_norm(e) ** 2
    rng = np.random.default_rng(0)
    for _ in range(30):
        s = rng.uniform(0, geom.r2)
        x1 = rng.uniform(-geom.r1, geom.r1, size=1)
        q = PeriodicTrajectory.constant(TWO_PI, x1, K=8) + s * e
        f = action_value(q, V)
        bound = outer_boundary_bound(s, np.linalg.norm(x1), QUARTIC_CERTS,
                                     TWO_PI, e_l2sq)
        assert f <= bound + 1e-9


def test_certify_linking_quartic_passes():
    V = make_quartic(1)
    geom = calibrate_superquadratic(V, QUARTIC_CERTS, TWO_PI)
    geom = certify_linking(geom, V, TWO_PI, n_samples=150, K=16, seed=0)
    assert geom.passed
    assert geom.alpha_sampled > geom.beta_sampled
    assert geom.alpha_sampled >= geom.alpha_bound - 1e-8
    assert geom.gap > 0


def test_sphere_samples_respect_certificate_ball_and_bound():
    V = make_quartic(2)
    geom = calibrate_superquadratic(V, QUARTIC_CERTS, TWO_PI)
    rng = np.random.default_rng(1)
    for _ in range(40):
        q = sphere_sample(rng, TWO_PI, 2, 16, geom.rho)
        assert np.isclose(l2_norm(q.derivative()), geom.rho, rtol=1e-12)
        assert sup_norm(q) <= np.sqrt(TWO_PI / 12.0) * geom.rho + 1e-9
        assert action_value(q, V) >= geom.alpha_bound - 1e-8


def test_alpha_sampled_is_min_over_stream():
    V = make_quartic(1)
    geom = calibrate_superquadratic(V, QUARTIC_CERTS, TWO_PI)
    geom = certify_linking(geom, V, TWO_PI, n_samples=60, K=8, seed=3)
    rng = np.random.default_rng(3)
    vals = [action_value(sphere_sample(rng, TWO_PI, 1, 8, geom.rho), V)
            for _ in range(60)]
    assert np.isclose(geom.alpha_sampled, min(vals), rtol=1e-12)


def test_constant_loops_inside_disk_nonpositive():
    V = make_quartic(1)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x1 = rng.uniform(-0.5, 0.5, size=1)
        q = PeriodicTrajectory.constant(TWO_PI, x1, K=4)
        assert action_value(q, V) <= 0.0


def test_forced_geometry_above_threshold_fails_certificate():
    # A potential with a genuine quadratic part: V = |x|^2/2 + |x|^4/4,
    # so A = 1/2 + margin near zero.  Above the threshold the sphere
    # level drops below the boundary level and the certificate reports
    # the failure rather than raising.
    def val(x):
        r2 = np.sum(x ** 2, axis=-1)
        return 0.5 * r2 + 0.25 * r2 ** 2

    def grad(x):
        r2 = np.sum(x ** 2, axis=-1)
        return (1.0 + r2)[..., None] * x

    V = PotentialModel.smooth(val, grad, 1)
    T = 1.2 * threshold_period(0.5)
    e = unit_direction(T, 1)
    geom = LinkingGeometry(mode="superquadratic", T=T,
                           alpha_bound=alpha_lower_bound(0.5, T, 1.0),
                           rho=1.0, r1=1.0, r2=4.0, e=e)
    assert geom.alpha_bound < 0
    geom = certify_linking(geom, V, T, n_samples=200, K=16, seed=4)
    assert not geom.passed


def test_certificate_json_schema():
    V = make_quartic(1)
    geom = calibrate_superquadratic(V, QUARTIC_CERTS, TWO_PI)
    geom = certify_linking(geom, V, TWO_PI, n_samples=40, K=8, seed=5)
    d = geom.to_dict()
    assert set(d) == {"mode", "T", "rho", "r1", "r2", "R", "alpha_bound",
                      "alpha_sampled", "beta_sampled", "pass", "samples", "seed"}
    assert d["pass"] is True
    assert d["samples"] == 40


def test_geometry_invariants_enforced():
    e = unit_direction(1.0, 1)
    with pytest.raises(ValueError, match="r2 > rho"):
        LinkingGeometry(mode="superquadratic", T=1.0, alpha_bound=0.1,
                        rho=2.0, r1=1.0, r2=1.5, e=e)
    with pytest.raises(ValueError, match="alpha_sampled > beta_sampled"):
        LinkingGeometry(mode="superquadratic", T=1.0, alpha_bound=0.1,
                        rho=1.0, r1=1.0, r2=2.0, e=e,
                        alpha_sampled=0.1, beta_sampled=0.5, passed=True)


# -- saddle calibration ---------------------------------------------------


def test_calibrate_saddle_subq32():
    V = make_subq32(2)
    geom = calibrate_saddle(V, {"A": 1.0, "a": 27.0 / 256.0}, 1.0, K=16, seed=0)
    assert geom.mode == "saddle"
    assert geom.passed
    assert geom.R <= 4.0  # moderate radius suffices
    assert np.isclose(geom.alpha_bound, -27.0 / 256.0, rtol=1e-12)
    # descent estimate of inf f respects the analytic bound
    assert geom.alpha_sampled >= geom.alpha_bound - 1e-8
    assert geom.beta_sampled < geom.alpha_bound


def test_calibrate_saddle_threshold_violation():
    # Quadratic-dominated potential above the admissible window.
    V = make_subq32(1)
    with pytest.raises(InfeasibleGeometryError, match="threshold"):
        calibrate_saddle(V, {"A": 8.0, "a": 1.0}, 2.0, K=8)


def test_calibrate_saddle_non_coercive():
    # V = tanh(|x|^2) is bounded by 1, so against the V4' floor -aT with
    # a = 2 the boundary sup -T tanh(R^2) ~ -T can never drop below it.
    bounded = PotentialModel.smooth(
        lambda x: np.tanh(np.sum(x ** 2, axis=-1)),
        lambda x: (2.0 / np.cosh(np.sum(x ** 2, axis=-1)) ** 2)[..., None] * x,
        dim=2)
    with pytest.raises(NonCoerciveError, match="coercive"):
        calibrate_saddle(bounded, {"A": 1.0, "a": 2.0}, 1.0, K=8,
                         max_doublings=6)


def test_certify_linking_mode_guard():
    V = make_subq32(2)
    geom = calibrate_saddle(V, {"A": 1.0, "a": 27.0 / 256.0}, 1.0, K=8, seed=0)
    with pytest.raises(ValueError, match="superquadratic"):
        certify_linking(geom, V, 1.0)


def test_maxpair_geometry_for_nonsmooth_runs():
    M = make_maxpair(2)
    certs = {"A": 1.0, "radius": 1.0, "a1": 1.0, "a2": -1.0, "mu1": 4.0}
    geom = calibrate_superquadratic(M, certs, 2.0)
    geom = certify_linking(geom, M, 2.0, n_samples=100, K=16, seed=0)
    assert geom.passed
    assert geom.alpha_bound > 0

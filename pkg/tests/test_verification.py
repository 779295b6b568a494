import numpy as np
import pytest
from scipy.integrate import quad

from liporbit.potentials import PotentialModel, make_maxpair, make_quartic
from liporbit.trajectory import PeriodicTrajectory, default_grid_size, random_trajectory
from liporbit.verification import (
    OracleFailure,
    energy_drift,
    inclusion_residual,
    shooting_oracle,
)

TWO_PI = 2.0 * np.pi


def quartic_period(amplitude):
    """Time-of-flight period of qdd = -q^3 at the given amplitude.

    Quarter period = int_0^A dq / sqrt((A^4 - q^4)/2), by energy
    conservation from the turning point (A, 0); quadrature oracle,
    no time stepping involved.
    """
    integrand = lambda u: 1.0 / np.sqrt((1.0 - u ** 4) / 2.0)
    val, err = quad(integrand, 0.0, 1.0, points=[1.0], limit=200)
    assert err < 1e-9
    return 4.0 * val / amplitude


# -- inclusion residual ----------------------------------------------------


def test_zero_loop_is_equilibrium():
    V = make_quartic(1)
    rep = inclusion_residual(PeriodicTrajectory.zero(TWO_PI, 1, 8), V)
    assert rep.aggregate == 0.0
    assert rep.max_distance == 0.0
    assert not rep.nonconstant
    assert rep.excluded_fraction == 0.0


def test_harmonic_under_zero_potential_is_not_a_solution():
    V0 = PotentialModel.smooth(lambda x: np.zeros(x.shape[:-1]),
                               lambda x: np.zeros_like(x), 1, "zero")
    q = PeriodicTrajectory.harmonic(TWO_PI, 1, 1, K=8)
    rep = inclusion_residual(q, V0)
    # distance is |qdd| pointwise, so the aggregate is ||qdd||_L2
    assert np.isclose(rep.aggregate, np.sqrt(TWO_PI / 2.0), rtol=1e-6)
    assert rep.nonconstant


def test_smooth_aggregate_matches_direct_quadrature():
    V = make_quartic(1)
    rng = np.random.default_rng(3)
    q = random_trajectory(rng, T=2.0, n=1, K=10)
    rep = inclusion_residual(q, V)
    N = default_grid_size(q.K)
    qs = q.sample(N)
    qdd = q.derivative().derivative().sample(N)
    resid = qdd + V.gradients[0](qs)
    direct = np.sqrt((q.T / N) * np.sum(resid ** 2))
    assert np.isclose(rep.aggregate, direct, rtol=1e-12)


def test_kink_crossing_nodes_are_excluded_not_counted():
    V = make_maxpair(1)
    # The peak node sits just outside the switching sphere, close enough
    # that the widened activity tolerance disagrees with the base one.
    q = PeriodicTrajectory.harmonic(2.0, 1, 1, sin_amp=1.0 + 2.0e-8, K=16)
    rep = inclusion_residual(q, V, tol_active=1e-8)
    assert 0.0 < rep.excluded_fraction < 0.1
    assert rep.distances.size == default_grid_size(q.K)


def test_node_exactly_on_kink_uses_full_hull():
    V = make_maxpair(1)
    # Both pieces active at base tolerance: the hull distance is the
    # honest inclusion distance there, so the node is not excluded.
    q = PeriodicTrajectory.harmonic(2.0, 1, 1, sin_amp=1.0, K=16)
    rep = inclusion_residual(q, V, tol_active=1e-8)
    assert rep.excluded_fraction == 0.0


def test_report_dict_and_csv():
    V = make_quartic(1)
    q = PeriodicTrajectory.harmonic(TWO_PI, 1, 1, K=4)
    rep = inclusion_residual(q, V)
    d = rep.to_dict()
    assert set(d) >= {"aggregate", "max_distance", "excluded_fraction",
                      "energy_drift", "nonconstant", "periodicity"}
    csv_text = rep.distances_csv(q)
    lines = csv_text.strip().split("\n")
    assert lines[0] == "t,dist"
    assert len(lines) == rep.distances.size + 1


# -- energy drift ----------------------------------------------------------


def test_energy_drift_zero_at_equilibrium():
    V = make_quartic(2)
    assert energy_drift(PeriodicTrajectory.zero(1.0, 2, 4), V) == 0.0


def test_energy_drift_large_for_non_solution():
    V = make_quartic(1)
    q = PeriodicTrajectory.harmonic(TWO_PI, 1, 1, K=8)
    assert energy_drift(q, V) > 1e-2


# -- shooting oracle ---------------------------------------------------------


@pytest.fixture(scope="module")
def quartic_orbit():
    V = make_quartic(1)
    return V, shooting_oracle(V, TWO_PI, [1.18, 0.0], K=64)


def test_oracle_closes_quartic_orbit(quartic_orbit):
    V, res = quartic_orbit
    assert res.closure_residual < 1e-6
    assert res.fit_residual < 1e-8
    amp = np.max(np.abs(res.trajectory.sample(2048)))
    # amplitude determined by the period law P(A) = P(1)/A
    assert np.isclose(amp, quartic_period(1.0) / TWO_PI, atol=1e-4)


def test_oracle_consistency_loop(quartic_orbit):
    V, res = quartic_orbit
    rep = inclusion_residual(res.trajectory, V)
    assert rep.aggregate < 1e-6
    assert energy_drift(res.trajectory, V) < 1e-6
    assert rep.nonconstant


def test_amplitude_period_monotonicity():
    # Larger amplitude -> shorter period, computed by time of flight.
    p1, p2 = quartic_period(0.8), quartic_period(1.6)
    assert p1 > p2
    assert np.isclose(p1 / p2, 2.0, rtol=1e-9)  # exact 1/A scaling


def test_oracle_matches_time_of_flight():
    V = make_quartic(1)
    A = 1.4
    T = quartic_period(A)
    res = shooting_oracle(V, T, [A, 0.0], K=32)
    assert res.closure_residual < 1e-6
    amp = np.max(np.abs(res.trajectory.sample(2048)))
    assert np.isclose(amp, A, atol=1e-5)


def test_oracle_harmonic_closes_any_amplitude():
    w0 = 1.3
    H = PotentialModel.smooth(lambda x: 0.5 * w0 ** 2 * np.sum(x ** 2, axis=-1),
                              lambda x: w0 ** 2 * x, 1, "harmonic")
    res = shooting_oracle(H, TWO_PI / w0, [0.7, 0.0], K=16)
    assert res.newton_iters == 0
    assert res.closure_residual < 1e-10
    # phase-space circle: energy w0^2 q^2/2 + v^2/2 constant
    q = res.trajectory.sample(256)
    v = res.trajectory.derivative().sample(256)
    E = 0.5 * w0 ** 2 * q[:, 0] ** 2 + 0.5 * v[:, 0] ** 2
    assert np.max(np.abs(E - E.mean())) < 1e-10


def test_oracle_failure_on_bad_guess():
    V = make_quartic(1)
    with pytest.raises(OracleFailure):
        shooting_oracle(V, TWO_PI, [40.0, 2.0], K=8, max_newton=4)


def test_oracle_rejects_nonsmooth_models():
    with pytest.raises(ValueError, match="smooth"):
        shooting_oracle(make_maxpair(1), 1.0, [1.0, 0.0])

import numpy as np
import pytest

from liporbit.potentials import (
    PotentialModel,
    SamplerSpec,
    certify,
    check_gradients,
    clarke_directional,
    clarke_directional_fd,
    from_spec,
    make_maxpair,
    make_maxpoly,
    make_quartic,
    make_subq32,
    make_subq32cos,
    subdiff,
    value,
)


def abs_model():
    """|x| in one dimension as the max of the two linear pieces."""
    return PotentialModel.piecewise_max(
        [(lambda x: x[..., 0], lambda x: np.ones_like(x)),
         (lambda x: -x[..., 0], lambda x: -np.ones_like(x))], dim=1)


# -- values and subdifferentials -----------------------------------------


def test_smooth_quartic_single_vertex():
    V = make_quartic(2)
    sg = subdiff(V, np.array([1.0, 0.0]))
    assert sg.vertices.shape == (1, 2)
    assert np.allclose(sg.vertices[0], [1.0, 0.0])  # grad = |x|^2 x


def test_maxpair_two_vertices_on_switching_sphere():
    V = make_maxpair(2)
    x = np.array([1.0, 0.0])
    sg = subdiff(V, x)
    assert sg.vertices.shape == (2, 2)
    assert np.allclose(sorted(sg.vertices[:, 0]), [4.0, 8.0])


def test_maxpair_single_vertex_at_origin():
    V = make_maxpair(2)
    sg = subdiff(V, np.zeros(2))
    assert sg.vertices.shape == (1, 2)
    assert np.allclose(sg.vertices[0], 0.0)
    assert sg.active == (0,)  # piece 1 wins: 0 > -1


def test_piecewise_value_is_max_of_pieces():
    V = make_maxpair(2)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-2, 2, size=2)
        pieces = [v(x) for v in V.values]
        assert value(V, x) == max(pieces)


def test_negative_tol_rejected():
    V = make_maxpair(2)
    with pytest.raises(ValueError):
        subdiff(V, np.zeros(2), tol_active=-1.0)


def test_gradient_fd_audit_on_zoo():
    rng = np.random.default_rng(1)
    for model in (make_quartic(2), make_maxpair(3), make_subq32cos(2)):
        worst = check_gradients(model, rng, n_points=10)
        assert worst < 1e-5


# -- Clarke directional derivative ---------------------------------------


def test_clarke_smooth_case():
    V = make_quartic(2)
    assert np.isclose(clarke_directional(V, [1.0, 0.0], [1.0, 0.0]), 1.0)


def test_clarke_maxpair_picks_largest_pairing():
    V = make_maxpair(2)
    x = np.array([1.0, 0.0])
    assert np.isclose(clarke_directional(V, x, x), 8.0)


def test_clarke_absolute_value_at_kink():
    V = abs_model()
    assert np.isclose(clarke_directional(V, np.zeros(1), np.ones(1)), 1.0)


def test_clarke_linear_in_v_for_smooth():
    V = make_quartic(3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal(3)
    v, w = rng.standard_normal(3), rng.standard_normal(3)
    lhs = clarke_directional(V, x, v + 0.7 * w)
    rhs = clarke_directional(V, x, v) + 0.7 * clarke_directional(V, x, w)
    assert abs(lhs - rhs) < 1e-9 * (1 + abs(rhs))


def test_clarke_sublinear_and_positively_homogeneous():
    V = make_maxpair(2)
    rng = np.random.default_rng(5)
    for _ in range(100):
        x = rng.uniform(-2, 2, size=2)
        v, w = rng.standard_normal(2), rng.standard_normal(2)
        lam = rng.uniform(0, 3)
        f_v = clarke_directional(V, x, v)
        f_w = clarke_directional(V, x, w)
        f_vw = clarke_directional(V, x, v + w)
        assert f_vw <= f_v + f_w + 1e-10 * (1 + abs(f_v) + abs(f_w))
        assert np.isclose(clarke_directional(V, x, lam * v), lam * f_v,
                          rtol=1e-12, atol=1e-12)


def test_clarke_fd_estimator_agrees_away_from_kinks():
    V = make_maxpair(2)
    rng = np.random.default_rng(6)
    count = 0
    while count < 30:
        x = rng.uniform(-1.8, 1.8, size=2)
        if abs(np.linalg.norm(x) - 1.0) <= 1e-3:
            continue
        v = rng.standard_normal(2)
        exact = clarke_directional(V, x, v)
        est = clarke_directional_fd(V, x, v, rng=np.random.default_rng(count))
        assert abs(est - exact) < 1e-5 * (1 + abs(exact))
        count += 1


def test_clarke_fd_estimator_sees_the_kink():
    V = abs_model()
    est = clarke_directional_fd(V, np.zeros(1), np.ones(1),
                                rng=np.random.default_rng(0))
    assert np.isclose(est, 1.0, atol=1e-5)


# -- hypothesis certification --------------------------------------------


def test_certify_quartic_euler_identity():
    V = make_quartic(2)
    cert = certify(V, "V2", {"mu1": 4.0, "mu2": 0.0}, SamplerSpec(count=500, seed=0))
    assert cert.passed
    assert abs(cert.worst_margin) < 1e-9  # <grad, x> = 4V exactly


def test_certify_maxpair_superquadratic_set():
    V = make_maxpair(2)
    sampler = SamplerSpec(count=500, seed=1)
    for hyp, params in [("V2", {"mu1": 4.0, "mu2": 0.0}),
                        ("V3", {"mu1": 4.0, "a1": 1.0, "a2": -1.0}),
                        ("V4", {"A": 1.0, "radius": 1.0})]:
        cert = certify(V, hyp, params, sampler)
        assert cert.passed, (hyp, cert.worst_margin)


def test_maxpair_outer_piece_margin_is_four():
    # For |x| > 1 the pairing is 8|x|^4 against 4(2|x|^4 - 1): margin 4.
    V = make_maxpair(2)
    x = np.array([1.3, 0.2])
    sg = subdiff(V, x)
    margin = float(np.min(sg.vertices @ x)) - 4.0 * value(V, x)
    assert np.isclose(margin, 4.0, rtol=1e-12)


def test_certify_subquadratic_homogeneity():
    V = make_subq32(2)
    cert = certify(V, "V2'", {"mu1": 1.5, "mu2": 0.0}, SamplerSpec(count=500, seed=2))
    assert cert.passed
    assert abs(cert.worst_margin) < 1e-9


def test_certify_subq32_upper_quadratic_bound():
    V = make_subq32(3)
    cert = certify(V, "V4'", {"A": 1.0, "a": 27.0 / 256.0},
                   SamplerSpec(r_max=20.0, count=2000, seed=3))
    assert cert.passed


def test_certify_subq32cos_documented_constants():
    V = make_subq32cos(2)
    sampler = SamplerSpec(r_max=30.0, count=2000, seed=4)
    assert certify(V, "V2'", {"mu1": 1.8, "mu2": 0.75}, sampler).passed
    assert certify(V, "V4'", {"A": 1.0, "a": 0.5}, sampler).passed
    assert certify(V, "V3'", {"threshold": 0.0}, sampler).passed


def test_certify_parameter_validation():
    V = make_quartic(1)
    with pytest.raises(ValueError, match="mu1 > 2"):
        certify(V, "V2", {"mu1": 1.5})
    with pytest.raises(ValueError, match="mu1 < 2"):
        certify(V, "V2'", {"mu1": 2.5})
    with pytest.raises(ValueError, match="a1 > 0"):
        certify(V, "V3", {"mu1": 4.0, "a1": -1.0})
    with pytest.raises(ValueError, match="unknown hypothesis"):
        certify(V, "V9", {})


def test_certify_failure_is_a_negative_certificate():
    V = make_quartic(2)
    # A = 0.1 on the unit ball fails: V = r^4/4 > 0.1 r^2 near r = 1.
    cert = certify(V, "V4", {"A": 0.1, "radius": 1.0}, SamplerSpec(count=500, seed=5))
    assert not cert.passed
    assert cert.worst_margin < -1e-3


def test_certify_flags_non_coercive():
    bounded = PotentialModel.smooth(
        lambda x: np.tanh(np.sum(x ** 2, axis=-1)),
        lambda x: (2.0 / np.cosh(np.sum(x ** 2, axis=-1)) ** 2)[..., None] * x,
        dim=2)
    cert = certify(bounded, "V3'", {"threshold": 5.0},
                   SamplerSpec(r_max=50.0, count=300, seed=6))
    assert not cert.passed
    assert cert.flags.get("non_coercive") is True
    assert cert.flags["min_on_shell"] < 1.001


def test_certify_inner_cutoff_radius():
    # The classical superquadratic condition only needs |x| >= r0; an
    # inner cutoff makes that reading testable.  A Gaussian bump breaks
    # the pairing inequality near the origin and is negligible outside.
    def val(x):
        r2 = np.sum(x ** 2, axis=-1)
        return 0.25 * r2 ** 2 + 0.1 * np.exp(-r2)

    def grad(x):
        r2 = np.sum(x ** 2, axis=-1)
        return (r2 - 0.2 * np.exp(-r2))[..., None] * x

    bumped = PotentialModel.smooth(val, grad, dim=2)
    params = {"mu1": 4.0, "mu2": -0.01}
    inner = certify(bumped, "V2", params,
                    SamplerSpec(r_min=0.0, r_max=6.0, count=400, seed=7))
    outer = certify(bumped, "V2", params,
                    SamplerSpec(r_min=3.0, r_max=6.0, count=400, seed=7))
    assert not inner.passed   # margin ~ -0.39 at the origin
    assert outer.passed       # negligible bump beyond r = 3


def test_sampler_respects_radius_range():
    spec = SamplerSpec(r_min=2.0, r_max=3.0, count=200, seed=8)
    pts = spec.points(3)
    radii = np.linalg.norm(pts, axis=1)
    assert pts.shape == (200, 3)
    assert np.all(radii >= 2.0 - 1e-9) and np.all(radii <= 3.0 + 1e-9)


def test_sampler_is_deterministic():
    a = SamplerSpec(count=64, seed=9).points(2)
    b = SamplerSpec(count=64, seed=9).points(2)
    assert np.array_equal(a, b)


# -- zoo and config construction -----------------------------------------


def test_maxpoly_reproduces_maxpair():
    ref = make_maxpair(2)
    poly = make_maxpoly([[0.0, 0.0, 1.0], [-1.0, 0.0, 2.0]], 2)
    rng = np.random.default_rng(10)
    for _ in range(30):
        x = rng.uniform(-2, 2, size=2)
        assert np.isclose(value(poly, x), value(ref, x), rtol=1e-14)
        gp = subdiff(poly, x).vertices
        gr = subdiff(ref, x).vertices
        assert np.allclose(np.sort(gp, axis=0), np.sort(gr, axis=0))


def test_from_spec_builds_zoo_and_custom():
    assert from_spec({"type": "quartic", "dim": 3}).name == "quartic"
    assert from_spec({"type": "subq32cos", "dim": 2, "amp": 0.1}).name == "subq32cos"
    poly = from_spec({"type": "maxpoly", "dim": 2,
                      "pieces": [[0.0, 1.0], [0.5, 0.5]]})
    assert poly.n_pieces == 2
    with pytest.raises(ValueError, match="unknown potential"):
        from_spec({"type": "nope"})

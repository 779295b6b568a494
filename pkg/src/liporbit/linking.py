"""Construction and certification of the minimax geometries.

Superquadratic mode realizes the sphere-versus-cylinder linking: on the
zero-mean sphere S = {q : ||qdot||_L2 = rho} the quadratic bound near the
origin gives

    f(q) >= [1/2 - A T^2/(2 pi)^2] rho^2 =: alpha,

positive whenever T < pi sqrt(2/A), while on the outer boundary of the
cylinder Q = {x1 + s e} the growth bound and Jensen's inequality force

    f(x1 + s e) <= s^2/2 - a1 T^{1-mu1/2} (T|x1|^2 + s^2 int|e|^2)^{mu1/2} - a2 T,

which goes negative once the box is large enough.  Saddle mode grows a
radius R until the sup of f over constant loops on the boundary sphere
drops below the analytic lower bound of f on the zero-mean subspace.

Certificates are sampled evidence plus the analytic bound: a failing
certificate is a valid negative result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .action import action_value, h1_preconditioned, min_norm_subgradient
from .potentials import PotentialModel
from .trajectory import PeriodicTrajectory, l2_norm, random_trajectory


class InfeasibleGeometryError(ValueError):
    """The period violates the quadratic-threshold requirement."""


class NonCoerciveError(RuntimeError):
    """Boundary growth never overtook the coercivity threshold."""


def alpha_lower_bound(A: float, T: float, rho: float) -> float:
    """(1/2 - A T^2 / (4 pi^2)) rho^2; sign flips exactly at T = pi sqrt(2/A)."""
    return (0.5 - A * T ** 2 / (4.0 * np.pi ** 2)) * rho ** 2


def threshold_period(A: float) -> float:
    """Largest admissible period pi sqrt(2/A) for quadratic bound A."""
    return np.pi * np.sqrt(2.0 / A)


def _require_below_threshold(A: float, T: float):
    thr = threshold_period(A)
    if T >= thr:
        raise InfeasibleGeometryError(
            f"period T = {T:g} is not below the threshold pi*sqrt(2/A) = {thr:g} "
            f"for A = {A:g}")


def unit_direction(T: float, n: int, K: int = 1, axis: int = 0,
                   mode: int = 1) -> PeriodicTrajectory:
    """First-harmonic direction sin(2 pi k t / T) e_axis with ||edot||_L2 = 1.

    The lowest frequency maximizes the Wirtinger margin at fixed kinetic
    norm, which is why it is the default linking direction.
    """
    e = PeriodicTrajectory.harmonic(T, n, mode, axis=axis, K=max(K, mode))
    scale = l2_norm(e.derivative())
    return e * (1.0 / scale)


@dataclass(frozen=True)
class LinkingGeometry:
    """Calibrated minimax geometry plus its sampled certificate."""

    mode: str                           # "superquadratic" | "saddle"
    T: float                            # the period the calibration is valid for
    alpha_bound: float
    rho: float | None = None
    r1: float | None = None
    r2: float | None = None
    R: float | None = None
    e: PeriodicTrajectory | None = None
    alpha_sampled: float | None = None
    beta_sampled: float | None = None
    passed: bool | None = None
    n_samples: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("superquadratic", "saddle"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "superquadratic":
            if not (self.r2 and self.rho and self.r2 > self.rho):
                raise ValueError(f"need r2 > rho > 0, got r2={self.r2}, rho={self.rho}")
        if self.passed and not (self.alpha_sampled > self.beta_sampled):
            raise ValueError("a passing certificate requires alpha_sampled > beta_sampled")

    @property
    def gap(self) -> float | None:
        if self.alpha_sampled is None or self.beta_sampled is None:
            return None
        return self.alpha_sampled - self.beta_sampled

    def to_dict(self) -> dict:
        def opt(v):
            return None if v is None else float(v)

        return {
            "mode": self.mode,
            "T": float(self.T),
            "rho": opt(self.rho),
            "r1": opt(self.r1),
            "r2": opt(self.r2),
            "R": opt(self.R),
            "alpha_bound": float(self.alpha_bound),
            "alpha_sampled": opt(self.alpha_sampled),
            "beta_sampled": opt(self.beta_sampled),
            "pass": self.passed,
            "samples": self.n_samples,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- superquadratic calibration ----------------------------------------


def outer_boundary_bound(s, x1_norm, certs: dict, T: float, e_l2sq: float):
    """Jensen upper bound for f(x1 + s e) on the cylinder boundary."""
    a1, a2, mu1 = certs["a1"], certs.get("a2", 0.0), certs["mu1"]
    mass = T * np.asarray(x1_norm) ** 2 + np.asarray(s) ** 2 * e_l2sq
    return 0.5 * np.asarray(s) ** 2 - a1 * T ** (1.0 - mu1 / 2.0) * mass ** (mu1 / 2.0) - a2 * T


def calibrate_superquadratic(model: PotentialModel, certs: dict, T: float,
                             e: PeriodicTrajectory | None = None,
                             max_doublings: int = 60) -> LinkingGeometry:
    """Choose rho, r1, r2 and the direction e from certified constants.

    certs carries A and the ball radius of the quadratic bound, plus the
    growth constants a1, a2, mu1.  rho is capped so the sup-norm of every
    sphere sample stays inside the certified ball (||q||_inf <=
    sqrt(T/12) rho); r2 (with r1 = r2/4) doubles until the Jensen bound
    is strictly negative on the lateral and top faces.
    """
    A = float(certs["A"])
    _require_below_threshold(A, T)
    if float(certs["mu1"]) <= 2.0:
        raise ValueError(f"superquadratic calibration needs mu1 > 2, got {certs['mu1']}")
    if float(certs["a1"]) <= 0.0:
        raise ValueError(f"growth constant a1 must be positive, got {certs['a1']}")
    radius = float(certs.get("radius", 1.0))
    rho = radius * np.sqrt(12.0 / T)
    alpha = alpha_lower_bound(A, T, rho)

    if e is None:
        e = unit_direction(T, model.dim)
    e_l2sq = l2_norm(e) ** 2

    s_grid = np.linspace(0.0, 1.0, 513)
    r2 = max(2.0 * rho, 1.0)
    for _ in range(max_doublings):
        r1 = r2 / 4.0
        lateral = float(np.max(outer_boundary_bound(s_grid * r2, r1, certs, T, e_l2sq)))
        top = float(outer_boundary_bound(r2, 0.0, certs, T, e_l2sq))
        worst = max(lateral, top)
        if worst < -1e-9 * (1.0 + r2 ** 2):
            return LinkingGeometry(mode="superquadratic", T=T, alpha_bound=alpha,
                                   rho=rho, r1=r1, r2=r2, e=e)
        r2 *= 2.0
    raise InfeasibleGeometryError(
        f"outer boundary bound stayed nonnegative up to r2 = {r2:g}; "
        f"check the growth certificate constants")


def sphere_sample(rng: np.random.Generator, T: float, n: int, K: int,
                  rho: float, low_mode_fraction: float = 0.7,
                  low_mode_max: int = 4) -> PeriodicTrajectory:
    """Random zero-mean loop scaled to ||qdot||_L2 = rho.

    Mixes mostly low-mode samples (which minimize f at fixed rho and so
    dominate the true minimum) with full-spectrum ones.
    """
    if rng.uniform() < low_mode_fraction:
        k_max = min(low_mode_max, K)
        q = random_trajectory(rng, T, n, k_max, zero_mean=True, decay=1.0).pad_modes(K)
    else:
        q = random_trajectory(rng, T, n, K, zero_mean=True, decay=1.5)
    kin = l2_norm(q.derivative())
    if kin == 0.0:
        q = PeriodicTrajectory.harmonic(T, n, 1, K=K)
        kin = l2_norm(q.derivative())
    return q * (rho / kin)


def certify_linking(geom: LinkingGeometry, model: PotentialModel, T: float,
                    n_samples: int = 200, K: int = 16,
                    seed: int = 0) -> LinkingGeometry:
    """Sample f on the sphere S and on the three cylinder-boundary faces.

    alpha_sampled is the minimum over S (never exceeding f at any
    individual S point by construction); beta_sampled the maximum over
    the bottom disk, the lateral shell and the top disk.  The returned
    geometry records pass <=> alpha_sampled > beta_sampled; a fail is a
    valid negative certificate.
    """
    if geom.mode != "superquadratic":
        raise ValueError("certify_linking applies to superquadratic geometries")
    if not np.isclose(T, geom.T):
        raise ValueError(f"geometry was calibrated for T = {geom.T:g}, got {T:g}")
    rng = np.random.default_rng(seed)
    n = model.dim
    e = geom.e.pad_modes(K) if geom.e.K < K else geom.e

    alpha = np.inf
    for _ in range(n_samples):
        q = sphere_sample(rng, T, n, K, geom.rho)
        alpha = min(alpha, action_value(q, model))

    beta = -np.inf
    per_face = max(n_samples // 3, 8)
    for _ in range(per_face):                      # bottom disk, s = 0
        x1 = _ball_point(rng, n, geom.r1)
        q = PeriodicTrajectory.constant(T, x1, K=K)
        beta = max(beta, action_value(q, model))
    zero = PeriodicTrajectory.constant(T, np.zeros(n), K=K)
    beta = max(beta, action_value(zero, model))
    for _ in range(per_face):                      # lateral shell, |x1| = r1
        x1 = _sphere_point(rng, n, geom.r1)
        s = rng.uniform(0.0, geom.r2)
        q = PeriodicTrajectory.constant(T, x1, K=K) + s * e
        beta = max(beta, action_value(q, model))
    for _ in range(per_face):                      # top disk, s = r2
        x1 = _ball_point(rng, n, geom.r1)
        q = PeriodicTrajectory.constant(T, x1, K=K) + geom.r2 * e
        beta = max(beta, action_value(q, model))

    return replace(geom, alpha_sampled=float(alpha), beta_sampled=float(beta),
                   passed=bool(alpha > beta), n_samples=n_samples, seed=seed)


def _sphere_point(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    z = rng.standard_normal(n)
    return radius * z / max(np.linalg.norm(z), 1e-300)


def _ball_point(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    return _sphere_point(rng, n, radius) * rng.uniform() ** (1.0 / n)


# -- saddle calibration -------------------------------------------------


def _box_boundary_points(rng: np.random.Generator, n: int, R: float,
                         count: int) -> np.ndarray:
    """Points on the max-norm sphere ||x||_inf = R (the pinned family)."""
    pts = rng.uniform(-R, R, size=(count, n))
    face = rng.integers(0, n, size=count)
    signs = rng.choice([-1.0, 1.0], size=count)
    pts[np.arange(count), face] = signs * R
    # Face centers are where a coercive potential is smallest.
    centers = np.vstack([s * R * np.eye(n)[i] for i in range(n) for s in (-1.0, 1.0)])
    return np.vstack([pts, centers])


def _descend_in_oscillation(model: PotentialModel, T: float, K: int,
                            start: PeriodicTrajectory, n_steps: int = 60) -> float:
    """Crude preconditioned descent inside the zero-mean subspace.

    Returns the smallest f seen; used only to estimate inf f on the
    subspace, not to locate critical points.
    """
    q = start
    best = action_value(q, model)
    step = 1.0
    for _ in range(n_steps):
        grad = min_norm_subgradient(q, model, metric="l2")
        d = h1_preconditioned(grad.residual) * (-1.0)
        d = PeriodicTrajectory(d.T, np.zeros(d.n), d.a, d.b)   # stay zero-mean
        dn2 = l2_norm(d) ** 2
        if dn2 == 0.0:
            break
        f0 = action_value(q, model)
        accepted = False
        for _ in range(30):
            trial = q + step * d
            ft = action_value(trial, model)
            if ft <= f0 - 1e-4 * step * dn2:
                q, best = trial, min(best, ft)
                step *= 2.0
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return best


def calibrate_saddle(model: PotentialModel, certs: dict, T: float,
                     K: int = 16, seed: int = 0, n_samples: int = 120,
                     n_descents: int = 4, max_doublings: int = 40,
                     gap_margin: float | None = None) -> LinkingGeometry:
    """Grow R until sup f on the boundary sphere sits below inf f on X2.

    The inf is bounded analytically by -a T through the quadratic bound
    (with the Wirtinger constant) and estimated by preconditioned
    descent from random zero-mean starts; the sup over constant loops on
    the boundary is sampled.  Failure to open a gap within the doubling
    budget reports the potential as non-coercive.
    """
    A, a = float(certs["A"]), float(certs.get("a", 0.0))
    _require_below_threshold(A, T)
    rng = np.random.default_rng(seed)
    n = model.dim
    inf_bound = -a * T
    if gap_margin is None:
        gap_margin = 1e-3 * T * (1.0 + abs(a))

    R = 1.0
    beta = np.inf
    for _ in range(max_doublings):
        pts = _box_boundary_points(rng, n, R, n_samples)
        beta = float(np.max(-T * model.value(pts)))
        if beta <= inf_bound - gap_margin:
            break
        R *= 2.0
    else:
        raise NonCoerciveError(
            f"sup f on the boundary stayed at {beta:g} >= {inf_bound:g} up to "
            f"R = {R:g}; the potential does not look coercive")

    alpha = np.inf
    for _ in range(n_descents):
        start = random_trajectory(rng, T, n, K, zero_mean=True, decay=1.5)
        alpha = min(alpha, _descend_in_oscillation(model, T, K, start))
    alpha = float(min(alpha, action_value(PeriodicTrajectory.zero(T, n, K), model)))

    return LinkingGeometry(mode="saddle", T=T, alpha_bound=inf_bound, R=R,
                           alpha_sampled=alpha, beta_sampled=beta,
                           passed=bool(alpha > beta and inf_bound > beta),
                           n_samples=n_samples, seed=seed)

"""The action functional on periodic loops and its generalized gradient.

For a potential V and a T-periodic loop q the action is

    f(q) = (1/2) int_0^T |qdot|^2 dt - int_0^T V(q) dt.

Critical points of f (in the generalized sense) are T-periodic solutions
of the differential inclusion 0 in qdd + dV(q).  On the discrete Fourier
model the generalized gradient is sampled per quadrature node:

    df(q)  ~  { -qdd(t) - v(t) : v(t) in conv(active gradients at q(t)) },

and the product structure makes the minimum-norm element computable node
by node as a nearest-point-in-convex-hull projection.  The min-norm value
feeds the Cerami-type diagnostics: a sequence behaves like a generalized
Palais-Smale sequence when f settles and (1 + ||q_n||) min||df(q_n)|| -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .potentials import PotentialModel, subdiff
from .trajectory import (
    PeriodicTrajectory,
    default_grid_size,
    h1_norm,
    h1_norm_mean,
    l2_inner,
    l2_norm,
    random_trajectory,
)

# Activity tolerance is widened by this factor when assembling gradients,
# which keeps the per-node selection from chattering across a kink during
# line searches.
GRADIENT_TOL_WIDEN = 10.0


def action_value(traj: PeriodicTrajectory, model: PotentialModel) -> float:
    """f(q) = (1/2) int |qdot|^2 - int V(q).

    The kinetic term is summed exactly by Parseval; the potential term
    uses trapezoid quadrature on the 4K+4 grid (spectrally accurate for
    periodic integrands).
    """
    if model.dim != traj.n:
        raise ValueError(f"model dimension {model.dim} != trajectory dimension {traj.n}")
    mode_energy = np.sum(traj.a ** 2 + traj.b ** 2, axis=1)
    kinetic = 0.25 * traj.T * float(traj.omegas ** 2 @ mode_energy)
    N = default_grid_size(traj.K)
    potential = traj.T * float(np.mean(model.value(traj.sample(N))))
    return kinetic - potential


# -- nearest point in a convex hull -----------------------------------


def project_hull(point, vertices, tol: float = 1e-14,
                 max_iter: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Nearest point of conv(vertices) to point, with its convex weights.

    Wolfe's minimum-norm-point iteration on the shifted polytope
    {v_i - point}: maintain a corral of affinely independent vertices,
    alternate between adding the vertex most aligned with the current
    point and pruning corral members whose affine weight turns negative.
    Terminates when <x, P_i - x> >= -tol_scale for every vertex, which is
    exactly the nearest-point optimality condition.
    """
    point = np.asarray(point, dtype=float)
    P = np.atleast_2d(np.asarray(vertices, dtype=float)) - point
    m = P.shape[0]
    if m == 1:
        return P[0] + point, np.ones(1)

    scale = 1.0 + float(np.max(np.sum(P ** 2, axis=1)))
    stop = tol * scale

    idx = int(np.argmin(np.sum(P ** 2, axis=1)))
    corral = [idx]
    lam = np.array([1.0])
    x = P[idx].copy()

    for _ in range(max_iter):
        gaps = P @ x - float(x @ x)
        j = int(np.argmin(gaps))
        if gaps[j] >= -stop:
            break
        if j in corral:
            break  # numerically stalled; x is optimal to working precision
        corral.append(j)
        lam = np.append(lam, 0.0)

        # Minor cycle: min-norm point of the affine hull of the corral,
        # walking back toward the last feasible combination if weights
        # leave the simplex.
        while True:
            C = P[corral]
            k = C.shape[0]
            M = np.zeros((k + 1, k + 1))
            M[0, 1:] = 1.0
            M[1:, 0] = 1.0
            M[1:, 1:] = C @ C.T
            rhs = np.zeros(k + 1)
            rhs[0] = 1.0
            alpha = np.linalg.lstsq(M, rhs, rcond=None)[0][1:]
            if np.all(alpha > tol):
                lam = alpha
                x = C.T @ alpha
                break
            neg = alpha <= tol
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = lam[neg] / (lam[neg] - alpha[neg])
            theta = float(np.min(ratios[np.isfinite(ratios)], initial=1.0))
            theta = min(max(theta, 0.0), 1.0)
            lam = theta * alpha + (1.0 - theta) * lam
            lam[neg & (lam <= tol)] = 0.0
            keep = lam > tol
            if not np.any(keep):
                keep[int(np.argmax(lam))] = True
            corral = [c for c, k_ in zip(corral, keep) if k_]
            lam = lam[keep]
            lam = lam / lam.sum()
            x = P[corral].T @ lam

    weights = np.zeros(m)
    for c, l in zip(corral, lam):
        weights[c] += l
    weights = np.maximum(weights, 0.0)
    weights /= weights.sum()
    return x + point, weights


# -- generalized gradient of the action --------------------------------


@dataclass(frozen=True)
class ActionGradient:
    """Min-norm representative of the discretized generalized gradient.

    residual holds r = -qdd - v as K Fourier modes (the projection of
    the continuum representative onto the discrete space); direction is
    the descent representative for the requested metric; weights[j]
    are the convex coefficients of the selected v(t_j) over the model's
    pieces.
    """

    residual: PeriodicTrajectory
    direction: PeriodicTrajectory
    l2_norm: float
    h1_precond_norm: float
    weights: np.ndarray          # (N, n_pieces)
    metric: str

    def descent_direction(self) -> PeriodicTrajectory:
        return -1.0 * self.direction


def h1_preconditioned(traj: PeriodicTrajectory) -> PeriodicTrajectory:
    """Mode-diagonal Sobolev preconditioner: coefficient k scaled by 1/(1+w_k^2)."""
    scale = 1.0 / (1.0 + traj.omegas ** 2)
    return PeriodicTrajectory(traj.T, traj.a0.copy(),
                              traj.a * scale[:, None], traj.b * scale[:, None])


def min_norm_subgradient(traj: PeriodicTrajectory, model: PotentialModel,
                         metric: str = "h1precond",
                         tol_active: float | None = None) -> ActionGradient:
    """Per-node min-norm selection v(t) = proj(-qdd(t) | dV(q(t))).

    The residual -qdd - v is assembled back into Fourier modes 0..K.
    metric "l2" returns the plain representative as the direction;
    "h1precond" applies the 1/(1+w_k^2) diagonal, the standard Sobolev
    gradient (positive diagonal, so critical points are unchanged).
    """
    if metric not in ("l2", "h1precond"):
        raise ValueError(f"unknown metric {metric!r}")
    N = default_grid_size(traj.K)
    qs = traj.sample(N)
    target = -traj.derivative().derivative().sample(N)    # -qdd at nodes

    if model.kind == "smooth":
        sel = np.asarray(model.gradients[0](qs), dtype=float)
        weights = np.ones((N, 1))
    else:
        piece_vals = model.piece_values(qs)               # (P, N)
        top = np.max(piece_vals, axis=0)
        if tol_active is None:
            tol = 1e-8 * (1.0 + np.abs(top))
        else:
            tol = np.full(N, float(tol_active))
        tol = tol * GRADIENT_TOL_WIDEN
        active = piece_vals >= top[None, :] - tol[None, :]  # (P, N)
        n_active = active.sum(axis=0)
        sel = np.zeros_like(target)
        weights = np.zeros((N, model.n_pieces))
        single = n_active == 1
        if np.any(single):
            piece_of = np.argmax(active[:, single], axis=0)
            cols = np.flatnonzero(single)
            grads = np.stack([np.asarray(g(qs[cols]), dtype=float)
                              for g in model.gradients])   # (P, m, n)
            sel[cols] = grads[piece_of, np.arange(cols.size)]
            weights[cols, piece_of] = 1.0
        for j in np.flatnonzero(~single):
            sg = subdiff(model, qs[j], float(tol[j]))
            proj, w = project_hull(target[j], sg.vertices)
            sel[j] = proj
            weights[j, list(sg.active)] = w

    residual = PeriodicTrajectory.from_samples(target - sel, traj.T, K=traj.K)
    r_norm = l2_norm(residual)
    precond = h1_preconditioned(residual)
    precond_norm = float(np.sqrt(max(l2_inner(residual, precond), 0.0)))
    direction = precond if metric == "h1precond" else residual
    return ActionGradient(residual=residual, direction=direction,
                          l2_norm=r_norm, h1_precond_norm=precond_norm,
                          weights=weights, metric=metric)


# -- Cerami-type sequence diagnostics ----------------------------------


@dataclass(frozen=True)
class CeramiRecord:
    """One iterate's compactness bookkeeping.

    measure = (1 + ||q||_{H1}) * min-norm-gradient is the quantity whose
    decay characterizes generalized Cerami sequences.  Both norm
    conventions (anchored at q(0) and at the mean) are retained; the CSV
    row carries the q(0) one.
    """

    index: int
    f_value: float
    h1norm: float
    min_norm: float
    measure: float
    mean_norm: float = 0.0
    trajectory: PeriodicTrajectory | None = field(default=None, repr=False, compare=False)

    CSV_HEADER = "iter,f,h1norm,minnorm,measure"

    def csv_row(self) -> str:
        return ",".join([str(self.index)] + [repr(float(v)) for v in
                                             (self.f_value, self.h1norm,
                                              self.min_norm, self.measure)])


def cerami_measure(traj: PeriodicTrajectory, model: PotentialModel,
                   index: int = 0, keep_trajectory: bool = True) -> CeramiRecord:
    """(1 + ||q||) * min||df(q)|| packaged with the action value."""
    grad = min_norm_subgradient(traj, model, metric="l2")
    norm = h1_norm(traj)
    g = grad.l2_norm
    return CeramiRecord(
        index=index,
        f_value=action_value(traj, model),
        h1norm=norm,
        min_norm=g,
        measure=(1.0 + norm) * g,
        mean_norm=h1_norm_mean(traj),
        trajectory=traj if keep_trajectory else None,
    )


def history_to_csv(records) -> str:
    lines = [CeramiRecord.CSV_HEADER]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


def action_clarke_directional(traj: PeriodicTrajectory, model: PotentialModel,
                              h: PeriodicTrajectory) -> float:
    """f0(q; h) = int <-qdd, h> + int max_{v active} <-v, h> by quadrature.

    The per-node maximum realizes the sup over the discretized gradient
    set, again by the product structure.
    """
    N = default_grid_size(max(traj.K, h.K))
    qdd = traj.derivative().derivative().sample(N)
    hs = h.pad_modes(traj.K).sample(N) if h.K < traj.K else h.sample(N)
    qs = traj.sample(N)
    lin = -np.sum(qdd * hs, axis=1)
    if model.kind == "smooth":
        grads = np.asarray(model.gradients[0](qs), dtype=float)
        nonlin = -np.sum(grads * hs, axis=1)
    else:
        pair = np.stack([np.sum(np.asarray(g(qs), dtype=float) * hs, axis=1)
                         for g in model.gradients])       # (P, N)
        piece_vals = model.piece_values(qs)
        top = np.max(piece_vals, axis=0)
        tol = 1e-8 * (1.0 + np.abs(top))
        active = piece_vals >= top[None, :] - tol[None, :]
        pair = np.where(active, -pair, -np.inf)
        nonlin = np.max(pair, axis=0)
    return traj.T * float(np.mean(lin + nonlin))


@dataclass(frozen=True)
class EkelandReport:
    """Sampled check of the variational-principle inequality.

    Along a minimizing sequence produced in the bounded-below regime,
    f0(q_n; h) >= -eps_n ||h|| / (1 + ||q_n||) must hold with eps_n read
    from the observed gap f(q_n) - min f.  violated lists (index, pair)
    offenders; a clean run reports fraction 0.
    """

    checked: int
    violations: int
    fraction: float
    flagged: bool
    worst_slack: float


def ekeland_diagnostic(records, model: PotentialModel, n_directions: int = 6,
                       seed: int = 0, tol: float = 1e-8) -> EkelandReport:
    recs = [r for r in records if r.trajectory is not None]
    if not recs:
        raise ValueError("records carry no trajectories to test")
    rng = np.random.default_rng(seed)
    f_min = min(r.f_value for r in recs)
    checked = 0
    violations = 0
    worst = np.inf
    for rec in recs:
        q = rec.trajectory
        eps = float(np.sqrt(max(rec.f_value - f_min, 0.0)))
        dirs = [random_trajectory(rng, q.T, q.n, q.K, zero_mean=False)
                for _ in range(n_directions - 1)]
        # The steepest-descent representative is the most demanding h.
        grad = min_norm_subgradient(q, model, metric="l2")
        if grad.l2_norm > 0:
            dirs.append(grad.residual * (-1.0))
        for h in dirs:
            nh = h1_norm(h)
            if nh == 0:
                continue
            h = h * (1.0 / nh)
            lhs = action_clarke_directional(q, model, h)
            bound = -eps / (1.0 + rec.h1norm)
            slack = lhs - bound
            worst = min(worst, slack)
            checked += 1
            if slack < -tol:
                violations += 1
    fraction = violations / checked if checked else 0.0
    return EkelandReport(checked=checked, violations=violations,
                         fraction=fraction, flagged=violations > 0,
                         worst_slack=float(worst))


@dataclass(frozen=True)
class SequenceClassification:
    is_ps_like: bool
    is_cps_like: bool
    bounded: bool
    f_limit: float


def classify_sequence(records) -> SequenceClassification:
    """Tag a finite run with the compactness behaviors it exhibits.

    Last-quartile trends only; this can suggest, never prove, that the
    corresponding condition holds.
    """
    records = list(records)
    if len(records) < 10:
        raise ValueError(f"need at least 10 records, got {len(records)}")
    f = np.array([r.f_value for r in records])
    norms = np.array([r.h1norm for r in records])
    gs = np.array([r.min_norm for r in records])
    measures = np.array([r.measure for r in records])
    nq = max(len(records) // 4, 2)
    f_q = f[-nq:]
    f_limit = float(np.mean(f_q))
    span_run = float(np.max(f) - np.min(f))
    span_q = float(np.max(f_q) - np.min(f_q))
    f_settled = span_q <= max(1e-8, 0.05 * span_run, 1e-6 * (1.0 + abs(f_limit)))

    def to_zero(vals: np.ndarray) -> bool:
        head = float(np.mean(vals[:nq]))
        tail = float(np.mean(vals[-nq:]))
        return tail <= max(1e-7, 1e-1 * head)

    tail_norms = norms[-nq:]
    diverging = (np.all(np.diff(tail_norms) > 0)
                 and tail_norms[-1] > 2.0 * tail_norms[0])
    bounded = bool(np.max(norms) < 1e6 and not diverging)
    return SequenceClassification(
        is_ps_like=bool(f_settled and to_zero(gs)),
        is_cps_like=bool(f_settled and to_zero(measures)),
        bounded=bounded,
        f_limit=f_limit,
    )

"""Boundary-pinned surface deformation realizing the minimax values.

A Surface carries one trajectory per node of a parameter grid: the
cylinder {x1-box} x [0, r2] in superquadratic mode, the X1 ball (as a
max-norm box) in saddle mode.  Boundary nodes are pinned to the identity
embedding and never move.  Each deformation step locates the node where
f is largest, takes a backtracking step along the preconditioned
min-norm descent direction there, and diffuses a fraction of the
displacement to grid neighbors (peak-shaving).  The max of f over nodes
is non-increasing by construction, and the stopping rule watches the
Cerami measure (1 + ||q||) ||min-norm gradient|| at the running argmax,
the scale-aware criterion for the unbounded-norm regime.

Finite node sets cannot hover exactly at the minimax level: the linked
surface crosses the critical ridge between grid nodes, so pure per-node
descent eventually slides every interior node past the ridge while the
continuum crossing survives on the segments joining them.  When that
happens (the node argmax goes critical below the certified sphere level,
or descent stalls), the run probes the piecewise-linear interpolation of
the surface along grid edges, which is a genuinely linked surface and so
still carries the barrier, and finishes the ridge maximizer with a
Levenberg-Marquardt polish of the inclusion residual.  The polished loop
is written back into the surface, becoming its argmax node.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .action import CeramiRecord, action_value, min_norm_subgradient
from .linking import LinkingGeometry
from .potentials import PotentialModel
from .trajectory import (
    PeriodicTrajectory,
    h1_norm,
    h1_norm_mean,
    l2_norm,
    random_trajectory,
)
from .verification import VerificationReport, inclusion_residual


class StallError(RuntimeError):
    """Line search exhausted while the argmax node was still non-critical."""

    def __init__(self, message: str, node: int, measure: float, step: float):
        super().__init__(message)
        self.node = node
        self.measure = measure
        self.step = step


class GeometryNotCertified(ValueError):
    """run_* requires a geometry whose certificate passed."""


@dataclass
class SolverConfig:
    mode: str = "superquadratic"        # "superquadratic" | "saddle"
    K: int = 64
    grid: int = 9                       # nodes per grid axis
    tol_conv: float = 1e-5              # Cerami-measure stopping level
    max_iters: int = 20000
    seed: int = 0
    eta: float = 0.5                    # neighbor diffusion factor
    sigma: float = 1e-4                 # Armijo decrement coefficient
    max_halvings: int = 40
    init_step: float = 1.0
    max_restarts: int = 3
    verify_tol: float = 1e-4            # posterior inclusion gate for candidates
    max_polishes: int = 6               # ridge reseeding attempts
    probe_every: int = 5                # inf-sup probe cadence during deformation
    threads: int = 1                    # accepted for interface parity; runs serially

    def __post_init__(self):
        if self.grid < 3:
            raise ValueError(f"grid resolution must be >= 3, got {self.grid}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True)
class Surface:
    """Node trajectories over the parameter grid, boundary pinned."""

    shape: tuple[int, ...]
    nodes: tuple[PeriodicTrajectory, ...]
    pinned: np.ndarray                  # (n_nodes,) bool
    f_values: np.ndarray                # (n_nodes,) cached action values
    last_step: float = 1.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def argmax_node(self) -> int:
        # np.argmax takes the first maximum, so ties break at the lowest index.
        return int(np.argmax(self.f_values))

    def neighbors(self, flat: int) -> list[int]:
        idx = np.unravel_index(flat, self.shape)
        out = []
        for axis in range(len(self.shape)):
            for delta in (-1, 1):
                j = idx[axis] + delta
                if 0 <= j < self.shape[axis]:
                    nb = list(idx)
                    nb[axis] = j
                    out.append(int(np.ravel_multi_index(nb, self.shape)))
        return out

    def with_updates(self, updates: dict[int, PeriodicTrajectory],
                     f_updates: dict[int, float], last_step: float) -> "Surface":
        nodes = list(self.nodes)
        f_vals = self.f_values.copy()
        for i, traj in updates.items():
            nodes[i] = traj
        for i, fv in f_updates.items():
            f_vals[i] = fv
        return Surface(self.shape, tuple(nodes), self.pinned, f_vals, last_step)


def init_surface(geom: LinkingGeometry, model: PotentialModel,
                 config: SolverConfig) -> Surface:
    """Identity embedding of the parameter domain, boundary pinned.

    Superquadratic: node (x1, s) -> constant loop x1 plus s e on the grid
    over [-r1, r1]^n x [0, r2].  Saddle: node x1 -> constant loop on the
    grid over [-R, R]^n (max-norm ball; for n = 1 the boundary is the
    two-point sphere).
    """
    m = config.grid
    n = model.dim
    if geom.mode == "superquadratic":
        e = geom.e.pad_modes(config.K)
        axes = [np.linspace(-geom.r1, geom.r1, m) for _ in range(n)]
        axes.append(np.linspace(0.0, geom.r2, m))
        shape = tuple(len(ax) for ax in axes)
        nodes = []
        for idx in itertools.product(*(range(len(ax)) for ax in axes)):
            x1 = np.array([axes[d][idx[d]] for d in range(n)])
            s = axes[n][idx[n]]
            nodes.append(PeriodicTrajectory.constant(geom.T, x1, K=config.K) + s * e)
    else:
        if geom.R is None:
            raise ValueError("saddle surface needs the radius R")
        axes = [np.linspace(-geom.R, geom.R, m) for _ in range(n)]
        shape = tuple(len(ax) for ax in axes)
        nodes = []
        for idx in itertools.product(*(range(len(ax)) for ax in axes)):
            x1 = np.array([axes[d][idx[d]] for d in range(n)])
            nodes.append(PeriodicTrajectory.constant(geom.T, x1, K=config.K))
    pinned = np.zeros(len(nodes), dtype=bool)
    for flat in range(len(nodes)):
        idx = np.unravel_index(flat, shape)
        pinned[flat] = any(i == 0 or i == s - 1 for i, s in zip(idx, shape))
    f_vals = np.array([action_value(q, model) for q in nodes])
    return Surface(shape, tuple(nodes), pinned, f_vals, 1.0)


def deform_step(surface: Surface, model: PotentialModel, config: SolverConfig,
                measure_tol: float | None = None) -> tuple[Surface, CeramiRecord]:
    """One peak-shaving descent step; returns the post-step argmax record.

    If the argmax node is already critical to tolerance the surface is
    returned unchanged.  Raises StallError when the backtracking line
    search cannot decrease the peak.
    """
    measure_tol = config.tol_conv if measure_tol is None else measure_tol
    peak = surface.argmax_node()
    if surface.pinned[peak]:
        raise StallError("argmax sits on the pinned boundary; the geometry "
                         "certificate is violated", peak, np.inf, 0.0)
    q = surface.nodes[peak]
    f_old = float(surface.f_values[peak])
    grad = min_norm_subgradient(q, model, metric="h1precond")
    measure = (1.0 + h1_norm(q)) * grad.l2_norm
    if measure <= measure_tol:
        rec = _record_at(surface, model, peak, grad_l2=grad.l2_norm)
        return surface, rec

    d = grad.descent_direction()
    dn2 = l2_norm(d) ** 2
    nbs = [j for j in surface.neighbors(peak) if not surface.pinned[j]]
    step = surface.last_step
    for _ in range(config.max_halvings + 1):
        trial = q + step * d
        f_trial = action_value(trial, model)
        if f_trial <= f_old - config.sigma * step * dn2:
            # Peak-shaving: drag neighbors along by eta of the displacement,
            # but never let a dragged neighbor climb above the old max (the
            # max over nodes stays non-increasing).
            shift = (config.eta * step) * d
            updates = {peak: trial}
            f_updates = {peak: f_trial}
            for j in nbs:
                moved = surface.nodes[j] + shift
                f_moved = action_value(moved, model)
                if f_moved <= f_old:
                    updates[j] = moved
                    f_updates[j] = f_moved
            new_surface = surface.with_updates(updates, f_updates,
                                               last_step=min(step * 2.0, 1e6))
            rec = _record_at(new_surface, model, new_surface.argmax_node())
            return new_surface, rec
        step *= 0.5
    raise StallError(f"line search exhausted at node {peak} with Cerami "
                     f"measure {measure:.3e}", peak, measure, step)


def _record_at(surface: Surface, model: PotentialModel, node: int,
               grad_l2: float | None = None) -> CeramiRecord:
    q = surface.nodes[node]
    if grad_l2 is None:
        grad_l2 = min_norm_subgradient(q, model, metric="l2").l2_norm
    norm = h1_norm(q)
    return CeramiRecord(index=0, f_value=float(surface.f_values[node]),
                        h1norm=norm, min_norm=grad_l2,
                        measure=(1.0 + norm) * grad_l2,
                        mean_norm=h1_norm_mean(q), trajectory=q)


@dataclass(frozen=True)
class SolverResult:
    candidate: PeriodicTrajectory
    c_estimate: float
    history: tuple[CeramiRecord, ...]
    converged: bool
    geometry: LinkingGeometry
    verification: VerificationReport
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "c_estimate": float(self.c_estimate),
            "converged": bool(self.converged),
            "iterations": len(self.history),
            "final_measure": float(self.history[-1].measure) if self.history else None,
            "geometry": self.geometry.to_dict(),
            "verification": self.verification.to_dict(),
            "candidate": self.candidate.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _polyline_max(chain: list[PeriodicTrajectory], model: PotentialModel,
                  n_probe: int = 7) -> tuple[float, int, float]:
    """Coarse max of f over the piecewise-linear curve through the chain.

    Returns (value, segment index, theta); the chain endpoints are
    assumed cached elsewhere so only interior points are probed.
    """
    thetas = np.arange(1, n_probe + 1) / (n_probe + 1)
    best_val, best_seg, best_th = -np.inf, 0, 0.0
    for seg in range(len(chain) - 1):
        diff = chain[seg + 1] - chain[seg]
        for th in thetas:
            val = action_value(chain[seg] + float(th) * diff, model)
            if val > best_val:
                best_val, best_seg, best_th = val, seg, float(th)
    return best_val, best_seg, best_th


def _golden_refine(qa: PeriodicTrajectory, qb: PeriodicTrajectory,
                   model: PotentialModel, th0: float,
                   iters: int = 40) -> tuple[PeriodicTrajectory, float]:
    diff = qb - qa
    lo, hi = max(th0 - 0.15, 0.0), min(th0 + 0.15, 1.0)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = action_value(qa + c * diff, model)
    fd = action_value(qa + d * diff, model)
    for _ in range(iters):
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = action_value(qa + c * diff, model)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = action_value(qa + d * diff, model)
    th = 0.5 * (lo + hi)
    q = qa + th * diff
    return q, float(action_value(q, model))


def ridge_probe(surface: Surface, model: PotentialModel,
                floor: float = -np.inf,
                n_probe: int = 7) -> tuple[PeriodicTrajectory, float] | None:
    """Inf-sup over the interpolated surface: the discrete minimax point.

    Node values alone miss the critical ridge when it runs between grid
    points; the piecewise-linear curves through each grid column (along
    the last parameter axis) are paths whose maxima estimate the ridge
    crossing level, and the smallest column max realizes the discrete
    inf-sup.  Columns whose max falls below floor have slipped around
    the sphere through the mean directions (the quadratic barrier only
    binds zero-mean loops) and are discarded.  Returns None when every
    column leaked; the winning segment is refined by golden section.
    """
    shape = surface.shape
    axis = len(shape) - 1
    best_inf = np.inf
    best = None
    other = [range(s) for d, s in enumerate(shape) if d != axis]
    for prefix in itertools.product(*other):
        idx = list(prefix[:axis]) + [0] + list(prefix[axis:])
        flats = []
        for j in range(shape[axis]):
            idx[axis] = j
            flats.append(int(np.ravel_multi_index(idx, shape)))
        chain = [surface.nodes[k] for k in flats]
        col_val, seg, th = _polyline_max(chain, model, n_probe)
        node_max = float(np.max(surface.f_values[flats]))
        if node_max >= col_val:
            col_val, seg, th = node_max, None, 0.0
        if col_val < floor or col_val >= best_inf:
            continue
        best_inf = col_val
        if seg is None:
            j = flats[int(np.argmax(surface.f_values[flats]))]
            best = (surface.nodes[j], None, 0.0)
        else:
            best = (chain[seg], chain[seg + 1], th)
    if best is None:
        return None
    if best[1] is None:
        return best[0], float(best_inf)
    return _golden_refine(best[0], best[1], model, best[2])


def _coeff_vector(traj: PeriodicTrajectory) -> np.ndarray:
    return np.concatenate([traj.a0, traj.a.ravel(), traj.b.ravel()])


def _traj_from_vector(vec: np.ndarray, like: PeriodicTrajectory) -> PeriodicTrajectory:
    n, K = like.n, like.K
    a0 = vec[:n]
    a = vec[n:n + K * n].reshape(K, n)
    b = vec[n + K * n:].reshape(K, n)
    return PeriodicTrajectory(like.T, a0, a, b)


def _polish_candidate(q0: PeriodicTrajectory, model: PotentialModel,
                      config: SolverConfig, records: list[CeramiRecord],
                      start_index: int) -> PeriodicTrajectory:
    """Levenberg-Marquardt zero-finding on the discrete inclusion residual.

    Minimizes ||R(q)||^2 where R maps Fourier coefficients to the
    coefficients of the min-norm residual -qdd - v.  Quadratic local
    convergence turns a ridge point located by the deformation into a
    candidate whose Cerami measure meets the stopping tolerance.  Emits
    one record per accepted step.
    """
    def residual_vec(q: PeriodicTrajectory) -> np.ndarray:
        grad = min_norm_subgradient(q, model, metric="l2")
        return _coeff_vector(grad.residual)

    q = q0
    x = _coeff_vector(q)
    R = residual_vec(q)
    cost = float(R @ R)
    damping = 1e-6
    fd_h = 1e-7
    it = start_index
    slow = 0
    for _ in range(60):
        rec = _loose_record(q, model)
        records.append(replace(rec, index=it))
        it += 1
        if rec.measure <= config.tol_conv * 0.1:
            break
        if slow >= 3 and rec.measure <= config.tol_conv:
            break  # converged to the shape this basin supports
        dim = x.size
        J = np.empty((R.size, dim))
        for j in range(dim):
            xp = x.copy()
            xp[j] += fd_h
            J[:, j] = (residual_vec(_traj_from_vector(xp, q)) - R) / fd_h
        JtJ = J.T @ J
        JtR = J.T @ R
        diag = float(np.trace(JtJ)) / dim + 1e-30
        moved = False
        for _ in range(25):
            step = np.linalg.solve(JtJ + damping * diag * np.eye(dim), -JtR)
            x_try = x + step
            q_try = _traj_from_vector(x_try, q)
            R_try = residual_vec(q_try)
            cost_try = float(R_try @ R_try)
            if cost_try < cost:
                slow = slow + 1 if cost_try > 0.25 * cost else 0
                x, q, R, cost = x_try, q_try, R_try, cost_try
                damping = max(damping / 3.0, 1e-14)
                moved = True
                break
            damping *= 10.0
        if not moved:
            break
    records.append(replace(_loose_record(q, model), index=it))
    return q


def _loose_record(q: PeriodicTrajectory, model: PotentialModel) -> CeramiRecord:
    grad_l2 = min_norm_subgradient(q, model, metric="l2").l2_norm
    norm = h1_norm(q)
    return CeramiRecord(index=0, f_value=action_value(q, model), h1norm=norm,
                        min_norm=grad_l2, measure=(1.0 + norm) * grad_l2,
                        mean_norm=h1_norm_mean(q), trajectory=q)


def _nonconstant_enough(q: PeriodicTrajectory) -> bool:
    osc = PeriodicTrajectory(q.T, np.zeros(q.n), q.a, q.b)
    return l2_norm(osc) > 1e-6 * (1.0 + float(np.linalg.norm(q.a0)))


def _seed_variants(seed: PeriodicTrajectory, dim: int,
                   rng: np.random.Generator, max_variants: int):
    """Polish seeds in preference order: the ridge point itself, then
    quarter-period rotating mixes across axis pairs (autonomous radial
    systems keep planar data planar, so these break that symmetry), then
    mildly noised copies."""
    yield seed
    produced = 1
    if dim >= 2 and produced < max_variants:
        amp = np.linalg.norm(seed.a, axis=0) + np.linalg.norm(seed.b, axis=0)
        j_main = int(np.argmax(amp))
        shifted = seed.time_shift(seed.T / 4.0)
        for j_other in range(dim):
            if j_other == j_main or produced >= max_variants:
                continue
            for sign in (1.0, -1.0):
                if produced >= max_variants:
                    break
                a = np.array(seed.a)
                b = np.array(seed.b)
                a[:, j_other] = sign * shifted.a[:, j_main]
                b[:, j_other] = sign * shifted.b[:, j_main]
                yield PeriodicTrajectory(seed.T, seed.a0, a, b)
                produced += 1
    while produced < max_variants:
        noise = random_trajectory(rng, seed.T, seed.n, seed.K, zero_mean=True)
        kin = l2_norm(noise.derivative())
        scale = 0.1 * (l2_norm(seed.derivative()) + 1.0)
        if kin > 0:
            noise = noise * (scale / kin)
        yield seed + noise
        produced += 1


def _run(model: PotentialModel, geom: LinkingGeometry,
         config: SolverConfig) -> SolverResult:
    if geom.passed is not True:
        raise GeometryNotCertified(
            "geometry certificate absent or failed; calibrate and certify first")
    rng = np.random.default_rng(config.seed)
    surface = init_surface(geom, model, config)
    records: list[CeramiRecord] = []
    restarts = 0
    barrier_slack = np.inf
    floor = geom.alpha_sampled if geom.mode == "superquadratic" else geom.alpha_bound
    # A node argmax that is critical but sits below the certified sphere
    # level is a spurious attractor the surface drained into, not the
    # linking level; it hands control to the ridge probe.
    def acceptable(rec: CeramiRecord) -> bool:
        if geom.mode != "superquadratic":
            return True
        return rec.f_value >= geom.alpha_sampled - 1e-8

    # The inf-sup over the interpolated surface columns is tracked along
    # the deformation: the deformation's whole contribution is to lower
    # this crossing level toward the minimax value before the node set
    # degrades (columns can slip around the sphere through the mean
    # directions, which the probe filter rejects).
    probe_floor = (geom.alpha_bound - 1e-6) if geom.mode == "superquadratic" else -np.inf
    best_seed: PeriodicTrajectory | None = None
    best_seed_val = np.inf
    probe_patience = 3
    probe_misses = 0

    def probe_now():
        nonlocal best_seed, best_seed_val, probe_misses
        hit = ridge_probe(surface, model, floor=probe_floor)
        if hit is not None and hit[1] < best_seed_val:
            best_seed, best_seed_val = hit
            probe_misses = 0
        else:
            probe_misses += 1

    probe_now()
    converged = False
    stall_reason = None
    polished = False
    rejected = 0
    it = 0
    while it < config.max_iters:
        try:
            surface, rec = deform_step(surface, model, config)
        except StallError as err:
            pinned_peak = surface.pinned[surface.argmax_node()]
            if not pinned_peak and restarts < config.max_restarts:
                restarts += 1
                surface = _perturb_peak(surface, model, geom, rng)
                it += 1
                continue
            stall_reason = str(err)
            break
        rec = replace(rec, index=it)
        records.append(rec)
        it += 1
        if it % config.probe_every == 0 and probe_misses < probe_patience:
            probe_now()
        node_max = float(np.max(surface.f_values))
        barrier_slack = min(barrier_slack, node_max - floor)
        if rec.measure <= config.tol_conv:
            if acceptable(rec) and (rec.trajectory is None or inclusion_residual(
                    rec.trajectory, model).aggregate <= config.verify_tol):
                converged = True
                break
            rejected += 1
            break
        if geom.mode == "superquadratic" and node_max < probe_floor:
            # Every node fell below the certified crossing level; further
            # node descent cannot inform the minimax.
            break

    ridge_slack = None
    if not converged and it < config.max_iters and best_seed is not None:
        # Ridge phase: polish the best crossing the deformation exposed
        # into a critical point.  Candidates are accepted only if they
        # pass the posterior inclusion gate; rejections reseed with
        # symmetry-breaking variants (rotating axis mixes, noise).
        ridge_slack = float(best_seed_val - geom.alpha_bound)
        best: PeriodicTrajectory | None = None
        best_aggregate = np.inf
        next_index = records[-1].index + 1 if records else it
        for seed_try in _seed_variants(best_seed, model.dim, rng, config.max_polishes):
            candidate = _polish_candidate(seed_try, model, config, records,
                                          start_index=next_index)
            next_index = records[-1].index + 1
            rec = records[-1]
            shape_ok = geom.mode != "superquadratic" or _nonconstant_enough(candidate)
            if not (rec.measure <= config.tol_conv and acceptable(rec) and shape_ok):
                rejected += 1
                continue
            aggregate = inclusion_residual(candidate, model).aggregate
            if aggregate < best_aggregate:
                best_aggregate, best = aggregate, candidate
            if aggregate <= config.verify_tol:
                break
            rejected += 1
        if best is not None:
            converged = True
            polished = True
            peak = surface.argmax_node()
            target = peak if not surface.pinned[peak] else int(
                np.flatnonzero(~surface.pinned)[0])
            surface = surface.with_updates(
                {target: best},
                {target: action_value(best, model)},
                last_step=surface.last_step)

    peak = surface.argmax_node()
    candidate = surface.nodes[peak]
    verification = inclusion_residual(candidate, model)
    diagnostics = {
        "restarts": restarts,
        "seed": config.seed,
        "node_barrier_slack": None if not np.isfinite(barrier_slack) else float(barrier_slack),
        "ridge_barrier_slack": ridge_slack,
        "max_h1norm": float(max((r.h1norm for r in records), default=0.0)),
        "mode": geom.mode,
        "stall": stall_reason,
        "ridge_polish": polished,
        "rejected_candidates": rejected,
    }
    return SolverResult(candidate=candidate,
                        c_estimate=float(surface.f_values[peak]),
                        history=tuple(records), converged=converged,
                        geometry=geom, verification=verification,
                        diagnostics=diagnostics)


def _perturb_peak(surface: Surface, model: PotentialModel,
                  geom: LinkingGeometry, rng: np.random.Generator) -> Surface:
    """Stall escape: nudge the peak by scaled random zero-mean noise."""
    peak = surface.argmax_node()
    q = surface.nodes[peak]
    scale = geom.rho if geom.rho is not None else (geom.R or 1.0)
    noise = random_trajectory(rng, q.T, q.n, q.K, zero_mean=True, decay=1.5)
    kin = l2_norm(noise.derivative())
    if kin > 0:
        noise = noise * (1e-3 * scale / kin)
    trial = q + noise
    return surface.with_updates({peak: trial},
                                {peak: action_value(trial, model)},
                                last_step=surface.last_step)


def run_minimax(model: PotentialModel, geom: LinkingGeometry,
                config: SolverConfig) -> SolverResult:
    """Deform the cylinder surface until its peak is critical.

    The estimate of the linking level is f at the final argmax node; it
    never falls below the sampled sphere level.
    """
    if geom.mode != "superquadratic":
        raise ValueError("run_minimax expects a superquadratic geometry")
    return _run(model, geom, config)


def run_saddle(model: PotentialModel, geom: LinkingGeometry,
               config: SolverConfig) -> SolverResult:
    """Same engine over the X1 ball with the boundary sphere pinned."""
    if geom.mode != "saddle":
        raise ValueError("run_saddle expects a saddle geometry")
    return _run(model, geom, config)

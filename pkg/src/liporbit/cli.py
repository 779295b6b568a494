"""Batch front door: certify, calibrate, solve, verify, bench.

One declarative JSON config drives every subcommand; command-line flags
override config keys (flags > file > defaults).  Exit code contract:
0 success, 1 certified-negative (a checker ran and said no), 2 input
error, 3 hypothesis/threshold infeasible.  Result artifacts are
deterministic for a fixed config and seed; wall-clock metadata is
quarantined in run_meta.json so the other files are byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linking, potentials, solver
from .action import history_to_csv
from .potentials import PotentialModel, SamplerSpec, certify
from .trajectory import PeriodicTrajectory
from .verification import inclusion_residual

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


SUPER_HYPS = ("V2", "V3", "V4")
SADDLE_HYPS = ("V2'", "V3'", "V4'")


@dataclass
class RunConfig:
    potential: dict
    T: float
    n: int = 1
    K: int = 64
    mode: str = "superquadratic"
    hypotheses: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    output_dir: str = "out"
    verbosity: int = 1
    verify_tol: float = 1e-4

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown key")
        if "potential" not in raw:
            raise ConfigError("potential", "missing")
        if "T" not in raw:
            raise ConfigError("T", "missing")
        cfg = cls(**raw)
        if cfg.T <= 0:
            raise ConfigError("T", f"period must be positive, got {cfg.T}")
        if cfg.mode not in ("superquadratic", "saddle"):
            raise ConfigError("mode", f"unknown mode {cfg.mode!r}")
        if cfg.n < 1 or cfg.K < 1:
            raise ConfigError("n" if cfg.n < 1 else "K", "must be a positive integer")
        cfg.hypotheses = dict(cfg._default_hypotheses(), **cfg.hypotheses)
        mu1 = cfg.hypotheses.get("mu1")
        if mu1 is not None:
            if cfg.mode == "superquadratic" and mu1 <= 2.0:
                raise ConfigError("hypotheses.mu1",
                                  f"superquadratic mode requires mu1 > 2, got {mu1}")
            if cfg.mode == "saddle" and mu1 >= 2.0:
                raise ConfigError("hypotheses.mu1",
                                  f"saddle mode requires mu1 < 2, got {mu1}")
        return cfg

    def _default_hypotheses(self) -> dict:
        name = self.potential.get("type")
        table = potentials.ZOO_PARAMS.get(name, {})
        flat: dict = {}
        for hyp, params in table.items():
            if self.mode == "superquadratic" and hyp not in SUPER_HYPS:
                continue
            if self.mode == "saddle" and hyp not in SADDLE_HYPS:
                continue
            flat.update(params)
        return flat

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(str(path), "config file not found")
        except json.JSONDecodeError as err:
            raise ConfigError(str(path), f"invalid JSON: {err}")
        return cls.from_dict(raw)

    def build_model(self) -> PotentialModel:
        spec = dict(self.potential)
        spec.setdefault("dim", self.n)
        if int(spec["dim"]) != self.n:
            raise ConfigError("potential.dim", f"disagrees with n = {self.n}")
        try:
            return potentials.from_spec(spec)
        except (KeyError, ValueError) as err:
            raise ConfigError("potential", str(err))

    def solver_config(self) -> solver.SolverConfig:
        keys = dict(self.solver)
        keys.setdefault("seed", 0)
        try:
            return solver.SolverConfig(mode=self.mode, K=self.K,
                                       verify_tol=self.verify_tol, **keys)
        except (TypeError, ValueError) as err:
            raise ConfigError("solver", str(err))

    def sampler_spec(self) -> SamplerSpec:
        keys = dict(self.sampler)
        keys.setdefault("seed", int(self.solver.get("seed", 0)))
        try:
            return SamplerSpec(**keys)
        except TypeError as err:
            raise ConfigError("sampler", str(err))


def _applicable_hypotheses(cfg: RunConfig) -> list[tuple[str, dict]]:
    h = cfg.hypotheses
    if cfg.mode == "superquadratic":
        return [
            ("V2", {"mu1": h.get("mu1"), "mu2": h.get("mu2", 0.0)}),
            ("V3", {"mu1": h.get("mu1"), "a1": h.get("a1"), "a2": h.get("a2", 0.0)}),
            ("V4", {"A": h.get("A"), "radius": h.get("radius", 1.0)}),
        ]
    return [
        ("V2'", {"mu1": h.get("mu1"), "mu2": h.get("mu2", 0.0)}),
        ("V3'", {"threshold": h.get("threshold", 0.0)}),
        ("V4'", {"A": h.get("A"), "a": h.get("a", 0.0)}),
    ]


def _require_params(hyp: str, params: dict):
    for key, val in params.items():
        if val is None:
            raise ConfigError(f"hypotheses.{key}", f"required by {hyp} but missing")


def _write(out_dir: Path, name: str, text: str, verbosity: int):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)
    if verbosity > 1:
        print(f"wrote {out_dir / name}")


def cmd_certify(cfg: RunConfig) -> int:
    """Run every certifier applicable to the configured mode."""
    model = cfg.build_model()
    sampler = cfg.sampler_spec()
    certs = []
    for hyp, params in _applicable_hypotheses(cfg):
        _require_params(hyp, params)
        certs.append(certify(model, hyp, params, sampler))
    payload = json.dumps({"certificates": [c.to_dict() for c in certs]},
                         sort_keys=True, indent=1)
    _write(Path(cfg.output_dir), "certificates.json", payload, cfg.verbosity)
    all_pass = all(c.passed for c in certs)
    if cfg.verbosity:
        for c in certs:
            flag = " [non-coercive]" if c.flags.get("non_coercive") else ""
            print(f"{c.hypothesis:4s} {'PASS' if c.passed else 'FAIL'} "
                  f"worst margin {c.worst_margin:+.3e}{flag}")
    return EXIT_OK if all_pass else EXIT_NEGATIVE


def _calibrated_geometry(cfg: RunConfig, model: PotentialModel) -> linking.LinkingGeometry:
    h = cfg.hypotheses
    seed = int(cfg.solver.get("seed", 0))
    if cfg.mode == "superquadratic":
        for key in ("A", "a1", "mu1"):
            if h.get(key) is None:
                raise ConfigError(f"hypotheses.{key}", "required for calibration")
        geom = linking.calibrate_superquadratic(
            model, {"A": h["A"], "a1": h["a1"], "a2": h.get("a2", 0.0),
                    "mu1": h["mu1"], "radius": h.get("radius", 1.0)}, cfg.T)
        return linking.certify_linking(geom, model, cfg.T, K=cfg.K, seed=seed)
    if h.get("A") is None:
        raise ConfigError("hypotheses.A", "required for calibration")
    return linking.calibrate_saddle(model, {"A": h["A"], "a": h.get("a", 0.0)},
                                    cfg.T, K=cfg.K, seed=seed)


def cmd_calibrate(cfg: RunConfig) -> int:
    model = cfg.build_model()
    try:
        geom = _calibrated_geometry(cfg, model)
    except linking.InfeasibleGeometryError as err:
        return _report_threshold(cfg, err)
    except linking.NonCoerciveError as err:
        print(f"calibration failed: {err}", file=sys.stderr)
        return EXIT_NEGATIVE
    _write(Path(cfg.output_dir), "geometry.json",
           json.dumps(geom.to_dict(), sort_keys=True, indent=1), cfg.verbosity)
    if cfg.verbosity:
        print(f"mode={geom.mode} pass={geom.passed} "
              f"alpha={geom.alpha_sampled} beta={geom.beta_sampled}")
    return EXIT_OK if geom.passed else EXIT_NEGATIVE


def _report_threshold(cfg: RunConfig, err: Exception) -> int:
    A = cfg.hypotheses.get("A")
    window = linking.threshold_period(A) if A else float("nan")
    print(f"infeasible: {err}\nadmissible periods: 0 < T < {window:g}",
          file=sys.stderr)
    return EXIT_INFEASIBLE


def cmd_solve(cfg: RunConfig, force: bool = False) -> int:
    """certify -> calibrate -> run -> verify -> write artifacts."""
    model = cfg.build_model()
    sampler = cfg.sampler_spec()
    t_start = time.time()

    certs = []
    for hyp, params in _applicable_hypotheses(cfg):
        _require_params(hyp, params)
        certs.append(certify(model, hyp, params, sampler))
    out = Path(cfg.output_dir)
    _write(out, "certificates.json",
           json.dumps({"certificates": [c.to_dict() for c in certs]},
                      sort_keys=True, indent=1), cfg.verbosity)
    if not all(c.passed for c in certs) and not force:
        print("hypothesis certificates failed (use --force to override)",
              file=sys.stderr)
        return EXIT_NEGATIVE

    try:
        geom = _calibrated_geometry(cfg, model)
    except linking.InfeasibleGeometryError as err:
        return _report_threshold(cfg, err)
    except linking.NonCoerciveError as err:
        print(f"calibration failed: {err}", file=sys.stderr)
        return EXIT_NEGATIVE
    _write(out, "geometry.json",
           json.dumps(geom.to_dict(), sort_keys=True, indent=1), cfg.verbosity)
    if not geom.passed and not force:
        print("linking certificate failed (use --force to override)",
              file=sys.stderr)
        return EXIT_NEGATIVE

    scfg = cfg.solver_config()
    run = solver.run_minimax if cfg.mode == "superquadratic" else solver.run_saddle
    result = run(model, geom, scfg)

    _write(out, "result.json", result.to_json(), cfg.verbosity)
    _write(out, "trajectory.json", result.candidate.to_json(), cfg.verbosity)
    _write(out, "trajectory.csv", result.candidate.to_csv(), cfg.verbosity)
    _write(out, "cerami.csv", history_to_csv(result.history), cfg.verbosity)
    _write(out, "run_meta.json",
           json.dumps({"wall_seconds": time.time() - t_start,
                       "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")},
                      sort_keys=True), cfg.verbosity)

    ver = result.verification
    ok = (result.converged and ver.aggregate < cfg.verify_tol
          and (cfg.mode != "superquadratic" or ver.nonconstant))
    if cfg.verbosity:
        print(f"converged={result.converged} c={result.c_estimate:.8g} "
              f"residual={ver.aggregate:.3e} nonconstant={ver.nonconstant}")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_verify(cfg: RunConfig, trajectory_path: str) -> int:
    model = cfg.build_model()
    try:
        traj = PeriodicTrajectory.from_json(Path(trajectory_path).read_text())
    except FileNotFoundError:
        print(f"trajectory file not found: {trajectory_path}", file=sys.stderr)
        return EXIT_INPUT
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
        print(f"cannot parse trajectory: {err}", file=sys.stderr)
        return EXIT_INPUT
    if traj.n != model.dim:
        print(f"trajectory dimension {traj.n} != model dimension {model.dim}",
              file=sys.stderr)
        return EXIT_INPUT
    report = inclusion_residual(traj, model)
    _write(Path(cfg.output_dir), "verification.json",
           json.dumps(report.to_dict(), sort_keys=True, indent=1), cfg.verbosity)
    if cfg.verbosity:
        print(f"aggregate={report.aggregate:.3e} max={report.max_distance:.3e} "
              f"excluded={report.excluded_fraction:.3f} "
              f"drift={report.energy_drift:.3e}")
    return EXIT_OK if report.aggregate < cfg.verify_tol else EXIT_NEGATIVE


BENCH_CONFIGS = {
    "quartic": {
        "potential": {"type": "quartic"}, "T": 2 * np.pi, "n": 1, "K": 64,
        "mode": "superquadratic",
        "solver": {"grid": 9, "tol_conv": 1e-5, "max_iters": 4000, "seed": 0},
    },
    "maxpair": {
        "potential": {"type": "maxpair"}, "T": 2.0, "n": 2, "K": 64,
        "mode": "superquadratic",
        "solver": {"grid": 9, "tol_conv": 1e-5, "max_iters": 4000, "seed": 0},
    },
    "subq32": {
        "potential": {"type": "subq32"}, "T": 1.0, "n": 2, "K": 64,
        "mode": "saddle",
        "solver": {"grid": 9, "tol_conv": 1e-5, "max_iters": 2000, "seed": 0},
    },
}


def cmd_bench(cfg_dir: str, verbosity: int = 1) -> int:
    """Run the built-in zoo benchmarks and report one line per case."""
    rows = []
    worst = EXIT_OK
    for name, raw in BENCH_CONFIGS.items():
        case = dict(raw)
        case["output_dir"] = str(Path(cfg_dir) / name)
        case["verbosity"] = 0
        t0 = time.time()
        code = cmd_solve(RunConfig.from_dict(case))
        dt = time.time() - t0
        result = json.loads((Path(cfg_dir) / name / "result.json").read_text())
        rows.append((name, code, result["c_estimate"],
                     result["verification"]["aggregate"], dt))
        worst = max(worst, code)
    if verbosity:
        print(f"{'case':10s} {'exit':4s} {'c_estimate':>12s} {'residual':>10s} {'sec':>6s}")
        for name, code, c, agg, dt in rows:
            print(f"{name:10s} {code:4d} {c:12.6f} {agg:10.2e} {dt:6.1f}")
    _write(Path(cfg_dir), "bench.json",
           json.dumps({"results": [
               {"case": r[0], "exit": r[1], "c_estimate": r[2],
                "residual": r[3]} for r in rows]}, sort_keys=True, indent=1),
           verbosity)
    return worst


def _apply_overrides(raw: dict, args) -> dict:
    if args.output is not None:
        raw["output_dir"] = args.output
    if args.seed is not None:
        raw.setdefault("solver", {})["seed"] = args.seed
    if args.threads is not None:
        raw.setdefault("solver", {})["threads"] = args.threads
    if args.modes is not None:
        raw["K"] = args.modes
    if args.grid is not None:
        raw.setdefault("solver", {})["grid"] = args.grid
    if args.period is not None:
        raw["T"] = args.period
    return raw


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="liporbit",
        description="periodic solutions of 0 in q'' + dV(q) by nonsmooth minimax")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("config", help="JSON run configuration")
        p.add_argument("-o", "--output", help="output directory override")
        p.add_argument("--seed", type=int, help="solver seed override")
        p.add_argument("--threads", type=int, help="worker threads (runs serially)")
        p.add_argument("--modes", type=int, help="Fourier mode count override (K)")
        p.add_argument("--grid", type=int, help="surface grid resolution override")
        p.add_argument("--period", type=float, help="period T override")

    add_common(sub.add_parser("certify", help="sample the growth hypotheses"))
    add_common(sub.add_parser("calibrate", help="build and certify the geometry"))
    p_solve = sub.add_parser("solve", help="full pipeline to a verified orbit")
    add_common(p_solve)
    p_solve.add_argument("--force", action="store_true",
                         help="run even when certificates fail")
    p_verify = sub.add_parser("verify", help="check a stored trajectory")
    add_common(p_verify)
    p_verify.add_argument("trajectory", help="trajectory JSON file")
    p_bench = sub.add_parser("bench", help="run the built-in zoo benchmarks")
    p_bench.add_argument("-o", "--output", default="bench_out")

    args = parser.parse_args(argv)
    if args.command == "bench":
        return cmd_bench(args.output)

    try:
        raw = json.loads(Path(args.config).read_text())
        if not isinstance(raw, dict):
            raise ConfigError(str(args.config), "top level must be an object")
        cfg = RunConfig.from_dict(_apply_overrides(raw, args))
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as err:
        print(f"config is not valid JSON: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as err:
        print(f"bad config: {err}", file=sys.stderr)
        return EXIT_INPUT

    try:
        if args.command == "certify":
            return cmd_certify(cfg)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "solve":
            return cmd_solve(cfg, force=args.force)
        if args.command == "verify":
            return cmd_verify(cfg, args.trajectory)
    except ConfigError as err:
        print(f"bad config: {err}", file=sys.stderr)
        return EXIT_INPUT
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())

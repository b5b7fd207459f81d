"""Command-line front end: ``gridadp solve|compare|rollout|diagnose``.

Exit codes: 0 success, 1 config/model error, 2 iteration budget exhausted
(or a run that diverged), 3 certificate failure.
"""

import argparse
import glob
import json
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .backup import EvalOptions, GreedyOptions, evaluate_policy
from .bench import make_benchmark
from .expr import ExpressionError, compile_expression
from .grid import BoxGrid, FieldFormatError, PolicyField, ScalarField, load_field, save_field
from .model import ConfigError, ControlSet, ControlSystem, ModelError, ProblemSpec, StageCost
from .solvers import InadmissibleStartError, RunTrace, SolveOptions, options_dict, run_mlpi, run_pi, run_vi
from .verify import (
    Certificate,
    PreconditionError,
    Tolerances,
    bellman_residual,
    certify_admissible,
    check_dominance,
    check_monotone,
    check_uniqueness,
    rollout,
)

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_CERT = 0, 1, 2, 3

_SOLVE_KEYS = {"tol_outer", "max_iters", "tol_eval", "max_sweeps", "refine", "refine_iters",
               "require_admissible"}


@dataclass
class RunConfig:
    """Declarative description of one run (the JSON config document)."""

    benchmark: Optional[str] = None
    system: Optional[dict] = None
    grid_nodes: Optional[list] = None
    control_samples: Optional[list] = None
    algorithm: str = "pi"
    lookahead_steps: int = 1
    initial_policy: object = None
    initial_value: object = None
    solve: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output_dir: Optional[str] = None
    seed: int = 0
    snapshots: bool = True
    # directory of the config file; relative field paths resolve against it
    base_dir: str = field(default=".", repr=False)

    @classmethod
    def from_dict(cls, data, base_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(**data, base_dir=base_dir)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}

    def check(self):
        if (self.benchmark is None) == (self.system is None):
            raise ConfigError("config needs exactly one of 'benchmark' or 'system'")
        if self.algorithm not in ("pi", "vi", "mlpi"):
            raise ConfigError(f"algorithm must be pi, vi or mlpi, not {self.algorithm!r}")
        if int(self.lookahead_steps) < 1:
            raise ConfigError("lookahead_steps must be >= 1")
        if self.algorithm in ("pi", "mlpi") and self.initial_value is not None:
            raise ConfigError(f"{self.algorithm} starts from an initial_policy, not an initial_value")
        if self.initial_policy is not None and self.initial_value is not None:
            raise ConfigError("give exactly one of initial_policy / initial_value")
        if self.benchmark is None and self.initial_policy is None and self.initial_value is None:
            raise ConfigError("inline systems need an initial_policy (or initial_value for vi)")
        unknown = set(self.solve) - _SOLVE_KEYS
        if unknown:
            raise ConfigError(f"unknown solve options: {', '.join(sorted(unknown))}")
        tol_names = {f.name for f in fields(Tolerances)}
        unknown = set(self.tolerances) - tol_names
        if unknown:
            raise ConfigError(f"unknown tolerances: {', '.join(sorted(unknown))}")

    # -- builders -------------------------------------------------------------

    def build(self):
        """Returns (spec, default initial policy or None, default greedy options)."""
        if self.benchmark is not None:
            bench = make_benchmark(self.benchmark, self.grid_nodes, self.control_samples)
            return bench.spec, bench.h0, bench.greedy
        s = self.system
        try:
            n, m = int(s["state_dim"]), int(s["control_dim"])
            dom, ctl = s["domain"], s["controls"]
            spec = ProblemSpec(
                ControlSystem.from_expressions(s["dynamics"], n, m),
                StageCost.from_expression(s["cost"], n, m),
                BoxGrid(dom["lower"], dom["upper"], self.grid_nodes or dom["nodes"]),
                ControlSet(ctl["lower"], ctl["upper"], self.control_samples or ctl["samples"]),
                s.get("name", "inline"),
            )
        except KeyError as exc:
            raise ConfigError(f"inline system is missing {exc}") from None
        except (ExpressionError, ValueError) as exc:
            raise ConfigError(f"invalid inline system: {exc}") from None
        return spec, None, GreedyOptions()

    def solve_options(self, greedy_default):
        s = self.solve
        greedy = GreedyOptions(
            refine=bool(s.get("refine", greedy_default.refine)),
            refine_iters=int(s.get("refine_iters", greedy_default.refine_iters)),
        )
        ev = EvalOptions(float(s.get("tol_eval", 1e-10)), int(s.get("max_sweeps", 20_000)))
        return SolveOptions(
            tol_outer=float(s.get("tol_outer", 1e-6)),
            max_iters=int(s.get("max_iters", 100)),
            eval=ev,
            greedy=greedy,
            lookahead_steps=int(self.lookahead_steps),
            require_admissible=bool(s.get("require_admissible", True)),
        )

    def tolerance(self):
        return Tolerances(**self.tolerances)

    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def policy(self, spec, default):
        src = self.initial_policy
        if src is None:
            return default
        if isinstance(src, dict):
            if "file" not in src:
                raise ConfigError("initial_policy object needs a 'file' key")
            h = load_field(self._path(src["file"]))
            if not isinstance(h, PolicyField) or h.grid != spec.domain:
                raise ConfigError("initial_policy file does not match the domain grid")
            return h
        exprs = [src] if isinstance(src, str) else list(src)
        if len(exprs) != spec.m:
            raise ConfigError(f"initial_policy needs {spec.m} expressions")
        X = spec.domain.points
        try:
            u = np.stack([compile_expression(e, spec.n)(X) for e in exprs], axis=-1)
        except ExpressionError as exc:
            raise ConfigError(f"invalid initial_policy: {exc}") from None
        if not np.all(np.isfinite(u)):
            raise ConfigError("initial_policy is not finite on the grid")
        return PolicyField(spec.domain, spec.controls.clip(u), spec.controls.lower, spec.controls.upper)

    def value(self, spec):
        src = self.initial_value
        if isinstance(src, dict):
            V = load_field(self._path(src["file"]))
            if not isinstance(V, ScalarField) or V.grid != spec.domain:
                raise ConfigError("initial_value file does not match the domain grid")
            return V
        if src in ("zero", 0, 0.0):
            return ScalarField.zeros(spec.domain)
        try:
            vals = compile_expression(str(src), spec.n)(spec.domain.points)
            return ScalarField(spec.domain, vals)
        except (ExpressionError, FieldFormatError) as exc:
            raise ConfigError(f"invalid initial_value: {exc}") from None


# -- helpers ------------------------------------------------------------------

def _apply_overrides(cfg, args):
    if getattr(args, "algo", None):
        cfg.algorithm = args.algo
    if getattr(args, "lookahead", None) is not None:
        cfg.lookahead_steps = args.lookahead
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "snapshots", None) is not None:
        cfg.snapshots = args.snapshots
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    cfg.check()
    if not cfg.output_dir:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    return cfg


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_run(result, out, snapshots):
    os.makedirs(out, exist_ok=True)
    result.trace.write_csv(os.path.join(out, "trace.csv"))
    save_field(result.value, os.path.join(out, "value.csv"))
    save_field(result.policy, os.path.join(out, "policy.csv"))
    files = {"trace": "trace.csv", "value": "value.csv", "policy": "policy.csv"}
    if snapshots:
        snap = os.path.join(out, "snapshots")
        os.makedirs(snap, exist_ok=True)
        for i, V in enumerate(result.values):
            save_field(V, os.path.join(snap, f"value_{i:04d}.csv"))
        for i, h in enumerate(result.policies):
            save_field(h, os.path.join(snap, f"policy_{i:04d}.csv"))
        files["snapshots"] = "snapshots"
    return files


def _run_summary(cfg, opts, result, files):
    last = result.trace[-1] if len(result.trace) else None
    return {
        "version": __version__,
        "config": cfg.to_dict(),
        "options": options_dict(opts),
        "algorithm": result.algorithm,
        "converged": result.converged,
        "diverged": result.diverged,
        "message": result.message,
        "iterations": result.iterations,
        "value_scale": float(result.values[0].max()),
        "final": {
            "supnorm_delta": last.supnorm_delta if last else None,
            "bellman_residual": last.bellman_residual if last else None,
        },
        "wall_ms": [round(r.wall_ms, 3) for r in result.trace],
        "files": files,
    }


def _lock(out):
    os.makedirs(out, exist_ok=True)
    return FileLock(os.path.join(out, ".lock"), timeout=0)


def _status_exit(result):
    if result.converged:
        return EXIT_OK
    return EXIT_BUDGET


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


# -- subcommands --------------------------------------------------------------

def cmd_solve(config_path, args=None):
    cfg = _apply_overrides(RunConfig.load(config_path), args or argparse.Namespace())
    spec, default_h0, greedy = cfg.build()
    opts = cfg.solve_options(greedy)
    tol = cfg.tolerance()
    out = cfg.output_dir
    with _lock(out):
        os.makedirs(os.path.join(out, "certs"), exist_ok=True)
        if cfg.algorithm == "vi":
            if cfg.initial_value is not None:
                W0 = cfg.value(spec)
            else:
                h0 = cfg.policy(spec, default_h0)
                ev = evaluate_policy(spec, h0, opts.eval)
                if not ev.converged:
                    _err("evaluation of the initial policy did not converge")
                    return EXIT_CONFIG
                W0 = ev.value
            result = run_vi(spec, W0, opts)
        else:
            h0 = cfg.policy(spec, default_h0)
            runner = run_pi if cfg.algorithm == "pi" else run_mlpi
            try:
                result = runner(spec, h0, opts, tol, cfg.seed)
            except InadmissibleStartError as exc:
                if exc.certificate is not None:
                    _write_json(os.path.join(out, "certs", "initial_admissibility.json"),
                                exc.certificate.to_dict())
                _err(f"refusing to start: {exc}")
                return EXIT_CONFIG
        files = _write_run(result, out, cfg.snapshots)
        summary = _run_summary(cfg, opts, result, files)
        _write_json(os.path.join(out, "summary.json"), summary)
    state = "converged" if result.converged else ("diverged" if result.diverged else "not converged")
    print(f"{result.algorithm}: {state} after {result.iterations} iterations "
          f"(last sup-norm change {summary['final']['supnorm_delta']})")
    if result.message:
        print(result.message)
    return _status_exit(result)


def cmd_compare(config_path, args=None):
    cfg = _apply_overrides(RunConfig.load(config_path), args or argparse.Namespace())
    if cfg.initial_value is not None:
        _err("compare needs V0 = W0 evaluated from an admissible policy; "
             "an initial_value violates that precondition")
        return EXIT_CONFIG
    spec, default_h0, greedy = cfg.build()
    opts = cfg.solve_options(greedy)
    tol = cfg.tolerance()
    out = cfg.output_dir
    h0 = cfg.policy(spec, default_h0)
    with _lock(out):
        os.makedirs(os.path.join(out, "certs"), exist_ok=True)
        try:
            pi = run_pi(spec, h0, opts, tol, cfg.seed)
        except InadmissibleStartError as exc:
            _err(f"refusing to start: {exc}")
            return EXIT_CONFIG
        vi = run_vi(spec, pi.values[0], opts)
        try:
            cert = check_dominance(pi.values, vi.values, tol, opts.tol_outer)
        except PreconditionError as exc:
            _err(str(exc))
            return EXIT_CONFIG
        files = {"pi": _write_run(pi, os.path.join(out, "pi"), True),
                 "vi": _write_run(vi, os.path.join(out, "vi"), True)}
        _write_json(os.path.join(out, "certs", "dominance.json"), cert.to_dict())
        summary = {
            "version": __version__,
            "config": cfg.to_dict(),
            "options": options_dict(opts),
            "algorithm": "compare",
            "converged": pi.converged and vi.converged,
            "iterations": {"pi": pi.iterations, "vi": vi.iterations},
            "iterations_to_tolerance": cert.details["iterations_to_tolerance"],
            "dominance_passed": cert.passed,
            "value_scale": float(pi.values[0].max()),
            "files": files,
        }
        _write_json(os.path.join(out, "summary.json"), summary)
    its = cert.details["iterations_to_tolerance"]
    print(f"{'algorithm':<10}{'iterations':>12}{'to tol':>10}")
    print(f"{'pi':<10}{pi.iterations:>12}{str(its['pi']):>10}")
    print(f"{'vi':<10}{vi.iterations:>12}{str(its['vi']):>10}")
    print(f"dominance V^i <= W^i: {'PASS' if cert.passed else 'FAIL'} "
          f"(worst margin {cert.worst_witness['margin']:.3g}, threshold {cert.details['threshold']:.3g})")
    if not cert.passed:
        return EXIT_CERT
    return EXIT_OK if summary["converged"] else EXIT_BUDGET


def _config_near(path):
    d = os.path.dirname(os.path.abspath(path))
    for cand in (d, os.path.dirname(d)):
        summary = os.path.join(cand, "summary.json")
        if os.path.exists(summary):
            with open(summary, encoding="utf-8") as fh:
                data = json.load(fh)
            return RunConfig.from_dict(data["config"], cand)
    raise ConfigError(f"no --config given and no summary.json next to {path}")


def cmd_rollout(policy_path, x0, horizon, config_path=None):
    cfg = RunConfig.load(config_path) if config_path else _config_near(policy_path)
    spec, _, _ = cfg.build()
    h = load_field(policy_path)
    if not isinstance(h, PolicyField) or h.grid != spec.domain:
        raise ConfigError("policy file does not match the problem's domain grid")
    x0 = np.asarray(x0, float).reshape(1, spec.n)
    states, controls, costs, excursions = rollout(spec, h, x0, horizon)
    acc = np.cumsum(costs[:, 0])
    print(f"{'k':>5}  {'x':<32}{'u':<24}{'stage cost':>14}{'accumulated':>16}")
    for k in range(horizon):
        xs = ", ".join("%.6g" % v for v in states[k, 0])
        us = ", ".join("%.6g" % v for v in controls[k, 0])
        print(f"{k:>5}  {xs:<32}{us:<24}{costs[k, 0]:>14.6g}{acc[k]:>16.10g}")
    xs = ", ".join("%.6g" % v for v in states[-1, 0])
    print(f"{horizon:>5}  {xs}")
    print(f"terminal norm {np.linalg.norm(states[-1, 0]):.6g}, accumulated cost {acc[-1]:.10g}, "
          f"excursions {int(excursions[0])}")
    return EXIT_OK


def _trace_monotone(trace, scale, tol):
    threshold = tol.eps_mono * scale
    margins = trace.column("mono_margin") if len(trace) else np.zeros(0)
    worst = int(np.argmax(margins)) if len(margins) else 0
    m = float(margins[worst]) if len(margins) else 0.0
    passed = m <= threshold
    return Certificate(
        "monotone_trace", passed, "pass" if passed else "fail",
        {"iteration": worst, "margin": m}, {"scale": scale, "threshold": threshold},
        "" if passed else f"trace reports a pointwise increase of {m:.3g} at iteration {worst}",
    )


def _snapshots(run_dir, kind):
    return sorted(glob.glob(os.path.join(run_dir, "snapshots", f"{kind}_*.csv")))


def _diagnose_run(run_dir, spec, opts, tol, seed, algorithm, scale, from_policy):
    certs = []
    trace = RunTrace.read_csv(os.path.join(run_dir, "trace.csv"))
    values = [load_field(p) for p in _snapshots(run_dir, "value")]
    if algorithm in ("pi", "mlpi") or from_policy:
        certs.append(_trace_monotone(trace, scale, tol))
        if len(values) >= 2:
            certs.append(check_monotone(values, tol, scale))
    policies = _snapshots(run_dir, "policy")
    if algorithm in ("pi", "mlpi"):
        if policies:
            failed = []
            for p in policies:
                c = certify_admissible(spec, load_field(p), tol, seed=seed, eval_opts=opts.eval)
                if not c.passed:
                    failed.append({"file": os.path.basename(p), "reason": c.reason})
            certs.append(Certificate(
                "admissible_intermediates", not failed, "fail" if failed else "pass",
                failed[0] if failed else None, {"checked": len(policies), "failed": failed},
                "" if not failed else f"{len(failed)} intermediate policies failed"))
        else:
            print(f"warning: {run_dir} has no policy snapshots; admissibility check skipped",
                  file=sys.stderr)
            certs.append(Certificate("admissible_intermediates", True, "skipped",
                                     reason="no policy snapshots"))
    V = load_field(os.path.join(run_dir, "value.csv"))
    res, where = bellman_residual(spec, V, opts.greedy)
    threshold = tol.eps_bellman * max(V.max(), np.finfo(float).tiny)
    ok = res <= threshold
    certs.append(Certificate("bellman_residual", ok, "pass" if ok else "fail",
                             {"node": where.tolist(), "margin": res},
                             {"threshold": threshold},
                             "" if ok else f"residual {res:.3g} > {threshold:.3g}"))
    certs.append(check_uniqueness(spec, V, 0.1, opts, tol, seed))
    return certs, values


def cmd_diagnose(run_dir):
    with open(os.path.join(run_dir, "summary.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    cfg = RunConfig.from_dict(summary["config"], run_dir)
    spec, _, greedy = cfg.build()
    opts = cfg.solve_options(greedy)
    tol = cfg.tolerance()
    scale = float(summary.get("value_scale", 1.0))
    certs = []
    if summary["algorithm"] == "compare":
        pi_certs, pi_vals = _diagnose_run(os.path.join(run_dir, "pi"), spec, opts, tol, cfg.seed,
                                          "pi", scale, True)
        certs += pi_certs
        vi_vals = [load_field(p) for p in _snapshots(os.path.join(run_dir, "vi"), "value")]
        if pi_vals and vi_vals:
            try:
                certs.append(check_dominance(pi_vals, vi_vals, tol, opts.tol_outer))
            except PreconditionError as exc:
                certs.append(Certificate("dominance", False, "fail", reason=str(exc)))
    else:
        from_policy = summary["algorithm"] == "vi" and cfg.initial_value is None
        run_certs, _ = _diagnose_run(run_dir, spec, opts, tol, cfg.seed, summary["algorithm"],
                                     scale, from_policy)
        certs += run_certs
    failed = [c for c in certs if c.status == "fail"]
    os.makedirs(os.path.join(run_dir, "certs"), exist_ok=True)
    _write_json(os.path.join(run_dir, "certs", "diagnose.json"), {
        "run_dir": os.path.abspath(run_dir),
        "passed": not failed,
        "certificates": [c.to_dict() for c in certs],
    })
    for c in certs:
        print(f"{c.status.upper():<13}{c.subject}" + (f"  ({c.reason})" if c.reason else ""))
    return EXIT_CERT if failed else EXIT_OK


# -- entry point --------------------------------------------------------------

def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _floats(text):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="gridadp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--algo", choices=["pi", "vi", "mlpi"])
        p.add_argument("--lookahead", type=int, help="look-ahead depth for mlpi")
        p.add_argument("--seed", type=int)
        p.add_argument("--snapshots", type=_bool, help="persist per-iteration fields (true/false)")

    run_flags(sub.add_parser("solve", help="run pi, vi or mlpi"))
    run_flags(sub.add_parser("compare", help="run pi and vi from the same evaluated policy"))
    p = sub.add_parser("rollout", help="simulate a stored policy")
    p.add_argument("--policy", required=True, help="policy field file")
    p.add_argument("--x0", required=True, type=_floats, help="initial state, comma-separated")
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--config", help="config defining the system (default: summary.json near the policy)")
    p = sub.add_parser("diagnose", help="replay the verification checks on a finished run")
    p.add_argument("run_dir")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args.config, args)
        if args.command == "compare":
            return cmd_compare(args.config, args)
        if args.command == "rollout":
            return cmd_rollout(args.policy, args.x0, args.horizon, args.config)
        return cmd_diagnose(args.run_dir)
    except Timeout:
        _err("output directory is locked by another run")
        return EXIT_CONFIG
    except (ConfigError, FieldFormatError, ModelError, ExpressionError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

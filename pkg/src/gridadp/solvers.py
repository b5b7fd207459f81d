"""Policy iteration, value iteration and multi-step look-ahead policy iteration."""

import csv
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .backup import EvalOptions, GreedyOptions, _lookahead, _vi_backup, evaluate_policy, greedy_policy

__all__ = [
    "SolveOptions",
    "TraceRecord",
    "RunTrace",
    "SolveResult",
    "InadmissibleStartError",
    "run_pi",
    "run_vi",
    "run_mlpi",
    "TRACE_COLUMNS",
]


@dataclass(frozen=True)
class SolveOptions:
    tol_outer: float = 1e-6
    max_iters: int = 100
    eval: EvalOptions = field(default_factory=EvalOptions)
    greedy: GreedyOptions = field(default_factory=GreedyOptions)
    lookahead_steps: int = 1
    # refuse an initial policy that fails the admissibility certificate
    require_admissible: bool = True

    def __post_init__(self):
        if not self.tol_outer > 0:
            raise ValueError("tol_outer must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.lookahead_steps < 1:
            raise ValueError("lookahead_steps must be >= 1")


@dataclass(frozen=True)
class TraceRecord:
    i: int
    supnorm_delta: float
    bellman_residual: float
    mono_margin: float
    eval_sweeps: int
    excursions: int
    wall_ms: float = field(compare=False)


# wall_ms is kept out of the CSV so identical runs give identical files
TRACE_COLUMNS = ("i", "supnorm_delta", "bellman_residual", "mono_margin", "eval_sweeps", "excursions")


class RunTrace:
    """Per-iteration convergence record; indices run 0, 1, 2, ..."""

    def __init__(self, records=()):
        self.records = []
        for r in records:
            self.append(r)

    def append(self, record):
        if record.i != len(self.records):
            raise ValueError(f"trace index {record.i} breaks contiguity")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        return isinstance(other, RunTrace) and self.records == other.records

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([
                    r.i, "%.17g" % r.supnorm_delta, "%.17g" % r.bellman_residual,
                    "%.17g" % r.mono_margin, r.eval_sweeps, r.excursions,
                ])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            TraceRecord(int(r["i"]), float(r["supnorm_delta"]), float(r["bellman_residual"]),
                        float(r["mono_margin"]), int(r["eval_sweeps"]), int(r["excursions"]), 0.0)
            for r in rows
        )


@dataclass
class SolveResult:
    value: object
    policy: object
    trace: RunTrace
    converged: bool
    algorithm: str
    values: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    # set when a policy evaluation failed to converge mid-run
    diverged: bool = False
    message: str = ""

    @property
    def iterations(self):
        return len(self.trace)


class InadmissibleStartError(RuntimeError):
    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


def _sup(a, b):
    return float(np.max(np.abs(a.values - b.values)))


def _check_start(spec, h0, opts, tol, seed):
    if not opts.require_admissible:
        return
    from .verify import certify_admissible

    cert = certify_admissible(spec, h0, tol, seed=seed, eval_opts=opts.eval)
    if not cert.passed:
        raise InadmissibleStartError(
            f"initial policy failed the admissibility certificate: {cert.reason}", cert
        )


def _policy_iteration(spec, h0, opts, steps, algorithm, tol, seed):
    _check_start(spec, h0, opts, tol, seed)
    ev = evaluate_policy(spec, h0, opts.eval)
    V = ev.value
    result = SolveResult(V, h0, RunTrace(), False, algorithm, [V], [h0])
    if not ev.converged:
        result.diverged = True
        result.message = "evaluation of the initial policy did not converge"
        return result
    for i in range(opts.max_iters):
        t0 = time.perf_counter()
        _, h, TV, _ = _lookahead(spec, V, steps, opts.greedy)
        residual = _sup(TV, V)
        ev = evaluate_policy(spec, h, opts.eval)
        V_next = ev.value
        delta = _sup(V_next, V)
        margin = float(np.max(V_next.values - V.values))
        wall = (time.perf_counter() - t0) * 1e3
        result.trace.append(TraceRecord(i, delta, residual, margin, ev.sweeps, ev.excursions, wall))
        result.values.append(V_next)
        result.policies.append(h)
        result.value, result.policy = V_next, h
        V = V_next
        if not ev.converged:
            result.diverged = True
            result.message = (
                f"policy evaluation diverged at iteration {i}: intermediate policy is not admissible"
            )
            break
        if delta < opts.tol_outer:
            result.converged = True
            break
    return result


def run_pi(spec, h0, opts=None, tol=None, seed=0):
    """Policy iteration from the admissible node policy ``h0``.

    Alternates full policy evaluation with a node-wise greedy update until
    the sup-norm change of the value table drops below ``opts.tol_outer``.
    ``result.values[i]`` is the value of ``result.policies[i]``.
    """
    opts = opts or SolveOptions()
    return _policy_iteration(spec, h0, opts, 1, "pi", tol, seed)


def run_mlpi(spec, h0, opts=None, tol=None, seed=0):
    """Policy iteration with an ``opts.lookahead_steps``-step look-ahead update.

    With ``lookahead_steps == 1`` the iterates coincide with :func:`run_pi`.
    """
    opts = opts or SolveOptions()
    return _policy_iteration(spec, h0, opts, opts.lookahead_steps, "mlpi", tol, seed)


def run_vi(spec, W0, opts=None):
    """Value iteration ``W <- T W`` from ``W0`` (which may be the zero field)."""
    opts = opts or SolveOptions()
    W = W0
    result = SolveResult(W0, None, RunTrace(), False, "vi", [W0], [])
    for i in range(opts.max_iters):
        t0 = time.perf_counter()
        W_next, g, excursions = _vi_backup(spec, W, opts.greedy)
        delta = _sup(W_next, W)
        margin = float(np.max(W_next.values - W.values))
        wall = (time.perf_counter() - t0) * 1e3
        # for VI the Bellman residual of W^i is exactly the sweep change
        result.trace.append(TraceRecord(i, delta, delta, margin, 0, excursions, wall))
        result.values.append(W_next)
        result.policies.append(g)
        result.value, result.policy = W_next, g
        W = W_next
        if delta < opts.tol_outer:
            result.converged = True
            break
    if result.policy is None:
        result.policy = greedy_policy(spec, W0, opts.greedy)
    return result


def options_dict(opts):
    """Flat JSON-friendly view of SolveOptions."""
    out = {f.name: getattr(opts, f.name) for f in fields(opts) if f.name not in ("eval", "greedy")}
    out["eval"] = {f.name: getattr(opts.eval, f.name) for f in fields(opts.eval)}
    out["greedy"] = {f.name: getattr(opts.greedy, f.name) for f in fields(opts.greedy)}
    return out

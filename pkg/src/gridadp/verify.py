"""Numerical checks of the convergence, dominance, admissibility and uniqueness claims.

Exact-arithmetic inequalities do not survive interpolation and lattice argmin,
so every check carries an explicit slack.  Slacks in :class:`Tolerances` are
relative: each check multiplies them by a value scale (the max of the
reference field) and records both numbers in the certificate.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .backup import EvalOptions, GreedyOptions, _greedy_batch, evaluate_policy, greedy_policy
from .grid import ScalarField, interpolate, interpolate_policy

__all__ = [
    "Tolerances",
    "Certificate",
    "PreconditionError",
    "check_monotone",
    "check_dominance",
    "certify_admissible",
    "default_start_states",
    "rollout",
    "bellman_residual",
    "check_uniqueness",
    "check_lemma1",
    "iterations_to_tolerance",
]


@dataclass(frozen=True)
class Tolerances:
    eps_mono: float = 1e-6
    eps_dom: float = 1e-6
    eps_bellman: float = 5e-3
    rollout_horizon: int = 200
    eps_state: float = 1e-3
    # rollout cost may exceed the tabulated V_h(x0) by this fraction of max V_h
    eps_cost: float = 2e-2
    interior_starts: int = 20

    def __post_init__(self):
        for name in ("eps_mono", "eps_dom", "eps_bellman", "eps_state", "eps_cost"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rollout_horizon < 1:
            raise ValueError("rollout_horizon must be positive")


class PreconditionError(ValueError):
    """A check was asked to run outside the hypotheses it verifies."""


@dataclass
class Certificate:
    subject: str
    passed: bool
    # pass | fail | vacuous | inconclusive | skipped
    status: str
    worst_witness: Optional[dict] = None
    details: dict = field(default_factory=dict)
    reason: str = ""

    def to_dict(self):
        return _jsonable(asdict(self))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _scale(field_):
    return max(float(field_.max()), np.finfo(float).tiny)


def _same_grid(fields):
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("fields live on different grids")
    return grid


def check_monotone(fields, tol=None, scale=None):
    """Pointwise non-increase of a value sequence: ``V^{i+1} <= V^i + eps``."""
    tol = tol or Tolerances()
    fields = list(fields)
    if len(fields) < 2:
        raise ValueError("need at least two fields")
    grid = _same_grid(fields)
    scale = scale if scale is not None else _scale(fields[0])
    threshold = tol.eps_mono * scale
    margins = []
    worst = (-np.inf, 0, 0)
    for i, (a, b) in enumerate(zip(fields, fields[1:])):
        diff = b.values - a.values
        j = int(np.argmax(diff))
        margins.append(float(diff[j]))
        if diff[j] > worst[0]:
            worst = (float(diff[j]), i, j)
    passed = worst[0] <= threshold
    return Certificate(
        "monotone", passed, "pass" if passed else "fail",
        {"iteration": worst[1], "node": grid.coords_of(worst[2]).tolist(), "margin": worst[0]},
        {"scale": scale, "threshold": threshold, "margins": margins},
        "" if passed else f"value increased by {worst[0]:.3g} > {threshold:.3g}",
    )


def iterations_to_tolerance(fields, tol_outer=1e-6):
    """Iterations until the sup-norm change first drops below ``tol_outer`` (None if never)."""
    for i, (a, b) in enumerate(zip(fields, fields[1:])):
        if np.max(np.abs(b.values - a.values)) < tol_outer:
            return i + 1
    return None


def check_dominance(pi_fields, vi_fields, tol=None, tol_outer=1e-6):
    """``V^i <= W^i + eps`` for every common iteration, from a shared admissible start."""
    tol = tol or Tolerances()
    pi_fields, vi_fields = list(pi_fields), list(vi_fields)
    _same_grid(pi_fields + vi_fields)
    scale = _scale(pi_fields[0])
    threshold = tol.eps_dom * scale
    start_gap = float(np.max(np.abs(pi_fields[0].values - vi_fields[0].values)))
    if start_gap > threshold:
        raise PreconditionError(
            f"PI and VI must start from the same evaluated admissible policy (gap {start_gap:.3g})"
        )
    grid = pi_fields[0].grid
    margins = []
    worst = (-np.inf, 0, 0)
    for i, (v, w) in enumerate(zip(pi_fields, vi_fields)):
        diff = v.values - w.values
        j = int(np.argmax(diff))
        margins.append(float(diff[j]))
        if diff[j] > worst[0]:
            worst = (float(diff[j]), i, j)
    passed = worst[0] <= threshold
    iters = {
        "pi": iterations_to_tolerance(pi_fields, tol_outer),
        "vi": iterations_to_tolerance(vi_fields, tol_outer),
    }
    return Certificate(
        "dominance", passed, "pass" if passed else "fail",
        {"iteration": worst[1], "node": grid.coords_of(worst[2]).tolist(), "margin": worst[0]},
        {"scale": scale, "threshold": threshold, "margins": margins,
         "iterations_to_tolerance": iters, "tol_outer": tol_outer},
        "" if passed else f"PI value exceeds VI value by {worst[0]:.3g}",
    )


def default_start_states(grid, count=20, seed=0):
    """All grid corners plus ``count`` seeded interior nodes."""
    corners = list(grid.corner_indices)
    on_edge = np.zeros(grid.size, bool)
    mi = np.array(np.unravel_index(np.arange(grid.size), grid.shape)).T
    for d, k in enumerate(grid.shape):
        on_edge |= (mi[:, d] == 0) | (mi[:, d] == k - 1)
    interior = np.flatnonzero(~on_edge)
    rng = np.random.default_rng(seed)
    pick = rng.choice(interior, size=min(count, len(interior)), replace=False) if len(interior) else []
    idx = corners + sorted(int(i) for i in pick)
    return grid.points[idx].copy()


def rollout(spec, h, x0, horizon):
    """Closed-loop simulation with the interpolated policy (clamped to the domain).

    ``x0`` is ``(S, n)``. Returns states ``(H+1, S, n)``, controls ``(H, S, m)``,
    stage costs ``(H, S)`` and per-start excursion counts.
    """
    x = np.asarray(x0, float).reshape(-1, spec.n)
    alive = np.ones(len(x), bool)
    states = [x]
    controls, costs = [], []
    excursions = np.zeros(len(x), dtype=np.int64)
    for _ in range(horizon):
        xs = np.where(alive[:, None], x, 0.0)
        u = np.asarray(interpolate_policy(h, xs)).reshape(len(x), spec.m)
        costs.append(np.where(alive, spec.cost(xs, u), np.inf))
        nxt = spec.system(xs, u)
        alive &= np.all(np.isfinite(nxt), axis=-1)
        clamped, moved = spec.domain.clamp(np.where(alive[:, None], nxt, 0.0))
        x = np.where(alive[:, None], clamped, np.nan)
        excursions += moved & alive
        controls.append(u)
        states.append(x)
    return np.array(states), np.array(controls), np.array(costs), excursions


def certify_admissible(spec, h, tol=None, start_states=None, seed=0, value=None, eval_opts=None):
    """Rollout-based admissibility proxy for a node policy.

    Requires (i) the tabulated policy evaluation to converge (finite cost-to-go),
    and from every start state (ii) terminal norm below ``eps_state`` after
    ``rollout_horizon`` steps and (iii) a finite accumulated cost no larger
    than the tabulated ``V_h(x0)`` plus ``eps_cost`` times ``max V_h``.
    """
    tol = tol or Tolerances()
    if value is None:
        ev = evaluate_policy(spec, h, eval_opts or EvalOptions())
        value, evaluated = ev.value, ev.converged
    else:
        evaluated = True
    if start_states is None:
        start_states = default_start_states(spec.domain, tol.interior_starts, seed)
    x0 = np.asarray(start_states, float).reshape(-1, spec.n)
    states, _, costs, excursions = rollout(spec, h, x0, tol.rollout_horizon)
    terminal = np.linalg.norm(states[-1], axis=-1)
    terminal = np.where(np.isfinite(terminal), terminal, np.inf)
    total = np.sum(costs, axis=0)
    total = np.where(np.isfinite(total), total, np.inf)
    v0 = np.atleast_1d(interpolate(value, x0))
    scale = _scale(value)
    cost_slack = tol.eps_cost * scale
    state_ok = terminal < tol.eps_state
    cost_ok = np.isfinite(total) & (total <= v0 + cost_slack)
    ok = state_ok & cost_ok
    passed = bool(evaluated and ok.all())

    badness = np.maximum(terminal / tol.eps_state, (total - v0) / cost_slack)
    w = int(np.argmax(badness))
    reason = ""
    if not evaluated:
        reason = "policy evaluation did not converge (cost-to-go not finite)"
    elif not state_ok.all():
        reason = f"terminal state norm {terminal[~state_ok].max():.3g} >= {tol.eps_state:g}"
    elif not cost_ok.all():
        reason = "rollout cost exceeds tabulated value beyond tolerance"
    return Certificate(
        "admissible", passed, "pass" if passed else "fail",
        {"x0": x0[w].tolist(), "terminal_norm": float(terminal[w]),
         "rollout_cost": float(total[w]), "tabulated_value": float(v0[w])},
        {
            "evaluation_converged": bool(evaluated),
            "horizon": tol.rollout_horizon,
            "eps_state": tol.eps_state,
            "cost_slack": cost_slack,
            "starts": [
                {"x0": x0[k].tolist(), "terminal_norm": float(terminal[k]),
                 "rollout_cost": float(total[k]), "tabulated_value": float(v0[k]),
                 "excursions": int(excursions[k]), "ok": bool(ok[k])}
                for k in range(len(x0))
            ],
            "excursions": int(excursions.sum()),
        },
        reason,
    )


def bellman_residual(spec, V, opts=None):
    """``max_x |V(x) - min_u [U(x,u) + V(f(x,u))]|`` over nodes; returns (residual, worst node)."""
    _, q, _ = _greedy_batch(spec, spec.domain.points, V, opts or GreedyOptions())
    gap = np.abs(V.values - q)
    j = int(np.argmax(gap))
    return float(gap[j]), spec.domain.coords_of(j)


def check_uniqueness(spec, V, perturbation_scale, opts=None, tol=None, seed=0):
    """Perturb ``V``, take its greedy policy, rerun PI and compare the limit with ``V``.

    The noise is uniform in ``[0, perturbation_scale * max V]`` at every node
    except the origin, which stays at zero.  Failure to reconverge (or an
    inadmissible perturbed policy) is reported as inconclusive.
    """
    from .solvers import InadmissibleStartError, SolveOptions, run_pi

    opts = opts or SolveOptions()
    tol = tol or Tolerances()
    scale = _scale(V)
    threshold = tol.eps_bellman * scale
    details = {"scale": scale, "threshold": threshold, "perturbation_scale": perturbation_scale,
               "seed": seed}
    if perturbation_scale == 0:
        return Certificate("uniqueness", True, "pass", {"margin": 0.0}, details)
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, perturbation_scale * scale, size=V.values.shape)
    noise[spec.domain.origin_index] = 0.0
    perturbed = ScalarField(V.grid, V.values + noise)
    h = greedy_policy(spec, perturbed, opts.greedy)
    try:
        res = run_pi(spec, h, opts, tol, seed)
    except InadmissibleStartError as exc:
        return Certificate("uniqueness", False, "inconclusive", None, details,
                           f"greedy policy of the perturbed field is not admissible: {exc}")
    details["iterations"] = res.iterations
    if not res.converged:
        return Certificate("uniqueness", False, "inconclusive", None, details,
                           "policy iteration from the perturbed field did not reconverge")
    gap = np.abs(res.value.values - V.values)
    j = int(np.argmax(gap))
    passed = bool(gap[j] <= threshold)
    return Certificate(
        "uniqueness", passed, "pass" if passed else "fail",
        {"node": spec.domain.coords_of(j).tolist(), "margin": float(gap[j])},
        details,
        "" if passed else f"reconverged field differs by {gap[j]:.3g}",
    )


def check_lemma1(spec, h, g, tol=None, eval_opts=None, seed=0):
    """One-step improvement implies global improvement, checked on nodes.

    Premise: ``U(x,h(x)) + V_g(f(x,h(x))) <= V_g(x)`` at every node.  When it
    holds, the conclusion ``V_h <= V_g`` is checked; when it does not, the
    certificate is vacuous rather than failed.
    """
    from .backup import _q

    tol = tol or Tolerances()
    eval_opts = eval_opts or EvalOptions()
    ev_g = evaluate_policy(spec, g, eval_opts)
    for name, pol, val in (("g", g, ev_g.value), ("h", h, None)):
        cert = certify_admissible(spec, pol, tol, seed=seed, value=val, eval_opts=eval_opts)
        if not cert.passed:
            raise PreconditionError(f"policy {name} is not admissible: {cert.reason}")
    Vg = ev_g.value
    scale = _scale(Vg)
    threshold = tol.eps_mono * scale
    X = spec.domain.points
    lhs, _ = _q(spec, X, h.controls, Vg)
    premise_gap = lhs - Vg.values
    details = {"scale": scale, "threshold": threshold,
               "premise_max_gap": float(premise_gap.max())}
    if premise_gap.max() > threshold:
        j = int(np.argmax(premise_gap))
        return Certificate(
            "one_step_improvement", True, "vacuous",
            {"node": X[j].tolist(), "margin": float(premise_gap[j])}, details,
            "premise not satisfied",
        )
    Vh = evaluate_policy(spec, h, eval_opts).value
    diff = Vh.values - Vg.values
    j = int(np.argmax(diff))
    passed = bool(diff[j] <= threshold)
    details["conclusion_max_gap"] = float(diff[j])
    return Certificate(
        "one_step_improvement", passed, "pass" if passed else "fail",
        {"node": X[j].tolist(), "margin": float(diff[j])}, details,
        "" if passed else "premise holds but V_h exceeds V_g",
    )

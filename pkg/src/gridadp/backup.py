"""Dynamic-programming backups on grid fields.

All node-wise operations are vectorized over the grid; successor states are
clamped into the domain before interpolation and every clamp is counted as
an excursion.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import PolicyField, ScalarField
from .model import ModelError

__all__ = [
    "GreedyOptions",
    "EvalOptions",
    "PolicyEvaluation",
    "EnumerationBudgetError",
    "one_step_q",
    "greedy_control",
    "greedy_policy",
    "evaluate_policy",
    "vi_backup",
    "lookahead_backup",
    "brute_force_lookahead",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
TIE_BREAK = "min-norm-then-index"


@dataclass(frozen=True)
class GreedyOptions:
    """Argmin control: lattice enumeration plus optional golden-section refinement."""

    refine: bool = True
    refine_iters: int = 40
    tie_break: str = TIE_BREAK
    # upper bound on (nodes x lattice) evaluations held in memory at once
    chunk: int = 2_000_000

    def __post_init__(self):
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be >= 0")
        if self.tie_break != TIE_BREAK:
            raise ValueError(f"only the {TIE_BREAK!r} tie-break rule is supported")


@dataclass(frozen=True)
class EvalOptions:
    tol_eval: float = 1e-10
    max_sweeps: int = 20_000

    def __post_init__(self):
        if not self.tol_eval > 0:
            raise ValueError("tol_eval must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


class PolicyEvaluation(NamedTuple):
    value: ScalarField
    sweeps: int
    residual: float
    converged: bool
    excursions: int


class EnumerationBudgetError(RuntimeError):
    """Brute-force enumeration would exceed its sequence budget."""


def _successors(spec, x, u):
    nxt = spec.system(x, u)
    bad = ~np.all(np.isfinite(nxt), axis=-1)
    if np.any(bad):
        i = np.flatnonzero(np.ravel(bad))[0]
        xb = np.reshape(np.broadcast_to(x, bad.shape + (spec.n,)), (-1, spec.n))[i]
        ub = np.reshape(np.broadcast_to(u, bad.shape + (spec.m,)), (-1, spec.m))[i]
        raise ModelError(f"dynamics returned a non-finite state at x={xb.tolist()}, u={ub.tolist()}")
    return spec.domain.clamp(nxt)


def _q(spec, x, u, V):
    """Stage cost plus interpolated successor value for arrays ``(P, n)``/``(P, m)``."""
    nxt, moved = _successors(spec, x, u)
    index, weight = spec.domain.locate(nxt)
    q = spec.cost(x, u) + np.sum(V.values[index] * weight, axis=1)
    return q, moved


def one_step_q(spec, x, u, V, return_excursion=False):
    """``U(x, u) + V(clamp(f(x, u)))`` at a single state/control pair."""
    x = np.asarray(x, float).reshape(1, spec.n)
    u = np.asarray(u, float).reshape(1, spec.m)
    if not spec.controls.contains(u):
        raise ValueError(f"control {u[0].tolist()} outside the control set")
    q, moved = _q(spec, x, u, V)
    if return_excursion:
        return float(q[0]), bool(moved[0])
    return float(q[0])


def _lattice_argmin(spec, X, V, opts):
    lattice = spec.controls.lattice
    norm2 = np.sum(lattice**2, axis=1)
    L = len(lattice)
    block = max(1, opts.chunk // L)
    best_j = np.empty(len(X), dtype=np.int64)
    best_q = np.empty(len(X))
    for a in range(0, len(X), block):
        xs = X[a:a + block]
        xx = np.repeat(xs, L, axis=0)
        uu = np.tile(lattice, (len(xs), 1))
        q, _ = _q(spec, xx, uu, V)
        q = q.reshape(len(xs), L)
        qmin = q.min(axis=1)
        # ties: smallest norm, then lowest lattice index (argmin takes the first)
        key = np.where(q == qmin[:, None], norm2[None, :], np.inf)
        best_j[a:a + block] = np.argmin(key, axis=1)
        best_q[a:a + block] = qmin
    return lattice[best_j].copy(), best_q


def _refine(spec, X, V, u, q, iters):
    """Coordinate-wise golden-section search within one lattice cell of ``u``."""
    lower = np.asarray(spec.controls.lower)
    upper = np.asarray(spec.controls.upper)
    h = spec.controls.spacing
    u = u.copy()
    q = q.copy()
    for d in range(spec.m):
        a = np.maximum(u[:, d] - h[d], lower[d])
        b = np.minimum(u[:, d] + h[d], upper[d])
        cand_u, cand_q = u[:, d].copy(), q.copy()

        def evaluate(t):
            trial = u.copy()
            trial[:, d] = t
            val, _ = _q(spec, X, trial, V)
            better = val < cand_q
            cand_q[better] = val[better]
            cand_u[better] = t[better]
            return val

        c = b - _GOLDEN * (b - a)
        e = a + _GOLDEN * (b - a)
        fc, fe = evaluate(c), evaluate(e)
        for _ in range(iters):
            left = fc < fe
            # left: keep [a, e]; right: keep [c, b]
            b = np.where(left, e, b)
            a = np.where(left, a, c)
            new = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
            fnew = evaluate(new)
            c, e = np.where(left, new, e), np.where(left, c, new)
            fc, fe = np.where(left, fnew, fe), np.where(left, fc, fnew)
        take = cand_q < q
        u[take, d] = cand_u[take]
        q[take] = cand_q[take]
    return u, q


def _greedy_batch(spec, X, V, opts):
    """Greedy control at each row of ``X``; returns (u, q, excursion mask)."""
    X = np.asarray(X, float).reshape(-1, spec.n)
    u, q = _lattice_argmin(spec, X, V, opts)
    if opts.refine and opts.refine_iters > 0:
        u, q = _refine(spec, X, V, u, q, opts.refine_iters)
    _, moved = _successors(spec, X, u)
    return u, q, moved


def greedy_control(spec, x, V, opts=None):
    """Minimize ``one_step_q`` over the control lattice (plus refinement).

    Returns ``(u_star, q_star)``.
    """
    opts = opts or GreedyOptions()
    u, q, _ = _greedy_batch(spec, np.asarray(x, float).reshape(1, spec.n), V, opts)
    return u[0], float(q[0])


def _policy(spec, u):
    return PolicyField(spec.domain, u, spec.controls.lower, spec.controls.upper)


def _vi_backup(spec, W, opts):
    u, q, moved = _greedy_batch(spec, spec.domain.points, W, opts)
    return ScalarField(spec.domain, q), _policy(spec, u), int(moved.sum())


def greedy_policy(spec, V, opts=None):
    """Node-wise greedy policy with respect to ``V``."""
    return _vi_backup(spec, V, opts or GreedyOptions())[1]


def vi_backup(spec, W, opts=None):
    """One value-iteration sweep. Returns ``(W_next, greedy_policy)``."""
    W_next, g, _ = _vi_backup(spec, W, opts or GreedyOptions())
    return W_next, g


def evaluate_policy(spec, h, opts=None):
    """Cost-to-go of the node policy ``h`` by successive substitution from zero.

    Each sweep computes ``V <- U(x, h(x)) + V(f(x, h(x)))`` on all nodes from
    the previous sweep's table.  The iterates are truncated-horizon costs,
    hence nondecreasing.  Stops when the sup-norm change drops below
    ``tol_eval``; hitting ``max_sweeps`` first returns ``converged=False``,
    which is how an unstable policy shows up.
    """
    opts = opts or EvalOptions()
    X = spec.domain.points
    u = h.controls
    stage = spec.cost(X, u)
    nxt, moved = _successors(spec, X, u)
    index, weight = spec.domain.locate(nxt)
    V = np.zeros(len(X))
    residual = np.inf
    converged = False
    sweeps = 0
    while sweeps < opts.max_sweeps:
        V_new = stage + np.sum(V[index] * weight, axis=1)
        sweeps += 1
        residual = float(np.max(np.abs(V_new - V)))
        V = V_new
        if residual < opts.tol_eval:
            converged = True
            break
        if not np.all(V < 1e300):
            break
    V = np.minimum(V, np.finfo(float).max)
    return PolicyEvaluation(ScalarField(spec.domain, V), sweeps, residual, converged, int(moved.sum()))


def _lookahead(spec, V, steps, opts):
    """Returns (A, h, T V, excursions) with T the VI backup."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    current = V
    first = None
    for _ in range(steps - 1):
        current, _, _ = _vi_backup(spec, current, opts)
        if first is None:
            first = current
    A, h, moved = _vi_backup(spec, current, opts)
    return A, h, (first if first is not None else A), moved


def lookahead_backup(spec, V, steps, opts=None):
    """n-step look-ahead update.

    ``h`` is greedy with respect to ``T^(steps-1) V`` and ``A = T^steps V``
    where ``T`` is :func:`vi_backup`.  With ``steps == 1`` this is exactly
    :func:`vi_backup`.
    """
    A, h, _, _ = _lookahead(spec, V, steps, opts or GreedyOptions())
    return A, h


def brute_force_lookahead(spec, V, x, steps, opts=None, budget=10**7):
    """Minimum over all lattice control sequences of length ``steps``.

    Sums stage costs along the (clamped) trajectory and adds ``V`` at the
    terminal state.  No refinement; ``opts`` is accepted for signature
    symmetry only.
    """
    lattice = spec.controls.lattice
    L = len(lattice)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if L**steps > budget:
        raise EnumerationBudgetError(
            f"{L}^{steps} = {L**steps} sequences exceeds the budget of {budget}"
        )
    states = np.asarray(x, float).reshape(1, spec.n)
    acc = np.zeros(1)
    for _ in range(steps - 1):
        xx = np.repeat(states, L, axis=0)
        uu = np.tile(lattice, (len(states), 1))
        acc = np.repeat(acc, L) + spec.cost(xx, uu)
        states, _ = _successors(spec, xx, uu)
    # last stage: loop over controls to keep memory at L^(steps-1)
    best = np.inf
    for j in range(L):
        uu = np.broadcast_to(lattice[j], (len(states), spec.m))
        q, _ = _q(spec, states, uu, V)
        best = min(best, float(np.min(acc + q)))
    return best

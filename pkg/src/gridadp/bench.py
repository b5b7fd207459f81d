"""Built-in benchmark problems and their independent oracles."""

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .backup import GreedyOptions
from .grid import BoxGrid, PolicyField
from .model import ConfigError, ControlSet, ControlSystem, ProblemSpec, StageCost

__all__ = [
    "LqrSpec",
    "Benchmark",
    "BENCHMARKS",
    "dare_oracle",
    "lqr_pi_recursion_oracle",
    "lqr_vi_recursion_oracle",
    "make_benchmark",
    "deadbeat_exact_values",
    "load_manifest",
    "linear_policy",
]

BENCHMARKS = ("lqr1d", "lqr2d", "deadbeat-toy", "pendulum")


@dataclass(frozen=True, eq=False)
class LqrSpec:
    """Linear dynamics ``Ax + Bu`` with cost ``x'Qx + u'Ru`` on box domains."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    domain_lower: tuple = (-1.0,)
    domain_upper: tuple = (1.0,)
    nodes: tuple = (201,)
    control_lower: tuple = (-2.0,)
    control_upper: tuple = (2.0,)
    control_samples: tuple = (401,)

    def __post_init__(self):
        for name in ("A", "B", "Q", "R"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        n, m = self.B.shape
        if self.A.shape != (n, n) or self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ConfigError("inconsistent LQR matrix shapes")
        if np.any(np.linalg.eigvalsh((self.R + self.R.T) / 2) <= 0):
            raise ConfigError("R must be positive definite")

    @property
    def is_scalar(self):
        return self.A.shape == (1, 1) and self.B.shape == (1, 1)

    def system(self, name="lqr"):
        A, B = self.A, self.B
        return ControlSystem(A.shape[0], B.shape[1], lambda x, u: x @ A.T + u @ B.T, name)

    def cost(self):
        return StageCost.quadratic(self.Q, self.R)

    def problem(self, name="lqr"):
        return ProblemSpec(
            self.system(name),
            self.cost(),
            BoxGrid(self.domain_lower, self.domain_upper, self.nodes),
            ControlSet(self.control_lower, self.control_upper, self.control_samples),
            name,
        )


def dare_oracle(lqr, tol=1e-13, max_iter=200_000):
    """Riccati fixed-point iteration ``P <- Q + A'(P - PB(R+B'PB)^-1 B'P)A``.

    Returns ``(P, K)`` with ``V*(x) = x'Px`` and ``h*(x) = -Kx``.
    """
    A, B, Q, R = lqr.A, lqr.B, lqr.Q, lqr.R
    P = Q.copy()
    for _ in range(max_iter):
        S = R + B.T @ P @ B
        P_next = Q + A.T @ (P - P @ B @ np.linalg.solve(S, B.T @ P)) @ A
        P_next = (P_next + P_next.T) / 2
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            break
        P = P_next
    else:
        raise RuntimeError("Riccati iteration did not converge")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def dare_residual(lqr, P):
    A, B, Q, R = lqr.A, lqr.B, lqr.Q, lqr.R
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return float(np.max(np.abs(P - rhs)))


def _scalars(lqr):
    if not lqr.is_scalar:
        raise ValueError("scalar LQR required")
    return float(lqr.A[0, 0]), float(lqr.B[0, 0]), float(lqr.Q[0, 0]), float(lqr.R[0, 0])


def lqr_pi_recursion_oracle(lqr, p0, iters):
    """Closed-form scalar policy iteration on value coefficients.

    Returns ``[(p_1, K_1), ..., (p_iters, K_iters)]`` where ``V^i = p_i x^2``
    and ``h^i(x) = -K_i x``.
    """
    a, b, q, r = _scalars(lqr)
    out = []
    p = float(p0)
    for _ in range(iters):
        K = a * b * p / (r + b * b * p)
        closed = a - b * K
        if abs(closed) >= 1:
            raise ValueError(f"gain {K} is not stabilizing (closed loop {closed})")
        p = (q + r * K * K) / (1 - closed * closed)
        out.append((p, K))
    return out


def lqr_vi_recursion_oracle(lqr, p0, iters):
    """Scalar Riccati recursion ``p <- q + a^2 p - (abp)^2 / (r + b^2 p)``; returns p_0..p_iters."""
    a, b, q, r = _scalars(lqr)
    out = [float(p0)]
    p = float(p0)
    for _ in range(iters):
        p = q + a * a * p - (a * b * p) ** 2 / (r + b * b * p)
        out.append(p)
    return out


@dataclass(eq=False)
class Benchmark:
    name: str
    spec: ProblemSpec
    h0: PolicyField
    h0_description: str
    greedy: GreedyOptions = field(default_factory=GreedyOptions)
    lqr: Optional[LqrSpec] = None
    params: dict = field(default_factory=dict)


def linear_policy(spec, K):
    """Node policy ``u = -K x`` clipped into the control box."""
    K = np.atleast_2d(np.asarray(K, float))
    u = spec.controls.clip(-(spec.domain.points @ K.T))
    return PolicyField(spec.domain, u, spec.controls.lower, spec.controls.upper)


def _lqr1d(nodes, samples):
    lqr = LqrSpec(
        A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]],
        nodes=tuple(nodes or (201,)), control_samples=tuple(samples or (401,)),
    )
    spec = lqr.problem("lqr1d")
    return Benchmark("lqr1d", spec, linear_policy(spec, [[1.0]]), "u = -x1 (deadbeat)",
                     lqr=lqr, params={"a": 1, "b": 1, "q": 1, "r": 1})


def _lqr2d(nodes, samples):
    dt = 0.1
    lqr = LqrSpec(
        A=[[1.0, dt], [0.0, 1.0]], B=[[0.0], [dt]], Q=np.eye(2), R=[[1.0]],
        domain_lower=(-1.0, -1.0), domain_upper=(1.0, 1.0), nodes=tuple(nodes or (41, 41)),
        control_lower=(-4.0,), control_upper=(4.0,), control_samples=tuple(samples or (81,)),
    )
    spec = lqr.problem("lqr2d")
    # closed loop A - BK has a double eigenvalue at 0.9
    K0 = [[1.0, 2.0]]
    return Benchmark("lqr2d", spec, linear_policy(spec, K0), "u = -(x1 + 2 x2)",
                     lqr=lqr, params={"dt": dt, "K0": K0})


def _deadbeat(nodes, samples, move_weight=4.0):
    k = (nodes or (33,))[0]
    s = (samples or (k,))[0]
    if s != k:
        raise ConfigError("deadbeat-toy needs the control lattice to equal the node set")
    c = float(move_weight)

    def cost(x, u):
        return x[..., 0] ** 2 + c * (u[..., 0] - x[..., 0]) ** 2

    spec = ProblemSpec(
        ControlSystem(1, 1, lambda x, u: u.copy() + 0.0 * x, "deadbeat-toy"),
        StageCost(cost, "x^2 + c (u - x)^2"),
        BoxGrid((-1.0,), (1.0,), (k,)),
        ControlSet((-1.0,), (1.0,), (s,)),
        "deadbeat-toy",
    )
    h0 = PolicyField(spec.domain, np.zeros((k, 1)), spec.controls.lower, spec.controls.upper)
    # refinement would leave the node set, so the toy enumerates only
    return Benchmark("deadbeat-toy", spec, h0, "u = 0 (jump to the origin)",
                     greedy=GreedyOptions(refine=False), params={"move_weight": c, "nodes": k})


PENDULUM = {"dt": 0.05, "g_over_l": 1.0, "damping": 1.0, "q_angle": 1.0, "q_rate": 0.1, "r": 0.1}


def pendulum_linearization(p=PENDULUM):
    dt = p["dt"]
    return LqrSpec(
        A=[[1.0, dt], [-dt * p["g_over_l"], 1.0 - dt * p["damping"]]],
        B=[[0.0], [dt]],
        Q=np.diag([p["q_angle"], p["q_rate"]]),
        R=[[p["r"]]],
    )


def _pendulum(nodes, samples):
    p = PENDULUM
    dt, gl, damp = p["dt"], p["g_over_l"], p["damping"]

    def step(x, u):
        th, om = x[..., 0], x[..., 1]
        return np.stack([th + dt * om, om + dt * (-gl * np.sin(th) - damp * om + u[..., 0])], axis=-1)

    def cost(x, u):
        return p["q_angle"] * x[..., 0] ** 2 + p["q_rate"] * x[..., 1] ** 2 + p["r"] * u[..., 0] ** 2

    spec = ProblemSpec(
        ControlSystem(2, 1, step, "pendulum"),
        StageCost(cost, "x1^2 + 0.1 x2^2 + 0.1 u^2"),
        BoxGrid((-1.5, -2.0), (1.5, 2.0), tuple(nodes or (31, 41))),
        ControlSet((-6.0,), (6.0,), tuple(samples or (61,))),
        "pendulum",
    )
    _, K = dare_oracle(pendulum_linearization(p))
    return Benchmark("pendulum", spec, linear_policy(spec, K),
                     "u = -K x with K the LQR gain of the linearization",
                     params=dict(p, K_lin=K.tolist()))


_FACTORIES = {"lqr1d": _lqr1d, "lqr2d": _lqr2d, "deadbeat-toy": _deadbeat, "pendulum": _pendulum}


def make_benchmark(name, nodes=None, control_samples=None):
    """Build a shipped benchmark by name, optionally overriding resolutions."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ConfigError(
            f"unknown benchmark {name!r}; available: {', '.join(BENCHMARKS)}"
        ) from None
    return factory(nodes, control_samples)


def deadbeat_exact_values(bench):
    """Optimal cost-to-go of the deadbeat toy by shortest paths on its node graph.

    Each node ``x_i`` may jump to any node ``x_j`` at cost ``U(x_i, x_j)``;
    ``V*`` is the cheapest path cost to the origin (Dijkstra).
    """
    from scipy.sparse.csgraph import dijkstra

    spec = bench.spec
    x = spec.domain.points[:, 0]
    xi, xj = np.meshgrid(x, x, indexing="ij")
    w = spec.cost(xi[..., None], xj[..., None])
    # zero entries are absent edges in csgraph; only the origin self-loop is zero
    origin = spec.domain.origin_index
    dist = dijkstra(w.T, directed=True, indices=origin)
    return dist


def load_manifest():
    text = resources.files("gridadp").joinpath("manifests/benchmarks.json").read_text(encoding="utf-8")
    return json.loads(text)

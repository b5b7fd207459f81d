"""Problem data: dynamics, stage cost, control box and the domain grid."""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .expr import compile_expression
from .grid import BoxGrid

__all__ = [
    "ConfigError",
    "ModelError",
    "ControlSystem",
    "StageCost",
    "ControlSet",
    "ProblemSpec",
    "ContractCheck",
    "ValidationReport",
    "validate_problem",
]


class ConfigError(ValueError):
    """Structurally malformed problem definition."""


class ModelError(RuntimeError):
    """Dynamics or cost produced an unusable value."""


@dataclass(frozen=True)
class ControlSystem:
    """Deterministic transition map ``x' = step(x, u)``.

    ``step`` must broadcast over leading axes: ``x`` is ``(..., n)``, ``u``
    is ``(..., m)`` and the result is ``(..., n)``.
    """

    state_dim: int
    control_dim: int
    step: Callable
    name: str = "system"

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ConfigError("state_dim and control_dim must be positive")

    def __call__(self, x, u):
        return np.asarray(self.step(np.asarray(x, float), np.asarray(u, float)), dtype=float)

    @classmethod
    def from_expressions(cls, exprs, state_dim, control_dim, name="inline"):
        if isinstance(exprs, str):
            exprs = [exprs]
        if len(exprs) != state_dim:
            raise ConfigError(f"need {state_dim} dynamics expressions, got {len(exprs)}")
        compiled = [compile_expression(e, state_dim, control_dim) for e in exprs]

        def step(x, u):
            return np.stack([c(x, u) for c in compiled], axis=-1)

        return cls(state_dim, control_dim, step, name)


@dataclass(frozen=True)
class StageCost:
    """Utility ``U(x, u) >= 0``; vectorized like :class:`ControlSystem`."""

    evaluate: Callable
    name: str = "cost"

    def __call__(self, x, u):
        return np.asarray(self.evaluate(np.asarray(x, float), np.asarray(u, float)), dtype=float)

    @classmethod
    def from_expression(cls, source, state_dim, control_dim, name="inline"):
        return cls(compile_expression(source, state_dim, control_dim), name)

    @classmethod
    def quadratic(cls, Q, R, name="quadratic"):
        Q = np.atleast_2d(np.asarray(Q, float))
        R = np.atleast_2d(np.asarray(R, float))

        def evaluate(x, u):
            return np.einsum("...i,ij,...j->...", x, Q, x) + np.einsum("...i,ij,...j->...", u, R, u)

        return cls(evaluate, name)


@dataclass(frozen=True)
class ControlSet:
    """Box of controls with a uniform enumeration lattice that contains u = 0."""

    lower: tuple
    upper: tuple
    samples_per_dim: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        samples = tuple(int(s) for s in np.atleast_1d(self.samples_per_dim))
        if len(samples) == 1 and len(lower) > 1:
            samples = samples * len(lower)
        if not (len(lower) == len(upper) == len(samples)):
            raise ConfigError("control lower/upper/samples must have equal length")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise ConfigError("control box requires lower <= upper")
        if any(lo > 0 or hi < 0 for lo, hi in zip(lower, upper)):
            raise ConfigError("control box must contain u = 0")
        if any(s < 2 for s in samples):
            raise ConfigError("need at least 2 control samples per dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "samples_per_dim", samples)
        for ax in self.axes:
            if not np.any(ax == 0.0):
                raise ConfigError(
                    "control lattice must contain u = 0 exactly; adjust samples_per_dim"
                )

    @property
    def dim(self):
        return len(self.lower)

    @cached_property
    def axes(self):
        out = []
        for lo, hi, s in zip(self.lower, self.upper, self.samples_per_dim):
            i = np.arange(s, dtype=float)
            out.append(lo + (hi - lo) * i / (s - 1))
        return tuple(out)

    @cached_property
    def lattice(self):
        """All lattice controls, shape ``(L, m)``, last dimension fastest."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        lat = np.stack([m.ravel() for m in mesh], axis=-1)
        lat.flags.writeable = False
        return lat

    @cached_property
    def spacing(self):
        return np.array([(hi - lo) / (s - 1) for lo, hi, s in
                         zip(self.lower, self.upper, self.samples_per_dim)])

    @property
    def size(self):
        return math.prod(self.samples_per_dim)

    def clip(self, u):
        return np.clip(u, self.lower, self.upper)

    def contains(self, u):
        u = np.asarray(u, float)
        return bool(np.all(u >= np.asarray(self.lower)) and np.all(u <= np.asarray(self.upper)))


@dataclass(frozen=True)
class ProblemSpec:
    """Everything a solver needs: f, U, the domain grid and the control set."""

    system: ControlSystem
    cost: StageCost
    domain: BoxGrid
    controls: ControlSet
    name: str = "problem"

    def __post_init__(self):
        if self.domain.dim != self.system.state_dim:
            raise ConfigError(
                f"domain has {self.domain.dim} dims but system state_dim={self.system.state_dim}"
            )
        if self.controls.dim != self.system.control_dim:
            raise ConfigError(
                f"control set has {self.controls.dim} dims but control_dim={self.system.control_dim}"
            )
        if not self.domain.has_origin:
            raise ConfigError("the origin must be an exact node of the domain grid")

    @property
    def n(self):
        return self.system.state_dim

    @property
    def m(self):
        return self.system.control_dim


# -- validation ---------------------------------------------------------------

@dataclass
class ContractCheck:
    name: str
    passed: bool
    witness: Optional[dict] = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self):
        return "\n".join(
            f"{'PASS' if c.passed else 'FAIL'}  {c.name}"
            + (f"  witness={c.witness}" if c.witness else "")
            for c in self.checks
        )


def _witness(x, u=None, **extra):
    w = {"x": np.asarray(x, float).tolist()}
    if u is not None:
        w["u"] = np.asarray(u, float).tolist()
    w.update(extra)
    return w


def validate_problem(spec, sample_count=1000, seed=0, zero_cost_horizon=50):
    """Spot-check the modelling assumptions by sampling.

    Checks the origin fixed point, finiteness of f on samples, the sign and
    definiteness contracts of U, and a sampled proxy for the requirement
    that no nonzero trajectory of ``f(., 0)`` can stay forever inside the
    zero-cost set ``{x : U(x, 0) = 0}``.  Sampling-based, not a proof.
    """
    if not isinstance(spec, ProblemSpec):
        raise ConfigError("validate_problem expects a ProblemSpec")
    if not spec.domain.has_origin:
        raise ConfigError("the origin must be an exact node of the domain grid")
    rng = np.random.default_rng(seed)
    n, m = spec.n, spec.m
    lo, hi = np.asarray(spec.domain.lower), np.asarray(spec.domain.upper)
    ulo, uhi = np.asarray(spec.controls.lower), np.asarray(spec.controls.upper)
    xs = rng.uniform(lo, hi, size=(sample_count, n))
    us = rng.uniform(ulo, uhi, size=(sample_count, m))
    x0, u0 = np.zeros(n), np.zeros(m)
    report = ValidationReport()

    f00 = spec.system(x0, u0)
    ok = bool(np.all(f00 == 0.0))
    report.checks.append(ContractCheck(
        "origin_fixed_point", ok, None if ok else _witness(x0, u0, f=f00.tolist()),
        "f(0, 0) == 0 exactly"))

    nxt = spec.system(xs, us)
    bad = ~np.all(np.isfinite(nxt), axis=-1)
    report.checks.append(ContractCheck(
        "dynamics_finite", not bad.any(),
        _witness(xs[bad][0], us[bad][0]) if bad.any() else None,
        "f finite on sampled (x, u)"))

    costs = spec.cost(xs, us)
    worst = int(np.argmin(costs))
    ok = bool(np.all(np.isfinite(costs)) and costs[worst] >= 0)
    report.checks.append(ContractCheck(
        "cost_nonnegative", ok, None if ok else _witness(xs[worst], us[worst], U=float(costs[worst])),
        "U(x, u) >= 0 on samples"))

    c00 = float(spec.cost(x0, u0))
    report.checks.append(ContractCheck(
        "cost_zero_at_origin", c00 == 0.0, None if c00 == 0.0 else _witness(x0, u0, U=c00),
        "U(0, 0) == 0"))

    # positive definiteness in u: include x = 0, where state cost cannot help
    xs_pd = np.concatenate([np.zeros((sample_count, n)), xs])
    us_pd = np.concatenate([us, us])
    us_pd = us_pd[np.any(us_pd != 0, axis=-1)]
    xs_pd = xs_pd[: len(us_pd)]
    cpd = spec.cost(xs_pd, us_pd)
    bad = cpd <= 0
    report.checks.append(ContractCheck(
        "cost_positive_in_control", not bad.any(),
        _witness(xs_pd[bad][0], us_pd[bad][0], U=float(cpd[bad][0])) if bad.any() else None,
        "U(x, u) > 0 for sampled u != 0"))

    # zero-cost invariance proxy: sample nodes as well, since zero-cost sets
    # are often lower dimensional (axes) and missed by uniform sampling
    nodes = spec.domain.points
    pick = rng.choice(len(nodes), size=min(sample_count, len(nodes)), replace=False)
    cand = np.concatenate([np.asarray(nodes[np.sort(pick)]), xs])
    cand = cand[np.linalg.norm(cand, axis=-1) > 0]
    zero_u = np.zeros((len(cand), m))
    in_set = spec.cost(cand, zero_u) <= 0
    traj = cand[in_set]
    start = traj.copy()
    for _ in range(zero_cost_horizon):
        if len(traj) == 0:
            break
        traj = spec.system(traj, np.zeros((len(traj), m)))
        stay = np.all(np.isfinite(traj), axis=-1)
        stay &= spec.cost(traj, np.zeros((len(traj), m))) <= 0
        traj, start = traj[stay], start[stay]
    # a trajectory that keeps at least half its initial norm while never
    # leaving the zero-cost set is treated as evidence of an invariant subset
    stuck = np.linalg.norm(traj, axis=-1) >= 0.5 * np.linalg.norm(start, axis=-1)
    report.checks.append(ContractCheck(
        "zero_cost_set_not_invariant", not stuck.any(),
        _witness(start[stuck][0], np.zeros(m), after=traj[stuck][0].tolist()) if stuck.any() else None,
        f"no sampled nonzero state stays in {{U(x,0)=0}} under u=0 for {zero_cost_horizon} steps "
        "while keeping half its norm"))
    return report

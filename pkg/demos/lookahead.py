"""
Multi-step look-ahead policy iteration
======================================

The policy update can minimize an n-step cost plus the current value
instead of a single step.  On the deadbeat toy every successor is a node, so
look-ahead values agree with brute-force enumeration of control sequences
exactly, and a long enough horizon reaches the optimum in one update.
"""

import numpy as np

from gridadp import (
    SolveOptions,
    brute_force_lookahead,
    deadbeat_exact_values,
    lookahead_backup,
    make_benchmark,
    run_mlpi,
    run_pi,
)

toy = make_benchmark("deadbeat-toy")
spec = toy.spec
exact = deadbeat_exact_values(toy)

pi = run_pi(spec, toy.h0, SolveOptions(greedy=toy.greedy))
V0 = pi.values[0]
for n in (1, 2, 3):
    A, _ = lookahead_backup(spec, V0, n, toy.greedy)
    brute = np.array([brute_force_lookahead(spec, V0, x, n) for x in spec.domain.points])
    print(f"n={n}: max |lookahead - brute force| = {np.max(np.abs(A.values - brute)):.1e}")

print(f"\nPI: {pi.iterations} iterations, error vs shortest paths {np.max(np.abs(pi.value.values - exact)):.1e}")
for n in (2, 3, 30):
    ml = run_mlpi(spec, toy.h0, SolveOptions(lookahead_steps=n, greedy=toy.greedy))
    deltas = ", ".join(f"{r.supnorm_delta:.3g}" for r in ml.trace)
    err = np.max(np.abs(ml.value.values - exact))
    print(f"MLPI n={n:2d}: {ml.iterations} iterations (changes {deltas}), error {err:.1e}")

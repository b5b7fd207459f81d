"""
Policy iteration on a scalar LQR problem
========================================

x' = x + u with cost x^2 + u^2 has the quadratic optimal value phi x^2,
where phi is the golden ratio.  Starting from the deadbeat policy u = -x,
grid policy iteration should follow the closed-form coefficient recursion.
"""

import numpy as np

from gridadp import dare_oracle, lqr_pi_recursion_oracle, make_benchmark, run_pi

bench = make_benchmark("lqr1d")
spec = bench.spec
print(f"domain nodes: {spec.domain.size}, control lattice: {spec.controls.size}")

P, K = dare_oracle(bench.lqr)
print(f"Riccati oracle: P = {P[0, 0]:.10f}, K = {K[0, 0]:.10f}")

result = run_pi(spec, bench.h0)
print(f"converged={result.converged} after {result.iterations} iterations")

# fit V^i(x) ~ p_i x^2 and compare with the scalar recursion
x = spec.domain.points[:, 0]
oracle = [2.0] + [p for p, _ in lqr_pi_recursion_oracle(bench.lqr, 2.0, result.iterations)]
print("\n  i   grid p_i      oracle p_i")
for i, V in enumerate(result.values):
    p = np.dot(V.values, x**2) / np.dot(x**2, x**2)
    print(f"{i:3d}   {p:.6f}    {oracle[i]:.6f}")

err = np.max(np.abs(result.value.values - P[0, 0] * x**2))
print(f"\nmax |V - P x^2| over nodes: {err:.2e}")

# the trace is what the CLI writes to trace.csv
print("\n  i  sup-norm change  Bellman residual  mono margin")
for r in result.trace:
    print(f"{r.i:3d}  {r.supnorm_delta:15.3e}  {r.bellman_residual:16.3e}  {r.mono_margin:11.2e}")

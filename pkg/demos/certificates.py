"""
Checking a solution with certificates
=====================================

Certificates are JSON-serializable pass/fail records with the worst witness
attached.  This script certifies a pendulum solution and shows what a
failed admissibility check looks like.
"""

import numpy as np

from gridadp import (
    PolicyField,
    bellman_residual,
    certify_admissible,
    check_monotone,
    check_uniqueness,
    make_benchmark,
    run_pi,
)

bench = make_benchmark("pendulum")
spec = bench.spec
result = run_pi(spec, bench.h0)
print(f"pendulum PI: converged={result.converged} in {result.iterations} iterations")

mono = check_monotone(result.values)
print(f"monotone: {mono.status}, worst increase {mono.worst_witness['margin']:.1e}")

for i, h in enumerate(result.policies):
    cert = certify_admissible(spec, h, value=result.values[i])
    worst = max(s["terminal_norm"] for s in cert.details["starts"])
    print(f"policy {i}: admissible={cert.passed}, worst terminal norm {worst:.1e}")

res, where = bellman_residual(spec, result.value)
print(f"Bellman residual {res:.1e} at {where}")

# independent noise at every node can trap the slow pendulum next to the
# origin; the greedy policy of such a field is not admissible and the check
# says so instead of guessing
uniq = check_uniqueness(spec, result.value, 0.1, seed=1)
print(f"uniqueness on the pendulum: {uniq.status} ({uniq.reason})")
lqr = make_benchmark("lqr1d")
lqr_value = run_pi(lqr.spec, lqr.h0).value
uniq = check_uniqueness(lqr.spec, lqr_value, 0.1, seed=1)
print(f"uniqueness on lqr1d: {uniq.status}, reconverged within {uniq.worst_witness['margin']:.1e}")

# without torque the damped pendulum still settles, but too slowly to get
# within eps_state of the origin inside the rollout horizon: the certificate
# is a finite-horizon proxy and fails it
idle = PolicyField(spec.domain, np.zeros((spec.domain.size, 1)), spec.controls.lower, spec.controls.upper)
cert = certify_admissible(spec, idle)
print(f"\nzero torque: {cert.status} ({cert.reason})")
print(cert.to_json()[:300] + " ...")

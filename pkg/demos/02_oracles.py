"""Exact branch-and-bound vs brute-force enumeration vs the stochastic heuristic.

Run:  python3 demos/02_oracles.py
"""

import time

import numpy as np

from mstoplab import GenConfig, TsiliParams, brute_force_enum, generate, solve_exact, tsili_solve, verify

print("cross-checking the two exact oracles on 50 small instances...")
for seed in range(50):
    inst = generate(GenConfig(n=6, k=2, t_max=1.5, prize_mode="uniform", seed=seed))
    a = solve_exact(inst)
    b = brute_force_enum(inst)
    # same optimum; the float sums may differ by an ulp (different visit order)
    assert abs(a.objective - b.objective) <= 1e-12, (seed, a.objective, b.objective)
print("  branch-and-bound and exhaustive enumeration agree on all 50.")

inst = generate(GenConfig.preset("mstop10", seed=7))
t0 = time.perf_counter()
sol = solve_exact(inst)
dt = 1000 * (time.perf_counter() - t0)
print(f"\nmstop10 instance: optimum {sol.objective:.0f} prizes "
      f"in {dt:.1f} ms over {sol.expansions} tree nodes")
for k, route in enumerate(sol.routes):
    print(f"  vehicle {k}: start -> {' -> '.join(map(str, route)) or '(straight home)'} -> depot")
report = verify(inst, sol)
print(f"  verifier: ok={report.ok}, recomputed objective {report.objective_recomputed:.0f}")

print("\nstochastic heuristic at three sampling widths (same instance):")
for width in (16, 128, 1280):
    heur = tsili_solve(inst, TsiliParams(samples=width), seed=1)
    gap = 100 * (sol.objective - heur.objective) / sol.objective
    print(f"  width {width:>5}: objective {heur.objective:.0f}  gap {gap:.1f}%")

print("\naggregate over 200 instances (width 1280):")
exact_sum = heur_sum = 0.0
for seed in range(200):
    inst = generate(GenConfig.preset("mstop10", seed=1000 + seed))
    exact_sum += solve_exact(inst).objective
    heur_sum += tsili_solve(inst, TsiliParams(samples=1280), seed=seed).objective
print(f"  exact mean {exact_sum / 200:.3f}, heuristic mean {heur_sum / 200:.3f}, "
      f"gap {100 * (exact_sum - heur_sum) / exact_sum:.2f}%")

"""Exact and heuristic MSTOP solvers plus an independent solution verifier.

``solve_exact`` is a depth-first branch-and-bound over sequential route
construction: vehicles build their routes one at a time, customer by customer,
so subtours cannot form and the search tree ranges over exactly the feasible
route sets. The pruning bound (collected prize plus the prizes of all
customers still individually reachable by the active vehicle in its current
state or by any not-yet-started vehicle in its initial state) is admissible
because a vehicle's reach-and-return slack for a fixed customer never
increases as the route grows; a completed search is therefore exact.

``brute_force_enum`` is an independent exhaustive oracle for tiny instances,
used to cross-check the branch-and-bound in tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .env import EPS
from .instances import Instance, euclidean

_TINY = 1e-12


@dataclass(frozen=True)
class Solution:
    """K ordered customer routes (implicitly start_k -> ... -> depot)."""

    routes: tuple                # tuple of tuples of customer ids (1..n)
    objective: float
    optimal: bool
    expansions: int = 0

    def visit_matrix(self, inst: Instance) -> np.ndarray:
        """Incidence view: entry [k, i] is True iff vehicle k visits node i (0 = depot)."""
        y = np.zeros((inst.k, inst.n + 1), dtype=bool)
        y[:, 0] = True
        for k, route in enumerate(self.routes):
            for c in route:
                y[k, c] = True
        return y

    def arcs(self, inst: Instance):
        """Arc-usage view: per vehicle, the traversed (from, to) node references."""
        out = []
        for k, route in enumerate(self.routes):
            refs = [inst.n + 1 + k] + list(route) + [0]
            out.append(tuple(zip(refs[:-1], refs[1:])))
        return out

    def route_lengths(self, inst: Instance):
        lengths = []
        for k, route in enumerate(self.routes):
            pts = [inst.point(inst.n + 1 + k)] + [inst.point(c) for c in route] + [inst.depot]
            lengths.append(float(sum(euclidean(a, b) for a, b in zip(pts[:-1], pts[1:]))))
        return lengths


@dataclass(frozen=True)
class TsiliParams:
    samples: int = 1280
    exponent: float = 4.0
    candidates: int = 4

    def validate(self):
        if self.samples < 1 or self.exponent <= 0 or self.candidates < 1:
            raise ValueError(f"invalid heuristic parameters: {self}")


def _geometry(inst: Instance):
    """Distance matrix over node references plus prize/return-leg arrays."""
    n, k = inst.n, inst.k
    pts = np.vstack([
        np.array(inst.depot, dtype=np.float64).reshape(1, 2),
        inst.customer_xy(),
        inst.vehicle_xy(),
    ])
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    return dist, inst.prizes(), n, k


def solve_exact(inst: Instance, budget: int = 10_000_000) -> Solution:
    """Optimal solution via branch-and-bound; ``optimal`` is False only when
    the node-expansion budget runs out (the best incumbent is still returned).
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    dist, prizes, n, k_veh = _geometry(inst)
    d = dist.tolist()
    p = prizes.tolist()
    fuels = inst.fuels().tolist()
    dret = [d[j][0] for j in range(n + 1)]
    start = [n + 1 + k for k in range(k_veh)]

    # Static reachability of each customer from each vehicle's initial state,
    # then suffix unions: customers some vehicle AFTER slot k can still serve.
    static_reach = []
    for k in range(k_veh):
        row = d[start[k]]
        static_reach.append({j for j in range(1, n + 1) if row[j] + dret[j] <= fuels[k] + EPS})
    reach_later = [set() for _ in range(k_veh + 1)]
    for k in range(k_veh - 1, -1, -1):
        reach_later[k] = reach_later[k + 1] | static_reach[k + 1] if k + 1 < k_veh else set()

    best = {"obj": -1.0, "routes": None}
    counter = {"expansions": 0, "complete": True}
    route_stack = [[] for _ in range(k_veh)]

    def consider_candidate(collected):
        routes = tuple(tuple(r) for r in route_stack)
        if collected > best["obj"] + _TINY:
            best["obj"] = collected
            best["routes"] = routes
        elif abs(collected - best["obj"]) <= _TINY and routes < best["routes"]:
            best["routes"] = routes

    def dfs(k, pos, fuel, visited, collected):
        counter["expansions"] += 1
        if counter["expansions"] > budget:
            counter["complete"] = False
            return
        drow = d[pos]
        later = reach_later[k]
        bound = collected
        feasible = []
        for j in range(1, n + 1):
            if visited & (1 << j):
                continue
            if drow[j] + dret[j] <= fuel + EPS:
                bound += p[j - 1]
                feasible.append(j)
            elif j in later:
                bound += p[j - 1]
        if bound <= best["obj"] + _TINY:
            return
        feasible.sort(key=lambda j: (-p[j - 1] / max(drow[j], _TINY), j))
        route = route_stack[k]
        for j in feasible:
            route.append(j)
            dfs(k, j, fuel - drow[j], visited | (1 << j), collected + p[j - 1])
            route.pop()
            if not counter["complete"]:
                return
        # close this route: the vehicle heads to the depot unconditionally
        if k + 1 == k_veh:
            consider_candidate(collected)
        else:
            dfs(k + 1, start[k + 1], fuels[k + 1], visited, collected)

    dfs(0, start[0], fuels[0], 0, 0.0)
    if best["routes"] is None:               # bound pruned even the empty plan
        best["obj"] = 0.0
        best["routes"] = tuple(() for _ in range(k_veh))
    return Solution(routes=best["routes"], objective=max(best["obj"], 0.0),
                    optimal=counter["complete"], expansions=counter["expansions"])


def brute_force_enum(inst: Instance, max_n: int = 8) -> Solution:
    """Exhaustive optimum over all assignments of customers to vehicles and
    all visit orders; test oracle only (``n`` capped at ``max_n``).
    """
    n, k_veh = inst.n, inst.k
    if n > max_n:
        raise ValueError(f"brute force enumeration capped at n={max_n}, got n={n}")
    dist, prizes, n, k_veh = _geometry(inst)
    d = dist.tolist()
    p = prizes.tolist()
    fuels = inst.fuels().tolist()
    dret = [d[j][0] for j in range(n + 1)]
    start = [n + 1 + k for k in range(k_veh)]

    # Held-Karp per vehicle: cheapest start -> subset -> depot walk length.
    n_subsets = 1 << n
    feasible = [[False] * n_subsets for _ in range(k_veh)]
    for k in range(k_veh):
        best_len = [math.inf] * n_subsets
        # dp[(subset, last)] = cheapest length covering subset, ending at last
        dp = {}
        for j in range(n):
            s = 1 << j
            dp[(s, j)] = d[start[k]][j + 1]
            best_len[s] = min(best_len[s], dp[(s, j)] + dret[j + 1])
        for subset in range(1, n_subsets):
            for j in range(n):
                if not subset & (1 << j) or (subset, j) not in dp:
                    continue
                base = dp[(subset, j)]
                for m in range(n):
                    if subset & (1 << m):
                        continue
                    s2 = subset | (1 << m)
                    cand = base + d[j + 1][m + 1]
                    if cand < dp.get((s2, m), math.inf):
                        dp[(s2, m)] = cand
                        best_len[s2] = min(best_len[s2], cand + dret[m + 1])
        f = fuels[k] + EPS
        feasible[k][0] = True                 # empty route is always feasible
        for subset in range(1, n_subsets):
            feasible[k][subset] = best_len[subset] <= f

    best_obj = -1.0
    best_assign = None
    for assign in itertools.product(range(k_veh + 1), repeat=n):
        subsets = [0] * k_veh
        obj = 0.0
        for j, who in enumerate(assign):
            if who < k_veh:
                subsets[who] |= 1 << j
                obj += p[j]
        if obj <= best_obj + _TINY:
            continue
        if all(feasible[k][subsets[k]] for k in range(k_veh)):
            best_obj = obj
            best_assign = subsets

    if best_assign is None:
        return Solution(routes=tuple(() for _ in range(k_veh)), objective=0.0, optimal=True)

    routes = []
    for k in range(k_veh):
        members = [j + 1 for j in range(n) if best_assign[k] & (1 << j)]
        best_route, best_len = (), math.inf
        for perm in itertools.permutations(members):
            length = d[start[k]][perm[0]] if perm else dret[0]
            for a, b in zip(perm[:-1], perm[1:]):
                length += d[a][b]
            if perm:
                length += dret[perm[-1]]
            if length < best_len:
                best_len = length
                best_route = perm
        routes.append(best_route)
    return Solution(routes=tuple(routes), objective=max(best_obj, 0.0), optimal=True)


@dataclass(frozen=True)
class Violation:
    constraint: str
    detail: str


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    violations: tuple
    objective_recomputed: float

    @property
    def first_violation(self):
        return self.violations[0] if self.violations else None


def verify(inst: Instance, sol: Solution) -> FeasibilityReport:
    """Check every solution invariant and recompute the objective independently.

    Violations are reported by constraint name; all checks run (nothing stops
    at the first failure).
    """
    violations = []
    if len(sol.routes) != inst.k:
        violations.append(Violation("route-count", f"expected {inst.k} routes, got {len(sol.routes)}"))
    seen = {}
    for k, route in enumerate(sol.routes):
        for c in route:
            if not (1 <= c <= inst.n):
                violations.append(Violation("node-range", f"route {k} visits unknown node {c}"))
            elif c in seen:
                violations.append(Violation("duplicate-visit", f"customer {c} in routes {seen[c]} and {k}"))
            else:
                seen[c] = k
    fuels = inst.fuels()
    for k, route in enumerate(sol.routes[:inst.k]):
        if not route:
            continue
        pts = [inst.point(inst.n + 1 + k)] + [inst.point(c) for c in route if 1 <= c <= inst.n] + [inst.depot]
        length = sum(euclidean(a, b) for a, b in zip(pts[:-1], pts[1:]))
        if length > fuels[k] + EPS:
            violations.append(Violation("fuel-budget", f"route {k} length {length:.12f} exceeds fuel {fuels[k]:.12f}"))
    prizes = inst.prizes()
    recomputed = float(sum(prizes[c - 1] for c in seen))
    if abs(recomputed - sol.objective) > 1e-9:
        violations.append(Violation("objective-mismatch",
                                    f"stated {sol.objective!r}, recomputed {recomputed!r}"))
    return FeasibilityReport(ok=not violations, violations=tuple(violations),
                             objective_recomputed=recomputed)


def tsili_solve(inst: Instance, params: TsiliParams = TsiliParams(), seed: int = 0) -> Solution:
    """Stochastic constructive heuristic: many parallel rollouts, keep the best.

    Each rollout builds routes vehicle by vehicle (instance order). At every
    step the vehicle looks at the feasible customers (visit plus return to
    depot within fuel), ranks them by desirability (prize / distance)^exponent,
    and samples among the top ``candidates`` proportionally to desirability.
    Deterministic for a given seed.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    n, k_veh = inst.n, inst.k
    prizes = inst.prizes()
    cxy = inst.customer_xy()
    depot = np.array(inst.depot)
    dret = np.hypot(cxy[:, 0] - depot[0], cxy[:, 1] - depot[1])
    s = params.samples
    c = min(params.candidates, n)

    visited = np.zeros((s, n), dtype=bool)
    collected = np.zeros(s)
    picks = [[] for _ in range(k_veh)]       # per vehicle: list of (s,) chosen columns, -1 = idle

    for k in range(k_veh):
        pos = np.tile(inst.vehicle_xy()[k], (s, 1))
        fuel = np.full(s, inst.fuels()[k])
        alive = np.ones(s, dtype=bool)
        while True:
            dists = np.hypot(cxy[None, :, 0] - pos[:, :1], cxy[None, :, 1] - pos[:, 1:2])
            feas = (~visited) & (dists + dret[None, :] <= fuel[:, None] + EPS) & alive[:, None]
            alive = feas.any(axis=1)
            if not alive.any():
                break
            desir = np.where(feas, (prizes[None, :] / np.maximum(dists, _TINY)) ** params.exponent, 0.0)
            order = np.argsort(-desir, axis=1, kind="stable")[:, :c]
            weights = np.take_along_axis(desir, order, axis=1)
            totals = weights.sum(axis=1, keepdims=True)
            probs = np.divide(weights, totals, out=np.zeros_like(weights), where=totals > 0)
            cum = np.cumsum(probs, axis=1)
            u = rng.random(s)
            pick_pos = (u[:, None] > cum).sum(axis=1)
            last_ok = np.maximum((weights > 0).sum(axis=1) - 1, 0)
            pick_pos = np.minimum(pick_pos, last_ok)
            chosen = np.take_along_axis(order, pick_pos[:, None], axis=1)[:, 0]
            chosen = np.where(alive, chosen, -1)
            rows = np.nonzero(alive)[0]
            cols = chosen[rows]
            visited[rows, cols] = True
            collected[rows] += prizes[cols]
            fuel[rows] -= dists[rows, cols]
            pos[rows] = cxy[cols]
            picks[k].append(chosen)

    best_row = int(np.argmax(collected))
    routes = []
    for k in range(k_veh):
        route = [int(step[best_row]) + 1 for step in picks[k] if step[best_row] >= 0]
        routes.append(tuple(route))
    return Solution(routes=tuple(routes), objective=float(collected[best_row]), optimal=False)

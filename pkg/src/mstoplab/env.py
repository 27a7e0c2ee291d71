"""Deterministic MSTOP decision process.

One vehicle routes at a time, in an explicitly supplied vehicle order; a
partial route ends when the vehicle selects the depot (action 0), which hands
control to the next vehicle. Visiting a customer zeroes its residual prize,
moves the vehicle, burns fuel equal to the Euclidean leg, and credits the
prize to the vehicle. An action is feasible only if the vehicle can still
return to the depot afterwards, so the depot itself is always feasible.

Action indices match node references: 0 is the depot, 1..n the customers.
All feasibility comparisons use an absolute epsilon of 1e-9 (float64
accumulation slack over at most n hops).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .instances import Instance, euclidean

EPS = 1e-9


class EnvError(Exception):
    pass


class InfeasibleActionError(EnvError):
    pass


@dataclass
class State:
    """Live MDP snapshot. Value-like: ``step`` returns a fresh state."""

    instance: Instance
    residual_prizes: np.ndarray      # (n,), zero iff visited
    positions: np.ndarray            # (K, 2) current vehicle locations
    fuels: np.ndarray                # (K,)
    collected: np.ndarray            # (K,) prize credited per vehicle
    done: np.ndarray                 # (K,) bool, vehicle parked at depot
    visited: np.ndarray              # (n,) bool
    order: tuple                     # permutation of vehicle ids 0..K-1
    active_slot: int                 # index into order; == K when terminal
    t: int = 0
    t_dec: int = 0

    @property
    def terminal(self) -> bool:
        return self.active_slot >= len(self.order)

    @property
    def active_vehicle(self) -> int:
        if self.terminal:
            raise EnvError("terminal state has no active vehicle")
        return self.order[self.active_slot]

    def copy(self) -> "State":
        return State(
            instance=self.instance,
            residual_prizes=self.residual_prizes.copy(),
            positions=self.positions.copy(),
            fuels=self.fuels.copy(),
            collected=self.collected.copy(),
            done=self.done.copy(),
            visited=self.visited.copy(),
            order=self.order,
            active_slot=self.active_slot,
            t=self.t,
            t_dec=self.t_dec,
        )


@dataclass
class StepRecord:
    t: int
    vehicle: int
    action: int
    fuel_after: float
    logprob: float = 0.0
    entropy: float = 0.0


@dataclass
class Trajectory:
    """Completed rollout: per-step log of actions and per-vehicle routes."""

    order: tuple
    steps: list = field(default_factory=list)
    routes: tuple = ()               # customer ids per vehicle (instance indexing)
    reward: float = 0.0

    @property
    def log_prob(self) -> float:
        return float(sum(s.logprob for s in self.steps))

    def dump_lines(self):
        """Debug text record per step: t, vehicle, action, fuel-after, logprob, entropy."""
        return [f"{s.t} {s.vehicle} {s.action} {s.fuel_after!r} {s.logprob!r} {s.entropy!r}"
                for s in self.steps]


def reset(inst: Instance, order) -> State:
    """Initial state for a given vehicle permutation (ids 0..K-1)."""
    order = tuple(int(v) for v in order)
    if sorted(order) != list(range(inst.k)):
        raise EnvError(f"order {order} is not a permutation of 0..{inst.k - 1}")
    return State(
        instance=inst,
        residual_prizes=inst.prizes().copy(),
        positions=inst.vehicle_xy().copy(),
        fuels=inst.fuels().copy(),
        collected=np.zeros(inst.k),
        done=np.zeros(inst.k, dtype=bool),
        visited=np.zeros(inst.n, dtype=bool),
        order=order,
        active_slot=0,
    )


def feasible_mask(state: State) -> np.ndarray:
    """Boolean feasibility over actions [depot, customer 1..n].

    A customer is feasible iff unvisited and the active vehicle can visit it
    and still reach the depot. The depot is always feasible.
    """
    if state.terminal:
        raise EnvError("feasible_mask called on terminal state")
    inst = state.instance
    k = state.active_vehicle
    pos = state.positions[k]
    fuel = state.fuels[k]
    mask = np.zeros(inst.n + 1, dtype=bool)
    mask[0] = True
    cxy = inst.customer_xy()
    to_cust = np.hypot(cxy[:, 0] - pos[0], cxy[:, 1] - pos[1])
    mask[1:] = (~state.visited) & (to_cust + inst.depot_legs() <= fuel + EPS)
    return mask


def step(state: State, action: int, _mask=None) -> State:
    """Apply one action; raises on infeasible actions (contract violation).

    ``_mask`` lets callers that already computed the feasibility mask skip
    recomputing it; semantics are identical.
    """
    if state.terminal:
        raise EnvError("step called on terminal state")
    action = int(action)
    mask = feasible_mask(state) if _mask is None else _mask
    if action < 0 or action >= mask.size or not mask[action]:
        raise InfeasibleActionError(
            f"action {action} infeasible for vehicle {state.active_vehicle} at t={state.t}")
    nxt = state.copy()
    k = state.active_vehicle
    if action == 0:
        nxt.fuels[k] -= euclidean(state.positions[k], state.instance.depot)
        nxt.positions[k] = state.instance.depot
        nxt.done[k] = True
        nxt.active_slot += 1
        nxt.t_dec = 0
    else:
        j = action - 1
        target = state.instance.customers[j]
        nxt.fuels[k] -= euclidean(state.positions[k], (target[0], target[1]))
        nxt.positions[k] = (target[0], target[1])
        nxt.collected[k] += state.residual_prizes[j]
        nxt.residual_prizes[j] = 0.0
        nxt.visited[j] = True
        nxt.t_dec += 1
    nxt.t += 1
    return nxt


def trajectory_reward(traj: Trajectory) -> float:
    """Total prize of a terminal trajectory (sum of per-vehicle collections)."""
    if not traj.steps or traj.steps[-1].action != 0:
        raise EnvError("trajectory is not terminal")
    return traj.reward


def recompute_reward(inst: Instance, routes) -> float:
    """Reward recomputed from route lists and original prizes (for checks)."""
    prizes = inst.prizes()
    seen = set()
    total = 0.0
    for route in routes:
        for c in route:
            if c in seen:
                raise EnvError(f"customer {c} appears in more than one route")
            seen.add(c)
            total += prizes[c - 1]
    return total


def replay(inst: Instance, order, actions) -> Trajectory:
    """Drive the environment with a fixed action sequence (no policy).

    Step log-probabilities and entropies are recorded as zero.
    """
    state = reset(inst, order)
    traj = Trajectory(order=tuple(order))
    routes = [[] for _ in range(inst.k)]
    for action in actions:
        vehicle = state.active_vehicle
        state = step(state, action)
        traj.steps.append(StepRecord(
            t=state.t - 1, vehicle=vehicle, action=int(action),
            fuel_after=float(state.fuels[vehicle])))
        if action != 0:
            routes[vehicle].append(int(action))
        if state.terminal:
            break
    if not state.terminal:
        raise EnvError("action sequence does not reach a terminal state")
    traj.routes = tuple(tuple(r) for r in routes)
    traj.reward = float(state.collected.sum())
    return traj

import math

import numpy as np
import pytest

from mstoplab import env
from mstoplab.env import (EPS, EnvError, InfeasibleActionError, Trajectory,
                          feasible_mask, recompute_reward, replay, reset, step,
                          trajectory_reward)
from mstoplab.instances import GenConfig, Instance, augment, distance, generate

from conftest import generous_instance, tiny_instance


def line_instance():
    """Depot (0,0); customers on the x axis; vehicle at (0.5, 0) with fuel 1."""
    return Instance(
        depot=(0.0, 0.0),
        customers=((0.25, 0.0, 0.4), (0.6, 0.0, 0.7), (0.9, 0.0, 1.0)),
        vehicles=((0.5, 0.0, 1.0), (0.1, 0.0, 0.3)),
        t_max=1.0,
        prize_mode="uniform",
    )


# --- reset -------------------------------------------------------------------

def test_reset_identity_order_activates_first_vehicle():
    st = reset(tiny_instance(seed=1), (0, 1))
    assert st.active_vehicle == 0 and st.t == 0 and st.t_dec == 0
    assert np.array_equal(st.residual_prizes, st.instance.prizes())


def test_reset_reversed_order_activates_second_vehicle():
    st = reset(tiny_instance(seed=1), (1, 0))
    assert st.active_vehicle == 1


def test_reset_is_deterministic():
    inst = tiny_instance(seed=2)
    a, b = reset(inst, (0, 1)), reset(inst, (0, 1))
    assert np.array_equal(a.fuels, b.fuels) and np.array_equal(a.positions, b.positions)
    assert a.order == b.order and a.active_slot == b.active_slot


def test_reset_rejects_non_permutation():
    inst = tiny_instance(seed=1)
    with pytest.raises(EnvError):
        reset(inst, (0, 0))
    with pytest.raises(EnvError):
        reset(inst, (0,))


# --- feasibility ---------------------------------------------------------------

def test_mask_boundary_only_depot():
    # fuel exactly the distance to the depot: no customer detour possible
    inst = Instance(depot=(0.0, 0.0), customers=((0.5, 0.5, 1.0),),
                    vehicles=((0.3, 0.4, 0.5),), t_max=1.0)
    mask = feasible_mask(reset(inst, (0,)))
    assert mask[0] and not mask[1:].any()


def test_mask_generous_fuel_all_customers_feasible():
    inst = generous_instance(n=5, k=2)
    st = reset(inst, (0, 1))
    mask = feasible_mask(st)
    # independent distance check per customer
    for j in range(1, inst.n + 1):
        detour = distance(inst, inst.n + 1, j) + distance(inst, j, 0)
        assert detour <= inst.fuels()[0]
        assert mask[j]
    assert mask[0]


def test_mask_visited_customer_infeasible():
    st = reset(generous_instance(n=3, k=2), (0, 1))
    st = step(st, 2)
    assert not feasible_mask(st)[2]
    assert feasible_mask(st)[1] and feasible_mask(st)[3]


def test_mask_on_terminal_state_raises():
    st = reset(generous_instance(n=2, k=1), (0,))
    st = step(st, 0)
    assert st.terminal
    with pytest.raises(EnvError):
        feasible_mask(st)


# --- transitions -----------------------------------------------------------------

def test_step_fuel_arithmetic():
    st = reset(line_instance(), (0, 1))
    nxt = step(st, 1)  # vehicle at (0.5,0) -> customer at (0.25,0): distance 0.25
    assert abs(nxt.fuels[0] - 0.75) <= 1e-12
    assert nxt.t == 1 and nxt.t_dec == 1


def test_step_prize_bookkeeping():
    st = reset(line_instance(), (0, 1))
    st.collected[0] = 1.1
    nxt = step(st, 1)  # prize 0.4
    assert abs(nxt.collected[0] - 1.5) <= 1e-12
    assert nxt.residual_prizes[0] == 0.0 and nxt.visited[0]


def test_step_depot_hands_over_and_terminates():
    st = reset(generous_instance(n=2, k=2), (0, 1))
    st = step(st, 0)
    assert st.done[0] and st.active_vehicle == 1 and st.t_dec == 0 and not st.terminal
    st = step(st, 0)
    assert st.terminal and st.t == 2


def test_step_infeasible_action_raises():
    inst = Instance(depot=(0.0, 0.0), customers=((0.9, 0.9, 1.0),),
                    vehicles=((0.1, 0.0, 0.2),), t_max=1.0)
    st = reset(inst, (0,))
    with pytest.raises(InfeasibleActionError):
        step(st, 1)


def test_step_is_pure():
    st = reset(line_instance(), (0, 1))
    fuel_before = st.fuels.copy()
    step(st, 1)
    assert np.array_equal(st.fuels, fuel_before) and st.t == 0


# --- rewards ---------------------------------------------------------------------

def test_reward_empty_routes_zero():
    inst = generous_instance(n=3, k=2)
    traj = replay(inst, (0, 1), [0, 0])
    assert trajectory_reward(traj) == 0.0


def test_reward_all_visited_constant_prizes():
    inst = generous_instance(n=4, k=2)
    traj = replay(inst, (0, 1), [1, 2, 0, 3, 4, 0])
    assert trajectory_reward(traj) == 4.0


def test_reward_matches_recomputation(rng):
    for seed in range(30):
        inst = generate(GenConfig(n=7, k=2, t_max=1.8, prize_mode="uniform", seed=seed))
        st = reset(inst, (0, 1))
        actions = []
        while not st.terminal:
            options = np.flatnonzero(feasible_mask(st))
            a = int(rng.choice(options))
            actions.append(a)
            st = step(st, a)
        traj = replay(inst, (0, 1), actions)
        assert abs(traj.reward - recompute_reward(inst, traj.routes)) <= 1e-12
        assert abs(traj.reward - st.collected.sum()) <= 1e-12


def test_reward_requires_terminal_trajectory():
    with pytest.raises(EnvError):
        trajectory_reward(Trajectory(order=(0,)))
    inst = generous_instance(n=2, k=2)
    with pytest.raises(EnvError):
        replay(inst, (0, 1), [0])  # second vehicle never closes


# --- invariants --------------------------------------------------------------------

def test_feasibility_preserved_over_random_walk(rng):
    """Depot reachability and non-negative fuel survive any feasible action."""
    steps_done = 0
    seed = 0
    while steps_done < 100_000:
        inst = generate(GenConfig(n=8, k=2, t_max=2.0, prize_mode="uniform", seed=seed))
        seed += 1
        st = reset(inst, (0, 1))
        while not st.terminal:
            options = np.flatnonzero(feasible_mask(st))
            st = step(st, int(rng.choice(options)))
            steps_done += 1
            assert np.all(st.fuels >= -EPS)
            if not st.terminal:
                k = st.active_vehicle
                back = math.hypot(st.positions[k][0] - inst.depot[0],
                                  st.positions[k][1] - inst.depot[1])
                assert st.fuels[k] >= back - EPS


def test_route_length_bounded_by_initial_fuel(rng):
    for seed in range(50):
        inst = generate(GenConfig(n=7, k=2, t_max=1.8, seed=seed))
        st = reset(inst, (0, 1))
        actions = []
        while not st.terminal:
            options = np.flatnonzero(feasible_mask(st))
            a = int(rng.choice(options))
            actions.append(a)
            st = step(st, a)
        traj = replay(inst, (0, 1), actions)
        for k, route in enumerate(traj.routes):
            pts = [tuple(inst.vehicle_xy()[k])] + [inst.point(c) for c in route] + [inst.depot]
            length = sum(math.dist(a, b) for a, b in zip(pts[:-1], pts[1:]))
            assert length <= inst.fuels()[k] + EPS


def test_augmentation_equivariant_replay(rng):
    for seed in range(20):
        inst = generate(GenConfig(n=6, k=2, t_max=1.5, prize_mode="uniform", seed=seed))
        st = reset(inst, (1, 0))
        actions = []
        while not st.terminal:
            options = np.flatnonzero(feasible_mask(st))
            a = int(rng.choice(options))
            actions.append(a)
            st = step(st, a)
        base = replay(inst, (1, 0), actions).reward
        for aug in augment(inst):
            assert replay(aug, (1, 0), actions).reward == base


def test_trajectory_dump_format():
    traj = replay(generous_instance(n=2, k=1), (0,), [1, 0])
    lines = traj.dump_lines()
    assert len(lines) == 2
    t, veh, action, fuel, logp, entropy = lines[0].split()
    assert (t, veh, action) == ("0", "0", "1")

import numpy as np
import pytest

from mstoplab import env
from mstoplab.inference import (InferConfig, InferenceError, dominance_check, infer)
from mstoplab.instances import GenConfig, apply_symmetry, generate
from mstoplab.model import DdtmConfig, DdtmParameters, rollout
from mstoplab.oracle import solve_exact, verify

CFG = DdtmConfig()


@pytest.fixture(scope="module")
def params():
    return DdtmParameters.init(CFG, seed=3)


def test_infer_config_validation():
    with pytest.raises(ValueError):
        InferConfig(strategy="beam").validate()
    with pytest.raises(ValueError):
        InferConfig(strategy="sampling", sample_width=0).validate()
    InferConfig(strategy="perm-aug").validate()


def test_greedy_census_single_trajectory(params):
    inst = generate(GenConfig(n=6, k=2, t_max=1.5, seed=0))
    sol, census = infer(inst, params, CFG, InferConfig(strategy="greedy"))
    assert census.count == 1
    assert verify(inst, sol).ok


def test_perm_census_two_vehicles(params):
    inst = generate(GenConfig(n=6, k=2, t_max=1.5, seed=1))
    sol, census = infer(inst, params, CFG, InferConfig(strategy="perm"))
    assert census.count == 2
    labels = [lab for lab, _ in census.entries]
    assert labels == ["order=(0, 1)", "order=(1, 0)"]


def test_perm_aug_census_three_vehicles(params):
    inst = generate(GenConfig(n=5, k=3, t_max=2.0, seed=2))
    sol, census = infer(inst, params, CFG, InferConfig(strategy="perm-aug"))
    assert census.count == 48  # 8 * 3!
    assert verify(inst, sol).ok


def test_single_vehicle_perm_equals_greedy(params):
    inst = generate(GenConfig(n=6, k=1, t_max=1.5, seed=3))
    g, _ = infer(inst, params, CFG, InferConfig(strategy="greedy"))
    p, census = infer(inst, params, CFG, InferConfig(strategy="perm"))
    assert census.count == 1
    assert g.objective == p.objective and g.routes == p.routes


def test_sampling_census_and_determinism(params):
    inst = generate(GenConfig(n=6, k=2, t_max=1.5, seed=4))
    cfg = InferConfig(strategy="sampling", sample_width=32, seed=9)
    a, census_a = infer(inst, params, CFG, cfg)
    b, census_b = infer(inst, params, CFG, cfg)
    assert census_a.count == 33  # width + unioned greedy trajectory
    assert a.objective == b.objective and a.routes == b.routes
    assert np.array_equal(census_a.rewards, census_b.rewards)
    bare, census_bare = infer(inst, params, CFG,
                              InferConfig(strategy="sampling", sample_width=32, seed=9,
                                          include_greedy=False))
    assert census_bare.count == 32


def test_sampling_with_greedy_union_dominates_greedy(params):
    for seed in range(10):
        inst = generate(GenConfig(n=6, k=2, t_max=1.5, seed=100 + seed))
        g, _ = infer(inst, params, CFG, InferConfig(strategy="greedy"))
        s, _ = infer(inst, params, CFG, InferConfig(strategy="sampling", sample_width=16, seed=seed))
        assert s.objective >= g.objective


def test_dominance_chain_random_params(params):
    for seed in range(20):
        inst = generate(GenConfig(n=6, k=2, t_max=1.5, prize_mode="uniform", seed=200 + seed))
        g, p, a = dominance_check(inst, params, CFG)
        assert a >= p >= g


def test_rewards_bounded_by_exact_oracle(params):
    for seed in range(15):
        inst = generate(GenConfig(n=7, k=2, t_max=1.6, seed=300 + seed))
        best = solve_exact(inst).objective
        for strategy in ("greedy", "perm", "perm-aug"):
            sol, _ = infer(inst, params, CFG, InferConfig(strategy=strategy))
            assert sol.objective <= best + 1e-9


def test_augmented_replay_reward_identical(params):
    inst = generate(GenConfig(n=6, k=2, t_max=1.5, seed=5))
    for s in range(8):
        aug = apply_symmetry(inst, s)
        traj = rollout(aug, (1, 0), params, CFG, mode="greedy")
        actions = [st.action for st in traj.steps]
        replayed = env.replay(inst, (1, 0), actions)
        assert replayed.reward == traj.reward


def test_all_strategies_verify(params):
    inst = generate(GenConfig(n=6, k=2, t_max=1.5, prize_mode="uniform", seed=6))
    for strategy in ("greedy", "sampling", "perm", "perm-aug"):
        sol, _ = infer(inst, params, CFG,
                       InferConfig(strategy=strategy, sample_width=8, seed=0))
        assert verify(inst, sol).ok

import dataclasses
import math

import numpy as np
import pytest

from mstoplab import env
from mstoplab import model as mdl
from mstoplab.autodiff import Tape
from mstoplab.instances import GenConfig, Instance, generate
from mstoplab.model import (DdtmConfig, DdtmParameters, decode_step, encode,
                            parameter_schema, positional_encoding, rollout)
from mstoplab.oracle import solve_exact

from conftest import generous_instance, tiny_instance

CFG = DdtmConfig()


@pytest.fixture(scope="module")
def params():
    return DdtmParameters.init(CFG, seed=7)


# --- configuration -----------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        DdtmConfig(d=30, heads=4).validate()
    with pytest.raises(ValueError):
        DdtmConfig(encoder_layers=0).validate()
    CFG.validate()


def test_paper_scale_preset():
    big = DdtmConfig.paper_scale()
    assert (big.d, big.heads, big.ff_dim) == (128, 8, 512)
    assert (big.encoder_layers, big.decoder_layers, big.logit_clamp) == (4, 2, 10.0)


def test_parameter_schema_round_trip(params):
    shapes, stats = parameter_schema(CFG)
    assert set(shapes) == set(params.keys())
    assert all(params[name].shape == shape for name, shape in shapes.items())
    rebuilt = DdtmParameters.from_arrays(CFG, dict(params.arrays))
    assert set(rebuilt.trainable()) == set(params.trainable())
    # context projection takes the fuel-extended embedding
    assert shapes["ctx_proj_w"] == (CFG.d + 1, CFG.d)


def test_from_arrays_shape_mismatch_reports_both_shapes(params):
    bad = dict(params.arrays)
    bad["final_wq"] = np.zeros((CFG.d, CFG.d + 1))
    with pytest.raises(ValueError) as err:
        DdtmParameters.from_arrays(CFG, bad)
    assert str((CFG.d, CFG.d + 1)) in str(err.value) and str((CFG.d, CFG.d)) in str(err.value)


def test_init_deterministic():
    a = DdtmParameters.init(CFG, seed=3)
    b = DdtmParameters.init(CFG, seed=3)
    assert all(np.array_equal(a[k], b[k]) for k in a.keys())
    bound = 1.0 / math.sqrt(CFG.d)
    assert all(np.abs(a[k]).max() <= bound for k in a.trainable())


# --- positional encoding --------------------------------------------------------

def test_positional_encoding_step_zero_alternates():
    pe = positional_encoding(0, 8)
    assert np.array_equal(pe, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0])


def test_positional_encoding_flat_index_formula():
    d = 6
    pe = positional_encoding(3, d)
    for i in range(d):
        angle = 3 / 10000 ** (2 * i / d)
        expected = math.sin(angle) if i % 2 == 0 else math.cos(angle)
        assert abs(pe[i] - expected) <= 1e-15


# --- encoder ----------------------------------------------------------------------

def test_encode_shape_contract(params):
    for n, k in ((4, 1), (6, 2), (5, 3)):
        inst = generate(GenConfig(n=n, k=k, t_max=2.0, seed=n * 10 + k))
        emb = encode(env.reset(inst, tuple(range(k))), params, CFG)
        assert emb.rows.shape == (1, n + k + 1, CFG.d)
        assert emb.graph.shape == (1, 1, CFG.d)


def test_graph_embedding_fresh_state_divisor(params):
    inst = tiny_instance(seed=3)
    emb = encode(env.reset(inst, (0, 1)), params, CFG)
    assert not emb.masked_rows.any()
    manual = emb.rows.values.mean(axis=1)  # all N+K+1 rows
    assert np.allclose(emb.graph.values[:, 0, :], manual, atol=1e-12)


def test_graph_embedding_masks_visited_rows(params):
    inst = generous_instance(n=5, k=2)
    st = env.reset(inst, (0, 1))
    for action in (1, 3, 4, 0):
        st = env.step(st, action)
    emb = encode(st, params, CFG)
    masked = emb.masked_rows[0]
    assert masked[[1, 3, 4]].all() and masked[inst.n + 1]
    keep = ~masked
    manual = emb.rows.values[0][keep].mean(axis=0)  # (N-3)+(K-1)+1 rows
    assert np.allclose(emb.graph.values[0, 0], manual, atol=1e-12)
    assert keep.sum() == (inst.n - 3) + (inst.k - 1) + 1


def test_visited_coordinates_do_not_leak(params):
    """Changing a visited customer's coordinates must not change anything."""
    inst = generous_instance(n=4, k=2)
    st = env.reset(inst, (0, 1))
    st = env.step(st, 2)
    customers = list(inst.customers)
    customers[1] = (0.99, 0.01, customers[1][2])  # customer 2, already visited
    moved = dataclasses.replace(inst, customers=tuple(customers))
    st_moved = dataclasses.replace(st, instance=moved)

    emb_a = encode(st, params, CFG)
    emb_b = encode(st_moved, params, CFG)
    assert np.allclose(emb_a.graph.values, emb_b.graph.values, atol=1e-12)
    dec_a = mdl.start_route(emb_a, st, params, CFG)
    dec_b = mdl.start_route(emb_b, st_moved, params, CFG)
    assert np.allclose(decode_step(dec_a, st), decode_step(dec_b, st_moved), atol=1e-12)


def test_encode_rejects_terminal_state(params):
    st = env.reset(generous_instance(n=2, k=1), (0,))
    st = env.step(st, 0)
    with pytest.raises(env.EnvError):
        encode(st, params, CFG)


# --- decoder -----------------------------------------------------------------------

def test_decode_distribution_contract(params):
    inst = generous_instance(n=5, k=2)
    st = env.reset(inst, (0, 1))
    emb = encode(st, params, CFG)
    dec = mdl.start_route(emb, st, params, CFG)
    probs, logits = decode_step(dec, st, return_logits=True)
    assert probs.shape == (inst.n + 1,)
    assert abs(probs.sum() - 1.0) <= 1e-6
    assert np.all(probs >= 0)
    feas = env.feasible_mask(st)
    assert np.all(probs[~feas] == 0.0)
    ent = -(probs[probs > 0] * np.log(probs[probs > 0])).sum()
    assert 0.0 <= ent <= math.log(int(feas.sum())) + 1e-9
    assert np.all(np.abs(logits) <= CFG.logit_clamp + 1e-12)


def test_decode_point_mass_when_everything_masked(params):
    inst = Instance(depot=(0.0, 0.0), customers=((0.9, 0.9, 1.0), (0.8, 0.8, 1.0)),
                    vehicles=((0.3, 0.4, 0.5),), t_max=1.0)
    st = env.reset(inst, (0,))
    emb = encode(st, params, CFG)
    dec = mdl.start_route(emb, st, params, CFG)
    probs = decode_step(dec, st)
    assert probs[0] == 1.0 and np.all(probs[1:] == 0.0)
    ent = -(probs[probs > 0] * np.log(probs[probs > 0])).sum()
    assert ent == 0.0


# --- rollouts -------------------------------------------------------------------------

def test_greedy_rollout_deterministic(params):
    inst = tiny_instance(seed=11)
    a = rollout(inst, (0, 1), params, CFG, mode="greedy")
    b = rollout(inst, (0, 1), params, CFG, mode="greedy")
    assert a.routes == b.routes and a.reward == b.reward
    assert [s.action for s in a.steps] == [s.action for s in b.steps]


def test_sample_rollout_seed_contract(params):
    inst = generous_instance(n=6, k=2)
    a = rollout(inst, (0, 1), params, CFG, mode="sample", seed=41)
    b = rollout(inst, (0, 1), params, CFG, mode="sample", seed=41)
    assert a.routes == b.routes
    different = any(
        rollout(inst, (0, 1), params, CFG, mode="sample", seed=s).routes != a.routes
        for s in range(42, 52))
    assert different


def test_rollout_reward_bounded_by_exact(params):
    for seed in range(25):
        inst = generate(GenConfig(n=7, k=2, t_max=1.6, prize_mode="uniform", seed=200 + seed))
        best = solve_exact(inst).objective
        for mode, s in (("greedy", None), ("sample", seed)):
            traj = rollout(inst, (0, 1), params, CFG, mode=mode, seed=s)
            assert traj.reward <= best + 1e-9


def test_rollout_routes_end_at_depot_and_respect_budget(params):
    inst = tiny_instance(seed=21)
    traj = rollout(inst, (1, 0), params, CFG, mode="sample", seed=3)
    assert traj.steps[-1].action == 0
    depot_steps = [s for s in traj.steps if s.action == 0]
    assert len(depot_steps) == inst.k
    for k, route in enumerate(traj.routes):
        assert all(1 <= c <= inst.n for c in route)


def test_trajectory_log_prob_matches_forced_replay(params):
    inst = generous_instance(n=5, k=2)
    traj = rollout(inst, (0, 1), params, CFG, mode="sample", seed=13)
    actions = [s.action for s in traj.steps]
    batch = mdl.rollout_states([inst], [(0, 1)], params, CFG,
                               mode="replay", forced_actions=[actions])
    assert batch.trajectories[0].routes == traj.routes
    assert abs(batch.trajectories[0].log_prob - traj.log_prob) <= 1e-9


def test_batched_rollout_matches_single(params):
    insts = [tiny_instance(seed=s) for s in (31, 32, 33)]
    orders = [(0, 1), (1, 0), (0, 1)]
    batch = mdl.rollout_states(insts, orders, params, CFG, mode="greedy")
    for inst, order, traj in zip(insts, orders, batch.trajectories):
        single = rollout(inst, order, params, CFG, mode="greedy")
        assert single.routes == traj.routes
        assert abs(single.reward - traj.reward) <= 1e-12


def test_gradient_reaches_every_parameter(params):
    insts = [generous_instance(n=6, k=2), tiny_instance(seed=51)]
    tape = Tape()
    rng = np.random.default_rng(0)
    roll = mdl.rollout_states(insts, [(0, 1), (1, 0)], params, CFG,
                              mode="sample", rng=rng, tape=tape, bn_training=True)
    from mstoplab import autodiff as ad
    loss = ad.scale(ad.tsum(ad.add(roll.logp_sum, roll.entropy_sum)), -1.0)
    grads = roll.binding.gradients(tape.backward(loss))
    assert set(grads) == set(params.trainable())
    dead = [name for name, g in grads.items() if not np.any(g != 0.0)]
    assert not dead, f"parameters with zero gradient: {dead}"


def test_rollout_mode_validation(params):
    inst = tiny_instance(seed=1)
    with pytest.raises(ValueError):
        mdl.rollout_states([inst], [(0, 1)], params, CFG, mode="beam")
    with pytest.raises(ValueError):
        mdl.rollout_states([inst], [(0, 1)], params, CFG, mode="sample")  # no rng

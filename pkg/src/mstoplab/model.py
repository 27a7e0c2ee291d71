"""Transformer-style constructive policy for MSTOP (encoder + 3-step decoder).

The encoder embeds depot, customers (coordinates + residual prize), and
vehicles (coordinates + remaining fuel) into one row matrix, refines it with
masked multi-head self-attention layers (batch-norm + residual + feed-forward),
and averages the unmasked rows into a graph embedding. It is re-run at the
start of every partial route, because finishing a route changes the graph a
vehicle sees: visited nodes are masked out and the next vehicle starts
somewhere else.

The decoder builds one action distribution per step:

  step 1  self-attention of the current context row (current node embedding,
          current fuel, plus a positional encoding over the decode step) over
          the context rows of this partial route;
  step 2  encoder-decoder attention over depot + customers + the active
          vehicle's row, with infeasible customers masked;
  step 3  single-head clamped-tanh scoring of depot + customer rows against
          the context (plus a projection of the graph embedding), masked and
          softmaxed into action probabilities.

Masking is additive (large-negative logits) throughout, so masked actions get
probability exactly zero. All rollouts are deterministic given parameters,
instance, vehicle order, mode, and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import env
from .autodiff import NEG_INF, Tensor
from .instances import Instance


@dataclass(frozen=True)
class DdtmConfig:
    """Model widths; desk-scale defaults, paper-scale preset available."""

    d: int = 32
    heads: int = 4
    ff_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 1
    logit_clamp: float = 10.0

    @classmethod
    def paper_scale(cls) -> "DdtmConfig":
        return cls(d=128, heads=8, ff_dim=512, encoder_layers=4, decoder_layers=2, logit_clamp=10.0)

    def validate(self):
        if min(self.d, self.heads, self.ff_dim, self.encoder_layers, self.decoder_layers) < 1:
            raise ValueError(f"all model extents must be positive: {self}")
        if self.d % self.heads:
            raise ValueError(f"embedding width {self.d} not divisible by head count {self.heads}")


def parameter_schema(cfg: DdtmConfig):
    """Name -> shape for every array, plus the set of non-trainable stat names."""
    d, dh = cfg.d, cfg.ff_dim
    shapes = {
        "init_depot_w": (2, d),
        "init_node_w": (3, d),
        "init_veh_w": (3, d),
        "ctx_proj_w": (d + 1, d),
        "graph_proj_w": (d, d),
        "final_wq": (d, d),
        "final_wk": (d, d),
    }
    stats = set()
    for l in range(cfg.encoder_layers):
        for w in ("wq", "wk", "wv", "wout"):
            shapes[f"enc{l}_{w}"] = (d, d)
        shapes[f"enc{l}_ff_w0"] = (d, dh)
        shapes[f"enc{l}_ff_w1"] = (dh, d)
        for bn in ("bn1", "bn2"):
            shapes[f"enc{l}_{bn}_mean"] = (d,)
            shapes[f"enc{l}_{bn}_var"] = (d,)
            stats.add(f"enc{l}_{bn}_mean")
            stats.add(f"enc{l}_{bn}_var")
    for l in range(cfg.decoder_layers):
        for grp in ("sa", "att"):
            for w in ("wq", "wk", "wv", "wout"):
                shapes[f"dec{l}_{grp}_{w}"] = (d, d)
    return shapes, frozenset(stats)


class DdtmParameters:
    """All named arrays of the model; trainable weights plus batch-norm stats."""

    def __init__(self, arrays: dict, stats: frozenset):
        self.arrays = arrays
        self.stats = stats

    def __getitem__(self, name):
        return self.arrays[name]

    def keys(self):
        return self.arrays.keys()

    def trainable(self) -> dict:
        return {name: arr for name, arr in self.arrays.items() if name not in self.stats}

    def copy(self) -> "DdtmParameters":
        return DdtmParameters({k: v.copy() for k, v in self.arrays.items()}, self.stats)

    @classmethod
    def init(cls, cfg: DdtmConfig, seed: int = 0) -> "DdtmParameters":
        """Seed-controlled init: weights uniform in [-1/sqrt(d), 1/sqrt(d)],
        running means zero, running variances one."""
        cfg.validate()
        shapes, stats = parameter_schema(cfg)
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(cfg.d)
        arrays = {}
        for name in sorted(shapes):
            if name in stats:
                arrays[name] = np.ones(shapes[name]) if name.endswith("_var") else np.zeros(shapes[name])
            else:
                arrays[name] = rng.uniform(-bound, bound, size=shapes[name])
        return cls(arrays, stats)

    @classmethod
    def from_arrays(cls, cfg: DdtmConfig, arrays: dict) -> "DdtmParameters":
        """Adopt loaded arrays, validating every shape against the config."""
        shapes, stats = parameter_schema(cfg)
        missing = sorted(set(shapes) - set(arrays))
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {missing}")
        for name, shape in shapes.items():
            if arrays[name].shape != shape:
                raise ValueError(
                    f"parameter '{name}': checkpoint shape {arrays[name].shape} vs configured {shape}")
        return cls({name: np.asarray(arrays[name], dtype=np.float64) for name in shapes}, stats)


class _Binding:
    """Materializes each parameter at most once on a tape (or as a constant)."""

    def __init__(self, params: DdtmParameters, tape):
        self.params = params
        self.tape = tape
        self._tensors = {}

    def __call__(self, name) -> Tensor:
        t = self._tensors.get(name)
        if t is None:
            arr = self.params[name]
            t = ad.constant(arr) if self.tape is None else self.tape.leaf(arr)
            self._tensors[name] = t
        return t

    def stat(self, name) -> np.ndarray:
        return self.params[name]

    def gradients(self, grads) -> dict:
        """Per-name gradient arrays for all trainable parameters (zeros when unused)."""
        out = {}
        for name, arr in self.params.trainable().items():
            t = self._tensors.get(name)
            out[name] = np.zeros_like(arr) if t is None else grads.of(t)
        return out


def positional_encoding(t_dec: int, d: int) -> np.ndarray:
    """Row vector with sin at even flat indices and cos at odd ones, the
    exponent running over the flat index."""
    i = np.arange(d, dtype=np.float64)
    angle = t_dec / np.power(10000.0, 2.0 * i / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class Embeddings:
    rows: Tensor            # (B, 1+n+K, d) depot, customers, vehicles
    graph: Tensor           # (B, 1, d) mean over unmasked rows
    masked_rows: np.ndarray  # (B, 1+n+K) bool: visited customers, parked vehicles
    n: int
    k: int


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, r, d = x.shape
    x = ad.reshape(x, (b, r, heads, d // heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, r, dk = x.shape
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b, r, h * dk))


def _attention(q_rows, k_rows_split, v_rows_split, wq, wout, heads, mask_add):
    """Multi-head scaled-dot-product attention with pre-split keys/values."""
    dk = q_rows.shape[-1] // heads
    qh = _split_heads(ad.matmul(q_rows, wq), heads)
    scores = ad.scale(ad.matmul(qh, k_rows_split, transpose_b=True), 1.0 / math.sqrt(dk))
    att = ad.softmax(scores, mask=mask_add)
    return ad.matmul(_merge_heads(ad.matmul(att, v_rows_split)), wout)


def _self_attention(rows, bind, prefix, heads, mask_add):
    kh = _split_heads(ad.matmul(rows, bind(f"{prefix}_wk")), heads)
    vh = _split_heads(ad.matmul(rows, bind(f"{prefix}_wv")), heads)
    return _attention(rows, kh, vh, bind(f"{prefix}_wq"), bind(f"{prefix}_wout"), heads, mask_add)


def encode_states(states, params: DdtmParameters, cfg: DdtmConfig, *,
                  tape=None, bn_training=False, update_stats=False) -> Embeddings:
    """Encoder forward over a batch of same-shape states (fresh per outer loop)."""
    b = len(states)
    inst0 = states[0].instance
    n, k = inst0.n, inst0.k
    depot = np.empty((b, 1, 2))
    cust = np.empty((b, n, 3))
    veh = np.empty((b, k, 3))
    masked = np.zeros((b, 1 + n + k), dtype=bool)
    for i, st in enumerate(states):
        if st.terminal:
            raise env.EnvError("cannot encode a terminal state")
        inst = st.instance
        if inst.n != n or inst.k != k:
            raise ValueError("batched encode requires uniform instance extents")
        depot[i, 0] = inst.depot
        cust[i, :, :2] = inst.customer_xy()
        cust[i, :, 2] = st.residual_prizes
        veh[i, :, :2] = st.positions
        veh[i, :, 2] = st.fuels
        masked[i, 1:n + 1] = st.visited
        masked[i, n + 1:] = st.done

    bind = _Binding(params, tape) if not isinstance(params, _Binding) else params
    rows = ad.concat([
        ad.matmul(ad.constant(depot), bind("init_depot_w")),
        ad.matmul(ad.constant(cust), bind("init_node_w")),
        ad.matmul(ad.constant(veh), bind("init_veh_w")),
    ], axis=-2)

    if masked.any():
        union = masked[:, :, None] | masked[:, None, :]
        att_bias = np.where(union, NEG_INF, 0.0)[:, None, :, :]
    else:
        att_bias = None

    for l in range(cfg.encoder_layers):
        mha = _self_attention(rows, bind, f"enc{l}", cfg.heads, att_bias)
        h = ad.batchnorm(ad.add(rows, mha),
                         bind.stat(f"enc{l}_bn1_mean"), bind.stat(f"enc{l}_bn1_var"),
                         training=bn_training, update_stats=update_stats)
        ff = ad.matmul(ad.relu(ad.matmul(h, bind(f"enc{l}_ff_w0"))), bind(f"enc{l}_ff_w1"))
        rows = ad.batchnorm(ad.add(h, ff),
                            bind.stat(f"enc{l}_bn2_mean"), bind.stat(f"enc{l}_bn2_var"),
                            training=bn_training, update_stats=update_stats)

    keep = (~masked).astype(np.float64)
    weights = (keep / keep.sum(axis=1, keepdims=True))[:, None, :]
    graph = ad.matmul(ad.constant(weights), rows)
    return Embeddings(rows=rows, graph=graph, masked_rows=masked, n=n, k=k)


def encode(state, params: DdtmParameters, cfg: DdtmConfig, *, tape=None, bn_training=False) -> Embeddings:
    """Single-state encoder forward (evaluation-mode batch norm by default)."""
    return encode_states([state], params, cfg, tape=tape, bn_training=bn_training)


class RouteDecoder:
    """Per-partial-route decoding context.

    Holds the per-layer history of context rows for this route, the current
    node embedding (initialized to the active vehicle's row), and the
    per-route projections of the encoder output that stay fixed while the
    route is being built.
    """

    def __init__(self, emb: Embeddings, bind: _Binding, cfg: DdtmConfig, vehicle_ids: np.ndarray):
        self.cfg = cfg
        self.bind = bind
        self.emb = emb
        self.n = emb.n
        self.t_dec = 0
        self.hist = [[] for _ in range(cfg.decoder_layers)]
        row_idx = emb.n + 1 + vehicle_ids
        node_part = ad.take_rows(emb.rows, list(range(emb.n + 1)))
        veh_part = ad.gather_rows(emb.rows, row_idx)
        h_node = ad.concat([node_part, veh_part], axis=-2)          # (B, n+2, d)
        self.kv_att = []
        for l in range(cfg.decoder_layers):
            self.kv_att.append((
                _split_heads(ad.matmul(h_node, bind(f"dec{l}_att_wk")), cfg.heads),
                _split_heads(ad.matmul(h_node, bind(f"dec{l}_att_wv")), cfg.heads),
            ))
        self.k_final = ad.matmul(node_part, bind("final_wk"))       # (B, n+1, d)
        self.graph_q = ad.matmul(emb.graph, bind("graph_proj_w"))   # (B, 1, d)
        self.cur_rows = veh_part                                    # (B, 1, d)

    def step(self, fuels: np.ndarray, action_mask_add: np.ndarray, return_logits=False):
        """Log-probabilities over [depot, customers] for the current step.

        ``fuels`` is (B,) current fuel of the active vehicles; the additive
        action mask is (B, n+1) with 0 for feasible entries.
        """
        cfg, bind = self.cfg, self.bind
        b = fuels.shape[0]
        fuel_col = ad.constant(fuels.reshape(b, 1, 1))
        x = ad.matmul(ad.concat([self.cur_rows, fuel_col], axis=-1), bind("ctx_proj_w"))
        x = ad.add(x, ad.constant(positional_encoding(self.t_dec, cfg.d)))
        key_mask = np.concatenate([action_mask_add, np.zeros((b, 1))], axis=1)[:, None, None, :]
        for l in range(cfg.decoder_layers):
            x_in = x
            hist_rows = ad.concat(self.hist[l], axis=-2) if self.hist[l] else x_in
            kh = _split_heads(ad.matmul(hist_rows, bind(f"dec{l}_sa_wk")), cfg.heads)
            vh = _split_heads(ad.matmul(hist_rows, bind(f"dec{l}_sa_wv")), cfg.heads)
            x = _attention(x, kh, vh, bind(f"dec{l}_sa_wq"), bind(f"dec{l}_sa_wout"), cfg.heads, None)
            k_att, v_att = self.kv_att[l]
            x = _attention(x, k_att, v_att, bind(f"dec{l}_att_wq"), bind(f"dec{l}_att_wout"),
                           cfg.heads, key_mask)
            self.hist[l].append(x_in)
        q = ad.matmul(ad.add(x, self.graph_q), bind("final_wq"))    # (B, 1, d)
        raw = ad.scale(ad.matmul(q, self.k_final, transpose_b=True), 1.0 / math.sqrt(cfg.d))
        logits = ad.reshape(ad.scale(ad.tanh(raw), cfg.logit_clamp), (b, self.n + 1))
        logp = ad.log_softmax(logits, mask=action_mask_add)
        if return_logits:
            return logp, logits
        return logp

    def advance(self, actions: np.ndarray):
        """Move to the next decode step: the chosen node becomes the current node."""
        row_idx = np.where(actions >= 1, actions, 0)
        self.cur_rows = ad.gather_rows(self.emb.rows, row_idx)
        self.t_dec += 1


def start_route(emb: Embeddings, states, params, cfg: DdtmConfig, tape=None) -> RouteDecoder:
    if not isinstance(states, (list, tuple)):
        states = [states]
    bind = params if isinstance(params, _Binding) else _Binding(params, tape)
    vehicle_ids = np.array([st.active_vehicle for st in states])
    return RouteDecoder(emb, bind, cfg, vehicle_ids)


def decode_step(dec: RouteDecoder, state, *, return_logits=False):
    """Action distribution (depot + customers) for one single-instance state.

    Returns probabilities summing to one with exact zeros on infeasible
    actions; optionally also the clamped pre-mask logits.
    """
    feas = env.feasible_mask(state)
    mask = np.where(feas, 0.0, NEG_INF)[None, :]
    fuel = np.array([state.fuels[state.active_vehicle]])
    out = dec.step(fuel, mask, return_logits=return_logits)
    if return_logits:
        logp, logits = out
        return np.exp(logp.values[0]), logits.values[0]
    return np.exp(out.values[0])


@dataclass
class BatchRollout:
    trajectories: list
    rewards: np.ndarray
    logp_sum: Tensor | None = None       # (B,) on-tape trajectory log-probabilities
    entropy_sum: Tensor | None = None    # (B,) on-tape summed step entropies
    mean_step_entropy: float = 0.0
    binding: _Binding | None = None


def _sample_rows(probs: np.ndarray, rng) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    idx = (u[:, None] > cum).sum(axis=1)
    last_ok = np.where(probs > 0, np.arange(probs.shape[1])[None, :], -1).max(axis=1)
    return np.minimum(idx, last_ok)


def rollout_states(instances, orders, params, cfg: DdtmConfig, *,
                   mode="greedy", rng=None, tape=None, bn_training=False,
                   update_stats=False, forced_actions=None) -> BatchRollout:
    """Lockstep batched rollout over instances with per-instance vehicle orders.

    Every vehicle slot is decoded jointly: elements whose route already ended
    are forced onto the depot with a point-mass distribution and contribute
    exactly zero log-probability and entropy (their rows are also excluded
    from the returned sums via an alive mask).
    """
    if mode not in ("greedy", "sample", "replay"):
        raise ValueError(f"unknown rollout mode '{mode}'")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    if mode == "replay" and forced_actions is None:
        raise ValueError("replay mode needs forced_actions")
    b = len(instances)
    states = [env.reset(inst, order) for inst, order in zip(instances, orders)]
    n, k = instances[0].n, instances[0].k
    bind = _Binding(params, tape)
    trajs = [env.Trajectory(order=tuple(orders[i])) for i in range(b)]
    routes = [[[] for _ in range(k)] for _ in range(b)]
    forced_ptr = [0] * b
    logp_acc = None
    ent_acc = None
    ent_value_total = 0.0
    alive_steps = 0

    for slot in range(k):
        emb = encode_states(states, bind, cfg, tape=tape,
                            bn_training=bn_training, update_stats=update_stats)
        vehicle_ids = np.array([st.order[slot] for st in states])
        dec = RouteDecoder(emb, bind, cfg, vehicle_ids)
        open_rows = np.ones(b, dtype=bool)
        while open_rows.any():
            mask_add = np.full((b, n + 1), NEG_INF)
            mask_add[:, 0] = 0.0
            feas_rows = [None] * b
            for i in range(b):
                if open_rows[i]:
                    feas_rows[i] = env.feasible_mask(states[i])
                    mask_add[i, feas_rows[i]] = 0.0
            fuels = np.array([states[i].fuels[vehicle_ids[i]] for i in range(b)])
            logp = dec.step(fuels, mask_add)
            probs = np.exp(logp.values)
            if not np.isfinite(probs).all():
                raise ad.NonFiniteError("decode produced non-finite action probabilities")
            if mode == "greedy":
                actions = probs.argmax(axis=1)
            elif mode == "sample":
                actions = _sample_rows(probs, rng)
            else:
                actions = np.array([
                    forced_actions[i][forced_ptr[i]] if open_rows[i] else 0 for i in range(b)],
                    dtype=np.intp)
            actions = np.where(open_rows, actions, 0)
            alive = open_rows.astype(np.float64)
            chosen = ad.mul(ad.gather_last(logp, actions), ad.constant(alive))
            ent = ad.scale(ad.tsum(ad.mul(ad.exp(logp), logp), axis=-1), -1.0)
            ent = ad.mul(ent, ad.constant(alive))
            logp_acc = chosen if logp_acc is None else ad.add(logp_acc, chosen)
            ent_acc = ent if ent_acc is None else ad.add(ent_acc, ent)
            ent_value_total += float(ent.values.sum())
            alive_steps += int(open_rows.sum())
            for i in range(b):
                if not open_rows[i]:
                    continue
                a = int(actions[i])
                veh = vehicle_ids[i]
                states[i] = env.step(states[i], a, _mask=feas_rows[i])
                trajs[i].steps.append(env.StepRecord(
                    t=states[i].t - 1, vehicle=veh, action=a,
                    fuel_after=float(states[i].fuels[veh]),
                    logprob=float(logp.values[i, a]),
                    entropy=float(ent.values[i])))
                if a == 0:
                    open_rows[i] = False
                else:
                    routes[i][veh].append(a)
                if mode == "replay":
                    forced_ptr[i] += 1
            dec.advance(actions)

    rewards = np.array([st.collected.sum() for st in states])
    for i in range(b):
        trajs[i].routes = tuple(tuple(r) for r in routes[i])
        trajs[i].reward = float(rewards[i])
    return BatchRollout(
        trajectories=trajs,
        rewards=rewards,
        logp_sum=logp_acc,
        entropy_sum=ent_acc,
        mean_step_entropy=ent_value_total / max(alive_steps, 1),
        binding=bind,
    )


def rollout(inst: Instance, order, params: DdtmParameters, cfg: DdtmConfig,
            mode: str = "greedy", seed: int | None = None) -> env.Trajectory:
    """Single-instance rollout (evaluation-mode batch norm, no tape).

    Greedy mode breaks probability ties toward the lowest node index; sample
    mode draws categorically with the given seed.
    """
    rng = np.random.default_rng(seed) if mode == "sample" else None
    batch = rollout_states([inst], [tuple(order)], params, cfg, mode=mode, rng=rng)
    return batch.trajectories[0]

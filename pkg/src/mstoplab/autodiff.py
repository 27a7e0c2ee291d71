"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A :class:`Tape` records every operation applied to tensors that live on it.
Calling :meth:`Tape.backward` on a scalar loss walks the record in reverse and
returns a :class:`Gradients` lookup. Tensors built from plain arrays (or from
inputs that are not on any tape) are constants: they participate in forward
computation but receive no gradient.

All values are float64 and row-major. Masking is additive: a mask is an array
added to logits before softmax, with large-negative entries (or ``-inf``)
forcing probability exactly zero.
"""

from __future__ import annotations

import numpy as np

# Additive-mask sentinel used by callers that need a finite "minus infinity".
NEG_INF = -1e9

# Saturation floor for the elementwise log kind: log(x) for x <= floor returns
# log(floor) with zero gradient, so expressions like p*log(p) stay finite at p=0.
LOG_FLOOR = 1e-300


class AutodiffError(Exception):
    pass


class ShapeMismatchError(AutodiffError):
    def __init__(self, kind, detail):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind


class NonFiniteError(AutodiffError):
    pass


class DetachedNodeError(AutodiffError):
    pass


class Tensor:
    """A float64 array plus an optional handle into a recording tape."""

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape=None, node_id=None):
        self.values = values
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self):
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        tag = "const" if self.node_id is None else f"node {self.node_id}"
        return f"Tensor(shape={self.values.shape}, {tag})"


def constant(values) -> Tensor:
    """Wrap an array-like as a constant tensor (no gradient)."""
    return Tensor(np.asarray(values, dtype=np.float64))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


class Gradients:
    """Gradient lookup returned by :meth:`Tape.backward`."""

    def __init__(self, tape, grads):
        self._tape = tape
        self._grads = grads

    def of(self, tensor: Tensor) -> np.ndarray:
        if tensor.node_id is None or tensor.tape is not self._tape:
            raise DetachedNodeError("tensor is not a node of the differentiated tape")
        g = self._grads.get(tensor.node_id)
        if g is None:
            return np.zeros_like(tensor.values)
        return g


class Tape:
    """Ordered operation record; single-owner, not shared across rollouts.

    ``check_finite=True`` validates inputs and outputs of every recorded
    operation (useful in tests; off by default for speed).
    """

    def __init__(self, check_finite=False):
        self.check_finite = check_finite
        self._records = []  # (out_id, input_ids, backward_fn)
        self._next_id = 0

    def _new_id(self):
        nid = self._next_id
        self._next_id = nid + 1
        return nid

    def leaf(self, values) -> Tensor:
        """Register a differentiable leaf (e.g. a trainable parameter)."""
        arr = np.asarray(values, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(arr)):
            raise NonFiniteError("leaf holds non-finite values")
        return Tensor(arr, tape=self, node_id=self._new_id())

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse pass from a scalar loss; returns gradients by node."""
        if loss.tape is not self or loss.node_id is None:
            raise DetachedNodeError("loss is not recorded on this tape")
        if loss.values.size != 1:
            raise ShapeMismatchError("backward", f"loss must be scalar, got shape {loss.values.shape}")
        grads = {loss.node_id: np.ones_like(loss.values)}
        for out_id, input_ids, backward_fn in reversed(self._records):
            g = grads.get(out_id)
            if g is None:
                continue
            for node_id, gin in zip(input_ids, backward_fn(g)):
                if node_id is None or gin is None:
                    continue
                acc = grads.get(node_id)
                grads[node_id] = gin if acc is None else acc + gin
        return Gradients(self, grads)

    def __len__(self):
        return len(self._records)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _swap_last(x):
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------------------
# operation kinds: each entry returns (value, backward_fn) given raw arrays
# ---------------------------------------------------------------------------

def _op_matmul(vals, attrs, needs):
    a, b = vals
    transpose_b = attrs.get("transpose_b", False)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul", f"operands must be at least 2-D, got {a.shape} and {b.shape}")
    b_eff_rows = b.shape[-1] if transpose_b else b.shape[-2]
    if a.shape[-1] != b_eff_rows:
        raise ShapeMismatchError(
            "matmul", f"inner extents disagree: {a.shape} x {b.shape} (transpose_b={transpose_b})")
    out = a @ (_swap_last(b) if transpose_b else b)
    need_a, need_b = needs

    def backward(g):
        ga = gb = None
        if b.ndim == 2:
            # batched activations against one weight matrix: flatten to a
            # single GEMM instead of per-element outer products
            g2 = g.reshape(-1, g.shape[-1])
            if need_a:
                ga = (g2 @ (b.T if not transpose_b else b)).reshape(a.shape)
            if need_b:
                a2 = a.reshape(-1, a.shape[-1])
                gb = a2.T @ g2 if not transpose_b else g2.T @ a2
            return ga, gb
        if transpose_b:
            if need_a:
                ga = _unbroadcast(g @ b, a.shape)
            if need_b:
                gb = _unbroadcast(_swap_last(g) @ a, b.shape)
        else:
            if need_a:
                ga = _unbroadcast(g @ _swap_last(b), a.shape)
            if need_b:
                gb = _unbroadcast(_swap_last(a) @ g, b.shape)
        return ga, gb

    return out, backward


def _op_add(vals, attrs, needs):
    a, b = vals
    try:
        out = a + b
    except ValueError:
        raise ShapeMismatchError("add", f"shapes not broadcastable: {a.shape} vs {b.shape}")

    def backward(g):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return out, backward


def _op_mul(vals, attrs, needs):
    a, b = vals
    try:
        out = a * b
    except ValueError:
        raise ShapeMismatchError("mul", f"shapes not broadcastable: {a.shape} vs {b.shape}")

    def backward(g):
        return (_unbroadcast(g * b, a.shape) if needs[0] else None,
                _unbroadcast(g * a, b.shape) if needs[1] else None)

    return out, backward


def _op_scale(vals, attrs, needs):
    (a,) = vals
    c = float(attrs["factor"])
    return a * c, lambda g: (g * c,)


def _op_concat(vals, attrs, needs):
    axis = attrs.get("axis", -1)
    ref = vals[0].ndim
    for v in vals:
        if v.ndim != ref:
            raise ShapeMismatchError("concat", f"rank mismatch: {[v.shape for v in vals]}")
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError:
        raise ShapeMismatchError("concat", f"incompatible shapes {[v.shape for v in vals]} along axis {axis}")
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return out, backward


def _masked_logits(kind, x, attrs):
    mask = attrs.get("mask")
    if mask is None:
        return x
    mask = np.asarray(mask, dtype=np.float64)
    try:
        z = x + mask
    except ValueError:
        raise ShapeMismatchError(kind, f"mask shape {mask.shape} not broadcastable to {x.shape}")
    return z


def _softmax_raw(z):
    m = np.max(z, axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise NonFiniteError("softmax: a row is fully masked to -inf")
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def _op_softmax(vals, attrs, needs):
    (x,) = vals
    p = _softmax_raw(_masked_logits("softmax", x, attrs))

    def backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return p, backward


def _op_log_softmax(vals, attrs, needs):
    (x,) = vals
    z = _masked_logits("log_softmax", x, attrs)
    m = np.max(z, axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise NonFiniteError("log_softmax: a row is fully masked to -inf")
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * np.sum(g, axis=-1, keepdims=True),)

    return out, backward


def _op_relu(vals, attrs, needs):
    (x,) = vals
    out = np.maximum(x, 0.0)
    return out, lambda g: (g * (x > 0.0),)


def _op_tanh(vals, attrs, needs):
    (x,) = vals
    out = np.tanh(x)
    return out, lambda g: (g * (1.0 - out * out),)


def _op_exp(vals, attrs, needs):
    (x,) = vals
    out = np.exp(x)
    return out, lambda g: (g * out,)


def _op_log(vals, attrs, needs):
    # Saturates below LOG_FLOOR (zero gradient there) so 0*log(0) terms stay finite.
    (x,) = vals
    clamped = np.maximum(x, LOG_FLOOR)
    out = np.log(clamped)
    return out, lambda g: (np.where(x > LOG_FLOOR, g / clamped, 0.0),)


def _reduce_backward(g, x_shape, axis, keepdims, denom):
    if axis is None:
        return np.full(x_shape, 1.0, dtype=np.float64) * (g / denom)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g / denom, x_shape).copy()


def _op_sum(vals, attrs, needs):
    (x,) = vals
    axis = attrs.get("axis")
    keepdims = attrs.get("keepdims", False)
    out = x.sum(axis=axis, keepdims=keepdims)
    return out, lambda g: (_reduce_backward(g, x.shape, axis, keepdims, 1.0),)


def _op_mean(vals, attrs, needs):
    (x,) = vals
    axis = attrs.get("axis")
    keepdims = attrs.get("keepdims", False)
    out = x.mean(axis=axis, keepdims=keepdims)
    denom = x.size if axis is None else x.shape[axis]
    return out, lambda g: (_reduce_backward(g, x.shape, axis, keepdims, float(denom)),)


def _op_batchnorm(vals, attrs, needs):
    """Normalize each last-axis channel over all leading axes.

    Training mode uses batch statistics (differentiable) and, when
    ``update_stats`` is set, folds them into the running buffers with the given
    momentum. Evaluation mode (or a single-sample batch) is a deterministic
    affine map built from the frozen running statistics.
    """
    (x,) = vals
    running_mean = attrs["running_mean"]
    running_var = attrs["running_var"]
    eps = attrs.get("eps", 1e-5)
    momentum = attrs.get("momentum", 0.1)
    training = attrs.get("training", False)
    update_stats = attrs.get("update_stats", False)
    if x.ndim < 2:
        raise ShapeMismatchError("batchnorm", f"need at least 2-D input, got {x.shape}")
    if running_mean.shape != (x.shape[-1],) or running_var.shape != (x.shape[-1],):
        raise ShapeMismatchError(
            "batchnorm", f"running stats {running_mean.shape}/{running_var.shape} do not match channels {x.shape[-1]}")
    axes = tuple(range(x.ndim - 1))
    n = int(np.prod([x.shape[i] for i in axes]))

    if training and n > 1:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv_std
        out = xhat

        def backward(g):
            mean_g = g.mean(axis=axes)
            mean_gx = (g * xhat).mean(axis=axes)
            return (inv_std * (g - mean_g - xhat * mean_gx),)

        return out, backward

    # eval mode / single-sample fallback: frozen affine map
    inv_std = 1.0 / np.sqrt(running_var + eps)
    out = (x - running_mean) * inv_std
    return out, lambda g: (g * inv_std,)


def _op_reshape(vals, attrs, needs):
    (x,) = vals
    shape = tuple(attrs["shape"])
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatchError("reshape", f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape), lambda g: (g.reshape(x.shape),)


def _op_transpose(vals, attrs, needs):
    (x,) = vals
    axes = tuple(attrs["axes"])
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatchError("transpose", f"axes {axes} invalid for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return x.transpose(axes), lambda g: (g.transpose(inv),)


def _op_take_rows(vals, attrs, needs):
    # Static row selection along axis -2, shared across leading dims.
    (x,) = vals
    idx = np.asarray(attrs["indices"], dtype=np.intp)
    if idx.ndim != 1 or x.ndim < 2:
        raise ShapeMismatchError("take_rows", f"need 1-D indices and >=2-D input, got {idx.shape}, {x.shape}")
    out = np.take(x, idx, axis=-2)

    def backward(g):
        gx = np.zeros_like(x)
        np.add.at(np.moveaxis(gx, -2, 0), idx, np.moveaxis(g, -2, 0))
        return (gx,)

    return out, backward


def _op_gather_rows(vals, attrs, needs):
    # Per-batch-element single-row selection: x (B, R, d), idx (B,) -> (B, 1, d).
    (x,) = vals
    idx = np.asarray(attrs["indices"], dtype=np.intp)
    if x.ndim != 3 or idx.shape != (x.shape[0],):
        raise ShapeMismatchError("gather_rows", f"need x (B,R,d) and idx (B,), got {x.shape}, {idx.shape}")
    batch = np.arange(x.shape[0])
    out = x[batch, idx][:, None, :]

    def backward(g):
        gx = np.zeros_like(x)
        np.add.at(gx, (batch, idx), g[:, 0, :])
        return (gx,)

    return out, backward


def _op_gather_last(vals, attrs, needs):
    # Per-batch-element scalar pick along the last axis: x (..., A), idx matching x[..., 0].
    (x,) = vals
    idx = np.asarray(attrs["indices"], dtype=np.intp)
    if idx.shape != x.shape[:-1]:
        raise ShapeMismatchError("gather_last", f"indices {idx.shape} must match leading shape of {x.shape}")
    out = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx,)

    return out, backward


OP_KINDS = {
    "matmul": _op_matmul,
    "add": _op_add,
    "mul": _op_mul,
    "scale": _op_scale,
    "concat": _op_concat,
    "softmax": _op_softmax,
    "log_softmax": _op_log_softmax,
    "relu": _op_relu,
    "tanh": _op_tanh,
    "exp": _op_exp,
    "log": _op_log,
    "sum": _op_sum,
    "mean": _op_mean,
    "batchnorm": _op_batchnorm,
    "reshape": _op_reshape,
    "transpose": _op_transpose,
    "take_rows": _op_take_rows,
    "gather_rows": _op_gather_rows,
    "gather_last": _op_gather_last,
}


def forward(kind: str, inputs, attrs=None) -> Tensor:
    """Apply an operation kind to tensors, recording it when inputs are taped.

    Inputs that are plain arrays are treated as constants. All taped inputs
    must share one tape; the output lives on that tape (or is a constant when
    no input is taped).
    """
    if kind not in OP_KINDS:
        raise AutodiffError(f"unknown operation kind '{kind}'")
    attrs = attrs or {}
    tensors = [_as_tensor(x) for x in inputs]
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise AutodiffError(f"{kind}: inputs live on different tapes")
            tape = t.tape
    vals = [t.values for t in tensors]
    if tape is not None and tape.check_finite:
        for i, v in enumerate(vals):
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"{kind}: input {i} holds non-finite values")
    needs = tuple(t.tape is tape and t.node_id is not None and tape is not None for t in tensors)
    value, backward_fn = OP_KINDS[kind](vals, attrs, needs)
    if tape is None:
        return Tensor(value)
    if tape.check_finite and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{kind}: output holds non-finite values")
    out = Tensor(value, tape=tape, node_id=tape._new_id())
    input_ids = tuple(t.node_id if t.tape is tape else None for t in tensors)
    tape._records.append((out.node_id, input_ids, backward_fn))
    return out


# thin wrappers -------------------------------------------------------------

def matmul(a, b, transpose_b=False):
    return forward("matmul", [a, b], {"transpose_b": transpose_b})


def add(a, b):
    return forward("add", [a, b])


def mul(a, b):
    return forward("mul", [a, b])


def scale(a, factor):
    return forward("scale", [a], {"factor": factor})


def concat(tensors, axis=-1):
    return forward("concat", tensors, {"axis": axis})


def softmax(x, mask=None):
    return forward("softmax", [x], {"mask": mask})


def log_softmax(x, mask=None):
    return forward("log_softmax", [x], {"mask": mask})


def relu(x):
    return forward("relu", [x])


def tanh(x):
    return forward("tanh", [x])


def exp(x):
    return forward("exp", [x])


def log(x):
    return forward("log", [x])


def tsum(x, axis=None, keepdims=False):
    return forward("sum", [x], {"axis": axis, "keepdims": keepdims})


def tmean(x, axis=None, keepdims=False):
    return forward("mean", [x], {"axis": axis, "keepdims": keepdims})


def batchnorm(x, running_mean, running_var, *, training, momentum=0.1, eps=1e-5, update_stats=False):
    return forward("batchnorm", [x], {
        "running_mean": running_mean, "running_var": running_var,
        "training": training, "momentum": momentum, "eps": eps,
        "update_stats": update_stats,
    })


def reshape(x, shape):
    return forward("reshape", [x], {"shape": shape})


def transpose(x, axes):
    return forward("transpose", [x], {"axes": axes})


def take_rows(x, indices):
    return forward("take_rows", [x], {"indices": indices})


def gather_rows(x, indices):
    return forward("gather_rows", [x], {"indices": indices})


def gather_last(x, indices):
    return forward("gather_last", [x], {"indices": indices})

"""A small reverse-mode differentiation engine over numpy arrays.

Only the kernels the transformer needs are provided: matmul, (broadcast) add,
scalar scale, GELU, softmax over the last axis (optionally causal),
layer normalization over the last axis, embedding lookup, and cross-entropy
from logits.  ``reshape`` and ``transpose`` are structural helpers for
multi-head attention.

Every op appends a node to the tape of the :class:`Graph` that owns its
inputs; :meth:`Graph.backward` walks the tape in exact reverse order.

Precision is a process-wide switch: float32 for training, float64 for
gradient checking (see :func:`precision`).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

_DTYPE: type = np.float32
CHECK_FINITE = True


def get_dtype() -> type:
    return _DTYPE


def set_precision(bits: int) -> None:
    """Select 32-bit (training) or 64-bit (check mode) arithmetic globally."""
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ContractError(f"precision must be 32 or 64 bits, got {bits}")


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    previous = _DTYPE
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(64 if previous is np.float64 else 32)


def _require_finite(arr: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: non-finite values produced")


class Tensor:
    """A value on (or off) a tape.

    ``graph`` is None for constants; ``name`` is set only for parameters.
    """

    __slots__ = ("data", "graph", "name")

    def __init__(self, data: np.ndarray, graph: Graph | None = None, name: str | None = None):
        self.data = data
        self.graph = graph
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


class Graph:
    """Tape of operation records plus the named parameter leaves.

    With ``record=False`` ops still compute values but nothing is stored,
    which is what inference and finite-difference probes want.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        arr = np.asarray(value)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        _require_finite(arr, f"param {name}")
        t = Tensor(arr, self, name)
        self.params[name] = t
        return t

    def constant(self, value) -> Tensor:
        arr = np.asarray(value)
        if arr.dtype.kind == "f" and arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        return Tensor(arr, None)

    def _push(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        if self.record:
            self.nodes.append((out, inputs, backward))

    def release(self) -> None:
        """Drop the tape and leaves.

        Tensors point back at their graph, so a spent graph is a reference
        cycle; releasing it lets the arrays go without waiting for the cycle
        collector.
        """
        self.nodes.clear()
        self.params.clear()

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every registered parameter.

        Parameters the loss does not depend on receive zeros.  The tape is not
        modified, so calling this twice returns identical arrays.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.record:
            raise ContractError("graph was built with record=False")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, rule in reversed(self.nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, rule(g)):
                if gi is None or inp.graph is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return {
            name: grads[id(t)] if id(t) in grads else np.zeros_like(t.data)
            for name, t in self.params.items()
        }


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind == "f" and arr.dtype != _DTYPE:
        arr = arr.astype(_DTYPE)
    return Tensor(arr, None)


def _emit(value: np.ndarray, inputs: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    _require_finite(value, op)
    graph = next((t.graph for t in inputs if t.graph is not None), None)
    out = Tensor(value, graph)
    if graph is not None:
        graph._push(out, tuple(inputs), rule)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- kernels -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy semantics)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        if b.ndim == 2 and a.ndim > 2:
            value = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + b.shape[-1:])
        else:
            value = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None
    ad, bd = a.data, b.data

    if bd.ndim == 2:
        # activations @ weight: fold leading axes so the weight gradient is one GEMM
        def rule(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, ad.shape[-1]).T @ g2
            return ga, gb

        return _emit(value, (a, b), rule, "matmul")

    def rule(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _emit(value, (a, b), rule, "matmul")


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may broadcast against ``a`` (bias, position table)."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} and {b.shape}") from None
    sa, sb = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit(value, (a, b), rule, "add")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = a.data.dtype.type(c)

    def rule(g):
        return (g * c,)

    return _emit(a.data * c, (a,), rule, "scale")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation (GPT-2 convention)."""
    a = _as_tensor(a)
    x = a.data
    dt = x.dtype.type
    c, k = dt(_GELU_C), dt(0.044715)
    x2 = x * x
    th = np.tanh(c * x * (dt(1.0) + k * x2))
    half_x = dt(0.5) * x
    value = half_x * (dt(1.0) + th)

    def rule(g):
        dinner = c * (dt(1.0) + dt(3.0) * k * x2)
        d = dt(0.5) * (dt(1.0) + th) + half_x * (dt(1.0) - th * th) * dinner
        return (g * d,)

    return _emit(value, (a,), rule, "gelu")


_CAUSAL_CACHE: dict = {}


def _causal_bias(n: int, dtype) -> np.ndarray:
    key = (n, np.dtype(dtype))
    if key not in _CAUSAL_CACHE:
        bias = np.zeros((n, n), dtype=dtype)
        bias[np.triu_indices(n, k=1)] = -np.inf
        _CAUSAL_CACHE[key] = bias
    return _CAUSAL_CACHE[key]


def softmax(a, causal: bool = False) -> Tensor:
    """Softmax over the last axis, max-subtracted.

    With ``causal=True`` the last two axes are treated as (query, key) and
    keys after the query get an additive -inf before normalization.
    """
    a = _as_tensor(a)
    x = a.data
    if causal:
        if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
            raise ShapeError(f"causal softmax needs square trailing axes, got {x.shape}")
        x = x + _causal_bias(x.shape[-1], x.dtype)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (a,), rule, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},), got {gain.shape}, {bias.shape}")
    xd = x.data
    dt = xd.dtype.type
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = dt(1.0) / np.sqrt(var + dt(eps))
    xhat = xc * rstd
    value = xhat * gain.data + bias.data
    gd = gain.data

    def rule(g):
        gx_hat = g * gd
        gx = rstd * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(value, (x, gain, bias), rule, "layer_norm")


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; ids is an integer array of any shape."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"embedding ids must be integers, got {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding id out of range [0, {table.shape[0]})")
    value = table.data[ids]
    vshape = table.shape

    def rule(g):
        gt = np.zeros(vshape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, vshape[1]))
        return (gt,)

    return _emit(value, (table,), rule, "embedding")


def cross_entropy(logits, targets, select: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood in nats over the selected rows.

    ``logits`` is ``[..., V]`` and ``targets`` the matching integer array.
    ``select`` (boolean, same shape as targets) restricts the mean to a subset
    of positions; unselected rows get exactly zero gradient and their logits
    never enter the loss value.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    V = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    flat = logits.data.reshape(-1, V)
    tgt = targets.reshape(-1)
    if select is None:
        rows = np.arange(tgt.size)
    else:
        select = np.asarray(select, dtype=bool)
        if select.shape != targets.shape:
            raise ShapeError(f"cross_entropy: select {select.shape} vs targets {targets.shape}")
        rows = np.flatnonzero(select.reshape(-1))
    count = rows.size
    if count == 0:
        raise ContractError("cross_entropy over zero positions")
    t_sel = tgt[rows]
    if t_sel.min() < 0 or t_sel.max() >= V:
        raise ShapeError(f"cross_entropy target out of range [0, {V})")
    sub = flat[rows]
    m = sub.max(axis=-1, keepdims=True)
    e = np.exp(sub - m)
    s = e.sum(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(s[:, 0])
    nll = lse - sub[np.arange(count), t_sel]
    value = np.asarray(nll.sum() / count, dtype=flat.dtype)
    shape = logits.shape

    def rule(g):
        p = e / s
        p[np.arange(count), t_sel] -= 1
        full = np.zeros((tgt.size, V), dtype=p.dtype)
        full[rows] = p * (g / count)
        return (full.reshape(shape),)

    return _emit(value, (logits,), rule, "cross_entropy")


# --- structural helpers ---------------------------------------------------


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {old} -> {tuple(shape)}") from None

    def rule(g):
        return (g.reshape(old),)

    return _emit(value, (a,), rule, "reshape")


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def rule(g):
        return (g.transpose(inv),)

    return _emit(a.data.transpose(axes), (a,), rule, "transpose")


def total(a) -> Tensor:
    """Sum of all elements as a scalar."""
    a = _as_tensor(a)
    shape = a.shape

    def rule(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _emit(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), rule, "sum")


# --- gradient checking ----------------------------------------------------


def grad_check(
    build: Callable[[Graph], Tensor],
    params: dict[str, np.ndarray],
    eps: float = 1e-6,
    n_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``build(graph)`` must register every entry of ``params`` through
    ``graph.param`` (reading the arrays from the same dict) and return a scalar
    loss.  ``n_coords`` parameter coordinates are sampled uniformly over all
    parameter entries.  Must run in 64-bit mode.
    """
    if _DTYPE is not np.float64:
        raise ContractError("grad_check requires 64-bit precision mode")
    if not 1e-7 <= eps <= 1e-4:
        raise ContractError(f"eps must be within [1e-7, 1e-4], got {eps}")
    rng = rng if rng is not None else np.random.default_rng(0)
    for k in params:
        params[k] = np.asarray(params[k], dtype=np.float64)

    g = Graph()
    analytic = g.backward(build(g))

    def evaluate() -> float:
        value = float(build(Graph(record=False)).data)
        if not math.isfinite(value):
            raise NonFiniteError("grad_check: non-finite loss")
        return value

    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    picks = rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in np.sort(picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[which], int(flat - offsets[which])
        view = params[name].reshape(-1)
        orig = view[idx]
        view[idx] = orig + eps
        up = evaluate()
        view[idx] = orig - eps
        down = evaluate()
        view[idx] = orig
        numeric = (up - down) / (2 * eps)
        a = float(analytic[name].reshape(-1)[idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst

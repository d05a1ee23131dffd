"""Dense-array values with tape-based reverse-mode differentiation.

Activations are rank-3 arrays laid out as (instances, time, channels); the
channel axis may be grouped into `groups` equal blocks (one block per sensor)
so that the same weights apply to every sensor. Parameters are plain 1-D or
2-D arrays wrapped in the same Tensor type. Everything is float64.

Operations record themselves on the innermost active GradTape (if any);
outside a tape they are plain forward evaluations.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with a primitive."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class Tensor:
    """A float64 array plus an accumulated gradient slot."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Tensor{tag} shape={self.data.shape}>"


_tapes = threading.local()


def _active_tape():
    stack = getattr(_tapes, "stack", None)
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of primitive applications for one forward pass.

    Entries are appended in execution order, which is a topological order of
    the computation; replaying them in reverse visits every node once and
    sums the contributions of all consumers of a node.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        stack = getattr(_tapes, "stack", None)
        if stack is None:
            stack = _tapes.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.stack.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self._entries.append((out, inputs, backward))

    def backward(self, loss: Tensor, params: Sequence[Tensor]):
        """Accumulate d(loss)/d(p) into p.grad for every p in params.

        Parameters not reachable from the loss receive (or keep) a zero
        gradient. Repeated calls keep adding, so per-episode gradients sum
        naturally across a meta-batch.
        """
        if loss.data.size != 1:
            raise ShapeError("backward", f"loss must be scalar, got shape {loss.data.shape}")
        # value: [array, owned]; un-owned arrays may alias buffers returned by
        # several backward closures (e.g. add hands the same array to both
        # inputs), so they are replaced rather than mutated on accumulation.
        grads: dict[int, list] = {id(loss): [np.ones_like(loss.data), True]}
        for out, inputs, backward_fn in reversed(self._entries):
            slot = grads.pop(id(out), None)
            if slot is None:
                continue
            contribs = backward_fn(slot[0])
            for inp, contrib in zip(inputs, contribs):
                if contrib is None:
                    continue
                key = id(inp)
                cur = grads.get(key)
                if cur is None:
                    grads[key] = [contrib, False]
                elif cur[1]:
                    cur[0] += contrib
                else:
                    cur[0] = cur[0] + contrib
                    cur[1] = True
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            slot = grads.get(id(p))
            if slot is not None:
                p.grad += slot[0]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        tape._record(out, inputs, backward)
    return out


def _split_channels(x: Tensor, op: str, groups: int) -> int:
    if x.data.ndim != 3:
        raise ShapeError(op, f"expected rank-3 input, got shape {x.data.shape}")
    channels = x.data.shape[2]
    if groups < 1 or channels % groups != 0:
        raise ShapeError(op, f"channel size {channels} not divisible into {groups} groups")
    return channels // groups


# ---------------------------------------------------------------------------
# primitives


def matmul(x: Tensor, w: Tensor, groups: int = 1) -> Tensor:
    """Matrix multiply over the channel axis, applied per channel group."""
    width = _split_channels(x, "matmul", groups)
    if w.data.ndim != 2 or w.data.shape[0] != width:
        raise ShapeError(
            "matmul",
            f"weights {w.data.shape} do not match per-group width {width} of input {x.data.shape}",
        )
    i, t, _ = x.data.shape
    k = w.data.shape[1]
    xr = x.data.reshape(i, t, groups, width)
    out = (xr @ w.data).reshape(i, t, groups * k)

    def backward(g):
        gr = g.reshape(i, t, groups, k)
        dx = (gr @ w.data.T).reshape(i, t, groups * width)
        dw = xr.reshape(-1, width).T @ gr.reshape(-1, k)
        return dx, dw

    return _emit("matmul", out, (x, w), backward)


def affine(x: Tensor, w: Tensor, b: Tensor, groups: int = 1) -> Tensor:
    """matmul followed by a per-channel bias shared across groups."""
    width = _split_channels(x, "affine", groups)
    if w.data.ndim != 2 or w.data.shape[0] != width:
        raise ShapeError(
            "affine",
            f"weights {w.data.shape} do not match per-group width {width} of input {x.data.shape}",
        )
    k = w.data.shape[1]
    if b.data.shape != (k,):
        raise ShapeError("affine", f"bias {b.data.shape} does not match output width {k}")
    i, t, _ = x.data.shape
    xr = x.data.reshape(i, t, groups, width)
    out = (xr @ w.data + b.data).reshape(i, t, groups * k)

    def backward(g):
        gr = g.reshape(i, t, groups, k)
        dx = (gr @ w.data.T).reshape(i, t, groups * width)
        dw = xr.reshape(-1, width).T @ gr.reshape(-1, k)
        db = gr.sum(axis=(0, 1, 2))
        return dx, dw, db

    return _emit("affine", out, (x, w, b), backward)


def _same_shape(op: str, x: Tensor, y: Tensor):
    if x.data.shape != y.data.shape:
        raise ShapeError(op, f"operand shapes differ: {x.data.shape} vs {y.data.shape}")


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("add", x, y)
    return _emit("add", x.data + y.data, (x, y), lambda g: (g, g))


def sub(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("sub", x, y)
    return _emit("sub", x.data - y.data, (x, y), lambda g: (g, -g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    _same_shape("mul", x, y)
    xd, yd = x.data, y.data
    return _emit("mul", xd * yd, (x, y), lambda g: (g * yd, g * xd))


def scale(x: Tensor, alpha: float) -> Tensor:
    return _emit("scale", x.data * alpha, (x,), lambda g: (g * alpha,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", out, (x,), backward)


def concat(xs: Sequence[Tensor], groups: int = 1) -> Tensor:
    """Concatenate along the channel axis, per channel group."""
    if not xs:
        raise ShapeError("concat", "no inputs")
    widths = [_split_channels(x, "concat", groups) for x in xs]
    base = xs[0].data.shape[:2]
    for x in xs[1:]:
        if x.data.shape[:2] != base:
            raise ShapeError(
                "concat", f"instance/time dims differ: {x.data.shape} vs {xs[0].data.shape}"
            )
    i, t = base
    parts = [x.data.reshape(i, t, groups, w) for x, w in zip(xs, widths)]
    out = np.concatenate(parts, axis=3).reshape(i, t, groups * sum(widths))

    def backward(g):
        gr = g.reshape(i, t, groups, sum(widths))
        grads, ofs = [], 0
        for w in widths:
            grads.append(gr[:, :, :, ofs:ofs + w].reshape(i, t, groups * w))
            ofs += w
        return tuple(grads)

    return _emit("concat", out, tuple(xs), backward)


def mean_instances(x: Tensor) -> Tensor:
    """Mean over the instance axis, keeping the axis with size 1."""
    if x.data.ndim != 3:
        raise ShapeError("mean_instances", f"expected rank-3 input, got {x.data.shape}")
    i = x.data.shape[0]
    out = x.data.mean(axis=0, keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / i, x.data.shape),)

    return _emit("mean_instances", out, (x,), backward)


def vertex_sum(x: Tensor, adjacency: np.ndarray, n_vertices: int) -> Tensor:
    """Sum features over each vertex's neighbor set (channel groups = vertices)."""
    width = _split_channels(x, "vertex_sum", n_vertices)
    if adjacency.shape != (n_vertices, n_vertices):
        raise ShapeError(
            "vertex_sum",
            f"adjacency {adjacency.shape} does not match {n_vertices} vertex groups",
        )
    i, t, _ = x.data.shape
    xr = x.data.reshape(i, t, n_vertices, width)
    out = np.einsum("itjf,cj->itcf", xr, adjacency).reshape(i, t, n_vertices * width)

    def backward(g):
        gr = g.reshape(i, t, n_vertices, width)
        dx = np.einsum("itcf,cj->itjf", gr, adjacency).reshape(i, t, n_vertices * width)
        return (dx,)

    return _emit("vertex_sum", out, (x,), backward)


def time_slice(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError("time_slice", f"expected rank-3 input, got {x.data.shape}")
    t = x.data.shape[1]
    if not (0 <= start < stop <= t):
        raise ShapeError("time_slice", f"slice [{start}:{stop}] outside time axis of length {t}")
    out = x.data[:, start:stop, :]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, start:stop, :] = g
        return (dx,)

    return _emit("time_slice", out.copy(), (x,), backward)


def time_concat(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("time_concat", "no inputs")
    ref = (xs[0].data.shape[0], xs[0].data.shape[2])
    for x in xs[1:]:
        if (x.data.shape[0], x.data.shape[2]) != ref:
            raise ShapeError(
                "time_concat", f"instance/channel dims differ: {x.data.shape} vs {xs[0].data.shape}"
            )
    steps = [x.data.shape[1] for x in xs]
    out = np.concatenate([x.data for x in xs], axis=1)

    def backward(g):
        grads, ofs = [], 0
        for n in steps:
            grads.append(g[:, ofs:ofs + n, :])
            ofs += n
        return tuple(grads)

    return _emit("time_concat", out, tuple(xs), backward)


def broadcast_to(x: Tensor, instances: int, steps: int) -> Tensor:
    """Broadcast size-1 instance and/or time axes up to the given sizes."""
    if x.data.ndim != 3:
        raise ShapeError("broadcast_to", f"expected rank-3 input, got {x.data.shape}")
    i, t, c = x.data.shape
    if i not in (1, instances) or t not in (1, steps):
        raise ShapeError(
            "broadcast_to", f"cannot broadcast {x.data.shape} to ({instances}, {steps}, {c})"
        )
    out = np.broadcast_to(x.data, (instances, steps, c)).copy()

    def backward(g):
        dg = g
        if i == 1 and instances > 1:
            dg = dg.sum(axis=0, keepdims=True)
        if t == 1 and steps > 1:
            dg = dg.sum(axis=1, keepdims=True)
        return (dg,)

    return _emit("broadcast_to", out, (x,), backward)


def unfold_horizon(x: Tensor, horizon: int) -> Tensor:
    """Rearrange (I, 1, C*H) head output into a forecast of shape (I, H, C)."""
    if x.data.ndim != 3 or x.data.shape[1] != 1:
        raise ShapeError("unfold_horizon", f"expected (I, 1, C*H) input, got {x.data.shape}")
    i, _, ch = x.data.shape
    if horizon < 1 or ch % horizon != 0:
        raise ShapeError("unfold_horizon", f"channel size {ch} not divisible by horizon {horizon}")
    c = ch // horizon
    out = x.data.reshape(i, c, horizon).transpose(0, 2, 1)

    def backward(g):
        return (g.transpose(0, 2, 1).reshape(i, 1, ch),)

    return _emit("unfold_horizon", out.copy(), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _emit("sum_all", out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean())

    def backward(g):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _emit("mean_all", out, (x,), backward)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    diff = sub(pred, Tensor(target))
    return mean_all(mul(diff, diff))

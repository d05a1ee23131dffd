"""Recurrent building blocks: GRU cells/stacks, deep-set and graph-conv blocks.

All blocks run the same weights over every sensor by treating the channel
axis as `n_vertices` groups (see autodiff). Time length is preserved
throughout; only the instance axis is ever aggregated (deep-set mean) and
only the vertex axis is ever mixed (neighbor sums).
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class GruParams:
    """One GRU cell: update gate z, reset gate r, candidate h~.

    Weights act on the concatenation [x_t, h_{t-1}], so each of the three
    matrices is (in_size + hidden, hidden); parameter count is
    3 * (hidden * (in_size + hidden) + hidden).
    """

    def __init__(self, in_size: int, hidden: int, rng: np.random.Generator):
        self.in_size = in_size
        self.hidden = hidden
        fan = in_size + hidden
        self.w_z = Tensor(_uniform_init(rng, (fan, hidden), fan))
        self.b_z = Tensor(_uniform_init(rng, (hidden,), fan))
        self.w_r = Tensor(_uniform_init(rng, (fan, hidden), fan))
        self.b_r = Tensor(_uniform_init(rng, (hidden,), fan))
        self.w_c = Tensor(_uniform_init(rng, (fan, hidden), fan))
        self.b_c = Tensor(_uniform_init(rng, (hidden,), fan))

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for field in ("w_z", "b_z", "w_r", "b_r", "w_c", "b_c"):
            yield f"{prefix}.{field}", getattr(self, field)


def gru_forward(params: GruParams, x: Tensor, groups: int = 1) -> Tensor:
    """Run the GRU over the time axis; hidden state starts at zero.

    x has shape (I, T, groups * in_size); output (I, T, groups * hidden).
    """
    if x.data.ndim != 3:
        raise ShapeError("gru_forward", f"expected rank-3 input, got {x.data.shape}")
    i, t, channels = x.data.shape
    if channels != groups * params.in_size:
        raise ShapeError(
            "gru_forward",
            f"input channels {channels} != groups {groups} * in_size {params.in_size}",
        )
    k = params.hidden
    h = Tensor(np.zeros((i, 1, groups * k)))
    ones = Tensor(np.ones((i, 1, groups * k)))
    outputs = []
    for step in range(t):
        x_t = ad.time_slice(x, step, step + 1)
        xh = ad.concat([x_t, h], groups=groups)
        z = ad.sigmoid(ad.affine(xh, params.w_z, params.b_z, groups=groups))
        r = ad.sigmoid(ad.affine(xh, params.w_r, params.b_r, groups=groups))
        xrh = ad.concat([x_t, ad.mul(r, h)], groups=groups)
        cand = ad.tanh(ad.affine(xrh, params.w_c, params.b_c, groups=groups))
        h = ad.add(ad.mul(ad.sub(ones, z), h), ad.mul(z, cand))
        outputs.append(h)
    return ad.time_concat(outputs)


class GruStack:
    """Sequentially stacked GRU cells."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        # sizes = [in, h1, h2, ...]
        if len(sizes) < 2:
            raise ValueError("GruStack needs at least one cell")
        self.cells = [GruParams(a, b, rng) for a, b in zip(sizes, sizes[1:])]

    @property
    def in_size(self) -> int:
        return self.cells[0].in_size

    @property
    def out_size(self) -> int:
        return self.cells[-1].hidden

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for idx, cell in enumerate(self.cells):
            yield from cell.named_params(f"{prefix}.{idx}")

    def forward(self, x: Tensor, groups: int = 1) -> Tensor:
        for cell in self.cells:
            x = gru_forward(cell, x, groups=groups)
        return x


class DsBlockParams:
    """Deep-set block: inner network f applied per instance and channel,
    mean over instances, outer network g on the aggregate."""

    def __init__(self, in_size: int, hidden: int, rng: np.random.Generator,
                 inner_depth: int = 2, outer_depth: int = 1):
        self.inner = GruStack([in_size] + [hidden] * inner_depth, rng)
        self.outer = GruStack([hidden] * (outer_depth + 1), rng)

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.inner.named_params(f"{prefix}.f")
        yield from self.outer.named_params(f"{prefix}.g")


def ds_block(params: DsBlockParams, x: Tensor, n_vertices: int) -> tuple[Tensor, Tensor]:
    """Permutation-invariant layer over the instance axis.

    Returns (per_instance, aggregated): per_instance are the inner-network
    features before aggregation (equivariant to instance order), aggregated
    is g(mean_i f(x_i)) with instance axis of size 1 (invariant).
    """
    if x.data.shape[0] < 1:
        raise ShapeError("ds_block", "empty support set (zero instances)")
    per_instance = params.inner.forward(x, groups=n_vertices)
    pooled = ad.mean_instances(per_instance)
    aggregated = params.outer.forward(pooled, groups=n_vertices)
    return per_instance, aggregated


class GcnBlockParams:
    """Stack of graph-convolution layers; per layer an inner message network
    f and an outer update network g (both single GRU cells)."""

    def __init__(self, in_size: int, hidden: int, n_layers: int, rng: np.random.Generator):
        self.layers = []
        width = in_size
        for _ in range(n_layers):
            f = GruParams(width, hidden, rng)
            g = GruParams(width + hidden, hidden, rng)
            self.layers.append((f, g))
            width = hidden

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for idx, (f, g) in enumerate(self.layers):
            yield from f.named_params(f"{prefix}.{idx}.f")
            yield from g.named_params(f"{prefix}.{idx}.g")


def gcn_block(params: GcnBlockParams, x: Tensor, adjacency: np.ndarray) -> Tensor:
    """Graph convolution: each vertex keeps its own features and receives the
    sum of its neighbors' messages, concatenated per vertex.

    Stacking L layers propagates information L hops. The adjacency must be
    symmetric with a zero diagonal (the self vertex is not part of its own
    neighborhood; the concatenation already carries it).
    """
    c = adjacency.shape[0]
    if adjacency.shape != (c, c):
        raise ShapeError("gcn_block", f"adjacency must be square, got {adjacency.shape}")
    if not np.array_equal(adjacency, adjacency.T):
        raise ShapeError("gcn_block", "adjacency is not symmetric")
    if x.data.shape[2] % c != 0:
        raise ShapeError(
            "gcn_block",
            f"input channels {x.data.shape[2]} not divisible by {c} graph vertices",
        )
    for f, g in params.layers:
        if x.data.shape[2] != c * f.in_size:
            raise ShapeError(
                "gcn_block",
                f"input channels {x.data.shape[2]} != vertices {c} * feature width {f.in_size}",
            )
        messages = gru_forward(f, x, groups=c)
        neighbor = ad.vertex_sum(messages, adjacency, c)
        x = gru_forward(g, ad.concat([x, neighbor], groups=c), groups=c)
    return x


def gru_block(stack: GruStack, x: Tensor, n_vertices: int) -> Tensor:
    """Stacked GRUs applied per vertex (depth 1 reduces to gru_forward)."""
    return stack.forward(x, groups=n_vertices)

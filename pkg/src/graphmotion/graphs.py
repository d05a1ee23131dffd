"""Sensor graphs: representation, file format, connected induced-subgraph
sampling, and sample statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SKELETON_ASSET = "skeleton_54.txt"


class GraphFormatError(ValueError):
    """Raised for malformed graph files; carries the offending line number."""

    def __init__(self, path, line_no: int, detail: str):
        super().__init__(f"{path}:{line_no}: {detail}")
        self.line_no = line_no


@dataclass(frozen=True)
class MotionGraph:
    """Vertex set of sensors plus a symmetric 0/1 adjacency matrix.

    vertex_ids are the sensor ids in the host graph (and the channel indices
    into full-width recordings); a sampled subgraph keeps the original ids.
    """

    vertex_ids: tuple[int, ...]
    labels: tuple[str, ...]
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        n = len(self.vertex_ids)
        if len(self.labels) != n:
            raise ValueError(f"{len(self.labels)} labels for {n} vertices")
        if a.shape != (n, n):
            raise ValueError(f"adjacency {a.shape} does not match {n} vertices")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency has nonzero diagonal entries")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", a)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def neighbors(self, index: int) -> list[int]:
        return [int(j) for j in np.nonzero(self.adjacency[index])[0]]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def is_connected(self) -> bool:
        n = self.n_vertices
        if n == 0:
            return False
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for u in np.nonzero(self.adjacency[v])[0]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(int(u))
        return bool(seen.all())

    def induced_subgraph(self, positions: list[int]) -> "MotionGraph":
        """Subgraph on the given vertex positions with exactly the edges of
        this graph between them; original ids and labels are kept."""
        pos = sorted(positions)
        sub = self.adjacency[np.ix_(pos, pos)]
        return MotionGraph(
            vertex_ids=tuple(self.vertex_ids[p] for p in pos),
            labels=tuple(self.labels[p] for p in pos),
            adjacency=sub,
        )

    def permuted(self, perm: list[int]) -> "MotionGraph":
        """Relabel vertices: new position i holds old vertex perm[i]."""
        p = list(perm)
        return MotionGraph(
            vertex_ids=tuple(self.vertex_ids[q] for q in p),
            labels=tuple(self.labels[q] for q in p),
            adjacency=self.adjacency[np.ix_(p, p)],
        )


def dump_graph_file(graph: MotionGraph, path) -> None:
    """One vertex per line: id, label, neighbor ids (host-graph ids)."""
    lines = ["# vertex_id label neighbor_ids..."]
    for i in range(graph.n_vertices):
        nbrs = " ".join(str(graph.vertex_ids[j]) for j in graph.neighbors(i))
        lines.append(f"{graph.vertex_ids[i]} {graph.labels[i]} {nbrs}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n")


def load_graph_file(path) -> MotionGraph:
    ids: list[int] = []
    labels: list[str] = []
    nbr_ids: list[list[int]] = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise GraphFormatError(path, line_no, "expected at least 'id label'")
        try:
            vid = int(parts[0])
            nbrs = [int(p) for p in parts[2:]]
        except ValueError as exc:
            raise GraphFormatError(path, line_no, f"bad integer field: {exc}") from exc
        if vid in ids:
            raise GraphFormatError(path, line_no, f"duplicate vertex id {vid}")
        ids.append(vid)
        labels.append(parts[1])
        nbr_ids.append(nbrs)
    if not ids:
        raise GraphFormatError(path, 0, "graph file contains no vertices")
    index = {vid: i for i, vid in enumerate(ids)}
    n = len(ids)
    adjacency = np.zeros((n, n))
    for i, nbrs in enumerate(nbr_ids):
        for vid in nbrs:
            if vid not in index:
                raise GraphFormatError(path, 0, f"edge references unknown vertex id {vid}")
            adjacency[i, index[vid]] = 1.0
            adjacency[index[vid], i] = 1.0
    return MotionGraph(tuple(ids), tuple(labels), adjacency)


def full_skeleton() -> MotionGraph:
    """The packaged 54-sensor skeleton graph (three angle channels for each
    of the 18 moving joints of a standard mocap skeleton)."""
    ref = resources.files("graphmotion") / "assets" / SKELETON_ASSET
    with resources.as_file(ref) as path:
        return load_graph_file(path)


def make_grid_graph(rows: int, cols: int) -> MotionGraph:
    """4-neighbor lattice, handy for synthetic experiments."""
    n = rows * cols
    adjacency = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                adjacency[v, v + 1] = adjacency[v + 1, v] = 1.0
            if r + 1 < rows:
                adjacency[v, v + cols] = adjacency[v + cols, v] = 1.0
    labels = tuple(f"g{r}_{c}" for r in range(rows) for c in range(cols))
    return MotionGraph(tuple(range(n)), labels, adjacency)


def make_random_tree(n: int, rng: np.random.Generator) -> MotionGraph:
    """Uniform random recursive tree on n vertices."""
    adjacency = np.zeros((n, n))
    for v in range(1, n):
        parent = int(rng.integers(0, v))
        adjacency[v, parent] = adjacency[parent, v] = 1.0
    return MotionGraph(tuple(range(n)), tuple(f"t{v}" for v in range(n)), adjacency)


# ---------------------------------------------------------------------------
# induced-subgraph sampling

# defaults calibrated on the packaged skeleton: subgraphs average ~26.8
# vertices and >=95% of 10k draws are distinct (see tests/test_graphs.py)
DEFAULT_INCLUDE_PROB = 0.62
DEFAULT_MIN_VERTICES = 3


@dataclass(frozen=True)
class SamplerConfig:
    include_prob: float = DEFAULT_INCLUDE_PROB
    min_vertices: int = DEFAULT_MIN_VERTICES
    max_vertices: int | None = None

    def __post_init__(self):
        if not (0.0 < self.include_prob <= 1.0):
            raise ValueError(f"include_prob must be in (0, 1], got {self.include_prob}")
        if self.min_vertices < 1:
            raise ValueError("min_vertices must be >= 1")
        if self.max_vertices is not None and self.max_vertices < self.min_vertices:
            raise ValueError("max_vertices must be >= min_vertices")


def sample_induced_subgraph(full: MotionGraph, cfg: SamplerConfig,
                            rng: np.random.Generator) -> MotionGraph:
    """Connected induced subgraph grown from a random root.

    Starting from a random root vertex, each not-yet-decided neighbor of the
    frontier is included independently with probability include_prob, then
    the newly added vertices are expanded in turn until the frontier empties
    or the max cap binds (expansion truncated in ascending vertex order).
    Draws below the min cap are resampled from scratch.
    """
    n = full.n_vertices
    if cfg.min_vertices > n:
        raise ValueError(f"min_vertices {cfg.min_vertices} exceeds graph size {n}")
    max_v = cfg.max_vertices if cfg.max_vertices is not None else n
    while True:
        root = int(rng.integers(0, n))
        selected = {root}
        rejected: set[int] = set()
        frontier = [root]
        while frontier and len(selected) < max_v:
            v = frontier.pop(0)
            for u in full.neighbors(v):
                if u in selected or u in rejected:
                    continue
                if len(selected) >= max_v:
                    break
                if rng.random() < cfg.include_prob:
                    selected.add(u)
                    frontier.append(u)
                else:
                    rejected.add(u)
        if len(selected) >= cfg.min_vertices:
            return full.induced_subgraph(sorted(selected))


@dataclass
class SampleStats:
    n_samples: int
    vertex_mean: float
    vertex_std: float
    degree_mean: float
    degree_std: float
    unique_fraction: float
    vertex_counts: list[int] = field(repr=False, default_factory=list)


def subgraph_stats(samples: list[MotionGraph]) -> SampleStats:
    """Vertex-count and pooled per-vertex degree statistics (unbiased std),
    plus the fraction of distinct vertex sets among the samples."""
    if len(samples) < 2:
        raise ValueError("need at least 2 samples for statistics")
    counts = np.array([g.n_vertices for g in samples], dtype=float)
    degrees = np.concatenate([g.degrees() for g in samples])
    seen = {tuple(sorted(g.vertex_ids)) for g in samples}
    return SampleStats(
        n_samples=len(samples),
        vertex_mean=float(counts.mean()),
        vertex_std=float(counts.std(ddof=1)),
        degree_mean=float(degrees.mean()),
        degree_std=float(degrees.std(ddof=1)),
        unique_fraction=len(seen) / len(samples),
        vertex_counts=[int(c) for c in counts],
    )


def degree_summary(graph: MotionGraph) -> tuple[float, float]:
    """Mean and spread of the degree sequence of one graph (population std:
    the vertices of the graph are the whole population)."""
    deg = graph.degrees()
    return float(deg.mean()), float(deg.std(ddof=0))

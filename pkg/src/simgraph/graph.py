"""Directed similarity graphs: construction, extraction, pruning, statistics.

Adjacency is stored flat: ``neighbors[offsets[v]:offsets[v+1]]`` are the
out-neighbors of vertex ``v``, and an edge's id is its position in the flat
array. That gives every edge a stable integer identity that probability and
frozen-flag arrays can index.
"""

from __future__ import annotations

import heapq
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dist import squared_distances
from .errors import GraphFormatError, GraphValidationError


@dataclass
class Graph:
    n_vertices: int
    offsets: np.ndarray  # int64, shape (n_vertices + 1,)
    neighbors: np.ndarray  # int32, shape (n_edges,)
    start_vertex: int
    edge_probs: np.ndarray | None = None  # float32, shape (n_edges,)
    edge_frozen: np.ndarray | None = None  # bool, shape (n_edges,)

    @property
    def n_edges(self) -> int:
        return int(self.offsets[-1])

    @property
    def has_edge_state(self) -> bool:
        return self.edge_probs is not None

    def out_neighbors(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v] : self.offsets[v + 1]]

    def edge_ids(self, v: int) -> np.ndarray:
        return np.arange(self.offsets[v], self.offsets[v + 1], dtype=np.int64)

    def edge_sources(self) -> np.ndarray:
        """Source vertex of every edge, aligned with the flat neighbor array."""
        return np.repeat(
            np.arange(self.n_vertices, dtype=np.int32), np.diff(self.offsets)
        )

    def outdegrees(self) -> np.ndarray:
        return np.diff(self.offsets).astype(np.int64)

    def mean_outdegree(self) -> float:
        return self.n_edges / self.n_vertices if self.n_vertices else 0.0


@dataclass
class GraphStats:
    """Structural and search-visitation statistics for one graph."""

    outdegree_histogram: dict[int, int] | None = None
    visit_counts: np.ndarray | None = None
    nn_counts: np.ndarray | None = None


def validate(g: Graph) -> None:
    """Check the structural invariants; raise GraphValidationError on violation."""
    n = g.n_vertices
    if n < 1:
        raise GraphValidationError(f"graph needs at least one vertex, got {n}")
    if g.offsets.shape != (n + 1,) or g.offsets[0] != 0:
        raise GraphValidationError("offsets must have shape (n+1,) and start at 0")
    if np.any(np.diff(g.offsets) < 0):
        raise GraphValidationError("offsets must be non-decreasing")
    if len(g.neighbors) != g.n_edges:
        raise GraphValidationError(
            f"neighbor array length {len(g.neighbors)} != offsets[-1] {g.n_edges}"
        )
    if not 0 <= g.start_vertex < n:
        raise GraphValidationError(f"start_vertex {g.start_vertex} outside [0, {n})")
    if g.n_edges:
        if g.neighbors.min() < 0 or g.neighbors.max() >= n:
            raise GraphValidationError("neighbor id outside [0, n_vertices)")
        src = g.edge_sources()
        if np.any(src == g.neighbors):
            bad = int(np.argmax(src == g.neighbors))
            raise GraphValidationError(f"self-loop at vertex {int(src[bad])}")
    for v in range(n):
        adj = g.out_neighbors(v)
        if len(np.unique(adj)) != len(adj):
            raise GraphValidationError(f"duplicate edges in adjacency of vertex {v}")
    if g.edge_probs is not None:
        if len(g.edge_probs) != g.n_edges:
            raise GraphValidationError("edge_probs length mismatch")
        if g.n_edges and (g.edge_probs.min() < 0.0 or g.edge_probs.max() > 1.0):
            raise GraphValidationError("edge probability outside [0, 1]")
    if g.edge_frozen is not None and len(g.edge_frozen) != g.n_edges:
        raise GraphValidationError("edge_frozen length mismatch")


def from_adjacency(adjacency: list[list[int]] | list[np.ndarray], start_vertex: int) -> Graph:
    """Build a Graph from per-vertex neighbor lists."""
    n = len(adjacency)
    counts = np.array([len(a) for a in adjacency], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    if offsets[-1]:
        neighbors = np.concatenate([np.asarray(a, dtype=np.int32) for a in adjacency if len(a)])
    else:
        neighbors = np.zeros(0, dtype=np.int32)
    return Graph(n_vertices=n, offsets=offsets, neighbors=neighbors, start_vertex=start_vertex)


def build_complete(n: int, start: int = 0) -> Graph:
    """Complete directed graph on n vertices: every ordered pair (i, j), i != j."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cols = np.broadcast_to(np.arange(n, dtype=np.int32), (n, n))
    mask = ~np.eye(n, dtype=bool)
    neighbors = cols[mask].astype(np.int32)
    offsets = np.arange(0, n * (n - 1) + 1, n - 1, dtype=np.int64) if n > 1 else np.zeros(2, np.int64)
    return Graph(n_vertices=n, offsets=offsets, neighbors=neighbors, start_vertex=start)


def with_edge_state(
    g: Graph, probs: np.ndarray | None = None, frozen: np.ndarray | None = None
) -> Graph:
    """Copy of ``g`` carrying per-edge probability and frozen arrays."""
    if probs is None:
        probs = np.ones(g.n_edges, dtype=np.float32)
    probs = np.asarray(probs, dtype=np.float32)
    if frozen is None:
        frozen = np.zeros(g.n_edges, dtype=bool)
    frozen = np.asarray(frozen, dtype=bool)
    if len(probs) != g.n_edges or len(frozen) != g.n_edges:
        raise ValueError("edge state arrays must match edge count")
    return replace(g, edge_probs=probs, edge_frozen=frozen)


def _subgraph(g: Graph, edge_mask: np.ndarray, keep_state: bool) -> Graph:
    """Subgraph keeping exactly the edges where ``edge_mask`` is True."""
    src = g.edge_sources()
    counts = np.bincount(src[edge_mask], minlength=g.n_vertices).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    neighbors = g.neighbors[edge_mask]
    probs = frozen = None
    if keep_state and g.edge_probs is not None:
        probs = g.edge_probs[edge_mask]
        frozen = g.edge_frozen[edge_mask] if g.edge_frozen is not None else None
    return Graph(
        n_vertices=g.n_vertices,
        offsets=offsets,
        neighbors=neighbors.copy(),
        start_vertex=g.start_vertex,
        edge_probs=probs,
        edge_frozen=frozen,
    )


def extract_deterministic(g: Graph) -> Graph:
    """Threshold learned edge probabilities at 0.5: keep p >= 0.5, drop p < 0.5."""
    if g.edge_probs is None:
        raise GraphValidationError("extract_deterministic requires edge_probs")
    return _subgraph(g, g.edge_probs >= np.float32(0.5), keep_state=False)


def prune_unvisited(g: Graph, traces) -> Graph:
    """Keep exactly the edges through which some trace evaluated a new vertex.

    Edges the searches never used affect neither recall nor the number of
    distance computations; dropping them only cleans the degree distribution.
    """
    used = np.zeros(g.n_edges, dtype=bool)
    for trace in traces:
        for step in trace.steps:
            if step.vertex >= g.n_vertices:
                raise GraphValidationError(
                    f"trace references vertex {step.vertex} outside graph"
                )
            eids = step.edge_ids[step.evaluated]
            if len(eids) and (eids.max() >= g.n_edges or eids.min() < 0):
                raise GraphValidationError("trace references edge id outside graph")
            used[eids] = True
    return _subgraph(g, used, keep_state=False)


def degree_histogram(g: Graph) -> dict[int, int]:
    """Outdegree histogram as {degree: vertex count}."""
    degrees, counts = np.unique(np.diff(g.offsets), return_counts=True)
    return {int(d): int(c) for d, c in zip(degrees, counts)}


def _construction_search(
    vectors: np.ndarray,
    adjacency: list[list[int]],
    query: np.ndarray,
    entry: int,
    ef: int,
) -> list[tuple[float, int]]:
    """Beam search over a partially built adjacency list.

    Returns all evaluated (distance, id) pairs sorted ascending; used only
    during incremental insertion, where the graph is still a list of lists.
    """
    d0 = float(squared_distances(vectors[entry][None, :], query)[0])
    visited = {entry}
    candidates = [(d0, entry)]
    evaluated = [(d0, entry)]
    worst_heap = [(-d0, -entry)]  # bounded to ef: root is the worst kept
    while candidates:
        d, v = heapq.heappop(candidates)
        if len(worst_heap) == ef and d > -worst_heap[0][0]:
            break
        fresh = [u for u in adjacency[v] if u not in visited]
        if not fresh:
            continue
        visited.update(fresh)
        ds = squared_distances(vectors[fresh], query)
        for du, u in zip(ds.tolist(), fresh):
            heapq.heappush(candidates, (du, u))
            evaluated.append((du, u))
            if len(worst_heap) < ef:
                heapq.heappush(worst_heap, (-du, -u))
            elif (du, u) < (-worst_heap[0][0], -worst_heap[0][1]):
                heapq.heapreplace(worst_heap, (-du, -u))
    evaluated.sort()
    return evaluated


def build_nsw(
    base: np.ndarray, M: int, ef_construction: int, seed: int = 0
) -> Graph:
    """Navigable small-world graph by consecutive insertion (flat, single layer).

    Each new point beam-searches the current graph from the first-inserted
    vertex with beam width ``ef_construction`` and links bidirectionally to
    the M nearest points found; outdegrees are capped at 2M by keeping the
    nearest. ``seed`` is accepted for interface stability; the build is
    deterministic (insertion follows row order).
    """
    del seed
    base = np.asarray(base)
    if base.ndim != 2 or len(base) == 0:
        raise ValueError("base must be a non-empty 2-D matrix")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if ef_construction < M:
        raise ValueError(f"ef_construction {ef_construction} must be >= M {M}")
    n = len(base)
    cap = 2 * M
    adjacency: list[list[int]] = [[] for _ in range(n)]

    def trim(v: int) -> None:
        if len(adjacency[v]) <= cap:
            return
        ds = squared_distances(base[adjacency[v]], base[v])
        order = sorted(zip(ds.tolist(), adjacency[v]))[:cap]
        adjacency[v] = [u for _, u in order]

    for i in range(1, n):
        found = _construction_search(base, adjacency, base[i], entry=0, ef=ef_construction)
        targets = [u for _, u in found[:M]]
        adjacency[i] = list(targets)
        for j in targets:
            adjacency[j].append(i)
            trim(j)
    return from_adjacency(adjacency, start_vertex=0)


def reachable_from_start(g: Graph) -> np.ndarray:
    """Bool mask of vertices reachable from start_vertex via directed edges."""
    seen = np.zeros(g.n_vertices, dtype=bool)
    seen[g.start_vertex] = True
    frontier = [g.start_vertex]
    while frontier:
        nxt = []
        for v in frontier:
            for u in g.out_neighbors(v):
                if not seen[u]:
                    seen[u] = True
                    nxt.append(int(u))
        frontier = nxt
    return seen


_MAGIC = b"SGRF"
_VERSION = 1


def serialize(g: Graph) -> bytes:
    """Versioned little-endian binary encoding, bit-exact for probabilities."""
    buf = io.BytesIO()
    flags = 1 if g.edge_probs is not None else 0
    buf.write(_MAGIC)
    header = np.array([_VERSION, flags], dtype="<u4")
    buf.write(header.tobytes())
    sizes = np.array([g.n_vertices, g.n_edges, g.start_vertex], dtype="<u8")
    buf.write(sizes.tobytes())
    buf.write(g.offsets.astype("<i8").tobytes())
    buf.write(g.neighbors.astype("<i4").tobytes())
    if g.edge_probs is not None:
        buf.write(g.edge_probs.astype("<f4").tobytes())
        frozen = (
            g.edge_frozen if g.edge_frozen is not None else np.zeros(g.n_edges, dtype=bool)
        )
        buf.write(frozen.astype("u1").tobytes())
    return buf.getvalue()


def deserialize(blob: bytes) -> Graph:
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise GraphFormatError("not a graph file (bad magic)")
    if len(blob) < 4 + 8 + 24:
        raise GraphFormatError("truncated graph header")
    version, flags = np.frombuffer(blob, dtype="<u4", count=2, offset=4)
    if version != _VERSION:
        raise GraphFormatError(f"unsupported graph file version {int(version)}")
    n, n_edges, start = (
        int(x) for x in np.frombuffer(blob, dtype="<u8", count=3, offset=12)
    )
    pos = 36
    need = (n + 1) * 8 + n_edges * 4 + (int(flags) & 1) * n_edges * 5
    if len(blob) - pos < need:
        raise GraphFormatError(
            f"truncated graph body: {len(blob) - pos} bytes, need {need}"
        )
    offsets = np.frombuffer(blob, dtype="<i8", count=n + 1, offset=pos).copy()
    pos += (n + 1) * 8
    neighbors = np.frombuffer(blob, dtype="<i4", count=n_edges, offset=pos).copy()
    pos += n_edges * 4
    probs = frozen = None
    if flags & 1:
        probs = np.frombuffer(blob, dtype="<f4", count=n_edges, offset=pos).copy()
        pos += n_edges * 4
        frozen = (
            np.frombuffer(blob, dtype="u1", count=n_edges, offset=pos).astype(bool).copy()
        )
    return Graph(
        n_vertices=n,
        offsets=offsets,
        neighbors=neighbors,
        start_vertex=start,
        edge_probs=probs,
        edge_frozen=frozen,
    )


def save_graph(g: Graph, path: str | Path) -> None:
    Path(path).write_bytes(serialize(g))


def load_graph(path: str | Path) -> Graph:
    return deserialize(Path(path).read_bytes())

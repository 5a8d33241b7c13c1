"""Beam search over a similarity graph with a pluggable edge agent.

The agent observes the search state at every expansion and decides which
out-edges the search may follow. An all-keep agent reproduces plain graph
search; a stochastic agent turns each query into a training session.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .dist import squared_distances
from .graph import Graph, GraphStats


@dataclass
class SearchState:
    """Environment state at one expansion: (query, current vertex, adjacency,
    visited set, candidate heap)."""

    query: np.ndarray
    vertex: int
    neighbor_ids: np.ndarray
    edge_ids: np.ndarray
    visited: np.ndarray  # bool mask over vertices
    candidates: list  # heap of (distance, vertex) pairs, read-only for agents


@dataclass
class AgentDecision:
    """Which edges to keep at one expansion, plus sampling info for training.

    ``keep`` is aligned with the state's adjacency; ``stochastic`` marks the
    entries that were true Bernoulli draws (frozen edges are excluded from
    the gradient and carry log-probability zero).
    """

    keep: np.ndarray
    probs: np.ndarray | None = None
    log_probs: np.ndarray | None = None
    stochastic: np.ndarray | None = None


class EdgeAgent(Protocol):
    def decide(self, state: SearchState, rng: np.random.Generator) -> AgentDecision: ...


class KeepAllAgent:
    """Keeps every edge; beam search with this agent is plain graph search."""

    def decide(self, state: SearchState, rng: np.random.Generator) -> AgentDecision:
        return AgentDecision(keep=np.ones(len(state.neighbor_ids), dtype=bool))


@dataclass
class TraceStep:
    """One expansion: the vertex, its edges, and what the agent did with them.

    ``evaluated`` marks kept edges whose target was new, i.e. the edges that
    actually cost a distance computation.
    """

    vertex: int
    edge_ids: np.ndarray
    keep: np.ndarray
    evaluated: np.ndarray
    probs: np.ndarray | None = None
    log_probs: np.ndarray | None = None
    stochastic: np.ndarray | None = None


@dataclass
class SearchTrace:
    """Everything one search session did, in order."""

    visited: list[int]
    steps: list[TraceStep]
    dcs: int
    hops: int
    topk_ids: np.ndarray
    topk_dists: np.ndarray

    def log_prob_total(self) -> float:
        total = 0.0
        for step in self.steps:
            if step.log_probs is not None:
                total += float(step.log_probs.sum())
        return total


_KEEP_ALL = KeepAllAgent()


def beam_search(
    g: Graph,
    vectors: np.ndarray,
    agent: EdgeAgent | None,
    query: np.ndarray,
    k: int = 1,
    ef: int = 1,
    seed=0,
) -> SearchTrace:
    """Graph beam search from ``g.start_vertex`` with the agent in the loop.

    Keeps a candidate min-heap and a bounded result structure of size
    max(ef, k). Each iteration pops the nearest unexpanded candidate; if it
    is farther than the worst element of a full result structure the search
    stops. Otherwise the agent picks which out-edges to keep and every kept,
    unvisited neighbor is distance-evaluated (one DCS each) and inserted.

    Deterministic given (graph, query, seed): heap ties break on vertex id
    and the per-session generator is seeded from ``seed``. ``hops`` counts
    expansions that evaluated at least one new neighbor. The start vertex
    costs 1 DCS.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if ef < k:
        raise ValueError(f"ef {ef} must be >= k {k}")
    if agent is None:
        agent = _KEEP_ALL
    rng = np.random.default_rng(seed)
    q = np.asarray(query, dtype=np.float64)
    start = g.start_vertex
    result_size = max(ef, k)

    visited = np.zeros(g.n_vertices, dtype=bool)
    visited[start] = True
    d0 = float(squared_distances(vectors[start][None, :], q)[0])
    dcs = 1
    hops = 0
    candidates: list[tuple[float, int]] = [(d0, start)]
    # Result structure: min-heap on (-distance, -id) so the root is the worst.
    results: list[tuple[float, int]] = [(-d0, -start)]
    visit_order = [start]
    steps: list[TraceStep] = []

    while candidates:
        d, v = heapq.heappop(candidates)
        if len(results) == result_size and d > -results[0][0]:
            break
        adj = g.out_neighbors(v)
        eids = np.arange(g.offsets[v], g.offsets[v + 1], dtype=np.int64)
        state = SearchState(
            query=q,
            vertex=v,
            neighbor_ids=adj,
            edge_ids=eids,
            visited=visited,
            candidates=candidates,
        )
        decision = agent.decide(state, rng)
        keep = decision.keep
        evaluated = keep & ~visited[adj]
        targets = adj[evaluated]
        if len(targets):
            visited[targets] = True
            ds = squared_distances(vectors[targets], q)
            dcs += len(targets)
            visit_order.extend(int(t) for t in targets)
            for du, u in zip(ds.tolist(), targets.tolist()):
                heapq.heappush(candidates, (du, u))
                if len(results) < result_size:
                    heapq.heappush(results, (-du, -u))
                elif (du, u) < (-results[0][0], -results[0][1]):
                    heapq.heapreplace(results, (-du, -u))
            hops += 1
        steps.append(
            TraceStep(
                vertex=v,
                edge_ids=eids,
                keep=keep,
                evaluated=evaluated,
                probs=decision.probs,
                log_probs=decision.log_probs,
                stochastic=decision.stochastic,
            )
        )

    top = sorted((-nd, -ni) for nd, ni in results)[:k]  # ascending (distance, id)
    return SearchTrace(
        visited=visit_order,
        steps=steps,
        dcs=dcs,
        hops=hops,
        topk_ids=np.array([v for _, v in top], dtype=np.int64),
        topk_dists=np.array([d for d, _ in top], dtype=np.float64),
    )


def greedy_search(
    g: Graph, vectors: np.ndarray, agent: EdgeAgent | None, query: np.ndarray, seed=0
) -> SearchTrace:
    """Greedy descent: beam search with ef=1, k=1.

    Moves to the best kept neighbor while one improves on the best vertex
    seen so far; stops otherwise.
    """
    return beam_search(g, vectors, agent, query, k=1, ef=1, seed=seed)


@dataclass
class EvalResult:
    recall_at_1: float
    mean_dcs: float
    mean_hops: float
    found: np.ndarray
    dcs: np.ndarray
    hops: np.ndarray
    stats: GraphStats
    traces: list[SearchTrace] | None = None


def evaluate(
    g: Graph,
    vectors: np.ndarray,
    agent: EdgeAgent | None,
    queries: np.ndarray,
    gt: np.ndarray,
    k: int = 1,
    ef: int = 1,
    seed=0,
    keep_traces: bool = False,
    threads: int = 1,
) -> EvalResult:
    """Run one search per query and aggregate recall, DCS, hops, visit counts.

    Per-query generators are derived from (seed, query index), so results do
    not depend on execution order or thread count.
    """
    queries = np.asarray(queries)
    if len(queries) == 0:
        raise ValueError("query set must be non-empty")
    if len(gt) != len(queries):
        raise ValueError(f"gt length {len(gt)} != query count {len(queries)}")
    nq = len(queries)

    def run(i: int) -> SearchTrace:
        return beam_search(g, vectors, agent, queries[i], k=k, ef=ef, seed=[_as_int(seed), i])

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(run, range(nq)))
    else:
        traces = [run(i) for i in range(nq)]

    found = np.array([t.topk_ids[0] == gt[i] for i, t in enumerate(traces)], dtype=bool)
    dcs = np.array([t.dcs for t in traces], dtype=np.int64)
    hops = np.array([t.hops for t in traces], dtype=np.int64)
    visit_counts = np.zeros(g.n_vertices, dtype=np.int64)
    nn_counts = np.zeros(g.n_vertices, dtype=np.int64)
    for i, t in enumerate(traces):
        visit_counts[t.visited] += 1
        nn_counts[gt[i]] += 1
    return EvalResult(
        recall_at_1=float(found.mean()),
        mean_dcs=float(dcs.mean()),
        mean_hops=float(hops.mean()),
        found=found,
        dcs=dcs,
        hops=hops,
        stats=GraphStats(visit_counts=visit_counts, nn_counts=nn_counts),
        traces=traces if keep_traces else None,
    )


def _as_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    raise TypeError(f"evaluate seed must be an integer, got {type(seed)!r}")

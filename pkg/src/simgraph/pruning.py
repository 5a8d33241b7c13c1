"""Magnitude-based edge pruning: smoothed visitation weights plus a tuned
threshold, for head-to-head comparison with the learned refiner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, _subgraph
from .search import evaluate
from .trainer import RewardConfig, session_rewards

DEFAULT_SMOOTHING = 0.1
N_THRESHOLD_QUANTILES = 64


@dataclass
class EdgeUsage:
    """Visitation counts from running search over a query set.

    ``edge_visits[e]`` counts distance evaluations caused by edge e;
    ``vertex_visits[v]`` counts expansions of vertex v.
    """

    edge_visits: np.ndarray
    vertex_visits: np.ndarray


def collect_usage(
    g: Graph,
    vectors: np.ndarray,
    queries: np.ndarray,
    k: int = 1,
    ef: int = 1,
    seed: int = 0,
    threads: int = 1,
) -> EdgeUsage:
    """Run plain (all-keep) search per query and accumulate visit counts."""
    edge_visits = np.zeros(g.n_edges, dtype=np.int64)
    vertex_visits = np.zeros(g.n_vertices, dtype=np.int64)
    if len(queries) == 0:
        return EdgeUsage(edge_visits, vertex_visits)
    gt = np.zeros(len(queries), dtype=np.int64)  # recall not needed here
    res = evaluate(
        g, vectors, None, queries, gt, k=k, ef=ef, seed=seed, keep_traces=True, threads=threads
    )
    for trace in res.traces:
        for step in trace.steps:
            vertex_visits[step.vertex] += 1
            edge_visits[step.edge_ids[step.evaluated]] += 1
    return EdgeUsage(edge_visits, vertex_visits)


def edge_weights(usage: EdgeUsage, g: Graph, smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """Per-edge weight (edge visits + s) / (source visits + s * outdegree).

    The smoothing term keeps weights strictly positive so rarely visited
    vertices are not pruned radically.
    """
    src = g.edge_sources()
    outdeg = g.outdegrees()[src]
    return (usage.edge_visits + smoothing) / (usage.vertex_visits[src] + smoothing * outdeg)


def prune_by_threshold(g: Graph, weights: np.ndarray, threshold: float) -> Graph:
    """Subgraph keeping edges whose weight is >= threshold."""
    return _subgraph(g, np.asarray(weights) >= threshold, keep_state=False)


@dataclass
class PruneOutcome:
    graph: Graph
    threshold: float
    candidate_thresholds: np.ndarray
    candidate_rewards: np.ndarray


def tune_threshold_and_prune(
    g: Graph,
    vectors: np.ndarray,
    usage: EdgeUsage,
    smoothing: float,
    val_queries: np.ndarray,
    gt: np.ndarray,
    cfg: RewardConfig,
    k: int = 1,
    ef: int = 1,
    threads: int = 1,
) -> PruneOutcome:
    """Sweep weight quantiles, keep the threshold maximizing validation mean
    reward, and return that pruned graph (always a subgraph of the input).

    Threshold 0 is always a candidate, so the winner is never worse on the
    validation objective than the unpruned graph.
    """
    weights = edge_weights(usage, g, smoothing)
    if g.n_edges:
        qs = np.quantile(weights, np.linspace(0.0, 1.0, N_THRESHOLD_QUANTILES))
        thresholds = np.unique(np.concatenate([[0.0], qs]))
    else:
        thresholds = np.array([0.0])
    rewards = np.empty(len(thresholds))
    best_i = 0
    for i, t in enumerate(thresholds):
        pruned = prune_by_threshold(g, weights, float(t))
        res = evaluate(pruned, vectors, None, val_queries, gt, k=k, ef=ef, threads=threads)
        rewards[i] = float(session_rewards(res, cfg).mean())
        if rewards[i] > rewards[best_i]:
            best_i = i
    return PruneOutcome(
        graph=prune_by_threshold(g, weights, float(thresholds[best_i])),
        threshold=float(thresholds[best_i]),
        candidate_thresholds=thresholds,
        candidate_rewards=rewards,
    )

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy end-to-end criteria (toy refinement, NSW refinement across seeds)
run real training; expect the module to take tens of minutes. Run with
``pytest tests/test_acceptance.py -v -s`` to watch the per-criterion lines.
"""

import filecmp
import math

import numpy as np
import pytest
import yaml

from conftest import random_graph, random_vectors
from reference_search import reference_beam_search
from simgraph.cli import main as cli_main
from simgraph.data import brute_force_gt, synth_clusters, medoid
from simgraph.graph import (
    build_complete,
    build_nsw,
    extract_deterministic,
    prune_unvisited,
    validate,
    with_edge_state,
)
from simgraph.policy import grad, objective, init_params
from simgraph.pruning import collect_usage, edge_weights, tune_threshold_and_prune
from simgraph.search import SearchTrace, beam_search, evaluate
from simgraph.trainer import (
    RewardConfig,
    TrainSchedule,
    compute_reward,
    session_rewards,
    train,
)

# Chosen so the whole refinement pipeline finishes well inside the stated
# budgets on a small machine; see README for the experiment layout.
TOY = dict(
    n_clusters=10, per_cluster=10, dim=64, spread=0.15, seed=7,
    n_train=1500, n_val=300, n_test=300,
)
TOY_SCHEDULE = dict(
    epochs=2400, lr=1e-3, optimizer="adam", batch_size=512, entropy_coef=0.02,
    baseline_decay=0.9, eval_every=20, hidden=128, k=1, ef_search=1,
)
TOY_DCS_MAX = 150

NSW2K = dict(
    n_clusters=40, per_cluster=50, dim=16, spread=0.35,
    n_train=5000, n_val=1000, n_test=1000,
)
NSW2K_M = 8
NSW2K_EFC = 64
NSW2K_EF = 8
NSW2K_DCS_MAX = 300
NSW2K_SCHEDULE = dict(
    epochs=150, lr=2e-3, optimizer="adam", batch_size=512, entropy_coef=0.01,
    baseline_decay=0.9, eval_every=10, hidden=64, k=1, ef_search=NSW2K_EF,
)
NSW2K_SEEDS = (0, 1, 2, 3, 4)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


# --------------------------------------------------------------------------
# Criterion 1: toy reproduction on a 100-point complete graph, greedy search.
# --------------------------------------------------------------------------


def test_toy_complete_graph_refinement():
    ds = synth_clusters(**TOY)
    g0 = build_complete(len(ds.base), start=medoid(ds.base))
    result = train(g0, ds, RewardConfig(TOY_DCS_MAX), TrainSchedule(seed=0, **TOY_SCHEDULE))
    test = evaluate(
        result.graph, ds.base, None, ds.test_q, ds.gt["test"], k=1, ef=1, keep_traces=True
    )
    pruned = prune_unvisited(result.graph, test.traces)
    after = evaluate(pruned, ds.base, None, ds.test_q, ds.gt["test"], k=1, ef=1)
    outdeg = pruned.mean_outdegree()
    detail = (
        f"recall={after.recall_at_1:.3f} (>=0.90) mean_dcs={after.mean_dcs:.1f} (<=35) "
        f"mean_hops={after.mean_hops:.2f} (<=5) outdegree={outdeg:.2f} (<=6)"
    )
    ok = (
        after.recall_at_1 >= 0.90
        and after.mean_dcs <= 35.0
        and after.mean_hops <= 5.0
        and outdeg <= 6.0
    )
    report("toy-reproduction", ok, detail)
    # pruning unused edges must not change the metrics of the traced queries
    assert after.recall_at_1 == test.recall_at_1
    assert after.mean_dcs == test.mean_dcs
    assert ok, detail


# --------------------------------------------------------------------------
# Criteria 2 and 3: NSW refinement across seeds, vs initializer and vs
# magnitude pruning. The five runs are shared by both tests.
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def nsw2k_runs():
    runs = []
    for seed in NSW2K_SEEDS:
        ds = synth_clusters(seed=seed, **NSW2K)
        g0 = build_nsw(ds.base, M=NSW2K_M, ef_construction=NSW2K_EFC)
        cfg = RewardConfig(NSW2K_DCS_MAX)
        result = train(g0, ds, cfg, TrainSchedule(seed=seed, **NSW2K_SCHEDULE))

        init_val = evaluate(g0, ds.base, None, ds.val_q, ds.gt["val"], k=1, ef=NSW2K_EF)
        refined_val = evaluate(
            result.graph, ds.base, None, ds.val_q, ds.gt["val"], k=1, ef=NSW2K_EF
        )
        init_val_reward = float(session_rewards(init_val, cfg).mean())
        refined_val_reward = float(session_rewards(refined_val, cfg).mean())

        refined_test = evaluate(
            result.graph, ds.base, None, ds.test_q, ds.gt["test"], k=1, ef=NSW2K_EF
        )
        curve = []
        for ef in (1, 2, 3, 4, 6, 8, 12, 16, 24, 32):
            r = evaluate(g0, ds.base, None, ds.test_q, ds.gt["test"], k=1, ef=ef)
            curve.append((r.mean_dcs, r.recall_at_1))
        curve.sort()

        usage = collect_usage(g0, ds.base, ds.train_q, k=1, ef=NSW2K_EF)
        mp = tune_threshold_and_prune(
            g0, ds.base, usage, 0.1, ds.val_q, ds.gt["val"], cfg, k=1, ef=NSW2K_EF
        )
        mp_val = evaluate(mp.graph, ds.base, None, ds.val_q, ds.gt["val"], k=1, ef=NSW2K_EF)
        mp_val_reward = float(session_rewards(mp_val, cfg).mean())

        runs.append(
            dict(
                seed=seed,
                init_val_reward=init_val_reward,
                refined_val_reward=refined_val_reward,
                mp_val_reward=mp_val_reward,
                refined_test=refined_test,
                init_curve=curve,
            )
        )
    return runs


def test_nsw2k_improvement_over_initializer(nsw2k_runs):
    wins = 0
    recall_ok = True
    details = []
    for run in nsw2k_runs:
        if run["refined_val_reward"] > run["init_val_reward"]:
            wins += 1
        dcs_curve = [c[0] for c in run["init_curve"]]
        rec_curve = [c[1] for c in run["init_curve"]]
        matched = float(np.interp(run["refined_test"].mean_dcs, dcs_curve, rec_curve))
        gap = run["refined_test"].recall_at_1 - matched
        if gap < -0.005:
            recall_ok = False
        details.append(
            f"seed {run['seed']}: val {run['init_val_reward']:.1f}->"
            f"{run['refined_val_reward']:.1f}, recall gap at matched DCS {gap:+.4f}"
        )
    ok = wins >= 4 and recall_ok
    report(
        "improvement-over-initializer",
        ok,
        f"val-reward wins {wins}/5 (need >=4); " + "; ".join(details),
    )
    assert ok


def test_nsw2k_rl_beats_magnitude_pruning(nsw2k_runs):
    wins = sum(1 for r in nsw2k_runs if r["refined_val_reward"] >= r["mp_val_reward"])
    detail = "; ".join(
        f"seed {r['seed']}: rl {r['refined_val_reward']:.1f} vs mp {r['mp_val_reward']:.1f}"
        for r in nsw2k_runs
    )
    ok = wins >= 4
    report("rl-vs-magnitude-pruning", ok, f"wins {wins}/5 (need >=4); {detail}")
    assert ok


# --------------------------------------------------------------------------
# Criterion 4: all-keep beam search is bit-identical to the agent-free
# reference across 10^4 randomized instances.
# --------------------------------------------------------------------------


def test_search_equivalence_10k():
    rng = np.random.default_rng(20240817)
    mismatches = 0
    for _ in range(10_000):
        g = random_graph(rng, n_max=12, p_edge=0.35)
        vectors = random_vectors(rng, g.n_vertices, 3)
        q = random_vectors(rng, 1, 3)[0]
        k = int(rng.integers(1, 3))
        ef = int(rng.integers(k, 6))
        tr = beam_search(g, vectors, None, q, k=k, ef=ef)
        visited, dcs, hops, ids, dists = reference_beam_search(
            g.offsets, g.neighbors, g.start_vertex, vectors, q, k, ef
        )
        same = (
            tr.visited == visited
            and tr.dcs == dcs
            and tr.hops == hops
            and tr.topk_ids.tolist() == ids
            and tr.topk_dists.tolist() == dists
        )
        mismatches += 0 if same else 1
    report("search-equivalence", mismatches == 0, f"{mismatches} mismatches in 10000 runs")
    assert mismatches == 0


# --------------------------------------------------------------------------
# Criterion 5: oracle suite.
# --------------------------------------------------------------------------


def test_oracle_suite():
    rng = np.random.default_rng(7)
    base = random_vectors(rng, 100, 8)
    queries = random_vectors(rng, 200, 8)
    got = brute_force_gt(base, queries)
    expected = []
    for q in queries.astype(np.float64):
        best, best_d = -1, math.inf
        for i, b in enumerate(base.astype(np.float64)):
            d = float(((q - b) ** 2).sum())
            if d < best_d:
                best, best_d = i, d
        expected.append(best)
    gt_exact = got.tolist() == expected

    n = 64
    vectors = random_vectors(rng, n, 6)
    g = build_complete(n)
    queries = random_vectors(rng, 1000, 6)
    gt = brute_force_gt(vectors, queries)
    res = evaluate(g, vectors, None, queries, gt, k=1, ef=n)
    full_recall = res.recall_at_1 == 1.0

    ok = gt_exact and full_recall
    report(
        "oracle-suite",
        ok,
        f"gt matches oracle on 200 queries: {gt_exact}; "
        f"complete-graph ef=N recall over 1000 queries: {res.recall_at_1:.4f}",
    )
    assert ok


# --------------------------------------------------------------------------
# Criterion 6: gradient vs central finite differences, 100 random instances.
# --------------------------------------------------------------------------


def test_gradient_correctness_100():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        d_in = int(rng.integers(2, 9))
        hidden = int(rng.integers(2, 17))
        n = int(rng.integers(1, 5))
        params = init_params(d_in, hidden=hidden, seed=int(rng.integers(1 << 30)))
        for _, t in params.tensors():
            t += rng.normal(0.0, 0.3, size=t.shape)
        feats = rng.normal(size=(n, d_in))
        actions = (rng.random(n) < 0.5).astype(float)
        advantages = rng.normal(size=n) * 5
        coef = float(rng.choice([0.0, 0.01, 0.1]))
        analytic, _ = grad(params, feats, actions, advantages, coef)
        step = 1e-4
        for name, tensor in params.tensors():
            fd = np.zeros_like(tensor)
            flat, fd_flat = tensor.ravel(), fd.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = objective(params, feats, actions, advantages, coef)
                flat[i] = orig - step
                down = objective(params, feats, actions, advantages, coef)
                flat[i] = orig
                fd_flat[i] = (up - down) / (2 * step)
            a = dict(analytic.tensors())[name]
            denom = max(np.linalg.norm(a), np.linalg.norm(fd), 1e-12)
            worst = max(worst, float(np.linalg.norm(a - fd) / denom))
    ok = worst < 1e-4
    report("gradient-correctness", ok, f"worst relative error {worst:.2e} (< 1e-4)")
    assert ok


# --------------------------------------------------------------------------
# Criterion 7: reward unit suite.
# --------------------------------------------------------------------------


def _trace(top_id: int, dcs: int) -> SearchTrace:
    return SearchTrace(
        visited=[], steps=[], dcs=dcs, hops=0,
        topk_ids=np.array([top_id]), topk_dists=np.array([0.0]),
    )


def test_reward_unit_suite():
    cfg = RewardConfig(150)
    rows = (
        compute_reward(_trace(2, 10), 1, cfg) == 0.0,
        compute_reward(_trace(1, 128), 1, cfg) == 22.0,
        compute_reward(_trace(1, 200), 1, cfg) == 1.0,
    )
    rng = np.random.default_rng(3)
    bounds_ok = True
    for _ in range(100_000):
        dcs_max = int(rng.integers(2, 400))
        dcs = int(rng.integers(1, 900))
        found = bool(rng.random() < 0.5)
        r = compute_reward(_trace(1 if found else 0, dcs), 1, RewardConfig(dcs_max))
        if not (r == 0.0 or 1.0 <= r <= dcs_max - 1):
            bounds_ok = False
            break
        if found and r == 0.0:
            bounds_ok = False
            break
    ok = all(rows) and bounds_ok
    report(
        "reward-unit-suite",
        ok,
        f"exact rows {tuple(int(r) for r in rows)}; bounds over 1e5 fuzzed traces: {bounds_ok}",
    )
    assert ok


# --------------------------------------------------------------------------
# Criterion 8: subgraph invariants plus the pruning-weight arithmetic row.
# --------------------------------------------------------------------------


def _edge_set(g):
    return set(zip(g.edge_sources().tolist(), g.neighbors.tolist()))


def test_subgraph_invariants_fuzzed():
    rng = np.random.default_rng(5)
    cfg = RewardConfig(60)
    violations = 0
    for _ in range(1000):
        g = random_graph(rng, n_max=10, p_edge=0.5)
        vectors = random_vectors(rng, g.n_vertices, 3)
        parent = _edge_set(g)

        probs = rng.random(g.n_edges).astype(np.float32)
        det = extract_deterministic(with_edge_state(g, probs=probs))
        if not _edge_set(det) <= parent:
            violations += 1

        queries = random_vectors(rng, 3, 3)
        traces = [beam_search(g, vectors, None, q, k=1, ef=2) for q in queries]
        pruned = prune_unvisited(g, traces)
        if not _edge_set(pruned) <= parent:
            violations += 1

        val_q = random_vectors(rng, 2, 3)
        gt = brute_force_gt(vectors, val_q)
        usage = collect_usage(g, vectors, queries, k=1, ef=2)
        outcome = tune_threshold_and_prune(g, vectors, usage, 0.1, val_q, gt, cfg, k=1, ef=2)
        if not _edge_set(outcome.graph) <= parent:
            violations += 1

    from simgraph.graph import from_adjacency
    from simgraph.pruning import EdgeUsage

    star = from_adjacency([list(range(1, 11)), *[[] for _ in range(10)]], start_vertex=0)
    usage = EdgeUsage(
        edge_visits=np.array([9] + [0] * 9, dtype=np.int64),
        vertex_visits=np.array([99] + [0] * 10, dtype=np.int64),
    )
    w = float(edge_weights(usage, star, smoothing=0.1)[0])
    weight_ok = w == (9 + 0.1) / (99 + 0.1 * 10) and abs(w - 0.091) < 1e-12

    ok = violations == 0 and weight_ok
    report(
        "subgraph-invariants",
        ok,
        f"{violations} subset violations in 1000 graphs x 3 ops; weight row 0.091: {weight_ok}",
    )
    assert ok


# --------------------------------------------------------------------------
# Criterion 9: cmd_train is byte-deterministic under a fixed config and seed.
# --------------------------------------------------------------------------


def test_cmd_train_byte_determinism(tmp_path):
    cfg = {
        "name": "det",
        "seed": 21,
        "out_dir": None,
        "dataset": {
            "kind": "synthetic", "n_clusters": 4, "per_cluster": 6, "dim": 8,
            "spread": 0.3, "n_train": 60, "n_val": 20, "n_test": 20,
        },
        "graph": {"kind": "nsw", "m": 3, "ef_construction": 8, "start": "first"},
        "search": {"k": 1, "ef_search": 2},
        "reward": {"dcs_max": 80},
        "trainer": {
            "epochs": 8, "batch_size": 32, "hidden": 16, "eval_every": 2, "lr": 2e-3,
        },
    }
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cfg["out_dir"] = str(out)
        cfg_path = tmp_path / f"{run}.yaml"
        cfg_path.write_text(yaml.safe_dump(cfg))
        assert cli_main(["train", "--config", str(cfg_path)]) == 0
        outputs.append(out)
    files = ("training_log.csv", "refined.bin", "initial.bin", "policy.ckpt")
    same = {
        name: filecmp.cmp(outputs[0] / name, outputs[1] / name, shallow=False)
        for name in files
    }
    ok = all(same.values())
    report("determinism", ok, f"byte-identical: {same}")
    assert ok

"""Experiment driver CLI.

Verbs: prepare | build | train | prune | sweep | hubs | validate.
Exit codes: 0 ok, 1 usage error, 2 data error, 3 divergence abort.
Report-producing commands write CSVs and render the matching figure next to
each one.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import data as D
from . import graph as G
from . import pruning as MP
from . import reports as R
from . import trainer as T
from .config import ExperimentConfig, load_config, preset, presets, save_config
from .errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    GraphFormatError,
    GraphValidationError,
)
from .search import evaluate


def _load_cfg(config_path: str | None, preset_name: str | None, seed, out, threads) -> ExperimentConfig:
    if (config_path is None) == (preset_name is None):
        raise click.UsageError("provide exactly one of --config or --preset")
    cfg = load_config(config_path) if config_path else preset(preset_name)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out_dir = out
    if threads is not None:
        cfg.threads = threads
    cfg.validate()
    return cfg


def _dataset(cfg: ExperimentConfig) -> D.Dataset:
    if cfg.dataset.kind == "synthetic":
        ds = D.synth_clusters(
            cfg.dataset.n_clusters,
            cfg.dataset.per_cluster,
            cfg.dataset.dim,
            cfg.dataset.spread,
            cfg.seed,
            n_train=cfg.dataset.n_train,
            n_val=cfg.dataset.n_val,
            n_test=cfg.dataset.n_test,
        )
    else:
        ds = D.load_dataset(cfg.dataset.manifest)
        missing = [s for s in D.SPLITS if s not in ds.gt]
        for split in missing:
            ds.gt[split] = D.brute_force_gt(ds.base, ds.queries(split))
    ds.check()
    return ds


def _build_graph(cfg: ExperimentConfig, ds: D.Dataset) -> G.Graph:
    if cfg.graph.kind == "complete":
        start = D.medoid(ds.base) if cfg.graph.start == "medoid" else 0
        return G.build_complete(len(ds.base), start=start)
    if cfg.graph.kind == "nsw":
        g = G.build_nsw(ds.base, cfg.graph.m, cfg.graph.ef_construction, seed=cfg.seed)
        if cfg.graph.start == "medoid":
            g.start_vertex = D.medoid(ds.base)
        return g
    return G.load_graph(cfg.graph.path)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
def cli() -> None:
    """Similarity-graph construction and RL-based refinement."""


_config_opts = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file."),
    click.option("--preset", "preset_name", default=None, help="Named built-in config."),
    click.option("--seed", type=int, default=None, help="Override config seed."),
    click.option("--out", default=None, help="Override config output directory."),
    click.option("--threads", type=int, default=None, help="Worker threads for rollouts/eval."),
]


def _with_config_opts(fn):
    for opt in reversed(_config_opts):
        fn = opt(fn)
    return fn


@cli.command("presets")
def cmd_presets() -> None:
    """List the built-in preset names."""
    for name in sorted(presets()):
        click.echo(name)


@cli.command("prepare")
@_with_config_opts
def cmd_prepare(config_path, preset_name, seed, out, threads) -> None:
    """Materialize dataset files, ground truth, and a manifest."""
    cfg = _load_cfg(config_path, preset_name, seed, out, threads)
    ds = _dataset(cfg)
    if cfg.dataset.drop_duplicate_queries:
        for split in D.SPLITS:
            q = ds.queries(split)
            kept, mask = D.drop_base_duplicates(ds.base, q)
            if split == "train":
                ds.train_q = kept
            elif split == "val":
                ds.val_q = kept
            else:
                ds.test_q = kept
            if split in ds.gt:
                ds.gt[split] = ds.gt[split][mask]
    for split in D.SPLITS:
        if split not in ds.gt:
            ds.gt[split] = D.brute_force_gt(ds.base, ds.queries(split))
    out_dir = _out_dir(cfg) / "dataset"
    manifest = D.save_dataset(ds, out_dir)
    save_config(cfg, _out_dir(cfg) / "config.yaml")
    click.echo(f"dataset written: {manifest}")
    click.echo(
        f"base={len(ds.base)} dim={ds.dim} "
        f"train={len(ds.train_q)} val={len(ds.val_q)} test={len(ds.test_q)}"
    )


@cli.command("build")
@_with_config_opts
def cmd_build(config_path, preset_name, seed, out, threads) -> None:
    """Build the initial graph and report its degree structure."""
    cfg = _load_cfg(config_path, preset_name, seed, out, threads)
    ds = _dataset(cfg)
    g = _build_graph(cfg, ds)
    G.validate(g)
    out_dir = _out_dir(cfg)
    G.save_graph(g, out_dir / "graph.bin")
    R.write_degree_histogram(out_dir / "degree_hist.csv", g)
    R.plot_degree_histogram(out_dir / "degree_hist.png", g, title=f"{cfg.name}: outdegrees")
    click.echo(
        f"graph written: {out_dir / 'graph.bin'} "
        f"(n={g.n_vertices}, edges={g.n_edges}, mean outdegree={g.mean_outdegree():.2f})"
    )


@cli.command("train")
@_with_config_opts
@click.option("--graph", "graph_path", type=click.Path(), default=None,
              help="Refine this graph file instead of building one.")
def cmd_train(config_path, preset_name, seed, out, threads, graph_path) -> None:
    """Refine the initial graph with the policy-gradient trainer."""
    cfg = _load_cfg(config_path, preset_name, seed, out, threads)
    ds = _dataset(cfg)
    g0 = G.load_graph(graph_path) if graph_path else _build_graph(cfg, ds)
    G.validate(g0)
    tr = cfg.trainer
    schedule = T.TrainSchedule(
        epochs=tr.epochs,
        lr=tr.lr,
        lr_final=tr.lr_final,
        optimizer=tr.optimizer,
        batch_size=tr.batch_size,
        entropy_coef=tr.entropy_coef,
        entropy_final=tr.entropy_final,
        baseline_decay=tr.baseline_decay,
        eval_every=tr.eval_every,
        hidden=tr.hidden,
        k=cfg.search.k,
        ef_search=cfg.search.ef_search,
        seed=cfg.seed,
        freeze=T.FreezePolicy(
            enabled=tr.freeze_enabled,
            lo=tr.freeze_lo,
            hi=tr.freeze_hi,
            patience=tr.freeze_patience,
        ),
        threads=cfg.threads,
    )
    result = T.train(g0, ds, T.RewardConfig(cfg.reward.dcs_max), schedule)
    out_dir = _out_dir(cfg)
    G.save_graph(g0, out_dir / "initial.bin")
    G.save_graph(result.graph, out_dir / "refined.bin")
    result.log.write_csv(out_dir / "training_log.csv")
    if result.log.rows:
        R.plot_training(out_dir / "training_curves.png", result.log, title=cfg.name)
    from .policy import save_checkpoint

    save_checkpoint(result.params, out_dir / "policy.ckpt")
    summary = {
        "best_epoch": result.best_epoch,
        "best_val_reward": result.best_val_reward,
        "initial_val_reward": result.initial_val_reward,
        "initial_edges": g0.n_edges,
        "refined_edges": result.graph.n_edges,
    }
    (out_dir / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    click.echo(
        f"refined graph written: {out_dir / 'refined.bin'} "
        f"(edges {g0.n_edges} -> {result.graph.n_edges}, "
        f"val reward {result.initial_val_reward:.2f} -> {result.best_val_reward:.2f})"
    )


@cli.command("prune")
@_with_config_opts
@click.option("--graph", "graph_path", type=click.Path(), default=None,
              help="Prune this graph file instead of building one.")
@click.option("--smoothing", type=float, default=MP.DEFAULT_SMOOTHING, show_default=True)
def cmd_prune(config_path, preset_name, seed, out, threads, graph_path, smoothing) -> None:
    """Magnitude-based pruning with a threshold tuned on validation reward."""
    cfg = _load_cfg(config_path, preset_name, seed, out, threads)
    ds = _dataset(cfg)
    g = G.load_graph(graph_path) if graph_path else _build_graph(cfg, ds)
    G.validate(g)
    usage = MP.collect_usage(
        g, ds.base, ds.train_q, k=cfg.search.k, ef=cfg.search.ef_search,
        seed=cfg.seed, threads=cfg.threads,
    )
    outcome = MP.tune_threshold_and_prune(
        g, ds.base, usage, smoothing, ds.val_q, ds.gt["val"],
        T.RewardConfig(cfg.reward.dcs_max), k=cfg.search.k, ef=cfg.search.ef_search,
        threads=cfg.threads,
    )
    out_dir = _out_dir(cfg)
    G.save_graph(outcome.graph, out_dir / "pruned.bin")
    R.write_edge_weights(out_dir / "edge_weights.csv", g, MP.edge_weights(usage, g, smoothing))
    best_reward = float(outcome.candidate_rewards.max())
    click.echo(
        f"pruned graph written: {out_dir / 'pruned.bin'} "
        f"(threshold={outcome.threshold:.6f}, edges {g.n_edges} -> {outcome.graph.n_edges}, "
        f"val reward {best_reward:.2f})"
    )


def _parse_efs(efs: str) -> list[int]:
    try:
        values = [int(x) for x in efs.split(",") if x.strip()]
    except ValueError as exc:
        raise click.UsageError(f"--efs must be a comma-separated int list: {exc}")
    if not values:
        raise click.UsageError("--efs is empty")
    return values


@cli.command("sweep")
@_with_config_opts
@click.option("--graph", "graph_paths", type=click.Path(), multiple=True, required=True,
              help="Graph file(s) to evaluate; repeat for overlayed curves.")
@click.option("--efs", default="1,2,4,8,16,32", show_default=True,
              help="Comma-separated beam widths.")
@click.option("--split", default="test", type=click.Choice(["train", "val", "test"]),
              show_default=True)
def cmd_sweep(config_path, preset_name, seed, out, threads, graph_paths, efs, split) -> None:
    """Recall-vs-DCS curve per graph over a list of beam widths."""
    cfg = _load_cfg(config_path, preset_name, seed, out, threads)
    ds = _dataset(cfg)
    queries, gt = ds.queries(split), ds.gt[split]
    ef_values = _parse_efs(efs)
    rows = []
    for path in graph_paths:
        g = G.load_graph(path)
        G.validate(g)
        label = Path(path).stem
        for ef in ef_values:
            res = evaluate(
                g, ds.base, None, queries, gt,
                k=min(cfg.search.k, ef), ef=ef, threads=cfg.threads,
            )
            rows.append(
                {"graph": label, "ef": ef, "mean_dcs": res.mean_dcs,
                 "recall_at_1": res.recall_at_1}
            )
    rows.sort(key=lambda r: (r["graph"], r["mean_dcs"]))
    out_dir = _out_dir(cfg)
    R.write_sweep(out_dir / "sweep.csv", rows)
    R.plot_sweep(out_dir / "sweep.png", rows, title=f"{cfg.name}: Recall@1 vs DCS ({split})")
    click.echo(f"sweep written: {out_dir / 'sweep.csv'} ({len(rows)} rows)")


@cli.command("hubs")
@_with_config_opts
@click.option("--graph", "graph_path", type=click.Path(), required=True)
@click.option("--top-n", type=int, default=40, show_default=True)
def cmd_hubs(config_path, preset_name, seed, out, threads, graph_path, top_n) -> None:
    """Visit-frequency report over training queries, start vertex first."""
    cfg = _load_cfg(config_path, preset_name, seed, out, threads)
    ds = _dataset(cfg)
    g = G.load_graph(graph_path)
    G.validate(g)
    res = evaluate(
        g, ds.base, None, ds.train_q, ds.gt["train"],
        k=cfg.search.k, ef=cfg.search.ef_search, threads=cfg.threads,
    )
    rows = R.hub_rows(g, res.stats.visit_counts, res.stats.nn_counts, top_n)
    out_dir = _out_dir(cfg)
    R.write_hubs(out_dir / "hubs.csv", rows)
    R.plot_hubs(out_dir / "hubs.png", rows, title=f"{cfg.name}: visit frequencies")
    click.echo(f"hub report written: {out_dir / 'hubs.csv'} ({len(rows)} rows)")


@cli.command("validate")
@click.option("--graph", "graph_path", type=click.Path(), required=True)
def cmd_validate(graph_path) -> None:
    """Check a graph file against the structural invariants."""
    g = G.load_graph(graph_path)
    G.validate(g)
    click.echo(
        f"ok: n={g.n_vertices} edges={g.n_edges} start={g.start_vertex} "
        f"mean outdegree={g.mean_outdegree():.2f} "
        f"edge_state={'yes' if g.has_edge_state else 'no'}"
    )


def main(argv: list[str] | None = None) -> int:
    """Entry point mapping failures onto the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except DivergenceError as exc:
        click.echo(f"divergence abort: {exc}", err=True)
        return 3
    except (
        DataFormatError,
        GraphFormatError,
        GraphValidationError,
        ConfigError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configuration: YAML round-trip, validation, and named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | files
    # synthetic
    n_clusters: int = 10
    per_cluster: int = 10
    dim: int = 64
    spread: float = 0.2
    n_train: int = 1000
    n_val: int = 200
    n_test: int = 200
    # files
    manifest: str | None = None
    drop_duplicate_queries: bool = False


@dataclass
class GraphConfig:
    kind: str = "complete"  # complete | nsw | file
    m: int = 8
    ef_construction: int = 64
    start: str = "medoid"  # medoid | first
    path: str | None = None  # for kind == file
    # recorded for externally built graphs; not used by our builders
    nsg_r: int | None = None
    nsg_k: int | None = None


@dataclass
class SearchConfig:
    k: int = 1
    ef_search: int = 1


@dataclass
class RewardSection:
    dcs_max: int = 150


@dataclass
class TrainerSection:
    lr: float = 3e-3
    lr_final: float | None = None
    optimizer: str = "adam"
    epochs: int = 200
    batch_size: int = 512
    entropy_coef: float = 0.01
    entropy_final: float | None = None
    baseline_decay: float = 0.9
    eval_every: int = 10
    hidden: int = 128
    freeze_enabled: bool = True
    freeze_lo: float = 0.01
    freeze_hi: float = 0.99
    freeze_patience: int = 5


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    out_dir: str = "runs/experiment"
    threads: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    reward: RewardSection = field(default_factory=RewardSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)

    def validate(self) -> None:
        ds, gr, se, rw, tr = self.dataset, self.graph, self.search, self.reward, self.trainer
        if ds.kind not in ("synthetic", "files"):
            raise ConfigError(f"dataset.kind must be synthetic or files, got {ds.kind!r}")
        if ds.kind == "files" and not ds.manifest:
            raise ConfigError("dataset.kind=files requires dataset.manifest")
        if ds.kind == "synthetic":
            for name in ("n_clusters", "per_cluster", "dim", "n_train", "n_val", "n_test"):
                if getattr(ds, name) <= 0:
                    raise ConfigError(f"dataset.{name} must be positive")
        if gr.kind not in ("complete", "nsw", "file"):
            raise ConfigError(f"graph.kind must be complete, nsw, or file, got {gr.kind!r}")
        if gr.kind == "file" and not gr.path:
            raise ConfigError("graph.kind=file requires graph.path")
        if gr.kind == "nsw":
            if gr.m < 1:
                raise ConfigError("graph.m must be >= 1")
            if gr.ef_construction < gr.m:
                raise ConfigError(
                    f"graph.ef_construction {gr.ef_construction} must be >= graph.m {gr.m}"
                )
        if gr.start not in ("medoid", "first"):
            raise ConfigError("graph.start must be medoid or first")
        if se.k < 1:
            raise ConfigError("search.k must be >= 1")
        if se.ef_search < se.k:
            raise ConfigError(f"search.ef_search {se.ef_search} must be >= search.k {se.k}")
        if rw.dcs_max < 1:
            raise ConfigError("reward.dcs_max must be >= 1")
        if tr.epochs < 0:
            raise ConfigError("trainer.epochs must be >= 0")
        if tr.optimizer not in ("adam", "sgd"):
            raise ConfigError("trainer.optimizer must be adam or sgd")
        if not 0.0 <= tr.baseline_decay < 1.0:
            raise ConfigError("trainer.baseline_decay must be in [0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "dataset": DatasetConfig,
    "graph": GraphConfig,
    "search": SearchConfig,
    "reward": RewardSection,
    "trainer": TrainerSection,
}


def _build_section(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    data = dict(data)
    kwargs = {}
    for key, cls in _SECTIONS.items():
        section = data.pop(key, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key!r} must be a mapping")
        kwargs[key] = _build_section(cls, section, key)
    top_known = {"name", "seed", "out_dir", "threads"}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    cfg = ExperimentConfig(**data, **kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def _preset(name: str, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(name=name, out_dir=f"runs/{name}")
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if key:
            setattr(getattr(cfg, section), key, value)
        else:
            setattr(cfg, section, value)
    return cfg


def presets() -> dict[str, ExperimentConfig]:
    """Named configurations: the desk-scale experiments plus the benchmark
    hyperparameter tables (recorded for runs against real dataset files)."""
    table = {
        "toy-complete": _preset(
            "toy-complete",
            **{
                "dataset.n_clusters": 10,
                "dataset.per_cluster": 10,
                "dataset.dim": 64,
                "dataset.spread": 0.2,
                "dataset.n_train": 1500,
                "dataset.n_val": 300,
                "dataset.n_test": 300,
                "graph.kind": "complete",
                "search.k": 1,
                "search.ef_search": 1,
                "reward.dcs_max": 150,
                "trainer.epochs": 200,
                "trainer.batch_size": 512,
                "trainer.lr": 3e-3,
                "trainer.entropy_coef": 0.01,
                "trainer.hidden": 128,
            },
        ),
        "nsw-2k": _preset(
            "nsw-2k",
            **{
                "dataset.n_clusters": 40,
                "dataset.per_cluster": 50,
                "dataset.dim": 16,
                "dataset.spread": 0.35,
                "dataset.n_train": 5000,
                "dataset.n_val": 1000,
                "dataset.n_test": 1000,
                "graph.kind": "nsw",
                "graph.m": 8,
                "graph.ef_construction": 64,
                "graph.start": "first",
                "search.k": 1,
                "search.ef_search": 8,
                "reward.dcs_max": 300,
                "trainer.epochs": 150,
                "trainer.batch_size": 512,
                "trainer.lr": 3e-3,
                "trainer.entropy_coef": 0.01,
                "trainer.hidden": 64,
            },
        ),
        "sift100k-nsw": _preset(
            "sift100k-nsw",
            **{
                "dataset.kind": "files",
                "dataset.manifest": "data/sift100k/manifest.json",
                "graph.kind": "nsw",
                "graph.m": 12,
                "graph.ef_construction": 300,
                "graph.start": "first",
                "search.ef_search": 10,
                "reward.dcs_max": 1200,
                "trainer.entropy_coef": 0.01,
            },
        ),
        "sift100k-nsg": _preset(
            "sift100k-nsg",
            **{
                "dataset.kind": "files",
                "dataset.manifest": "data/sift100k/manifest.json",
                "graph.kind": "file",
                "graph.path": "data/sift100k/nsg.bin",
                "graph.nsg_r": 24,
                "graph.nsg_k": 200,
                "search.ef_search": 10,
                "reward.dcs_max": 1500,
                "trainer.entropy_coef": 0.001,
            },
        ),
        "sift1m-nsw": _preset(
            "sift1m-nsw",
            **{
                "dataset.kind": "files",
                "dataset.manifest": "data/sift1m/manifest.json",
                "graph.kind": "nsw",
                "graph.m": 14,
                "graph.ef_construction": 500,
                "graph.start": "first",
                "search.ef_search": 12,
                "reward.dcs_max": 1500,
                "trainer.entropy_coef": 0.01,
            },
        ),
        "deep100k-nsw": _preset(
            "deep100k-nsw",
            **{
                "dataset.kind": "files",
                "dataset.manifest": "data/deep100k/manifest.json",
                "graph.kind": "nsw",
                "graph.m": 12,
                "graph.ef_construction": 300,
                "graph.start": "first",
                "search.ef_search": 10,
                "reward.dcs_max": 1000,
                "trainer.entropy_coef": 0.01,
            },
        ),
        "deep100k-nsg": _preset(
            "deep100k-nsg",
            **{
                "dataset.kind": "files",
                "dataset.manifest": "data/deep100k/manifest.json",
                "graph.kind": "file",
                "graph.path": "data/deep100k/nsg.bin",
                "graph.nsg_r": 24,
                "graph.nsg_k": 200,
                "search.ef_search": 10,
                "reward.dcs_max": 1500,
                "trainer.entropy_coef": 0.001,
            },
        ),
        "deep1m-nsw": _preset(
            "deep1m-nsw",
            **{
                "dataset.kind": "files",
                "dataset.manifest": "data/deep1m/manifest.json",
                "graph.kind": "nsw",
                "graph.m": 14,
                "graph.ef_construction": 500,
                "graph.start": "first",
                "search.ef_search": 12,
                "reward.dcs_max": 1500,
                "trainer.entropy_coef": 0.01,
            },
        ),
        "glove1m-nsw": _preset(
            "glove1m-nsw",
            **{
                "dataset.kind": "files",
                "dataset.manifest": "data/glove1m/manifest.json",
                "graph.kind": "nsw",
                "graph.m": 20,
                "graph.ef_construction": 2000,
                "graph.start": "first",
                "search.ef_search": 5,
                "reward.dcs_max": 1000,
                "trainer.entropy_coef": 0.01,
            },
        ),
    }
    return table


def preset(name: str) -> ExperimentConfig:
    table = presets()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(table)}")
    return table[name]

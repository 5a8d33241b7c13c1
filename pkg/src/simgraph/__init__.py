"""simgraph: similarity-graph construction and RL-based edge refinement for
nearest neighbor search."""

from .data import (
    Dataset,
    brute_force_gt,
    load_fvecs,
    load_ivecs,
    medoid,
    synth_clusters,
    write_fvecs,
    write_ivecs,
)
from .graph import (
    Graph,
    GraphStats,
    build_complete,
    build_nsw,
    degree_histogram,
    deserialize,
    extract_deterministic,
    load_graph,
    prune_unvisited,
    save_graph,
    serialize,
    validate,
)
from .policy import EdgeDecision, PolicyAgent, PolicyParams, edge_features, forward, init_params
from .pruning import EdgeUsage, collect_usage, edge_weights, tune_threshold_and_prune
from .search import (
    AgentDecision,
    EdgeAgent,
    EvalResult,
    KeepAllAgent,
    SearchState,
    SearchTrace,
    beam_search,
    evaluate,
    greedy_search,
)
from .trainer import (
    BaselineTable,
    RewardConfig,
    Session,
    TrainResult,
    TrainSchedule,
    TrainingLog,
    compute_reward,
    freeze_overconfident,
    rollout_batch,
    train,
    update,
)

__version__ = "0.1.0"

"""Policy-gradient training loop: sessions, rewards, baselines, edge freezing.

One session is one query's search through the graph with the stochastic
policy in the loop. The session reward is the found-indicator times the
remaining distance-computation budget, so the trainer learns to keep recall
while cutting evaluations. Updates are REINFORCE with a per-query moving
average baseline and an entropy bonus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import policy as P
from .errors import DivergenceError
from .graph import Graph, extract_deterministic, with_edge_state
from .search import EvalResult, SearchTrace, beam_search, evaluate


@dataclass
class RewardConfig:
    """Distance-computation budget for the session reward."""

    dcs_max: int

    def __post_init__(self) -> None:
        if self.dcs_max < 1:
            raise ValueError(f"dcs_max must be >= 1, got {self.dcs_max}")


def compute_reward(trace: SearchTrace, gt_id: int, cfg: RewardConfig) -> float:
    """Found-indicator times max(dcs_max - DCS, 1)."""
    if len(trace.topk_ids) == 0 or int(trace.topk_ids[0]) != int(gt_id):
        return 0.0
    return float(max(cfg.dcs_max - trace.dcs, 1))


def session_rewards(result: EvalResult, cfg: RewardConfig) -> np.ndarray:
    """Per-query rewards recomputed from an evaluation's found/DCS arrays."""
    return np.where(result.found, np.maximum(cfg.dcs_max - result.dcs, 1), 0.0)


@dataclass
class Session:
    """One query's trajectory: trace, reward, and the stochastic decisions.

    ``edge_ids``/``src_ids``/``dst_ids``/``actions`` cover only stochastic
    decisions; frozen edges contribute no gradient. ``vectors`` is a shared
    reference used to rebuild features at update time.
    """

    query_index: int
    trace: SearchTrace
    reward: float
    edge_ids: np.ndarray
    src_ids: np.ndarray
    dst_ids: np.ndarray
    actions: np.ndarray
    vectors: np.ndarray = field(repr=False, default=None)

    @property
    def n_decisions(self) -> int:
        return len(self.actions)


@dataclass
class BaselineTable:
    """Per-training-query moving average of observed rewards."""

    values: np.ndarray
    decay: float = 0.9

    @classmethod
    def zeros(cls, n_queries: int, decay: float = 0.9) -> "BaselineTable":
        return cls(values=np.zeros(n_queries, dtype=np.float64), decay=decay)

    def advantage(self, query_index: int, reward: float) -> float:
        return reward - float(self.values[query_index])

    def update(self, query_index: int, reward: float) -> None:
        self.values[query_index] = (
            self.decay * self.values[query_index] + (1.0 - self.decay) * reward
        )


def _flatten_decisions(
    g: Graph, trace: SearchTrace
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    eids: list[np.ndarray] = []
    src: list[np.ndarray] = []
    dst: list[np.ndarray] = []
    act: list[np.ndarray] = []
    for step in trace.steps:
        stoch = step.stochastic
        if stoch is None or not stoch.any():
            continue
        picked = step.edge_ids[stoch]
        eids.append(picked)
        src.append(np.full(len(picked), step.vertex, dtype=np.int64))
        dst.append(g.neighbors[picked].astype(np.int64))
        act.append(step.keep[stoch].astype(np.float64))
    if not eids:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy(), np.zeros(0, dtype=np.float64)
    return (
        np.concatenate(eids),
        np.concatenate(src),
        np.concatenate(dst),
        np.concatenate(act),
    )


def rollout_batch(
    g: Graph,
    vectors: np.ndarray,
    probs: np.ndarray,
    queries: np.ndarray,
    gt: np.ndarray,
    cfg: RewardConfig,
    k: int,
    ef: int,
    seed: int,
    epoch: int = 0,
    query_indices: np.ndarray | None = None,
    frozen: np.ndarray | None = None,
    threads: int = 1,
) -> list[Session]:
    """One independent session per query against a fixed policy snapshot.

    Per-session generators derive from (seed, epoch, query index), so the
    batch is reproducible and order-independent.
    """
    if query_indices is None:
        query_indices = np.arange(len(queries))
    agent = P.PolicyAgent(probs, frozen)

    def run(pos: int) -> Session:
        qi = int(query_indices[pos])
        trace = beam_search(
            g, vectors, agent, queries[pos], k=k, ef=ef, seed=[seed, epoch, qi]
        )
        reward = compute_reward(trace, int(gt[pos]), cfg)
        eids, src, dst, act = _flatten_decisions(g, trace)
        return Session(
            query_index=qi,
            trace=trace,
            reward=reward,
            edge_ids=eids,
            src_ids=src,
            dst_ids=dst,
            actions=act,
            vectors=vectors,
        )

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, range(len(queries))))
    return [run(i) for i in range(len(queries))]


def _batch_gradient(
    params: P.PolicyParams,
    sessions: list[Session],
    baselines: BaselineTable,
    entropy_coef: float,
) -> tuple[P.PolicyParams, float]:
    """Assemble one gradient from a batch of sessions; updates the baselines.

    Decisions are grouped per edge before the backward pass: repeated visits
    to the same edge share features and probability, so only their advantage
    sums and counts matter (policy.grad_grouped).
    """
    eid_parts = []
    src_parts = []
    dst_parts = []
    act_parts = []
    adv_parts = []
    vectors = None
    for s in sessions:
        adv = baselines.advantage(s.query_index, s.reward)
        baselines.update(s.query_index, s.reward)
        if s.n_decisions == 0:
            continue
        vectors = s.vectors
        eid_parts.append(s.edge_ids)
        src_parts.append(s.src_ids)
        dst_parts.append(s.dst_ids)
        act_parts.append(s.actions)
        adv_parts.append(np.full(s.n_decisions, adv))
    if not eid_parts:
        zero = P.PolicyParams(*(np.zeros_like(t) for _, t in params.tensors()))
        return zero, 0.0
    eids = np.concatenate(eid_parts)
    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    actions = np.concatenate(act_parts)
    advantages = np.concatenate(adv_parts)

    uniq, first_pos, inverse = np.unique(eids, return_index=True, return_inverse=True)
    n_rows = len(uniq)
    s_keep = np.zeros(n_rows)
    s_drop = np.zeros(n_rows)
    counts = np.zeros(n_rows)
    kept = actions == 1.0
    np.add.at(s_keep, inverse[kept], advantages[kept])
    np.add.at(s_drop, inverse[~kept], advantages[~kept])
    np.add.at(counts, inverse, 1.0)
    vecs = np.asarray(vectors, dtype=np.float64)
    feats = np.hstack([vecs[src[first_pos]], vecs[dst[first_pos]]])
    return P.grad_grouped(params, feats, s_keep, s_drop, counts, entropy_coef)


def update(
    params: P.PolicyParams,
    sessions: list[Session],
    baselines: BaselineTable,
    entropy_coef: float,
    lr: float,
) -> tuple[P.PolicyParams, BaselineTable]:
    """One plain gradient-ascent step on the batch objective.

    Advantages use each query's baseline before it absorbs the new reward.
    """
    grads, _ = _batch_gradient(params, sessions, baselines, entropy_coef)
    new = P.PolicyParams(
        *(t + lr * gt for (_, t), (_, gt) in zip(params.tensors(), grads.tensors()))
    )
    return new, baselines


class SgdAscent:
    def __init__(self, lr: float) -> None:
        self.lr = lr

    def step(
        self, params: P.PolicyParams, grads: P.PolicyParams, lr: float | None = None
    ) -> P.PolicyParams:
        step = self.lr if lr is None else lr
        return P.PolicyParams(
            *(t + step * g for (_, t), (_, g) in zip(params.tensors(), grads.tensors()))
        )


class AdamAscent:
    """Adam on the ascent direction; state keyed per tensor."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(
        self, params: P.PolicyParams, grads: P.PolicyParams, lr: float | None = None
    ) -> P.PolicyParams:
        step = self.lr if lr is None else lr
        self.t += 1
        out = []
        for (name, t), (_, g) in zip(params.tensors(), grads.tensors()):
            m = self.m.setdefault(name, np.zeros_like(t))
            v = self.v.setdefault(name, np.zeros_like(t))
            m[:] = self.beta1 * m + (1 - self.beta1) * g
            v[:] = self.beta2 * v + (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            out.append(t + step * mhat / (np.sqrt(vhat) + self.eps))
        return P.PolicyParams(*out)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SgdAscent(lr)
    if name == "adam":
        return AdamAscent(lr)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass
class FreezePolicy:
    enabled: bool = True
    lo: float = 0.01
    hi: float = 0.99
    patience: int = 5


@dataclass
class FreezeState:
    """Per-edge overconfidence streaks and frozen flags."""

    frozen: np.ndarray
    keep_value: np.ndarray
    hi_streak: np.ndarray
    lo_streak: np.ndarray

    @classmethod
    def zeros(cls, n_edges: int) -> "FreezeState":
        return cls(
            frozen=np.zeros(n_edges, dtype=bool),
            keep_value=np.zeros(n_edges, dtype=bool),
            hi_streak=np.zeros(n_edges, dtype=np.int64),
            lo_streak=np.zeros(n_edges, dtype=np.int64),
        )

    def frozen_fraction(self) -> float:
        return float(self.frozen.mean()) if len(self.frozen) else 0.0


def freeze_overconfident(
    state: FreezeState, probs: np.ndarray, lo: float, hi: float, patience: int
) -> FreezeState:
    """Freeze edges whose probability stayed past a bound for ``patience``
    consecutive evaluation epochs; frozen edges leave the optimization."""
    active = ~state.frozen
    hi_mask = active & (probs > hi)
    lo_mask = active & (probs < lo)
    state.hi_streak[active] = np.where(hi_mask[active], state.hi_streak[active] + 1, 0)
    state.lo_streak[active] = np.where(lo_mask[active], state.lo_streak[active] + 1, 0)
    freeze_hi = active & (state.hi_streak >= patience)
    freeze_lo = active & (state.lo_streak >= patience)
    state.frozen |= freeze_hi | freeze_lo
    state.keep_value[freeze_hi] = True
    state.keep_value[freeze_lo] = False
    return state


@dataclass
class TrainSchedule:
    """Everything the training loop needs besides graph, data, and reward.

    ``entropy_final`` anneals the entropy bonus linearly over the epochs
    (None keeps it constant): high early for exploration, low late so
    rarely-expanded edges commit instead of hovering at p = 0.5.
    """

    epochs: int
    lr: float = 3e-3
    lr_final: float | None = None
    optimizer: str = "adam"
    batch_size: int = 512
    entropy_coef: float = 0.01
    entropy_final: float | None = None
    baseline_decay: float = 0.9
    eval_every: int = 10
    hidden: int = 128
    k: int = 1
    ef_search: int = 1
    seed: int = 0
    freeze: FreezePolicy = field(default_factory=FreezePolicy)
    threads: int = 1

    def _interp(self, start: float, final: float | None, epoch: int) -> float:
        if final is None or self.epochs <= 1:
            return start
        frac = (epoch - 1) / (self.epochs - 1)
        return start + (final - start) * frac

    def entropy_at(self, epoch: int) -> float:
        return self._interp(self.entropy_coef, self.entropy_final, epoch)

    def lr_at(self, epoch: int) -> float:
        return self._interp(self.lr, self.lr_final, epoch)


@dataclass
class LogRow:
    epoch: int
    mean_reward: float
    val_reward: float
    val_recall: float
    val_dcs: float
    frozen_fraction: float


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)

    FIELDS = ("epoch", "mean_reward", "val_reward", "val_recall", "val_dcs", "frozen_fraction")

    def append(self, row: LogRow) -> None:
        self.rows.append(row)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for r in self.rows:
                writer.writerow(
                    [
                        r.epoch,
                        repr(r.mean_reward),
                        repr(r.val_reward),
                        repr(r.val_recall),
                        repr(r.val_dcs),
                        repr(r.frozen_fraction),
                    ]
                )


@dataclass
class TrainResult:
    graph: Graph
    log: TrainingLog
    params: P.PolicyParams
    best_epoch: int
    best_val_reward: float
    initial_val_reward: float
    edge_probs: np.ndarray
    edge_frozen: np.ndarray


def _validation(
    g0: Graph,
    vectors: np.ndarray,
    probs: np.ndarray,
    dataset,
    reward_cfg: RewardConfig,
    schedule: TrainSchedule,
) -> tuple[float, float, float]:
    """(mean reward, recall, mean DCS) of the thresholded graph on val queries."""
    staged = with_edge_state(g0, probs=probs.astype(np.float32))
    det = extract_deterministic(staged)
    res = evaluate(
        det,
        vectors,
        None,
        dataset.val_q,
        dataset.gt["val"],
        k=schedule.k,
        ef=schedule.ef_search,
        threads=schedule.threads,
    )
    reward = float(session_rewards(res, reward_cfg).mean())
    return reward, res.recall_at_1, res.mean_dcs


def train(
    g0: Graph,
    dataset,
    reward_cfg: RewardConfig,
    schedule: TrainSchedule,
) -> TrainResult:
    """Refine ``g0`` by policy-gradient training; returns the thresholded
    best-validation graph (epoch 0, the initializer, is always a candidate).
    """
    vectors = dataset.base
    train_q = dataset.train_q
    gt_train = dataset.gt["train"]
    n_train = len(train_q)
    if n_train == 0:
        raise ValueError("training requires at least one training query")

    params = P.init_params(2 * dataset.dim, hidden=schedule.hidden, seed=schedule.seed)
    probs = P.all_edge_probabilities(params, g0, vectors)
    freeze_state = FreezeState.zeros(g0.n_edges)
    baselines = BaselineTable.zeros(n_train, decay=schedule.baseline_decay)
    optimizer = make_optimizer(schedule.optimizer, schedule.lr)
    log = TrainingLog()

    val_reward, val_recall, val_dcs = _validation(
        g0, vectors, probs, dataset, reward_cfg, schedule
    )
    best = {
        "epoch": 0,
        "val_reward": val_reward,
        "probs": probs.copy(),
        "frozen": freeze_state.frozen.copy(),
        "params": params.copy(),
    }
    initial_val_reward = val_reward

    for epoch in range(1, schedule.epochs + 1):
        if schedule.batch_size < n_train:
            batch_rng = np.random.default_rng([schedule.seed, epoch])
            idx = np.sort(batch_rng.choice(n_train, size=schedule.batch_size, replace=False))
        else:
            idx = np.arange(n_train)
        sessions = rollout_batch(
            g0,
            vectors,
            probs,
            train_q[idx],
            gt_train[idx],
            reward_cfg,
            k=schedule.k,
            ef=schedule.ef_search,
            seed=schedule.seed,
            epoch=epoch,
            query_indices=idx,
            frozen=freeze_state.frozen,
            threads=schedule.threads,
        )
        mean_reward = float(np.mean([s.reward for s in sessions]))
        if not np.isfinite(mean_reward):
            raise DivergenceError(f"mean reward diverged at epoch {epoch}")
        grads, _ = _batch_gradient(params, sessions, baselines, schedule.entropy_at(epoch))
        params = optimizer.step(params, grads, lr=schedule.lr_at(epoch))
        if not params.all_finite():
            raise DivergenceError(f"policy parameters diverged at epoch {epoch}")
        probs = P.all_edge_probabilities(params, g0, vectors)
        probs[freeze_state.frozen] = np.where(
            freeze_state.keep_value[freeze_state.frozen], 1.0, 0.0
        )

        if epoch % schedule.eval_every == 0 or epoch == schedule.epochs:
            if schedule.freeze.enabled:
                freeze_state = freeze_overconfident(
                    freeze_state,
                    probs,
                    schedule.freeze.lo,
                    schedule.freeze.hi,
                    schedule.freeze.patience,
                )
                probs[freeze_state.frozen] = np.where(
                    freeze_state.keep_value[freeze_state.frozen], 1.0, 0.0
                )
            val_reward, val_recall, val_dcs = _validation(
                g0, vectors, probs, dataset, reward_cfg, schedule
            )
            if val_reward > best["val_reward"]:
                best = {
                    "epoch": epoch,
                    "val_reward": val_reward,
                    "probs": probs.copy(),
                    "frozen": freeze_state.frozen.copy(),
                    "params": params.copy(),
                }
        log.append(
            LogRow(
                epoch=epoch,
                mean_reward=mean_reward,
                val_reward=val_reward,
                val_recall=val_recall,
                val_dcs=val_dcs,
                frozen_fraction=freeze_state.frozen_fraction(),
            )
        )

    final_probs = best["probs"].astype(np.float32)
    final_frozen = best["frozen"]
    staged = with_edge_state(g0, probs=final_probs, frozen=final_frozen)
    refined = extract_deterministic(staged)
    return TrainResult(
        graph=refined,
        log=log,
        params=best["params"],
        best_epoch=int(best["epoch"]),
        best_val_reward=float(best["val_reward"]),
        initial_val_reward=float(initial_val_reward),
        edge_probs=best["probs"],
        edge_frozen=final_frozen,
    )

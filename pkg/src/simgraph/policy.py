"""Edge-scoring policy: a small feed-forward network with analytic gradients.

The network maps the concatenation of an edge's source and target vectors
through two ELU layers and a sigmoid output to a keep-probability. Sampling,
log-probabilities, entropy, and the exact reverse-mode gradient of the
policy-gradient objective all live here. Everything runs in float64 so the
finite-difference checks are meaningful; checkpoints store float32.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GraphFormatError

PROB_CLAMP = 1e-6  # probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before logs
_P_LO = np.finfo(np.float64).tiny
_P_HI = float(np.nextafter(1.0, 0.0))


@dataclass
class PolicyParams:
    """Weights of the 3-layer edge scorer: (2d -> h), (h -> h), (h -> 1)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("w1", self.w1),
            ("b1", self.b1),
            ("w2", self.w2),
            ("b2", self.b2),
            ("w3", self.w3),
            ("b3", self.b3),
        ]

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(t.copy() for _, t in self.tensors()))

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for _, t in self.tensors())


def init_params(input_dim: int, hidden: int = 256, seed: int = 0) -> PolicyParams:
    """Fan-in-scaled uniform init; the output layer starts at a constant.

    w3 = 0 and b3 = +2.0 make every initial keep-probability exactly
    sigmoid(2) ~ 0.881, so early search behaves like the unrefined graph and
    the p >= 0.5 extraction of an untrained policy returns it unchanged.
    """
    rng = np.random.default_rng(seed)

    def layer(n_in: int, n_out: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(n_in)
        return rng.uniform(-bound, bound, size=(n_in, n_out))

    return PolicyParams(
        w1=layer(input_dim, hidden),
        b1=np.zeros(hidden),
        w2=layer(hidden, hidden),
        b2=np.zeros(hidden),
        w3=np.zeros((hidden, 1)),
        b3=np.full(1, 2.0),
    )


def edge_features(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Feature vector of a directed edge: [source; target]."""
    return np.concatenate([np.asarray(source, dtype=np.float64).ravel(),
                           np.asarray(target, dtype=np.float64).ravel()])


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0.0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(params: PolicyParams, feats: np.ndarray):
    z1 = feats @ params.w1 + params.b1
    a1 = _elu(z1)
    z2 = a1 @ params.w2 + params.b2
    a2 = _elu(z2)
    z3 = (a2 @ params.w3 + params.b3).ravel()
    p = np.clip(_sigmoid(z3), _P_LO, _P_HI)
    return p, (feats, z1, a1, z2, a2, z3)


def forward(params: PolicyParams, features: np.ndarray):
    """Keep-probability for one feature vector (returns float) or a batch.

    Output is strictly inside (0, 1) for finite parameters.
    """
    feats = np.asarray(features, dtype=np.float64)
    single = feats.ndim == 1
    p, _ = _forward_cache(params, np.atleast_2d(feats))
    return float(p[0]) if single else p


def clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def log_prob(p, action) -> np.ndarray:
    """log Bernoulli(action | p) with p clamped away from {0, 1}."""
    pc = clamped(np.asarray(p, dtype=np.float64))
    a = np.asarray(action, dtype=np.float64)
    return a * np.log(pc) + (1.0 - a) * np.log(1.0 - pc)


def entropy(p) -> np.ndarray | float:
    """Bernoulli entropy -p ln p - (1-p) ln(1-p), with 0 ln 0 := 0."""
    arr = np.atleast_1d(np.asarray(p, dtype=np.float64))
    out = np.zeros_like(arr)
    interior = (arr > 0.0) & (arr < 1.0)
    pi = arr[interior]
    out[interior] = -(pi * np.log(pi) + (1.0 - pi) * np.log1p(-pi))
    return float(out[0]) if np.isscalar(p) or np.asarray(p).ndim == 0 else out


@dataclass
class EdgeDecision:
    """One Bernoulli edge decision: probability, sampled action, log-prob."""

    edge_id: int
    prob: float
    keep: bool
    log_prob: float


def sample_mask(
    params: PolicyParams,
    features: np.ndarray,
    edge_ids: np.ndarray,
    rng: np.random.Generator,
    frozen_keep: np.ndarray | None = None,
) -> list[EdgeDecision]:
    """One independent Bernoulli draw per edge of the current expansion.

    ``frozen_keep`` entries (True/False per edge, or None for stochastic)
    take their deterministic value with log-probability 0 and never reach
    the gradient.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    probs, _ = _forward_cache(params, feats)
    draws = rng.random(len(probs))
    decisions = []
    for i, eid in enumerate(np.asarray(edge_ids).tolist()):
        frozen = frozen_keep is not None and frozen_keep[i] is not None
        if frozen:
            keep = bool(frozen_keep[i])
            decisions.append(EdgeDecision(int(eid), 1.0 if keep else 0.0, keep, 0.0))
        else:
            keep = bool(draws[i] < probs[i])
            decisions.append(
                EdgeDecision(int(eid), float(probs[i]), keep, float(log_prob(probs[i], keep)))
            )
    return decisions


def objective(
    params: PolicyParams,
    features: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    entropy_coef: float,
) -> float:
    """Value of sum_i [advantage_i * log pi(action_i) + entropy_coef * H(p_i)]."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    p, _ = _forward_cache(params, feats)
    lp = log_prob(p, actions)
    return float(np.sum(np.asarray(advantages) * lp) + entropy_coef * np.sum(entropy(p)))


def _backward(params: PolicyParams, cache, dz3: np.ndarray) -> PolicyParams:
    """Reverse mode through the three layers given the output-layer gradient."""
    x, z1, a1, z2, a2, _ = cache
    dz3 = dz3[:, None]
    gw3 = a2.T @ dz3
    gb3 = dz3.sum(axis=0)
    da2 = dz3 @ params.w3.T
    dz2 = da2 * _elu_grad(z2)
    gw2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2.T
    dz1 = da1 * _elu_grad(z1)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return PolicyParams(w1=gw1, b1=gb1, w2=gw2, b2=gb2, w3=gw3, b3=gb3)


def grad(
    params: PolicyParams,
    features: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    entropy_coef: float,
) -> tuple[PolicyParams, float]:
    """Exact gradient of the objective above, plus its value.

    At the output layer, d(logpi)/dz3 = action - p and
    dH/dz3 = -z3 * p * (1 - p).
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.float64).ravel()
    advantages = np.asarray(advantages, dtype=np.float64).ravel()
    if feats.shape[0] != len(actions) or len(actions) != len(advantages):
        raise ValueError("features, actions, and advantages must align")
    if not (np.isfinite(feats).all() and np.isfinite(advantages).all()):
        raise ValueError("non-finite inputs to gradient")
    p, cache = _forward_cache(params, feats)
    z3 = cache[-1]
    value = float(
        np.sum(advantages * log_prob(p, actions)) + entropy_coef * np.sum(entropy(p))
    )
    dz3 = advantages * (actions - p) + entropy_coef * (-z3) * p * (1.0 - p)
    return _backward(params, cache, dz3), value


def grad_grouped(
    params: PolicyParams,
    features: np.ndarray,
    keep_advantage_sums: np.ndarray,
    drop_advantage_sums: np.ndarray,
    counts: np.ndarray,
    entropy_coef: float,
) -> tuple[PolicyParams, float]:
    """Gradient for decisions grouped by distinct feature row.

    On-policy batches repeat the same edge many times with identical features
    and probability, so the per-row output gradient collapses to
    (1 - p) * sum(adv | keep) - p * sum(adv | drop) plus the entropy term
    weighted by the row's decision count. Equal to ``grad`` over the
    flattened batch, at the cost of one row per distinct edge.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    s_keep = np.asarray(keep_advantage_sums, dtype=np.float64)
    s_drop = np.asarray(drop_advantage_sums, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if not (np.isfinite(feats).all() and np.isfinite(s_keep).all() and np.isfinite(s_drop).all()):
        raise ValueError("non-finite inputs to gradient")
    p, cache = _forward_cache(params, feats)
    z3 = cache[-1]
    pc = clamped(p)
    value = float(
        np.sum(s_keep * np.log(pc) + s_drop * np.log(1.0 - pc))
        + entropy_coef * np.sum(counts * entropy(p))
    )
    dz3 = (1.0 - p) * s_keep - p * s_drop + entropy_coef * counts * (-z3) * p * (1.0 - p)
    return _backward(params, cache, dz3), value


def all_edge_probabilities(
    params: PolicyParams,
    graph,
    vectors: np.ndarray,
    batch: int = 16384,
) -> np.ndarray:
    """Keep-probability for every edge of the graph, one batched forward pass.

    Edge features depend only on the endpoint vectors, so a per-epoch cache
    is exact until the parameters change.
    """
    src = graph.edge_sources()
    dst = graph.neighbors
    vecs = np.asarray(vectors, dtype=np.float64)
    out = np.empty(graph.n_edges, dtype=np.float64)
    for s in range(0, graph.n_edges, batch):
        e = min(s + batch, graph.n_edges)
        feats = np.hstack([vecs[src[s:e]], vecs[dst[s:e]]])
        out[s:e], _ = _forward_cache(params, feats)
    return out


class PolicyAgent:
    """Edge agent backed by cached per-edge probabilities.

    Frozen edges keep their cached 0/1 value deterministically, carry
    log-probability zero, and are marked non-stochastic so the trainer skips
    them. The cache must be refreshed after every parameter update.
    """

    def __init__(
        self,
        probs: np.ndarray,
        frozen: np.ndarray | None = None,
    ) -> None:
        self.probs = np.asarray(probs, dtype=np.float64)
        self.frozen = (
            np.zeros(len(self.probs), dtype=bool) if frozen is None else np.asarray(frozen, bool)
        )

    def decide(self, state, rng: np.random.Generator):
        from .search import AgentDecision

        eids = state.edge_ids
        p = self.probs[eids]
        frozen = self.frozen[eids]
        draws = rng.random(len(p))
        keep = draws < p
        keep[frozen] = p[frozen] >= 0.5
        lp = log_prob(p, keep)
        lp[frozen] = 0.0
        return AgentDecision(keep=keep, probs=p, log_probs=lp, stochastic=~frozen)


_CKPT_MAGIC = b"SGPC"
_CKPT_VERSION = 1


def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    """Versioned checkpoint: header, tensor shapes, row-major float32 data."""
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(np.array([_CKPT_VERSION, len(params.tensors())], dtype="<u4").tobytes())
    for _, t in params.tensors():
        shape = np.array([t.ndim] + list(t.shape), dtype="<u4")
        buf.write(shape.tobytes())
        buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> PolicyParams:
    blob = Path(path).read_bytes()
    if blob[:4] != _CKPT_MAGIC:
        raise GraphFormatError("not a policy checkpoint (bad magic)")
    version, count = np.frombuffer(blob, dtype="<u4", count=2, offset=4)
    if version != _CKPT_VERSION:
        raise GraphFormatError(f"unsupported checkpoint version {int(version)}")
    pos = 12
    tensors = []
    for _ in range(int(count)):
        ndim = int(np.frombuffer(blob, dtype="<u4", count=1, offset=pos)[0])
        shape = tuple(
            int(x) for x in np.frombuffer(blob, dtype="<u4", count=ndim, offset=pos + 4)
        )
        pos += 4 * (1 + ndim)
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).astype(np.float64)
        pos += 4 * size
        tensors.append(data.reshape(shape))
    if len(tensors) != 6:
        raise GraphFormatError(f"checkpoint holds {len(tensors)} tensors, expected 6")
    return PolicyParams(*tensors)

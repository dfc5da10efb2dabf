"""Model parameters, forward pass with consistency-guided sampling, and
hand-derived backward pass.

The forward pass for a (user, item) pair builds one query vector shared by
both sides, then per side runs L aggregation layers. At each layer the
candidate neighbors are scored against the query using their previous-layer
hidden states (base case: raw embeddings), a subset is drawn without
replacement with probability proportional to the scores, relation attention
weights the drawn neighbors, and the weighted sum is concatenated with the
node's own previous hidden state and mapped through a per-layer matrix and
ReLU. Hidden states are memoized per (node, layer) within one call.

The backward pass treats the drawn neighbor sets and their sampling
probabilities as constants: no gradient flows through the discrete draw or
the consistency scores (so the query map receives a structurally zero
gradient). Attention weights are differentiated exactly. ReLU's subgradient
at 0 is taken as 0.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CheckpointError, ConfigError, ContractError


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    layers: int = 1
    gamma: float = 1.0
    ablate_query: bool = False
    ablate_sampling: bool = False
    ablate_attention: bool = False
    eval_deterministic: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0,1]")


@dataclass
class ModelParams:
    """All trainable tensors.

    node_emb is (dim, m+n) with one column per node; rel_emb is (dim, R);
    query_w and each layer_w[l] are (2*dim, dim); att_w is (2*dim,).
    """

    node_emb: np.ndarray
    rel_emb: np.ndarray
    query_w: np.ndarray
    layer_w: list[np.ndarray]
    att_w: np.ndarray

    @property
    def dim(self) -> int:
        return self.node_emb.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.node_emb.shape[1]

    @property
    def num_relations(self) -> int:
        return self.rel_emb.shape[1]

    @property
    def layers(self) -> int:
        return len(self.layer_w)

    def copy(self) -> "ModelParams":
        return ModelParams(
            node_emb=self.node_emb.copy(),
            rel_emb=self.rel_emb.copy(),
            query_w=self.query_w.copy(),
            layer_w=[w.copy() for w in self.layer_w],
            att_w=self.att_w.copy(),
        )

    def groups(self):
        """(name, array) pairs in checkpoint order."""
        yield "node_emb", self.node_emb
        yield "rel_emb", self.rel_emb
        yield "query_w", self.query_w
        for l, w in enumerate(self.layer_w, start=1):
            yield f"layer_w[{l}]", w
        yield "att_w", self.att_w


def init_params(cfg, num_users, num_items, num_relations, seed):
    """Uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).

    Embedding tables use fan_in = fan_out = dim; the attention vector is
    treated as a (2*dim, 1) map. Deterministic given the seed.
    """
    d = cfg.dim
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in, fan_out):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)

    node_emb = uniform((d, num_users + num_items), d, d)
    rel_emb = uniform((d, num_relations), d, d)
    query_w = uniform((2 * d, d), 2 * d, d)
    layer_w = [uniform((2 * d, d), 2 * d, d) for _ in range(cfg.layers)]
    att_w = uniform((2 * d,), 2 * d, 1)
    return ModelParams(node_emb, rel_emb, query_w, layer_w, att_w)


# ---------------------------------------------------------------------------
# forward


@dataclass
class AggRecord:
    """One (node, layer) aggregation, with everything backward needs."""

    node: int
    layer: int
    cand_ids: np.ndarray
    cand_rels: np.ndarray
    probs: np.ndarray
    sampled_ids: np.ndarray
    sampled_rels: np.ndarray
    alphas: np.ndarray
    h_prev: np.ndarray
    neigh_h: np.ndarray
    agg: np.ndarray
    pre_act: np.ndarray
    hidden: np.ndarray


@dataclass
class ForwardTrace:
    """Record of one forward pass, sufficient to run the backward pass.

    Holds views into the parameters used for the pass; a trace is
    invalidated by any subsequent parameter update.
    """

    u: int
    t: int
    query: np.ndarray
    records: dict[tuple[int, int], AggRecord]
    order: list[tuple[int, int]]
    prediction: float


def build_query(params, u, t, *, num_users, ablate_query=False):
    """Query vector for the pair: ReLU(query_w^T (e_u ++ e_t)).

    With ablate_query the raw user embedding is returned instead.
    """
    if not 0 <= u < num_users:
        raise ContractError(f"node {u} is not a user node")
    if not num_users <= t < params.num_nodes:
        raise ContractError(f"node {t} is not an item node")
    if ablate_query:
        return params.node_emb[:, u].copy()
    stacked = np.concatenate([params.node_emb[:, u], params.node_emb[:, t]])
    return np.maximum(params.query_w.T @ stacked, 0.0)


def consistency_scores(query, cand_embs):
    """Similarity scores exp(-(D_i - D_min)) with D_i = ||query - h_i||^2.

    The common shift by D_min is exact for any downstream normalization
    and keeps the exponentials representable. Empty input yields an empty
    result.
    """
    cand = np.asarray(cand_embs, dtype=np.float64)
    if cand.size == 0:
        return np.empty(0, dtype=np.float64)
    return kernels.consistency_scores(np.asarray(query, dtype=np.float64), cand)


def _sample_count(gamma, degree):
    # the tiny slack absorbs float noise in gamma * degree at exact multiples
    return max(1, math.ceil(gamma * degree - 1e-9))


def _select(scores, cand_ids, gamma, rng, *, deterministic, ablate_sampling):
    """Indices into the candidate list chosen for aggregation."""
    k = scores.shape[0]
    if ablate_sampling:
        return np.arange(k, dtype=np.int64)
    q = min(_sample_count(gamma, k), k)
    if deterministic:
        order = np.lexsort((cand_ids, -scores))
        return order[:q].astype(np.int64)
    if rng is None:
        raise ConfigError("stochastic sampling requires a random generator")
    return kernels.weighted_pick(scores, rng.random(q))


def sample_neighbors(g, v, query, params, layer_embs, gamma, rng, *,
                     deterministic=False, ablate_sampling=False):
    """Choose neighbors of v for aggregation.

    layer_embs maps a node id to its current hidden state (the previous
    layer's output; raw embedding at the base). Draws are without
    replacement, max(1, ceil(gamma * degree)) of them; deterministic mode
    takes the top scorers with ties broken by ascending node id;
    ablate_sampling returns every neighbor. Isolated nodes yield [].
    """
    cand_ids, cand_rels = g.neighbor_arrays(v)
    if cand_ids.size == 0:
        return []
    cand_h = np.stack([layer_embs(int(c)) for c in cand_ids])
    scores = consistency_scores(query, cand_h)
    picked = _select(
        scores,
        cand_ids,
        gamma,
        rng,
        deterministic=deterministic,
        ablate_sampling=ablate_sampling,
    )
    return [(int(cand_ids[i]), int(cand_rels[i])) for i in picked]


def relation_attention(params, neigh_embs, neigh_rels, *, ablate_attention=False):
    """Attention weights over sampled neighbors from (h_i ++ e_ri) logits."""
    k = len(neigh_embs)
    if k == 0:
        return np.empty(0, dtype=np.float64)
    if ablate_attention:
        return np.full(k, 1.0 / k)
    neigh = np.asarray(neigh_embs, dtype=np.float64).reshape(k, -1)
    rel_e = params.rel_emb[:, np.asarray(neigh_rels, dtype=np.int64)].T
    return kernels.attention_weights(params.att_w, np.ascontiguousarray(neigh),
                                     np.ascontiguousarray(rel_e))


def aggregate_layer(params, layer, h_prev, neigh_h, alphas):
    """h^(l) = ReLU(layer_w[l]^T (h_prev ++ sum_i alpha_i h_i)).

    layer is 1-based. With no neighbors the aggregated part is zero.
    """
    if not 1 <= layer <= params.layers:
        raise ContractError(f"layer {layer} out of range 1..{params.layers}")
    d = params.dim
    if h_prev.shape != (d,):
        raise ContractError("h_prev has wrong shape")
    k = len(neigh_h)
    if k != len(alphas):
        raise ContractError("neighbor embeddings and weights differ in length")
    if k:
        neigh = np.asarray(neigh_h, dtype=np.float64).reshape(k, d)
        agg = kernels.weighted_sum(np.asarray(alphas, dtype=np.float64),
                                   np.ascontiguousarray(neigh))
    else:
        agg = np.zeros(d)
    pre = params.layer_w[layer - 1].T @ np.concatenate([h_prev, agg])
    return np.maximum(pre, 0.0)


def forward(params, cfg, g, u, t, rng=None, frozen=None):
    """Run the full forward pass for the pair (u, t) and record a trace.

    With ``frozen`` set to a previous trace, the drawn neighbor sets are
    replayed from it (no scoring, no randomness); everything else is
    recomputed from the current parameters. Used for finite-difference
    checks where the sampling decision must stay constant.
    """
    m = g.num_users
    if not 0 <= u < m:
        raise IndexError(f"user node {u} out of range [0, {m})")
    if not m <= t < g.num_nodes:
        raise IndexError(f"item node {t} out of range [{m}, {g.num_nodes})")
    if params.num_nodes != g.num_nodes:
        raise ContractError("params and graph disagree on node count")

    d = params.dim
    deterministic = cfg.eval_deterministic
    query = build_query(params, u, t, num_users=m, ablate_query=cfg.ablate_query)

    memo: dict[tuple[int, int], np.ndarray] = {}
    records: dict[tuple[int, int], AggRecord] = {}
    order: list[tuple[int, int]] = []

    def hidden(v, layer):
        if layer == 0:
            return params.node_emb[:, v]
        key = (v, layer)
        if key in memo:
            return memo[key]

        if frozen is not None:
            prev = frozen.records[key]
            cand_ids = prev.sampled_ids
            cand_rels = prev.sampled_rels
            probs = prev.probs.copy()
            picked = np.arange(cand_ids.size, dtype=np.int64)
        else:
            cand_ids, cand_rels = g.neighbor_arrays(v)

        h_prev = hidden(v, layer - 1)

        if cand_ids.size:
            cand_h = np.stack([hidden(int(c), layer - 1) for c in cand_ids])
            if frozen is None:
                scores = kernels.consistency_scores(query, cand_h)
                probs = scores / scores.sum()
                picked = _select(
                    scores,
                    cand_ids,
                    cfg.gamma,
                    rng,
                    deterministic=deterministic,
                    ablate_sampling=cfg.ablate_sampling,
                )
            sampled_ids = np.asarray(cand_ids[picked], dtype=np.int64)
            sampled_rels = np.asarray(cand_rels[picked], dtype=np.int64)
            neigh_h = np.ascontiguousarray(cand_h[picked])
            if cfg.ablate_attention:
                alphas = np.full(sampled_ids.size, 1.0 / sampled_ids.size)
            else:
                rel_e = np.ascontiguousarray(params.rel_emb[:, sampled_rels].T)
                alphas = kernels.attention_weights(params.att_w, neigh_h, rel_e)
            agg = kernels.weighted_sum(alphas, neigh_h)
        else:
            probs = np.empty(0)
            sampled_ids = np.empty(0, dtype=np.int64)
            sampled_rels = np.empty(0, dtype=np.int64)
            neigh_h = np.empty((0, d))
            alphas = np.empty(0)
            agg = np.zeros(d)

        pre = params.layer_w[layer - 1].T @ np.concatenate([h_prev, agg])
        h = np.maximum(pre, 0.0)

        records[key] = AggRecord(
            node=v,
            layer=layer,
            cand_ids=np.asarray(cand_ids, dtype=np.int64),
            cand_rels=np.asarray(cand_rels, dtype=np.int64),
            probs=probs,
            sampled_ids=sampled_ids,
            sampled_rels=sampled_rels,
            alphas=alphas,
            h_prev=h_prev,
            neigh_h=neigh_h,
            agg=agg,
            pre_act=pre,
            hidden=h,
        )
        memo[key] = h
        order.append(key)
        return h

    h_u = hidden(u, cfg.layers)
    h_t = hidden(t, cfg.layers)
    return ForwardTrace(
        u=u,
        t=t,
        query=query,
        records=records,
        order=order,
        prediction=float(h_u @ h_t),
    )


def predict_rating(params, cfg, g, u, t):
    """Deterministic rating score for (u, t): top-score neighbor selection."""
    eval_cfg = replace(cfg, eval_deterministic=True)
    return forward(params, eval_cfg, g, u, t).prediction


# ---------------------------------------------------------------------------
# backward


@dataclass
class GradAccumulator:
    """Sparse gradient buffers keyed like ModelParams.

    node_emb and rel_emb hold per-column gradients for touched columns
    only; the dense groups are whole-array buffers (present even when
    structurally zero, e.g. query_w).
    """

    node_emb: dict[int, np.ndarray] = field(default_factory=dict)
    rel_emb: dict[int, np.ndarray] = field(default_factory=dict)
    query_w: np.ndarray | None = None
    layer_w: list[np.ndarray | None] = field(default_factory=list)
    att_w: np.ndarray | None = None

    def merge(self, other):
        """Add another accumulator's gradients into this one."""
        for node, grad in other.node_emb.items():
            if node in self.node_emb:
                self.node_emb[node] += grad
            else:
                self.node_emb[node] = grad.copy()
        for rel, grad in other.rel_emb.items():
            if rel in self.rel_emb:
                self.rel_emb[rel] += grad
            else:
                self.rel_emb[rel] = grad.copy()
        if other.query_w is not None:
            if self.query_w is None:
                self.query_w = other.query_w.copy()
            else:
                self.query_w += other.query_w
        if not self.layer_w:
            self.layer_w = [None] * len(other.layer_w)
        for i, grad in enumerate(other.layer_w):
            if grad is None:
                continue
            if self.layer_w[i] is None:
                self.layer_w[i] = grad.copy()
            else:
                self.layer_w[i] += grad
        if other.att_w is not None:
            if self.att_w is None:
                self.att_w = other.att_w.copy()
            else:
                self.att_w += other.att_w
        return self


def backward(params, cfg, trace, upstream):
    """Gradients of upstream * prediction w.r.t. every touched parameter.

    Only the aggregation path receives gradients; neighbor sets and their
    sampling probabilities are constants, so candidates that were scored
    but never drawn contribute nothing and the query map's buffer is an
    explicit zero.
    """
    d = params.dim
    L = cfg.layers
    acc = GradAccumulator(layer_w=[np.zeros_like(w) for w in params.layer_w])
    if not cfg.ablate_query:
        acc.query_w = np.zeros_like(params.query_w)
    if not cfg.ablate_attention:
        acc.att_w = np.zeros_like(params.att_w)

    rec_u = trace.records.get((trace.u, L))
    rec_t = trace.records.get((trace.t, L))
    if rec_u is None or rec_t is None:
        raise ContractError("trace does not cover the requested pair")
    if rec_u.hidden.shape != (d,) or params.layers != L:
        raise ContractError("trace and params disagree on shapes")

    pending: dict[tuple[int, int], np.ndarray] = {}
    pending[(trace.u, L)] = upstream * rec_t.hidden
    pending[(trace.t, L)] = pending.get((trace.t, L), 0.0) + upstream * rec_u.hidden

    def push(node, layer, grad):
        if layer == 0:
            if node in acc.node_emb:
                acc.node_emb[node] += grad
            else:
                acc.node_emb[node] = grad.copy()
        else:
            key = (node, layer)
            if key in pending:
                pending[key] += grad
            else:
                pending[key] = grad.copy()

    att_head = params.att_w[:d]
    att_tail = params.att_w[d:]

    for key in reversed(trace.order):
        if key not in pending:
            continue  # expanded only for scoring; no gradient path
        rec = trace.records[key]
        g_h = pending.pop(key)
        g_pre = np.where(rec.pre_act > 0.0, g_h, 0.0)
        z = np.concatenate([rec.h_prev, rec.agg])
        acc.layer_w[rec.layer - 1] += np.outer(z, g_pre)
        g_z = params.layer_w[rec.layer - 1] @ g_pre
        push(rec.node, rec.layer - 1, g_z[:d])
        g_agg = g_z[d:]

        k = rec.sampled_ids.size
        if k == 0:
            continue
        if cfg.ablate_attention:
            for i in range(k):
                push(int(rec.sampled_ids[i]), rec.layer - 1, rec.alphas[i] * g_agg)
            continue

        d_alpha = rec.neigh_h @ g_agg
        d_logits = rec.alphas * (d_alpha - float(rec.alphas @ d_alpha))
        rel_e = params.rel_emb[:, rec.sampled_rels].T
        acc.att_w[:d] += d_logits @ rec.neigh_h
        acc.att_w[d:] += d_logits @ rel_e
        for i in range(k):
            rel = int(rec.sampled_rels[i])
            g_rel = d_logits[i] * att_tail
            if rel in acc.rel_emb:
                acc.rel_emb[rel] += g_rel
            else:
                acc.rel_emb[rel] = g_rel.copy()
            g_n = rec.alphas[i] * g_agg + d_logits[i] * att_head
            push(int(rec.sampled_ids[i]), rec.layer - 1, g_n)

    return acc


# ---------------------------------------------------------------------------
# checkpoint IO

_HEADER = struct.Struct("<5q")  # dim, layers, relations, users, items


def save_checkpoint(params, cfg, out_dir, *, num_users, num_items,
                    rating_levels, item_link_threshold):
    """Write params.bin (documented little-endian layout) and config.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "params.bin", "wb") as fh:
        fh.write(
            _HEADER.pack(params.dim, params.layers, params.num_relations,
                         num_users, num_items)
        )
        for _, arr in params.groups():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    config = {
        "dim": cfg.dim,
        "layers": cfg.layers,
        "gamma": cfg.gamma,
        "ablate_query": cfg.ablate_query,
        "ablate_sampling": cfg.ablate_sampling,
        "ablate_attention": cfg.ablate_attention,
        "num_users": num_users,
        "num_items": num_items,
        "num_relations": params.num_relations,
        "rating_levels": list(rating_levels),
        "item_link_threshold": item_link_threshold,
    }
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir):
    """Read a checkpoint directory; returns (params, cfg, config dict)."""
    root = Path(ckpt_dir)
    with open(root / "config.json", encoding="utf-8") as fh:
        config = json.load(fh)
    raw = (root / "params.bin").read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError("params.bin truncated before header")
    d, L, R, m, n = _HEADER.unpack_from(raw)
    if (d, L, R, m, n) != (
        config["dim"],
        config["layers"],
        config["num_relations"],
        config["num_users"],
        config["num_items"],
    ):
        raise CheckpointError("params.bin header disagrees with config.json")

    shapes = [("node_emb", (d, m + n)), ("rel_emb", (d, R)), ("query_w", (2 * d, d))]
    shapes += [(f"layer_w[{l}]", (2 * d, d)) for l in range(1, L + 1)]
    shapes += [("att_w", (2 * d,))]
    expected = _HEADER.size + sum(int(np.prod(s)) for _, s in shapes) * 8
    if len(raw) != expected:
        raise CheckpointError(
            f"params.bin has {len(raw)} bytes, expected {expected}"
        )

    offset = _HEADER.size
    arrays = {}
    for name, shape in shapes:
        count = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += count * 8

    params = ModelParams(
        node_emb=arrays["node_emb"],
        rel_emb=arrays["rel_emb"],
        query_w=arrays["query_w"],
        layer_w=[arrays[f"layer_w[{l}]"] for l in range(1, L + 1)],
        att_w=arrays["att_w"],
    )
    cfg = ModelConfig(
        dim=d,
        layers=L,
        gamma=config["gamma"],
        ablate_query=config["ablate_query"],
        ablate_sampling=config["ablate_sampling"],
        ablate_attention=config["ablate_attention"],
    )
    return params, cfg, config

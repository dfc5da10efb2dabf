"""Multi-relation adjacency over user and item nodes.

Node ids are global: users occupy [0, m) and items [m, m+n). Relations are
indexed 0..R-1 with one relation per rating level (sorted ascending),
followed by the social relation and the item-item relation.

Only train-split rating edges enter the adjacency so validation and test
edges can never leak into message passing. Item-item edges connect items
whose train-split rater sets overlap with Jaccard similarity above a
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import TRAIN
from .errors import ConfigError, ContractError


@dataclass
class HetGraph:
    """Immutable CSR adjacency; neighbor lists sorted by (relation, node)."""

    num_users: int
    num_items: int
    rating_levels: list[int]
    item_link_threshold: float
    indptr: np.ndarray
    nbr: np.ndarray
    rel: np.ndarray
    _level_index: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._level_index:
            self._level_index = {lv: i for i, lv in enumerate(self.rating_levels)}

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_relations(self) -> int:
        return len(self.rating_levels) + 2

    @property
    def social_relation(self) -> int:
        return len(self.rating_levels)

    @property
    def item_relation(self) -> int:
        return len(self.rating_levels) + 1

    def level_relation(self, level) -> int:
        return self._level_index[int(level)]

    def is_user(self, v) -> bool:
        return 0 <= v < self.num_users

    def is_item(self, v) -> bool:
        return self.num_users <= v < self.num_nodes

    def degree(self, v) -> int:
        self._check(v)
        return int(self.indptr[v + 1] - self.indptr[v])

    def neighbor_arrays(self, v):
        """(node_ids, relation_ids) views of v's sorted neighbor list."""
        self._check(v)
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return self.nbr[lo:hi], self.rel[lo:hi]

    def neighbors(self, v):
        """List of (node_id, relation_id) pairs; empty for isolated nodes."""
        ids, rels = self.neighbor_arrays(v)
        return [(int(w), int(r)) for w, r in zip(ids, rels)]

    def _check(self, v):
        if not 0 <= v < self.num_nodes:
            raise IndexError(f"node id {v} out of range [0, {self.num_nodes})")


def _csr(num_nodes, src, dst, rel):
    order = np.lexsort((dst, rel, src))
    src = src[order]
    dst = dst[order]
    rel = rel[order]
    counts = np.bincount(src, minlength=num_nodes)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, dst, rel


def _pair_csr(num_keys, keys, values):
    """CSR of values grouped by key, values sorted within each key."""
    order = np.lexsort((values, keys))
    keys = keys[order]
    values = values[order]
    counts = np.bincount(keys, minlength=num_keys)
    indptr = np.zeros(num_keys + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, values


def build_graph(ds, item_link_threshold=0.5):
    """Assemble the multi-relation graph from a split dataset.

    Train rating edges appear in both directions under their level
    relation; social edges are symmetrized; item-item edges are added for
    Jaccard overlap strictly above the threshold, computed on train-split
    rater sets only.
    """
    if not 0.0 <= item_link_threshold <= 1.0:
        raise ConfigError("item_link_threshold must be in [0, 1]")
    if np.any(ds.split < 0):
        raise ContractError("dataset has unassigned splits; run assign_splits first")

    m = ds.num_users
    n = ds.num_items
    level_index = {lv: i for i, lv in enumerate(ds.rating_levels)}
    social_rel = len(ds.rating_levels)
    item_rel = social_rel + 1

    srcs = []
    dsts = []
    rels = []

    train = ds.ratings[ds.split == TRAIN]
    if train.size:
        u = train[:, 0]
        t = train[:, 1] + m
        r = np.asarray([level_index[int(lv)] for lv in train[:, 2]], dtype=np.int64)
        srcs.append(np.concatenate([u, t]))
        dsts.append(np.concatenate([t, u]))
        rels.append(np.concatenate([r, r]))

    if ds.social.size:
        pairs = np.vstack([ds.social, ds.social[:, ::-1]])
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        pairs = np.unique(pairs, axis=0)
        srcs.append(pairs[:, 0])
        dsts.append(pairs[:, 1])
        rels.append(np.full(pairs.shape[0], social_rel, dtype=np.int64))

    if train.size:
        item_ptr, item_users = _pair_csr(n, train[:, 1], train[:, 0])
        user_ptr, user_items = _pair_csr(m, train[:, 0], train[:, 1])
        ii, jj = kernels.co_rating_pairs(
            n, item_ptr, item_users, user_ptr, user_items, float(item_link_threshold)
        )
        if ii.size:
            srcs.append(np.concatenate([ii, jj]) + m)
            dsts.append(np.concatenate([jj, ii]) + m)
            rels.append(np.full(2 * ii.size, item_rel, dtype=np.int64))

    if srcs:
        src = np.concatenate(srcs).astype(np.int64)
        dst = np.concatenate(dsts).astype(np.int64)
        rel = np.concatenate(rels).astype(np.int64)
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)
        rel = np.empty(0, dtype=np.int64)

    indptr, nbr, rel = _csr(m + n, src, dst, rel)
    return HetGraph(
        num_users=m,
        num_items=n,
        rating_levels=list(ds.rating_levels),
        item_link_threshold=float(item_link_threshold),
        indptr=indptr,
        nbr=nbr,
        rel=rel,
    )


def write_graph_tsv(g, path):
    """Dump edges as `src\\tdst\\trelation_index` lines for inspection."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in range(g.num_nodes):
            ids, rels = g.neighbor_arrays(v)
            for w, r in zip(ids, rels):
                fh.write(f"{v}\t{w}\t{r}\n")

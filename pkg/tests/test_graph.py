"""Multi-relation graph construction: relations, symmetry, leakage."""

import numpy as np
import pytest

from trustrec.data import TEST, TRAIN, VALIDATION, Dataset, assign_splits
from trustrec.errors import ConfigError, ContractError
from trustrec.graph import build_graph, write_graph_tsv
from trustrec.synth import random_dataset


def make_dataset(ratings, social, levels, split=None, m=None, n=None):
    ratings = np.asarray(ratings, dtype=np.int64).reshape(-1, 3)
    social = np.asarray(social, dtype=np.int64).reshape(-1, 2)
    m = m if m is not None else int(ratings[:, 0].max()) + 1
    n = n if n is not None else int(ratings[:, 1].max()) + 1
    split = (
        np.full(ratings.shape[0], TRAIN, dtype=np.int8)
        if split is None
        else np.asarray(split, dtype=np.int8)
    )
    return Dataset(
        user_ids=[f"u{i}" for i in range(m)],
        item_ids=[f"i{j}" for j in range(n)],
        rating_levels=sorted({int(r) for r in ratings[:, 2]}),
        ratings=ratings,
        social=social,
        split=split,
        split_fractions=(1.0, 0.0, 0.0),
        split_seed=0,
    )


class TestRelations:
    def test_level_count_plus_two(self):
        ds = make_dataset([(0, 0, 1), (1, 0, 5)], [(0, 1)], None)
        g = build_graph(ds)
        assert g.num_relations == len(ds.rating_levels) + 2

    def test_ciao_style_levels_give_eight_relations(self):
        # six observed levels 0..5 -> six level relations + social + item-item
        ratings = [(i, i % 2, level) for i, level in enumerate(range(6))]
        ds = make_dataset(ratings, [(0, 1), (2, 3), (4, 5)], None)
        g = build_graph(ds)
        assert g.num_relations == 8

    def test_relation_kind_constraints(self):
        ds = make_dataset(
            [(0, 0, 2), (0, 1, 3), (1, 0, 2), (1, 1, 3)], [(0, 1)], None
        )
        g = build_graph(ds, item_link_threshold=0.4)
        for v in range(g.num_nodes):
            for w, r in g.neighbors(v):
                if r == g.social_relation:
                    assert g.is_user(v) and g.is_user(w)
                elif r == g.item_relation:
                    assert g.is_item(v) and g.is_item(w)
                else:
                    assert g.is_user(v) != g.is_user(w)


class TestItemLinks:
    def test_identical_rater_sets_link(self):
        # items 0 and 1 both rated by users {0, 1}: Jaccard 1.0 > 0.5
        ds = make_dataset(
            [(0, 0, 4), (1, 0, 4), (0, 1, 3), (1, 1, 3)], [(0, 1)], None
        )
        g = build_graph(ds, item_link_threshold=0.5)
        m = ds.num_users
        assert (m + 1, g.item_relation) in g.neighbors(m + 0)
        assert (m + 0, g.item_relation) in g.neighbors(m + 1)

    def test_low_overlap_does_not_link(self):
        # item 0 rated by {0,1,2}, item 1 by {0}: Jaccard 1/3 <= 0.5
        ds = make_dataset(
            [(0, 0, 4), (1, 0, 4), (2, 0, 4), (0, 1, 3)], [(0, 1), (1, 2)], None
        )
        g = build_graph(ds, item_link_threshold=0.5)
        m = ds.num_users
        rels = [r for _, r in g.neighbors(m + 0)]
        assert g.item_relation not in rels

    def test_threshold_validated(self):
        ds = make_dataset([(0, 0, 1)], [(0, 1)], None, m=2)
        with pytest.raises(ConfigError):
            build_graph(ds, item_link_threshold=1.5)


class TestNeighbors:
    def test_isolated_node_has_no_neighbors(self):
        ds = make_dataset([(0, 0, 2)], [(0, 1)], None, m=3)
        g = build_graph(ds)
        assert g.neighbors(2) == []

    def test_direct_construction(self):
        # user 0: trust edge to 1 and a train rating of item 0 at level 5
        ds = make_dataset([(0, 0, 5)], [(0, 1)], None, m=2)
        g = build_graph(ds)
        got = set(g.neighbors(0))
        assert got == {(1, g.social_relation), (2, g.level_relation(5))}

    def test_out_of_range_lookup(self):
        ds = make_dataset([(0, 0, 2)], [(0, 1)], None)
        g = build_graph(ds)
        with pytest.raises(IndexError):
            g.neighbors(g.num_nodes)

    def test_sorted_by_relation_then_node(self):
        ds = random_dataset(seed=5)
        g = build_graph(ds)
        for v in range(g.num_nodes):
            ids, rels = g.neighbor_arrays(v)
            keys = list(zip(rels.tolist(), ids.tolist()))
            assert keys == sorted(keys)


class TestInvariants:
    def test_symmetry(self):
        for seed in range(4):
            ds = random_dataset(seed=seed)
            g = build_graph(ds, item_link_threshold=0.4)
            for v in range(g.num_nodes):
                for w, r in g.neighbors(v):
                    assert (v, r) in g.neighbors(w)

    def test_no_leakage_of_heldout_edges(self):
        ds = random_dataset(seed=9)
        g = build_graph(ds)
        m = ds.num_users
        heldout = ds.ratings[np.isin(ds.split, (VALIDATION, TEST))]
        for u, i, level in heldout:
            assert (int(u), g.level_relation(level)) not in g.neighbors(m + int(i))

    def test_unsplit_dataset_rejected(self):
        ds = make_dataset([(0, 0, 2)], [(0, 1)], None, split=[-1])
        with pytest.raises(ContractError):
            build_graph(ds)

    def test_item_links_use_train_ratings_only(self):
        # identical rater sets, but one co-rating is held out: Jaccard on the
        # train split drops to 1/3 and the link must not appear
        ds = make_dataset(
            [(0, 0, 4), (1, 0, 4), (0, 1, 4), (1, 1, 4)],
            [(0, 1)],
            None,
            split=[TRAIN, TRAIN, TRAIN, TEST],
        )
        g = build_graph(ds, item_link_threshold=0.5)
        rels = [r for _, r in g.neighbors(ds.num_users)]
        assert g.item_relation not in rels


def test_graph_dump(tmp_path):
    ds = make_dataset([(0, 0, 3)], [(0, 1)], None)
    g = build_graph(ds)
    path = tmp_path / "graph.tsv"
    write_graph_tsv(g, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == g.nbr.size
    src, dst, rel = lines[0].split("\t")
    assert (int(dst), int(rel)) in g.neighbors(int(src))

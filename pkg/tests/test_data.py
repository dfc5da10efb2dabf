"""Parsing, filtering, split assignment, and dataset round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustrec.data import (
    TEST,
    TRAIN,
    UNSPLIT,
    VALIDATION,
    Dataset,
    RatingRecord,
    TrustRecord,
    assign_splits,
    filter_and_index,
    load_dataset,
    parse_edges,
    save_dataset,
    split_pairs,
)
from trustrec.errors import (
    ConfigError,
    EmptyDatasetError,
    EmptyInputError,
    ParseError,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestParseEdges:
    def test_duplicate_rating_keeps_last_value(self, tmp_path):
        r = write(tmp_path / "r.tsv", "u1\ti9\t4\nu1\ti9\t5\n")
        t = write(tmp_path / "t.tsv", "u1\tu2\n")
        ratings, _ = parse_edges(r, t)
        assert ratings == [RatingRecord("u1", "i9", 5)]

    def test_self_trust_dropped(self, tmp_path):
        r = write(tmp_path / "r.tsv", "u1\ti1\t3\n")
        t = write(tmp_path / "t.tsv", "u1\tu1\nu1\tu2\n")
        _, trust = parse_edges(r, t)
        assert trust == [TrustRecord("u1", "u2")]

    def test_distinct_records_pass_through(self, tmp_path):
        r = write(tmp_path / "r.tsv", "a\tx\t1\nb\ty\t2\nc\tz\t3\n")
        t = write(tmp_path / "t.tsv", "a\tb\nb\tc\n")
        ratings, trust = parse_edges(r, t)
        assert len(ratings) == 3
        assert len(trust) == 2

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        r = write(tmp_path / "r.tsv", "# header\n\na\tx\t4\n")
        t = write(tmp_path / "t.tsv", "a\tb\n# trailing\n")
        ratings, trust = parse_edges(r, t)
        assert ratings == [RatingRecord("a", "x", 4)]
        assert trust == [TrustRecord("a", "b")]

    def test_malformed_line_reports_line_number(self, tmp_path):
        r = write(tmp_path / "r.tsv", "a\tx\t4\nbroken line\n")
        t = write(tmp_path / "t.tsv", "a\tb\n")
        with pytest.raises(ParseError) as err:
            parse_edges(r, t)
        assert err.value.line_no == 2

    def test_non_integer_rating_rejected(self, tmp_path):
        r = write(tmp_path / "r.tsv", "a\tx\thigh\n")
        t = write(tmp_path / "t.tsv", "a\tb\n")
        with pytest.raises(ParseError):
            parse_edges(r, t)

    def test_empty_file_rejected(self, tmp_path):
        r = write(tmp_path / "r.tsv", "# only a comment\n")
        t = write(tmp_path / "t.tsv", "a\tb\n")
        with pytest.raises(EmptyInputError):
            parse_edges(r, t)

    def test_unknown_format_rejected(self, tmp_path):
        r = write(tmp_path / "r.tsv", "a\tx\t4\n")
        t = write(tmp_path / "t.tsv", "a\tb\n")
        with pytest.raises(ConfigError):
            parse_edges(r, t, fmt="csv")


class TestFilterAndIndex:
    def test_no_social_users_is_empty_dataset(self):
        with pytest.raises(EmptyDatasetError):
            filter_and_index([RatingRecord("a", "x", 3)], [])

    def test_socially_linked_users_survive(self):
        ds = filter_and_index(
            [RatingRecord("a", "x", 3), RatingRecord("b", "x", 4)],
            [TrustRecord("a", "b")],
        )
        assert ds.num_users == 2
        assert ds.num_items == 1
        assert ds.rating_levels == [3, 4]

    def test_isolated_user_dropped_social_only_user_kept(self):
        # c has no trust edge: c and its item y go away; b stays as a
        # social-only node
        ds = filter_and_index(
            [RatingRecord("a", "x", 3), RatingRecord("c", "y", 2)],
            [TrustRecord("a", "b")],
        )
        assert ds.user_ids == ["a", "b"]
        assert ds.item_ids == ["x"]
        assert ds.rating_levels == [3]
        np.testing.assert_array_equal(ds.ratings, [[0, 0, 3]])
        np.testing.assert_array_equal(ds.social, [[0, 1]])

    def test_every_rating_user_has_a_social_edge(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            users = [f"u{i}" for i in range(rng.integers(2, 8))]
            items = [f"i{j}" for j in range(rng.integers(1, 6))]
            ratings = [
                RatingRecord(str(rng.choice(users)), str(rng.choice(items)),
                             int(rng.integers(1, 6)))
                for _ in range(rng.integers(1, 12))
            ]
            trust = [
                TrustRecord(str(rng.choice(users)), str(rng.choice(users)))
                for _ in range(rng.integers(1, 6))
            ]
            trust = [t for t in trust if t.src != t.dst]
            try:
                ds = filter_and_index(ratings, trust)
            except EmptyDatasetError:
                continue
            social_users = set(ds.social.flatten().tolist())
            assert set(ds.ratings[:, 0].tolist()) <= social_users


def tiny_dataset(num_edges, seed=0):
    rng = np.random.default_rng(seed)
    ratings = [
        RatingRecord(f"u{rng.integers(4)}", f"i{k}", int(rng.integers(1, 6)))
        for k in range(num_edges)
    ]
    trust = [TrustRecord(f"u{i}", f"u{i + 1}") for i in range(3)]
    return filter_and_index(ratings, trust)


class TestAssignSplits:
    def test_exact_multiples(self):
        ds = assign_splits(tiny_dataset(10), (0.6, 0.2, 0.2), seed=7)
        counts = np.bincount(ds.split, minlength=3)
        assert counts.tolist() == [6, 2, 2]

    def test_remainder_goes_to_train(self):
        ds = assign_splits(tiny_dataset(11), (0.6, 0.2, 0.2), seed=0)
        counts = np.bincount(ds.split, minlength=3)
        assert counts.tolist() == [7, 2, 2]

    def test_deterministic(self):
        base = tiny_dataset(23)
        a = assign_splits(base, seed=5)
        b = assign_splits(base, seed=5)
        np.testing.assert_array_equal(a.split, b.split)

    def test_negative_fraction_rejected(self):
        with pytest.raises(ConfigError):
            assign_splits(tiny_dataset(5), (-0.1, 0.9, 0.2), seed=0)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            assign_splits(tiny_dataset(5), (0.5, 0.2, 0.2), seed=0)

    @given(st.integers(1, 200), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_partition_property(self, num_edges, seed):
        ds = assign_splits(tiny_dataset(num_edges), seed=seed)
        assert not np.any(ds.split == UNSPLIT)
        total = sum(
            int((ds.split == code).sum()) for code in (TRAIN, VALIDATION, TEST)
        )
        assert total == ds.ratings.shape[0]


class TestSplitPairs:
    def test_item_ids_are_global(self):
        ds = assign_splits(tiny_dataset(10), seed=1)
        rows = split_pairs(ds, TRAIN)
        assert rows.shape[1] == 3
        assert rows[:, 1].min() >= ds.num_users


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        ds = assign_splits(tiny_dataset(17, seed=3), seed=11)
        save_dataset(ds, tmp_path / "data")
        back = load_dataset(tmp_path / "data")
        assert back.user_ids == ds.user_ids
        assert back.item_ids == ds.item_ids
        assert back.rating_levels == ds.rating_levels
        np.testing.assert_array_equal(back.ratings, ds.ratings)
        np.testing.assert_array_equal(back.social, ds.social)
        np.testing.assert_array_equal(back.split, ds.split)
        assert back.split_fractions == ds.split_fractions
        assert back.split_seed == ds.split_seed

    def test_load_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")

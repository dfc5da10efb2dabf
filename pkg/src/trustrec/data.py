"""Edge-file parsing, preprocessing filters, splits, and dataset storage.

The canonical on-disk dataset is a directory with four files:

* ``nodes.tsv``   -- global node index, external id, kind (user/item)
* ``ratings.tsv`` -- user_idx, item_idx, rating, split
* ``social.tsv``  -- src_idx, dst_idx
* ``meta.json``   -- m, n, rating_levels, split seed and fractions

All functions are pure: they take immutable inputs plus an explicit seed
and never touch global random state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    EmptyDatasetError,
    EmptyInputError,
    ParseError,
)

TRAIN = 0
VALIDATION = 1
TEST = 2
UNSPLIT = -1

SPLIT_NAMES = {TRAIN: "train", VALIDATION: "val", TEST: "test", UNSPLIT: "none"}
SPLIT_CODES = {name: code for code, name in SPLIT_NAMES.items()}


class RatingRecord(NamedTuple):
    user: str
    item: str
    rating: int


class TrustRecord(NamedTuple):
    src: str
    dst: str


@dataclass
class Dataset:
    """Filtered, densely indexed rating + social data.

    ``ratings`` is (E, 3) int64 rows of (user_idx, item_idx, rating);
    ``social`` is (S, 2) int64 rows of (src_idx, dst_idx); ``split`` is
    (E,) int8 with codes TRAIN/VALIDATION/TEST or UNSPLIT.
    """

    user_ids: list[str]
    item_ids: list[str]
    rating_levels: list[int]
    ratings: np.ndarray
    social: np.ndarray
    split: np.ndarray
    split_fractions: tuple[float, float, float] | None = None
    split_seed: int | None = None

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @property
    def num_relations(self) -> int:
        # one relation per rating level, plus social, plus item-item
        return len(self.rating_levels) + 2

    @property
    def user_index(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.user_ids)}

    @property
    def item_index(self) -> dict[str, int]:
        return {iid: i for i, iid in enumerate(self.item_ids)}


def _iter_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield line_no, line


def parse_edges(rating_path, trust_path, fmt="tsv3"):
    """Read a rating file and a trust file into record lists.

    Duplicate (user, item) rating lines keep the position of the first
    occurrence but the value of the last; duplicate trust lines deduplicate
    and self-trust is dropped.
    """
    if fmt != "tsv3":
        raise ConfigError(f"unknown edge-file format {fmt!r}")

    ratings: dict[tuple[str, str], int] = {}
    for line_no, line in _iter_lines(rating_path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(rating_path, line_no, "expected 3 tab-separated fields")
        user, item, raw_rating = parts
        if not user or not item:
            raise ParseError(rating_path, line_no, "empty user or item id")
        try:
            rating = int(raw_rating)
        except ValueError:
            raise ParseError(
                rating_path, line_no, f"rating {raw_rating!r} is not an integer"
            ) from None
        ratings[(user, item)] = rating
    if not ratings:
        raise EmptyInputError(f"no rating records in {rating_path}")

    trust: dict[tuple[str, str], None] = {}
    for line_no, line in _iter_lines(trust_path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(trust_path, line_no, "expected 2 tab-separated fields")
        src, dst = parts
        if not src or not dst:
            raise ParseError(trust_path, line_no, "empty user id")
        if src == dst:
            continue
        trust.setdefault((src, dst))
    if not trust:
        raise EmptyInputError(f"no trust records in {trust_path}")

    rating_records = [RatingRecord(u, i, r) for (u, i), r in ratings.items()]
    trust_records = [TrustRecord(s, d) for s, d in trust]
    return rating_records, trust_records


def filter_and_index(ratings, trust):
    """Apply the social-link filter and assign dense indices.

    Users without any trust edge are dropped together with their ratings,
    then items left with no rating are dropped. Users that only appear in
    the trust graph are kept as social-only nodes. Indices follow first
    appearance: the surviving rating stream first, then the trust stream.
    """
    social_users = set()
    for rec in trust:
        social_users.add(rec.src)
        social_users.add(rec.dst)

    kept = [rec for rec in ratings if rec.user in social_users]
    if not kept:
        raise EmptyDatasetError("no ratings survive the social-link filter")

    user_ids: list[str] = []
    user_index: dict[str, int] = {}
    item_ids: list[str] = []
    item_index: dict[str, int] = {}

    def user_idx(uid):
        if uid not in user_index:
            user_index[uid] = len(user_ids)
            user_ids.append(uid)
        return user_index[uid]

    def item_idx(iid):
        if iid not in item_index:
            item_index[iid] = len(item_ids)
            item_ids.append(iid)
        return item_index[iid]

    rating_rows = [
        (user_idx(rec.user), item_idx(rec.item), rec.rating) for rec in kept
    ]
    social_rows = [(user_idx(rec.src), user_idx(rec.dst)) for rec in trust]

    levels = sorted({rec.rating for rec in kept})
    ratings_arr = np.asarray(rating_rows, dtype=np.int64)
    social_arr = np.asarray(social_rows, dtype=np.int64)

    return Dataset(
        user_ids=user_ids,
        item_ids=item_ids,
        rating_levels=levels,
        ratings=ratings_arr,
        social=social_arr,
        split=np.full(len(rating_rows), UNSPLIT, dtype=np.int8),
    )


def assign_splits(ds, fractions=(0.6, 0.2, 0.2), seed=0):
    """Shuffle rating edges with a seeded generator and partition them.

    Counts are floor(fraction * E) per split with the remainder assigned
    to train. Deterministic given (ds, fractions, seed).
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,):
        raise ConfigError("fractions must be (train, val, test)")
    if (fr < 0).any():
        raise ConfigError("split fractions must be non-negative")
    if abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")

    n_edges = ds.ratings.shape[0]
    counts = [int(np.floor(f * n_edges + 1e-9)) for f in fr]
    counts[0] += n_edges - sum(counts)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_edges)
    split = np.full(n_edges, UNSPLIT, dtype=np.int8)
    start = 0
    for code, count in zip((TRAIN, VALIDATION, TEST), counts):
        split[perm[start : start + count]] = code
        start += count

    return replace(
        ds,
        split=split,
        split_fractions=(float(fr[0]), float(fr[1]), float(fr[2])),
        split_seed=int(seed),
    )


def split_pairs(ds, split_code):
    """Rows (user_node, item_node, rating) for one split, item ids global."""
    mask = ds.split == split_code
    rows = ds.ratings[mask].copy()
    rows[:, 1] += ds.num_users
    return rows


def save_dataset(ds, out_dir):
    """Write the canonical dataset directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "nodes.tsv", "w", encoding="utf-8") as fh:
        for idx, uid in enumerate(ds.user_ids):
            fh.write(f"{idx}\t{uid}\tuser\n")
        for idx, iid in enumerate(ds.item_ids):
            fh.write(f"{ds.num_users + idx}\t{iid}\titem\n")

    with open(out / "ratings.tsv", "w", encoding="utf-8") as fh:
        for (u, i, r), code in zip(ds.ratings, ds.split):
            fh.write(f"{u}\t{i}\t{r}\t{SPLIT_NAMES[int(code)]}\n")

    with open(out / "social.tsv", "w", encoding="utf-8") as fh:
        for s, d in ds.social:
            fh.write(f"{s}\t{d}\n")

    meta = {
        "format": "trustrec-dataset-v1",
        "m": ds.num_users,
        "n": ds.num_items,
        "rating_levels": ds.rating_levels,
        "split_seed": ds.split_seed,
        "split_fractions": list(ds.split_fractions) if ds.split_fractions else None,
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(data_dir):
    """Read a dataset directory written by :func:`save_dataset`."""
    root = Path(data_dir)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"not a dataset directory (missing {meta_path})")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)

    m = int(meta["m"])
    n = int(meta["n"])
    user_ids = [""] * m
    item_ids = [""] * n
    with open(root / "nodes.tsv", encoding="utf-8") as fh:
        for line in fh:
            idx_s, ext, kind = line.rstrip("\n").split("\t")
            idx = int(idx_s)
            if kind == "user":
                user_ids[idx] = ext
            elif kind == "item":
                item_ids[idx - m] = ext
            else:
                raise ContractError(f"unknown node kind {kind!r} in nodes.tsv")

    rating_rows = []
    split_rows = []
    with open(root / "ratings.tsv", encoding="utf-8") as fh:
        for line in fh:
            u, i, r, name = line.rstrip("\n").split("\t")
            rating_rows.append((int(u), int(i), int(r)))
            split_rows.append(SPLIT_CODES[name])

    social_rows = []
    with open(root / "social.tsv", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            s, d = line.rstrip("\n").split("\t")
            social_rows.append((int(s), int(d)))

    fractions = meta.get("split_fractions")
    return Dataset(
        user_ids=user_ids,
        item_ids=item_ids,
        rating_levels=[int(v) for v in meta["rating_levels"]],
        ratings=np.asarray(rating_rows, dtype=np.int64).reshape(-1, 3),
        social=np.asarray(social_rows, dtype=np.int64).reshape(-1, 2),
        split=np.asarray(split_rows, dtype=np.int8),
        split_fractions=tuple(fractions) if fractions else None,
        split_seed=meta.get("split_seed"),
    )

"""Synthetic dataset generators for fixtures and benchmarks.

``random_dataset`` produces an arbitrary small dataset whose every user
carries a social link (so nothing is filtered) and every item at least one
rating. ``planted_communities`` builds two user groups with opposite item
preferences, conflicting ratings on shared items, and cross-group social
edges; the cross edges are deliberately misleading so that models which
aggregate every neighbor indiscriminately do worse than models that select
consistent ones.
"""

from __future__ import annotations

import numpy as np

from .data import RatingRecord, TrustRecord, assign_splits, filter_and_index


def random_dataset(num_users=20, num_items=15, num_ratings=60, num_social=30,
                   levels=(1, 2, 3, 4, 5), seed=0, fractions=(0.6, 0.2, 0.2)):
    """Random dataset with exact user/item/edge counts after filtering."""
    if num_ratings < num_items:
        raise ValueError("need at least one rating per item")
    max_social = num_users * (num_users - 1) // 2
    if not num_users - 1 <= num_social <= max_social:
        raise ValueError("num_social must cover a user chain and fit the pair count")

    rng = np.random.default_rng(seed)
    users = [f"u{i}" for i in range(num_users)]
    items = [f"i{j}" for j in range(num_items)]

    # chain guarantees every user survives the social-link filter
    social_pairs = {(i, i + 1) for i in range(num_users - 1)}
    while len(social_pairs) < num_social:
        a, b = rng.integers(num_users, size=2)
        if a == b:
            continue
        pair = (min(a, b), max(a, b))
        social_pairs.add((int(pair[0]), int(pair[1])))
    trust = [TrustRecord(users[a], users[b]) for a, b in sorted(social_pairs)]

    # one rating per item first so no item is dropped, then distinct extras
    pair_ids = rng.permutation(num_users * num_items)
    seen = set()
    ratings = []
    for j in range(num_items):
        u = int(rng.integers(num_users))
        seen.add(u * num_items + j)
        ratings.append(RatingRecord(users[u], items[j], int(rng.choice(levels))))
    for pid in pair_ids:
        if len(ratings) == num_ratings:
            break
        if int(pid) in seen:
            continue
        seen.add(int(pid))
        u, j = divmod(int(pid), num_items)
        ratings.append(RatingRecord(users[u], items[j], int(rng.choice(levels))))

    ds = filter_and_index(ratings, trust)
    return assign_splits(ds, fractions=fractions, seed=seed + 1)


def planted_communities(users_per_group=10, own_items=6, shared_items=5,
                        own_rated=4, shared_rated=3, cross_social=2,
                        within_social=2, seed=0, fractions=(0.6, 0.2, 0.2)):
    """Two-community dataset with planted social inconsistency.

    Group 0 rates its own items and the shared items high; group 1 rates
    its own items high but the shared items low. Social edges connect
    users within a group (consistent) and across groups (inconsistent).
    """
    rng = np.random.default_rng(seed)
    num_users = 2 * users_per_group
    users = [f"u{i}" for i in range(num_users)]
    items = [f"i{j}" for j in range(2 * own_items + shared_items)]

    def group_of(u):
        return 0 if u < users_per_group else 1

    def own_item_ids(grp):
        base = grp * own_items
        return list(range(base, base + own_items))

    shared_ids = list(range(2 * own_items, 2 * own_items + shared_items))

    ratings = []
    for u in range(num_users):
        grp = group_of(u)
        for j in rng.choice(own_item_ids(grp), size=own_rated, replace=False):
            ratings.append(RatingRecord(users[u], items[int(j)],
                                        int(rng.choice([4, 5]))))
        for j in rng.choice(shared_ids, size=shared_rated, replace=False):
            level = int(rng.choice([4, 5])) if grp == 0 else int(rng.choice([1, 2]))
            ratings.append(RatingRecord(users[u], items[int(j)], level))

    social_pairs = set()
    for grp in (0, 1):
        lo = grp * users_per_group
        members = list(range(lo, lo + users_per_group))
        for pos, u in enumerate(members):
            social_pairs.add((u, members[(pos + 1) % users_per_group]))
            for _ in range(within_social - 1):
                v = int(rng.choice(members))
                if v != u:
                    social_pairs.add((min(u, v), max(u, v)))
    for u in range(num_users):
        other = list(range(users_per_group, num_users)) if group_of(u) == 0 else \
            list(range(users_per_group))
        for v in rng.choice(other, size=cross_social, replace=False):
            social_pairs.add((min(u, int(v)), max(u, int(v))))

    trust = [TrustRecord(users[a], users[b]) for a, b in sorted(social_pairs)
             if a != b]

    ds = filter_and_index(ratings, trust)
    return assign_splits(ds, fractions=fractions, seed=seed + 1)

"""Finite-difference verification of the hand-derived backward pass.

A check builds a tiny random instance, runs one stochastic forward to fix
the drawn neighbor sets, then compares the analytic gradients of the
prediction against central differences of the frozen-replay forward, one
coordinate at a time. Coordinates whose +/- step evaluations land on
different sides of a ReLU kink are excluded (the difference quotient is
meaningless across the kink; analytically the subgradient at 0 is 0).

Relative error uses a small absolute floor in the denominator so that
coordinates with (near-)zero true gradient compare sanely:
|a - f| / max(|a|, |f|, 1e-6).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TRAIN, Dataset
from .graph import build_graph
from .model import ModelConfig, backward, forward, init_params

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5
_ERR_FLOOR = 1e-6


@dataclass
class GroupResult:
    name: str
    max_rel_err: float
    checked: int
    skipped: int

    def passed(self, tolerance):
        return self.max_rel_err <= tolerance


@dataclass
class CheckReport:
    groups: list[GroupResult]
    tolerance: float

    @property
    def passed(self):
        return all(g.passed(self.tolerance) for g in self.groups)

    @property
    def worst(self):
        return max((g.max_rel_err for g in self.groups), default=0.0)


def build_tiny_instance(seed, dim=3, num_nodes=6, layers=1, gamma=0.6,
                        ablate_query=False, ablate_sampling=False,
                        ablate_attention=False):
    """Random miniature dataset + graph + params for a gradient check.

    The dataset is built directly (no social-link filter) so isolated and
    social-only nodes appear too. Every edge lands in the train split.
    """
    rng = np.random.default_rng(seed)
    m = max(1, num_nodes // 2)
    n = max(1, num_nodes - m)
    levels = [1, 2, 3]

    pairs = [(u, i) for u in range(m) for i in range(n)]
    keep = rng.random(len(pairs)) < 0.6
    if not keep.any():
        keep[rng.integers(len(pairs))] = True
    ratings = np.asarray(
        [(u, i, int(rng.choice(levels))) for (u, i), k in zip(pairs, keep) if k],
        dtype=np.int64,
    )

    social = []
    for a in range(m):
        for b in range(a + 1, m):
            if rng.random() < 0.5:
                social.append((a, b))
    social = np.asarray(social, dtype=np.int64).reshape(-1, 2)

    ds = Dataset(
        user_ids=[f"u{i}" for i in range(m)],
        item_ids=[f"i{j}" for j in range(n)],
        rating_levels=levels,
        ratings=ratings,
        social=social,
        split=np.full(ratings.shape[0], TRAIN, dtype=np.int8),
        split_fractions=(1.0, 0.0, 0.0),
        split_seed=int(seed),
    )
    g = build_graph(ds, 0.5)

    cfg = ModelConfig(
        dim=dim,
        layers=layers,
        gamma=gamma,
        ablate_query=ablate_query,
        ablate_sampling=ablate_sampling,
        ablate_attention=ablate_attention,
    )
    eval_cfg = ModelConfig(dim=dim, layers=layers, gamma=gamma,
                           ablate_query=ablate_query,
                           ablate_sampling=ablate_sampling,
                           ablate_attention=ablate_attention,
                           eval_deterministic=True)

    # retry until the pair carries signal: at tiny dim a dead ReLU can zero
    # out one side, which makes the whole check vacuous
    params = init_params(cfg, m, n, g.num_relations, seed + 1)
    u = int(rng.integers(m))
    t = m + int(rng.integers(n))
    for attempt in range(50):
        if abs(forward(params, eval_cfg, g, u, t).prediction) > 1e-6:
            break
        u = int(rng.integers(m))
        t = m + int(rng.integers(n))
        params = init_params(cfg, m, n, g.num_relations, seed + 2 + attempt)
    return params, cfg, g, u, t


def _dense_groups(params, grads):
    """Materialize the accumulator as full-shape arrays per group name."""
    node = np.zeros_like(params.node_emb)
    for col, grad in grads.node_emb.items():
        node[:, col] = grad
    rel = np.zeros_like(params.rel_emb)
    for col, grad in grads.rel_emb.items():
        rel[:, col] = grad
    groups = {"node_emb": node, "rel_emb": rel}
    if grads.query_w is not None:
        groups["query_w"] = grads.query_w
    for i, grad in enumerate(grads.layer_w):
        groups[f"layer_w[{i + 1}]"] = (
            grad if grad is not None else np.zeros_like(params.layer_w[i])
        )
    if grads.att_w is not None:
        groups["att_w"] = grads.att_w
    return groups


def _param_arrays(params):
    return {
        "node_emb": params.node_emb,
        "rel_emb": params.rel_emb,
        "query_w": params.query_w,
        **{f"layer_w[{i + 1}]": w for i, w in enumerate(params.layer_w)},
        "att_w": params.att_w,
    }


def run_check(params, cfg, g, u, t, *, seed=0, step=DEFAULT_STEP,
              tolerance=DEFAULT_TOLERANCE, corrupt=None):
    """Compare analytic and finite-difference gradients per parameter group.

    ``corrupt`` names a group whose analytic gradient is perturbed before
    comparison; it exists as a negative control for the check itself.
    """
    rng = np.random.default_rng(seed)
    trace = forward(params, cfg, g, u, t, rng)
    grads = backward(params, cfg, trace, 1.0)
    analytic = _dense_groups(params, grads)
    if corrupt is not None:
        if corrupt not in analytic:
            raise KeyError(f"unknown parameter group {corrupt!r}")
        analytic[corrupt] = analytic[corrupt] + 1e-3

    def replay():
        rt = forward(params, cfg, g, u, t, frozen=trace)
        signs = np.concatenate(
            [rt.records[key].pre_act > 0.0 for key in rt.order]
        )
        return rt.prediction, signs

    results = []
    for name, arr in _param_arrays(params).items():
        if name not in analytic:
            continue  # ablated group: no gradient defined
        a = analytic[name]
        flat = arr.reshape(-1)
        a_flat = a.reshape(-1)
        worst = 0.0
        checked = 0
        skipped = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus, s_plus = replay()
            flat[i] = orig - step
            f_minus, s_minus = replay()
            flat[i] = orig
            if not np.array_equal(s_plus, s_minus):
                skipped += 1
                continue
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(a_flat[i] - fd) / max(abs(a_flat[i]), abs(fd), _ERR_FLOOR)
            worst = max(worst, err)
            checked += 1
        results.append(GroupResult(name, worst, checked, skipped))

    return CheckReport(groups=results, tolerance=tolerance)


def run_suite(num_instances=20, *, seed=0, step=DEFAULT_STEP,
              tolerance=DEFAULT_TOLERANCE):
    """Gradient-check a spread of tiny instances.

    Instances cycle through every ablation-flag combination while varying
    dim in {2,3,4}, node count up to 6, and depth in {1,2}.
    """
    reports = []
    for i in range(num_instances):
        flags = (bool(i & 1), bool(i & 2), bool(i & 4))
        params, cfg, g, u, t = build_tiny_instance(
            seed=seed + 17 * i,
            dim=2 + i % 3,
            num_nodes=4 + i % 3,
            layers=1 + i % 2,
            gamma=0.4 + 0.2 * (i % 3),
            ablate_query=flags[0],
            ablate_sampling=flags[1],
            ablate_attention=flags[2],
        )
        reports.append(
            run_check(params, cfg, g, u, t, seed=seed + i,
                      step=step, tolerance=tolerance)
        )
    return reports

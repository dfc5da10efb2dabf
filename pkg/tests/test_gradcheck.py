"""The finite-difference oracle itself, plus its negative control."""

import numpy as np
import pytest

from trustrec.gradcheck import build_tiny_instance, run_check, run_suite
from trustrec.model import forward


@pytest.mark.parametrize("layers", [1, 2])
@pytest.mark.parametrize("dim", [2, 4])
def test_analytic_matches_finite_differences(dim, layers):
    params, cfg, g, u, t = build_tiny_instance(21, dim=dim, num_nodes=6,
                                               layers=layers)
    report = run_check(params, cfg, g, u, t, seed=21)
    assert report.passed, [(g.name, g.max_rel_err) for g in report.groups]


@pytest.mark.parametrize(
    "flags",
    [
        {"ablate_query": True},
        {"ablate_sampling": True},
        {"ablate_attention": True},
        {"ablate_query": True, "ablate_sampling": True, "ablate_attention": True},
    ],
)
def test_ablated_variants_also_check(flags):
    params, cfg, g, u, t = build_tiny_instance(33, dim=3, num_nodes=6, **flags)
    report = run_check(params, cfg, g, u, t, seed=33)
    assert report.passed
    names = {grp.name for grp in report.groups}
    if flags.get("ablate_query"):
        assert "query_w" not in names
    if flags.get("ablate_attention"):
        assert "att_w" not in names


def test_corrupted_gradient_detected():
    params, cfg, g, u, t = build_tiny_instance(5, dim=3, num_nodes=6)
    report = run_check(params, cfg, g, u, t, seed=5, corrupt="layer_w[1]")
    assert not report.passed
    bad = {grp.name for grp in report.groups if not grp.passed(report.tolerance)}
    assert bad == {"layer_w[1]"}


def test_unknown_corrupt_group_rejected():
    params, cfg, g, u, t = build_tiny_instance(6)
    with pytest.raises(KeyError):
        run_check(params, cfg, g, u, t, corrupt="nonsense")


def test_frozen_replay_reproduces_prediction():
    params, cfg, g, u, t = build_tiny_instance(8, dim=3, num_nodes=6, layers=2)
    trace = forward(params, cfg, g, u, t, np.random.default_rng(8))
    replayed = forward(params, cfg, g, u, t, frozen=trace)
    assert replayed.prediction == pytest.approx(trace.prediction, rel=1e-15)
    for key, rec in replayed.records.items():
        np.testing.assert_array_equal(
            rec.sampled_ids, trace.records[key].sampled_ids
        )


def test_suite_covers_all_flag_combinations():
    reports = run_suite(8, seed=3)
    assert len(reports) == 8
    assert all(r.passed for r in reports)

"""Grid search, ablation runner, and one-axis sensitivity sweeps.

Every trial derives its own seed from (base seed, configuration), so a
trial's result does not depend on which other trials run alongside it and
grids are resumable. Trials are independent and can run in a process pool.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import TEST, VALIDATION, split_pairs
from .errors import ConfigError
from .graph import build_graph
from .model import ModelConfig, init_params
from .train import EvalReport, TrainConfig, evaluate, train

DEFAULT_GAMMAS = (0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_DIMS = (8, 16, 32, 64, 128, 256)
DEFAULT_LEARNING_RATES = (0.0005, 0.001, 0.005, 0.01, 0.05, 0.1)
DEFAULT_BATCH_SIZES = (32, 64, 128, 256, 512)
DEFAULT_LAYERS = (1,)


@dataclass(frozen=True)
class GridSpec:
    gamma_values: tuple = DEFAULT_GAMMAS
    embedding_sizes: tuple = DEFAULT_DIMS
    learning_rates: tuple = DEFAULT_LEARNING_RATES
    batch_sizes: tuple = DEFAULT_BATCH_SIZES
    layers: tuple = DEFAULT_LAYERS

    def __post_init__(self):
        for name in ("gamma_values", "embedding_sizes", "learning_rates",
                     "batch_sizes", "layers"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be non-empty")
        if any(not 0.0 <= g <= 1.0 for g in self.gamma_values):
            raise ConfigError("gamma values must be in [0,1]")
        if any(d < 1 for d in self.embedding_sizes):
            raise ConfigError("embedding sizes must be >= 1")
        if any(lr <= 0 for lr in self.learning_rates):
            raise ConfigError("learning rates must be positive")
        if any(b < 1 for b in self.batch_sizes):
            raise ConfigError("batch sizes must be >= 1")
        if any(l < 1 for l in self.layers):
            raise ConfigError("layer counts must be >= 1")

    def size(self):
        return (len(self.gamma_values) * len(self.embedding_sizes)
                * len(self.learning_rates) * len(self.batch_sizes)
                * len(self.layers))

    def assignments(self):
        for gamma in self.gamma_values:
            for dim in self.embedding_sizes:
                for lr in self.learning_rates:
                    for batch in self.batch_sizes:
                        for layers in self.layers:
                            yield {
                                "gamma": float(gamma),
                                "dim": int(dim),
                                "lr": float(lr),
                                "batch_size": int(batch),
                                "layers": int(layers),
                            }


@dataclass
class TrialResult:
    config: dict
    status: str = "ok"
    error: str = ""
    val: EvalReport | None = None
    test: EvalReport | None = None
    epochs_run: int = 0
    wall_time: float = 0.0
    seed: int = 0


def trial_seed(base_seed, config):
    """Stable per-trial seed from the base seed and the full assignment."""
    payload = json.dumps([base_seed, sorted(config.items())], sort_keys=True)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def _apply_assignment(model_cfg, train_cfg, config):
    model_kw = {}
    train_kw = {}
    for key, value in config.items():
        if key in ("gamma", "dim", "layers") or key.startswith("ablate_"):
            model_kw[key] = value
        elif key == "lr":
            train_kw["learning_rate"] = value
        else:
            train_kw[key] = value
    return replace(model_cfg, **model_kw), replace(train_cfg, **train_kw)


def _run_trial(args):
    ds, g, base_model, base_train, config, seed = args
    result = TrialResult(config=dict(config), seed=seed)
    started = time.perf_counter()
    try:
        model_cfg, train_cfg = _apply_assignment(base_model, base_train, config)
        train_cfg = replace(train_cfg, seed=seed + 1)
        params = init_params(model_cfg, ds.num_users, ds.num_items,
                             g.num_relations, seed)
        outcome = train(params, model_cfg, train_cfg, g, ds)
        result.val = evaluate(outcome.params, model_cfg, g,
                              split_pairs(ds, VALIDATION))
        result.test = evaluate(outcome.params, model_cfg, g,
                               split_pairs(ds, TEST))
        result.epochs_run = outcome.epochs_run
    except Exception as exc:  # a failed trial must not sink the grid
        result.status = "error"
        result.error = f"{type(exc).__name__}: {exc}"
    result.wall_time = time.perf_counter() - started
    return result


def _sort_key(result):
    if result.status != "ok":
        return (1, np.inf, np.inf, np.inf)
    return (0, result.val.rmse, result.config["dim"], result.config["lr"])


def run_grid(ds, spec, base_model, base_train, seed=0, budget=None, workers=1,
             item_link_threshold=0.5):
    """Run the Cartesian grid (or a seeded random subset of ``budget`` trials).

    Results come back sorted by validation RMSE with ties broken by smaller
    embedding size then lower learning rate; failed trials sort last.
    """
    assignments = list(spec.assignments())
    if budget is not None and budget < len(assignments):
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(len(assignments), size=budget, replace=False))
        assignments = [assignments[i] for i in chosen]

    g = build_graph(ds, item_link_threshold)
    jobs = [(ds, g, base_model, base_train, config, trial_seed(seed, config))
            for config in assignments]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(job) for job in jobs]

    results.sort(key=_sort_key)
    return results


ABLATION_VARIANTS = (
    ("full", {}),
    ("no_query", {"ablate_query": True}),
    ("no_sampling", {"ablate_sampling": True}),
    ("no_attention", {"ablate_attention": True}),
)


def run_ablation(ds, base_model, base_train, seed=0, item_link_threshold=0.5):
    """Train the full model and its three ablations on identical data/seeds."""
    g = build_graph(ds, item_link_threshold)
    shared_seed = trial_seed(seed, {"run": "ablation"})
    rows = []
    for name, overrides in ABLATION_VARIANTS:
        result = _run_trial((ds, g, base_model, base_train,
                             overrides, shared_seed))
        result.config = {"variant": name, **overrides}
        rows.append(result)
    return rows


SENSITIVITY_AXES = {"gamma": "gamma", "d": "dim", "lr": "lr"}


def run_sensitivity(ds, base_model, base_train, axis, values, seed=0,
                    item_link_threshold=0.5):
    """Vary one axis over the given values, holding everything else fixed."""
    if axis not in SENSITIVITY_AXES:
        raise ConfigError(f"axis must be one of {sorted(SENSITIVITY_AXES)}")
    key = SENSITIVITY_AXES[axis]
    unique = list(dict.fromkeys(values))
    g = build_graph(ds, item_link_threshold)
    results = []
    for value in unique:
        config = {key: int(value) if key == "dim" else float(value)}
        results.append(_run_trial((ds, g, base_model, base_train, config,
                                   trial_seed(seed, config))))
    return results


# ---------------------------------------------------------------------------
# TSV writers


def _metric_fields(result):
    if result.status != "ok":
        return ["nan"] * 4
    return [f"{result.val.rmse:.12g}", f"{result.val.mae:.12g}",
            f"{result.test.rmse:.12g}", f"{result.test.mae:.12g}"]


def write_grid_tsv(path, results):
    keys = ["gamma", "dim", "lr", "batch_size", "layers"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(keys) + "\tstatus\tval_rmse\tval_mae\ttest_rmse"
                 "\ttest_mae\tepochs\twall_time\tseed\terror\n")
        for r in results:
            row = [str(r.config.get(k, "")) for k in keys]
            row.append(r.status)
            row.extend(_metric_fields(r))
            row.extend([str(r.epochs_run), f"{r.wall_time:.3f}", str(r.seed),
                        r.error])
            fh.write("\t".join(row) + "\n")


def write_ablation_tsv(path, results):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant\tstatus\tval_rmse\tval_mae\ttest_rmse\ttest_mae"
                 "\tepochs\n")
        for r in results:
            fields = [r.config.get("variant", "?"), r.status]
            fields.extend(_metric_fields(r))
            fields.append(str(r.epochs_run))
            fh.write("\t".join(fields) + "\n")


def write_sensitivity_tsv(path, axis, results):
    key = SENSITIVITY_AXES[axis]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{axis}\tstatus\tval_rmse\tval_mae\ttest_rmse\ttest_mae\n")
        for r in results:
            fields = [str(r.config[key]), r.status]
            fields.extend(_metric_fields(r))
            fh.write("\t".join(fields) + "\n")

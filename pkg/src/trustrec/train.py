"""Loss, Adam with decoupled weight decay, the epoch loop with early
stopping on validation RMSE, and RMSE/MAE evaluation.

The reported loss is RMSE; the differentiated objective is the batch mean
squared error, whose gradient differs from the RMSE gradient only by a
positive per-batch scale that the learning rate absorbs (and which avoids
the RMSE singularity at zero loss).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .data import TRAIN, VALIDATION, split_pairs
from .errors import ConfigError, ContractError, NonFiniteGradientError
from .model import ModelParams, backward, forward, predict_rating


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    weight_decay: float = 0.0001
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be a positive integer")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")


@dataclass
class AdamState:
    """First/second moment buffers shape-matched to ModelParams."""

    m_node: np.ndarray
    v_node: np.ndarray
    m_rel: np.ndarray
    v_rel: np.ndarray
    m_query: np.ndarray
    v_query: np.ndarray
    m_layer: list[np.ndarray]
    v_layer: list[np.ndarray]
    m_att: np.ndarray
    v_att: np.ndarray
    step: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        return cls(
            m_node=np.zeros_like(params.node_emb),
            v_node=np.zeros_like(params.node_emb),
            m_rel=np.zeros_like(params.rel_emb),
            v_rel=np.zeros_like(params.rel_emb),
            m_query=np.zeros_like(params.query_w),
            v_query=np.zeros_like(params.query_w),
            m_layer=[np.zeros_like(w) for w in params.layer_w],
            v_layer=[np.zeros_like(w) for w in params.layer_w],
            m_att=np.zeros_like(params.att_w),
            v_att=np.zeros_like(params.att_w),
        )


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    mae: float
    count: int


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_rmse: float
    val_mae: float


@dataclass
class TrainResult:
    params: ModelParams  # best-validation snapshot
    final_params: ModelParams
    history: list[EpochStats]
    best_epoch: int
    best_val_rmse: float
    epochs_run: int
    epoch_seconds: list[float]


def batch_loss(predictions, targets):
    """RMSE over one batch."""
    preds = np.asarray(predictions, dtype=np.float64)
    targs = np.asarray(targets, dtype=np.float64)
    if preds.size == 0:
        raise ContractError("batch_loss requires a non-empty batch")
    if preds.shape != targs.shape:
        raise ContractError("predictions and targets differ in length")
    return float(np.sqrt(np.mean((targs - preds) ** 2)))


def loss_gradient(predictions, targets):
    """Per-example gradients of the batch mean squared error: 2(pred-targ)/B."""
    preds = np.asarray(predictions, dtype=np.float64)
    targs = np.asarray(targets, dtype=np.float64)
    if preds.size == 0:
        raise ContractError("loss_gradient requires a non-empty batch")
    if preds.shape != targs.shape:
        raise ContractError("predictions and targets differ in length")
    return 2.0 * (preds - targs) / preds.size


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise NonFiniteGradientError(name)


def adam_step(params, grads, state, cfg):
    """One Adam update with bias correction and decoupled weight decay.

    Only parameters that received a gradient this step are touched:
    untouched embedding columns keep their moments and skip decay. All
    gradients are validated finite before anything mutates, so a failed
    step leaves params and state unchanged. Mutates in place and returns
    (params, state).
    """
    for node, grad in grads.node_emb.items():
        _check_finite(f"node_emb[{node}]", grad)
    for rel, grad in grads.rel_emb.items():
        _check_finite(f"rel_emb[{rel}]", grad)
    if grads.query_w is not None:
        _check_finite("query_w", grads.query_w)
    for i, grad in enumerate(grads.layer_w):
        if grad is not None:
            _check_finite(f"layer_w[{i + 1}]", grad)
    if grads.att_w is not None:
        _check_finite("att_w", grads.att_w)

    state.step += 1
    t = state.step
    lr, b1, b2 = cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2
    eps, wd = cfg.adam_eps, cfg.weight_decay

    if grads.node_emb:
        cols = np.fromiter(sorted(grads.node_emb), dtype=np.int64)
        stacked = np.stack([grads.node_emb[int(c)] for c in cols])
        kernels.adam_columns(params.node_emb, state.m_node, state.v_node,
                             cols, stacked, t, lr, b1, b2, eps, wd)
    if grads.rel_emb:
        cols = np.fromiter(sorted(grads.rel_emb), dtype=np.int64)
        stacked = np.stack([grads.rel_emb[int(c)] for c in cols])
        kernels.adam_columns(params.rel_emb, state.m_rel, state.v_rel,
                             cols, stacked, t, lr, b1, b2, eps, wd)
    if grads.query_w is not None:
        kernels.adam_dense(params.query_w.reshape(-1), grads.query_w.reshape(-1),
                           state.m_query.reshape(-1), state.v_query.reshape(-1),
                           t, lr, b1, b2, eps, wd)
    for i, grad in enumerate(grads.layer_w):
        if grad is not None:
            kernels.adam_dense(params.layer_w[i].reshape(-1), grad.reshape(-1),
                               state.m_layer[i].reshape(-1),
                               state.v_layer[i].reshape(-1),
                               t, lr, b1, b2, eps, wd)
    if grads.att_w is not None:
        kernels.adam_dense(params.att_w, grads.att_w, state.m_att, state.v_att,
                           t, lr, b1, b2, eps, wd)
    return params, state


def evaluate(params, cfg_model, g, pairs, clip=None):
    """Deterministic RMSE/MAE over (user_node, item_node, rating) rows.

    Predictions are raw by default; pass clip=(lo, hi) to clamp them.
    """
    pairs = np.asarray(pairs)
    if pairs.size == 0:
        raise ContractError("evaluate requires at least one pair")
    eval_cfg = replace(cfg_model, eval_deterministic=True)
    residuals = np.empty(pairs.shape[0])
    for row, (u, t, rating) in enumerate(pairs):
        pred = forward(params, eval_cfg, g, int(u), int(t)).prediction
        if clip is not None:
            pred = min(max(pred, clip[0]), clip[1])
        residuals[row] = pred - float(rating)
    rmse = float(np.sqrt(np.mean(residuals**2)))
    mae = float(np.mean(np.abs(residuals)))
    return EvalReport(rmse=rmse, mae=mae, count=int(pairs.shape[0]))


class EarlyStopper:
    """Strict-improvement early stopping; ties consume patience."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch, value):
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


def train(params, cfg_model, cfg_train, g, ds, epoch_callback=None):
    """Run the optimization loop and return the best-validation snapshot.

    Each epoch shuffles the train edges with the seeded generator, walks
    minibatches accumulating one gradient buffer per batch, applies one
    Adam step per batch, then scores the validation split
    deterministically. Stops when validation RMSE fails to improve for
    ``patience`` consecutive epochs or at ``max_epochs``.

    ``epoch_callback(epoch, params)``, if given, runs after each epoch's
    evaluation; it must not mutate the parameters.
    """
    train_rows = split_pairs(ds, TRAIN)
    if train_rows.shape[0] == 0:
        raise ConfigError("train split is empty")
    val_rows = split_pairs(ds, VALIDATION)

    rng = np.random.default_rng(cfg_train.seed)
    state = AdamState.init(params)
    stopper = EarlyStopper(cfg_train.patience)
    best_params = params.copy()
    history: list[EpochStats] = []
    epoch_seconds: list[float] = []

    n_train = train_rows.shape[0]
    for epoch in range(1, cfg_train.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(n_train)
        sq_residuals = 0.0
        for lo in range(0, n_train, cfg_train.batch_size):
            batch = train_rows[order[lo : lo + cfg_train.batch_size]]
            targets = batch[:, 2].astype(np.float64)
            traces = []
            preds = np.empty(batch.shape[0])
            for row, (u, t, _) in enumerate(batch):
                trace = forward(params, cfg_model, g, int(u), int(t), rng)
                traces.append(trace)
                preds[row] = trace.prediction
            upstreams = loss_gradient(preds, targets)
            batch_grads = None
            for trace, up in zip(traces, upstreams):
                grads = backward(params, cfg_model, trace, float(up))
                batch_grads = grads if batch_grads is None else batch_grads.merge(grads)
            adam_step(params, batch_grads, state, cfg_train)
            sq_residuals += float(np.sum((preds - targets) ** 2))

        train_loss = float(np.sqrt(sq_residuals / n_train))
        if val_rows.shape[0]:
            report = evaluate(params, cfg_model, g, val_rows)
            val_rmse, val_mae = report.rmse, report.mae
        else:
            val_rmse, val_mae = train_loss, train_loss
        history.append(EpochStats(epoch, train_loss, val_rmse, val_mae))
        epoch_seconds.append(time.perf_counter() - started)
        if epoch_callback is not None:
            epoch_callback(epoch, params)

        if stopper.update(epoch, val_rmse):
            best_params = params.copy()
        if stopper.should_stop:
            break

    return TrainResult(
        params=best_params,
        final_params=params,
        history=history,
        best_epoch=stopper.best_epoch,
        best_val_rmse=float(stopper.best),
        epochs_run=len(history),
        epoch_seconds=epoch_seconds,
    )


def write_history(path, history):
    """TSV of per-epoch stats; content depends only on the training run."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_loss\tval_rmse\tval_mae\n")
        for row in history:
            fh.write(
                f"{row.epoch}\t{row.train_loss:.12g}"
                f"\t{row.val_rmse:.12g}\t{row.val_mae:.12g}\n"
            )

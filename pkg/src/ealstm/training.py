"""Losses, exact gradients, the optimizer loop, ensembling and grid search."""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .cells import backward_batch, forward_batch, init_parameters
from .data import gather, standardize, window_ends
from .exceptions import ConfigurationError, DataError, MetricError, NumericError

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LossSpec:
    kind: str = "basin_nse"
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in ("mse", "basin_nse"):
            raise ConfigurationError(f"loss kind must be 'mse' or 'basin_nse', got {self.kind!r}")
        if not self.epsilon > 0:
            raise ConfigurationError("loss epsilon must be > 0")


def sample_weights(basin_ids, spec, basin_stds):
    """Per-sample squared-error weights: 1 for mse, 1/(s(b)+eps)^2 for basin_nse."""
    if spec.kind == "mse":
        return np.ones(len(basin_ids))
    w = np.empty(len(basin_ids))
    for n, bid in enumerate(basin_ids):
        try:
            s = basin_stds[bid]
        except KeyError:
            raise DataError(f"unknown basin id {bid!r}: no discharge std available") from None
        w[n] = 1.0 / (s + spec.epsilon) ** 2
    return w


def loss_value(predictions, spec, basin_stds=None):
    """Mean weighted squared error over ``(basin_id, y_hat, y)`` samples.

    For ``basin_nse`` each sample's squared error is divided by
    ``(s(b) + eps)^2``; the mean over samples keeps the value independent of
    batch size.
    """
    if not predictions:
        raise DataError("loss_value needs at least one sample")
    ids = [p[0] for p in predictions]
    yhat = np.array([p[1] for p in predictions], dtype=np.float64)
    y = np.array([p[2] for p in predictions], dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(yhat))
    if bad.size:
        raise NumericError(f"non-finite prediction for sample {int(bad[0])} (basin {ids[bad[0]]})")
    w = sample_weights(ids, spec, basin_stds or {})
    return float(np.mean(w * (yhat - y) ** 2))


def batch_loss_and_grad(params, dynamic, static, target, weights, dropout_mask=None):
    """Weighted mean squared error of a batch and its exact gradient."""
    pred, cache = forward_batch(params, dynamic, static, dropout_mask)
    err = pred - np.asarray(target, dtype=np.float64)
    n = err.size
    loss = float(np.mean(weights * err * err))
    grads = backward_batch(params, cache, 2.0 * weights * err / n)
    return loss, grads, pred


def backward(params, sequence, target, spec, basin_std=None):
    """Loss of a single window and its gradient set (dropout disabled)."""
    if spec.kind == "basin_nse":
        if basin_std is None:
            raise DataError("basin_nse loss needs the basin's discharge std")
        w = np.array([1.0 / (basin_std + spec.epsilon) ** 2])
    else:
        w = np.ones(1)
    static = None if sequence.static is None else np.asarray(sequence.static)[None, :]
    loss, grads, _ = batch_loss_and_grad(params, np.asarray(sequence.dynamic)[None], static,
                                         np.array([target]), w)
    return grads, loss


def prediction_static_gradient(params, dynamic, static):
    """Predictions and d(prediction)/d(static attributes) for each sequence."""
    pred, cache = forward_batch(params, dynamic, static)
    grads = backward_batch(params, cache, np.ones_like(pred))
    if grads.static is None:
        raise ConfigurationError("model has no static inputs")
    return pred, grads.static


# ----------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()})


def clip_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_step(params, grads, state, lr):
    state.step += 1
    b1c = 1.0 - ADAM_BETA1 ** state.step
    b2c = 1.0 - ADAM_BETA2 ** state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        params.arrays[name] = params.arrays[name] - lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)


def learning_rate(config, epoch):
    """Base rate, halved ``lr_halvings`` times at evenly spaced epochs."""
    if config.epochs == 0:
        return config.learning_rate
    stage = min(config.lr_halvings, (config.lr_halvings + 1) * epoch // config.epochs)
    return config.learning_rate * 0.5 ** stage


# ------------------------------------------------------------------ training

def model_dims(config, datasets):
    dynamic_dim = datasets[0].forcings.shape[1]
    static_dim = datasets[0].attributes.size
    if config.variant == "lstm":
        return "lstm", dynamic_dim, 0
    if config.variant == "lstm_static":
        return "lstm", dynamic_dim, static_dim
    return "ealstm", dynamic_dim, static_dim


def basin_discharge_stds(datasets, interval):
    """Population std of (standardized) discharge per basin over ``interval``."""
    out = {}
    for ds in datasets:
        lo, hi = ds.index_range(interval)
        q = ds.discharge[lo:hi]
        q = q[~np.isnan(q)]
        out[ds.basin_id] = float(q.std()) if q.size else 0.0
    return out


class _Sampler:
    """Gathers (basin, end-day) windows for a batch of pooled indices."""

    def __init__(self, datasets, seq_len, interval):
        self.datasets = datasets
        self.seq_len = seq_len
        basin_idx, ends = [], []
        self.excluded = []
        for b, ds in enumerate(datasets):
            e = window_ends(ds, seq_len, interval)
            if e.size == 0:
                self.excluded.append(ds.basin_id)
                continue
            basin_idx.append(np.full(e.size, b))
            ends.append(e)
        self.basin_idx = np.concatenate(basin_idx) if basin_idx else np.empty(0, dtype=np.int64)
        self.ends = np.concatenate(ends) if ends else np.empty(0, dtype=np.int64)

    def __len__(self):
        return self.ends.size

    def batch(self, idx):
        idx = np.sort(idx)  # group by basin; order within a batch does not affect the mean loss
        bidx = self.basin_idx[idx]
        ends = self.ends[idx]
        dyn = np.empty((idx.size, self.seq_len, self.datasets[0].forcings.shape[1]))
        for b in np.unique(bidx):
            sel = bidx == b
            dyn[sel] = gather(self.datasets[b], ends[sel], self.seq_len)
        static = np.stack([self.datasets[b].attributes for b in bidx])
        target = np.array([self.datasets[b].discharge[e] for b, e in zip(bidx, ends)])
        ids = [self.datasets[b].basin_id for b in bidx]
        return dyn, static, target, ids


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def train(datasets, config, seed=None, on_epoch=None):
    """Train one model on the pooled training-period windows of all basins.

    ``datasets`` must already be standardized. Returns ``(params, log)``.
    ``on_epoch(epoch, params, record)`` is called after every epoch.
    """
    seed = config.seeds[0] if seed is None else seed
    if not datasets:
        raise ConfigurationError("no datasets given")
    interval = config.split.train
    variant, d_dim, s_dim = model_dims(config, datasets)
    params = init_parameters(variant, config.hidden_size, d_dim, s_dim, seed=seed)
    training_log = TrainingLog()
    if config.epochs == 0:
        return params, training_log
    sampler = _Sampler(datasets, config.sequence_length, interval)
    for bid in sampler.excluded:
        msg = f"basin {bid} excluded: fewer than {config.sequence_length} days of history with targets in training period"
        log.warning(msg)
        training_log.excluded.append(bid)
        training_log.warnings.append(msg)
    if len(sampler) == 0:
        raise ConfigurationError("all basins excluded: no training windows available")
    spec = LossSpec(config.loss, config.epsilon)
    stds = basin_discharge_stds(datasets, interval)
    rng = np.random.default_rng(seed)
    state = OptimizerState.zeros_like(params)
    use_static = config.variant != "lstm"
    H = config.hidden_size
    step = 0
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        order = rng.permutation(len(sampler))
        losses = []
        for start in range(0, order.size, config.batch_size):
            dyn, static, target, ids = sampler.batch(order[start:start + config.batch_size])
            weights = sample_weights(ids, spec, stds)
            mask = None
            if config.dropout > 0:
                mask = (rng.random((target.size, H)) >= config.dropout) / (1.0 - config.dropout)
            loss, grads, _ = batch_loss_and_grad(params, dyn, static if use_static else None,
                                                 target, weights, mask)
            clipped, _ = clip_global_norm(grads.params, config.clip_norm)
            adam_step(params, clipped, state, lr)
            losses.append(loss * target.size)
            step += 1
        record = {"epoch": epoch + 1, "step": step, "loss": float(np.sum(losses) / len(sampler)), "lr": lr}
        training_log.records.append(record)
        log.info("epoch %d loss %.5f lr %.2e", epoch + 1, record["loss"], lr)
        if on_epoch is not None:
            on_epoch(epoch + 1, params, record)
    return params, training_log


# ---------------------------------------------------------------- inference

def predict(params, dynamic, static=None, batch_size=2048):
    """Deterministic predictions (dropout off) for a stack of windows."""
    dynamic = np.asarray(dynamic, dtype=np.float64)
    out = np.empty(dynamic.shape[0])
    if params.static_dim == 0:
        static = None
    for start in range(0, dynamic.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        st = None if static is None else np.asarray(static)[sl] if np.ndim(static) == 2 else static
        out[sl], _ = forward_batch(params, dynamic[sl], st)
    return out


def ensemble_predict(models, dynamic, static=None):
    """Mean prediction across models at each window."""
    if not models:
        raise ConfigurationError("ensemble_predict needs at least one model")
    first = models[0]
    for m in models[1:]:
        if not first.same_architecture(m):
            raise ConfigurationError("ensemble members must share architecture dims")
    preds = np.stack([predict(m, dynamic, static) for m in models])
    # mean as offset from the first member: exact when all members agree
    return preds[0] + (preds - preds[0]).mean(axis=0)


def predict_basin(models, ds, interval, seq_len, static=None):
    """Ensemble predictions for every observed day of ``ds`` in ``interval``.

    Returns ``(dates, prediction, observation)`` in the dataset's units.
    ``static`` overrides the basin's attribute vector (noise experiments).
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    ends = window_ends(ds, seq_len, interval)
    if ends.size == 0:
        return ds.dates[ends], np.empty(0), np.empty(0)
    dyn = gather(ds, ends, seq_len)
    st = ds.attributes if static is None else static
    st = np.broadcast_to(st, (ends.size, st.size))
    return ds.dates[ends], ensemble_predict(models, dyn, st), ds.discharge[ends]


def evaluate(models, datasets, interval, seq_len, stats=None):
    """Per-basin metric rows; predictions de-standardized when ``stats`` given."""
    rows = []
    for ds in datasets:
        _, pred, obs = predict_basin(models, ds, interval, seq_len)
        if stats is not None:
            pred, obs = stats.inverse_discharge(pred), stats.inverse_discharge(obs)
        row = {"basin_id": ds.basin_id, "n_days": int(obs.size)}
        if obs.size >= 2:
            row.update(metrics.metric_row(obs, pred))
        else:
            row.update({k: float("nan") for k in metrics.METRIC_NAMES})
        rows.append(row)
    return rows


# --------------------------------------------------------------- grid search

def expand_space(space):
    """Cartesian product of ``{field: [values]}`` as a list of override dicts."""
    if not space:
        raise ConfigurationError("search space is empty")
    keys = sorted(space)
    for k in keys:
        if not isinstance(space[k], list) or not space[k]:
            raise ConfigurationError(f"search space entry {k!r} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(space[k] for k in keys))]


def basin_folds(basin_ids, k, seed=0):
    if len(basin_ids) < k:
        raise ConfigurationError(f"fewer basins ({len(basin_ids)}) than folds ({k})")
    order = np.random.default_rng(seed).permutation(len(basin_ids))
    return [[basin_ids[i] for i in fold] for fold in np.array_split(order, k)]


def grid_search(datasets, base_config, space, k=4, seed=0):
    """k-fold cross-validation over basins for every candidate in ``space``.

    ``datasets`` are raw (unstandardized); each fold is standardized with its
    own training basins. Held-out basins are scored on their training-period
    data. Returns ``(best_overrides, table)`` where ``table`` has one row per
    candidate with its median NSE over all held-out basins.
    """
    if k < 2:
        raise ConfigurationError("grid search needs k >= 2 folds")
    candidates = expand_space(space)
    by_id = {ds.basin_id: ds for ds in datasets}
    folds = basin_folds(list(by_id), k, seed)
    table = []
    for n, overrides in enumerate(candidates):
        config = base_config.replace(**overrides)
        scores = []
        for held in folds:
            train_sets = [by_id[b] for b in by_id if b not in held]
            std_train, stats = standardize(train_sets, config.split)
            std_test = [stats.apply(by_id[b]) for b in held]
            params, _ = train(std_train, config, seed=config.seeds[0])
            for ds in std_test:
                _, pred, obs = predict_basin(params, ds, config.split.train, config.sequence_length)
                try:
                    scores.append(metrics.nse(obs, pred))
                except MetricError:
                    scores.append(float("nan"))
        med = float(np.nanmedian(scores)) if np.any(~np.isnan(scores)) else float("nan")
        table.append({"candidate": n, **overrides, "median_nse": med})
        log.info("candidate %d %s median NSE %.4f", n, overrides, med)
    valid = [r for r in table if not np.isnan(r["median_nse"])]
    if not valid:
        raise NumericError("no candidate produced a finite median NSE")
    best = max(valid, key=lambda r: r["median_nse"])
    return candidates[best["candidate"]], table

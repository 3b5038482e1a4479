"""Post-training analysis: gradient-based Morris sensitivity, attribute-noise
robustness, the static input-gate embedding, k-means clustering with
silhouette scores, variance reduction of signatures, and paired model
comparison."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .cells import CellParameters, input_gate
from .data import gather, window_ends
from .exceptions import ConfigurationError, DataError, MetricError, VariantError
from .training import predict_basin, prediction_static_gradient

DEFAULT_SIGMAS = tuple(round(0.1 * k, 1) for k in range(1, 11))


# -------------------------------------------------------------- sensitivity

@dataclass
class SensitivityTable:
    basin_ids: list
    attribute_names: tuple
    per_basin: np.ndarray      # (basins, attributes) mean |d y / d x_s|
    score: np.ndarray          # (attributes,) mean of per-basin min-max normalized values
    rank: np.ndarray           # (attributes,) 1 = most sensitive

    def rows(self):
        return [{"attribute": n, "score": float(s), "rank": int(r)}
                for n, s, r in sorted(zip(self.attribute_names, self.score, self.rank), key=lambda x: x[2])]


def _static_gradient(model, dynamic, static):
    if isinstance(model, CellParameters):
        if model.static_dim == 0:
            raise VariantError("sensitivity analysis needs a model with static inputs")
        return prediction_static_gradient(model, dynamic, static)
    return model.static_gradient(dynamic, static)


def minmax_rows(values):
    lo = values.min(axis=1, keepdims=True)
    span = values.max(axis=1, keepdims=True) - lo
    return np.divide(values - lo, span, out=np.zeros_like(values), where=span > 0)


def morris_sensitivity(model, datasets, interval, seq_len, batch_size=2048):
    """Mean absolute analytic elementary effect of each static attribute.

    ``model`` is a :class:`CellParameters` or any object exposing
    ``static_gradient(dynamic, static) -> (prediction, gradient)``.
    """
    per_basin = []
    ids = []
    for ds in datasets:
        ends = window_ends(ds, seq_len, interval)
        if ends.size == 0:
            raise DataError(f"basin {ds.basin_id}: no days in the analysis period")
        total = np.zeros(ds.attributes.size)
        for start in range(0, ends.size, batch_size):
            e = ends[start:start + batch_size]
            dyn = gather(ds, e, seq_len)
            _, grad = _static_gradient(model, dyn, np.broadcast_to(ds.attributes, (e.size, ds.attributes.size)))
            total += np.abs(grad).sum(axis=0)
        per_basin.append(total / ends.size)
        ids.append(ds.basin_id)
    if not per_basin:
        raise DataError("no basins to analyze")
    per_basin = np.array(per_basin)
    score = minmax_rows(per_basin).mean(axis=0)
    order = np.argsort(-score, kind="stable")
    rank = np.empty(score.size, dtype=int)
    rank[order] = np.arange(1, score.size + 1)
    return SensitivityTable(ids, tuple(datasets[0].attribute_names), per_basin, score, rank)


# --------------------------------------------------------------- robustness

def noise_robustness(models, datasets, interval, seq_len, sigmas=DEFAULT_SIGMAS, draws=50, seed=0, stats=None):
    """NSE per (sigma, draw, basin) under Gaussian noise on the standardized
    attributes. Returns ``{sigma: array (draws, basins)}``.

    Draw ``j`` at sigma index ``s`` uses the generator seeded by
    ``(seed, s, j)``, so draws are independent and reproducible in isolation.
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    out = {}
    for s_idx, sigma in enumerate(sigmas):
        if sigma < 0:
            raise ConfigurationError("noise sigma must be >= 0")
        table = np.empty((draws, len(datasets)))
        for j in range(draws):
            rng = np.random.default_rng([seed, s_idx, j])
            for b, ds in enumerate(datasets):
                noise = rng.normal(0.0, 1.0, ds.attributes.size) * sigma
                _, pred, obs = predict_basin(models, ds, interval, seq_len, static=ds.attributes + noise)
                if stats is not None:
                    pred, obs = stats.inverse_discharge(pred), stats.inverse_discharge(obs)
                table[j, b] = metrics.nse(obs, pred)
        out[float(sigma)] = table
    return out


# ---------------------------------------------------------------- embedding

@dataclass
class EmbeddingMatrix:
    basin_ids: list
    values: np.ndarray     # (basins, hidden) input-gate activations in (0, 1)


def extract_embedding(params, datasets):
    if params.variant != "ealstm":
        raise VariantError("embeddings exist only for the ealstm variant")
    static = np.stack([ds.attributes for ds in datasets])
    return EmbeddingMatrix([ds.basin_id for ds in datasets], input_gate(params, static))


# --------------------------------------------------------------- clustering

def _sqdist(points, centroids):
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def silhouette_samples(points, labels):
    """Euclidean silhouette per point; points in singleton clusters get 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ConfigurationError("silhouette needs at least two clusters")
    dist = np.sqrt(_sqdist(points, points))
    np.fill_diagonal(dist, 0.0)
    out = np.zeros(len(points))
    for n in range(len(points)):
        own = labels == labels[n]
        size = own.sum()
        if size == 1:
            continue
        a = dist[n, own].sum() / (size - 1)
        b = min(dist[n, labels == c].mean() for c in uniq if c != labels[n])
        m = max(a, b)
        out[n] = 0.0 if m == 0 else (b - a) / m
    return out


def _kmeanspp(points, k, rng):
    n = len(points)
    centroids = [points[rng.integers(n)]]
    closest = _sqdist(points, np.array(centroids))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids.append(points[idx])
        closest = np.minimum(closest, _sqdist(points, points[idx][None, :])[:, 0])
    return np.array(centroids)


def _lloyd(points, centroids, max_iter):
    history = []
    labels = None
    for _ in range(max_iter):
        d = _sqdist(points, centroids)
        new_labels = d.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(len(centroids)):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
            else:
                # empty cluster: re-seed at the point farthest from its centroid
                far = int(np.argmax(d[np.arange(len(points)), labels]))
                centroids[c] = points[far]
                labels[far] = c
                d[far] = 0.0
        history.append(float(_sqdist(points, centroids)[np.arange(len(points)), labels].sum()))
    d = _sqdist(points, centroids)
    labels = d.argmin(axis=1)
    wcss = float(d[np.arange(len(points)), labels].sum())
    return labels, centroids, wcss, history


@dataclass
class ClusterResult:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float
    wcss_history: list
    silhouettes: np.ndarray
    mean_silhouette: float
    min_silhouette: float
    variance_reduction: dict = field(default_factory=dict)


def kmeans(points, k, restarts=10, seed=0, max_iter=300):
    """Best of ``restarts`` k-means++/Lloyd runs by within-cluster sum of squares."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise ConfigurationError(f"k={k} must be between 1 and the number of points ({n})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        run = _lloyd(points, _kmeanspp(points, k, rng), max_iter)
        if best is None or run[2] < best[2]:
            best = run
    labels, centroids, wcss, history = best
    if k == 1:
        sil = np.zeros(n)
    elif k == n:
        sil = np.zeros(n)
    else:
        sil = silhouette_samples(points, labels)
    return ClusterResult(k, labels, centroids, wcss, history, sil, float(sil.mean()), float(sil.min()))


def cluster_sweep(points, k_values, restarts=10, seed=0):
    rows = []
    for k in k_values:
        res = kmeans(points, k, restarts, seed)
        rows.append({"k": k, "mean_silhouette": res.mean_silhouette,
                     "min_silhouette": res.min_silhouette, "wcss": res.wcss})
    return rows


def adjusted_rand_index(a, b):
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)

    def pairs(x):
        return (x * (x - 1) / 2.0).sum()

    index = pairs(table)
    ra, rb = pairs(table.sum(1)), pairs(table.sum(0))
    expected = ra * rb / pairs(np.array([len(a)], dtype=float))
    top = 0.5 * (ra + rb)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))


def variance_reduction(table, labels, names=None):
    """``1 - (size-weighted within-cluster variance) / total variance`` per column."""
    if isinstance(table, dict):
        names = list(table)
        table = np.column_stack([np.asarray(table[n], dtype=float) for n in names])
    table = np.asarray(table, dtype=np.float64)
    if table.ndim == 1:
        table = table[:, None]
    labels = np.asarray(labels)
    names = names or [f"col{j}" for j in range(table.shape[1])]
    out = {}
    for j, name in enumerate(names):
        col = table[:, j]
        total = col.var()
        if not total > 0:
            raise MetricError(f"variance reduction undefined for {name!r}: zero total variance")
        within = sum((labels == c).sum() * col[labels == c].var() for c in np.unique(labels)) / col.size
        out[name] = float(1.0 - within / total)
    return out


# --------------------------------------------------------------- statistics

@dataclass
class Comparison:
    p_value: float
    effect_size: float       # Cohen's d on paired differences (B - A)
    statistic: float         # sum of positive signed ranks
    n: int                   # non-zero differences
    method: str


def _ranks(values):
    """Average ranks (1-based) with ties sharing the mean rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def signed_rank_distribution(ranks):
    """Exact null distribution of W+ for the given (possibly tied) ranks.

    Returns ``(support, probabilities)``; ranks are doubled internally so
    half-integer ties stay integral.
    """
    doubled = np.rint(2 * np.asarray(ranks)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    support = np.arange(total + 1) / 2.0
    keep = counts > 0
    return support[keep], counts[keep] / 2.0 ** len(doubled)


def compare_models(nse_a, nse_b, exact_max_n=25):
    """Paired Wilcoxon signed-rank test (two-sided) and Cohen's d of B - A."""
    a = np.asarray(nse_a, dtype=np.float64)
    b = np.asarray(nse_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigurationError("compare_models needs equal-length 1-d paired vectors")
    diff = b - a
    nz = diff[diff != 0]
    if nz.size == 0:
        return Comparison(1.0, 0.0, 0.0, 0, "degenerate")
    sd = diff.std(ddof=1) if diff.size > 1 else 0.0
    mean = diff.mean()
    d = mean / sd if sd > 0 else math.copysign(math.inf, mean)
    ranks = _ranks(np.abs(nz))
    w_plus = float(ranks[nz > 0].sum())
    n = nz.size
    if n <= exact_max_n:
        support, prob = signed_rank_distribution(ranks)
        lower = prob[support <= w_plus + 1e-9].sum()
        upper = prob[support >= w_plus - 1e-9].sum()
        p = min(1.0, 2.0 * min(lower, upper))
        method = "exact"
    else:
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        z = (w_plus - n * (n + 1) / 4.0) / math.sqrt(var)
        p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
        method = "normal"
    return Comparison(float(p), float(d), w_plus, int(n), method)

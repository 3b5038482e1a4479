"""Evaluation metrics and hydrologic signatures for simulated vs observed flow.

All functions take ``(obs, sim)`` arrays in mm/day. Days where the
observation is missing (NaN) are dropped pairwise. Standard deviations are
population (ddof=0) throughout.
"""
import csv
import io
import json
import math

import numpy as np

from .exceptions import MetricError

FDC_EPS = 1e-6
FHV_FRACTION = 0.02
FMS_LOWER, FMS_UPPER = 0.2, 0.7
FLV_FRACTION = 0.3

METRIC_NAMES = ("nse", "alpha_nse", "beta_nse", "fhv", "fms", "flv")
SIGNATURE_NAMES = (
    "q_mean", "runoff_ratio", "slope_fdc", "baseflow_index", "stream_elas",
    "q5", "q95", "high_q_freq", "high_q_dur", "low_q_freq", "low_q_dur",
    "zero_q_freq", "hfd_mean",
)
REPORT_FORMAT_VERSION = 1


def _paired(obs, sim):
    obs = np.asarray(obs, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if obs.shape != sim.shape or obs.ndim != 1:
        raise MetricError(f"obs and sim must be 1-d of equal length, got {obs.shape} and {sim.shape}")
    keep = ~np.isnan(obs)
    obs, sim = obs[keep], sim[keep]
    if obs.size < 2:
        raise MetricError("need at least two paired observations")
    if not np.all(np.isfinite(sim)):
        raise MetricError("simulation contains non-finite values")
    return obs, sim


def _obs_std(obs, metric):
    std = obs.std()
    if not std > 0:
        raise MetricError(f"{metric}: observed series has zero variance")
    return std


def nse(obs, sim):
    obs, sim = _paired(obs, sim)
    denom = np.sum((obs - obs.mean()) ** 2)
    if not denom > 0:
        raise MetricError("nse: observed series has zero variance")
    return float(1.0 - np.sum((sim - obs) ** 2) / denom)


def alpha_nse(obs, sim):
    obs, sim = _paired(obs, sim)
    return float(sim.std() / _obs_std(obs, "alpha_nse"))


def beta_nse(obs, sim):
    obs, sim = _paired(obs, sim)
    return float((sim.mean() - obs.mean()) / _obs_std(obs, "beta_nse"))


def _fdc(values):
    """Flow duration curve: values sorted descending (highest exceedance rank first)."""
    return np.sort(values)[::-1]


def fhv(obs, sim, h=FHV_FRACTION):
    """Percent bias of the top ``h`` fraction of the flow duration curve.

    Both series are sorted independently and paired by exceedance rank.
    """
    obs, sim = _paired(obs, sim)
    n_high = int(np.round(h * obs.size))
    if n_high < 1:
        raise MetricError(f"fhv: series too short for a top-{h:.0%} segment ({obs.size} values)")
    qo = _fdc(obs)[:n_high]
    qs = _fdc(sim)[:n_high]
    total = qo.sum()
    if total == 0:
        raise MetricError("fhv: observed high-flow segment sums to zero")
    return float((qs - qo).sum() / total * 100.0)


def _exceedance_value(fdc, p):
    idx = min(int(np.round(p * len(fdc))), len(fdc) - 1)
    return fdc[idx]


def fms(obs, sim, m1=FMS_LOWER, m2=FMS_UPPER):
    """Percent bias of the log-slope of the FDC between exceedance m1 and m2."""
    obs, sim = _paired(obs, sim)
    qo = np.maximum(_fdc(obs), FDC_EPS)
    qs = np.maximum(_fdc(sim), FDC_EPS)
    vals = [_exceedance_value(q, p) for q in (qs, qo) for p in (m1, m2)]
    if min(vals) <= 0:
        raise MetricError("fms: non-positive flow at the mid-segment exceedance points")
    qs1, qs2, qo1, qo2 = np.log(vals)
    slope_obs = qo1 - qo2
    if slope_obs == 0:
        raise MetricError("fms: observed FDC mid-segment is flat")
    return float(((qs1 - qs2) - slope_obs) / slope_obs * 100.0)


def flv(obs, sim, low=FLV_FRACTION):
    """Percent bias of the log low-flow segment (lowest ``low`` fraction)."""
    obs, sim = _paired(obs, sim)
    n_low = int(np.round(low * obs.size))
    if n_low < 1:
        raise MetricError("flv: series too short for a low-flow segment")
    qo = np.log(np.maximum(_fdc(obs), FDC_EPS)[-n_low:])
    qs = np.log(np.maximum(_fdc(sim), FDC_EPS)[-n_low:])
    sum_obs = np.sum(qo - qo.min())
    sum_sim = np.sum(qs - qs.min())
    if sum_obs == 0:
        raise MetricError("flv: observed low-flow segment is constant")
    return float((sum_sim - sum_obs) / sum_obs * 100.0)


METRICS = {"nse": nse, "alpha_nse": alpha_nse, "beta_nse": beta_nse, "fhv": fhv, "fms": fms, "flv": flv}


def metric_row(obs, sim):
    """All six metrics; a metric that is undefined for this basin is NaN."""
    row = {}
    for name, fn in METRICS.items():
        try:
            row[name] = fn(obs, sim)
        except MetricError:
            row[name] = float("nan")
    return row


# --------------------------------------------------------------- signatures

def _runs(mask):
    """Lengths of consecutive True runs."""
    if not mask.any():
        return np.empty(0, dtype=np.int64)
    padded = np.concatenate([[0], mask.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return edges[1::2] - edges[::2]


def baseflow_index(q, alpha=0.925, passes=3):
    """Lyne-Hollick recursive digital filter, forward/backward/forward passes."""
    q = np.asarray(q, dtype=np.float64)
    base = q.copy()
    for k in range(passes):
        src = base if k % 2 == 0 else base[::-1]
        quick = np.zeros_like(src)
        out = np.empty_like(src)
        out[0] = src[0]
        for t in range(1, len(src)):
            quick[t] = alpha * quick[t - 1] + 0.5 * (1 + alpha) * (src[t] - src[t - 1])
            if quick[t] < 0:
                quick[t] = 0.0
            out[t] = src[t] - quick[t]
            if out[t] > src[t]:
                out[t] = src[t]
        base = out if k % 2 == 0 else out[::-1]
    total = q.sum()
    if total <= 0:
        raise MetricError("baseflow_index: total discharge is zero")
    return float(base.sum() / total)


def hydrological_years(dates):
    """Start year of the October-to-September year containing each date."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    years = dates.astype("datetime64[Y]").astype(np.int64) + 1970
    months = dates.astype("datetime64[M]").astype(np.int64) % 12 + 1
    return np.where(months >= 10, years, years - 1)


def _full_years(dates, q):
    """Yield ``(start_year, index array)`` for complete hydrological years."""
    hy = hydrological_years(dates)
    for year in np.unique(hy):
        idx = np.flatnonzero(hy == year)
        start = np.datetime64(f"{year}-10-01", "D")
        length = int((np.datetime64(f"{year + 1}-10-01", "D") - start).astype(np.int64))
        if idx.size == length and dates[idx[0]] == start and not np.isnan(q[idx]).any():
            yield year, idx


def stream_elasticity(q, p, dates):
    """Median over years of ((Q_y - Q)/Q) / ((P_y - P)/P), hydrological years."""
    years = list(_full_years(dates, q))
    if len(years) < 2:
        raise MetricError("stream_elas: needs at least two full hydrological years")
    qy = np.array([q[idx].mean() for _, idx in years])
    py = np.array([p[idx].mean() for _, idx in years])
    qm, pm = qy.mean(), py.mean()
    if qm == 0 or pm == 0:
        raise MetricError("stream_elas: zero mean discharge or precipitation")
    dp = py - pm
    keep = dp != 0
    if not keep.any():
        raise MetricError("stream_elas: annual precipitation does not vary")
    return float(np.median(((qy[keep] - qm) / qm) / (dp[keep] / pm)))


def half_flow_date(q, dates):
    """Mean over full hydrological years of the day (counted from 1 October,
    1-based) on which cumulative flow first reaches half the annual total."""
    days = []
    for _, idx in _full_years(dates, q):
        cum = np.cumsum(q[idx])
        if cum[-1] <= 0:
            continue
        days.append(int(np.searchsorted(cum, 0.5 * cum[-1], side="left")) + 1)
    if not days:
        raise MetricError("hfd_mean: no full hydrological year with flow")
    return float(np.mean(days))


def signatures(discharge, precipitation, dates, strict=True):
    """The 13 signatures over the observed days of ``discharge``.

    Raises :class:`MetricError` naming the signature that cannot be computed;
    with ``strict=False`` such a signature is NaN instead.
    """
    q = np.asarray(discharge, dtype=np.float64)
    p = np.asarray(precipitation, dtype=np.float64)
    dates = np.asarray(dates, dtype="datetime64[D]")
    if not (q.shape == p.shape == dates.shape):
        raise MetricError("discharge, precipitation and dates must have equal length")
    if next(_full_years(dates, q), None) is None:
        raise MetricError("signatures: need at least one full hydrological year of observed discharge")
    obs = ~np.isnan(q)
    qo, po = q[obs], p[obs]
    out = {}
    out["q_mean"] = float(qo.mean())

    def runoff_ratio():
        if po.mean() <= 0:
            raise MetricError("runoff_ratio: mean precipitation is zero")
        return float(qo.mean() / po.mean())

    def guarded(fn, *args):
        try:
            return fn(*args)
        except MetricError:
            if strict:
                raise
            return float("nan")

    out["runoff_ratio"] = guarded(runoff_ratio)
    q33, q66 = np.percentile(qo, [67.0, 34.0])  # flows exceeded 33% and 66% of the time
    out["slope_fdc"] = float((np.log(max(q33, FDC_EPS)) - np.log(max(q66, FDC_EPS))) / (0.66 - 0.33))
    out["baseflow_index"] = guarded(baseflow_index, qo)
    out["stream_elas"] = guarded(stream_elasticity, q, p, dates)
    out["q5"] = float(np.percentile(qo, 5))
    out["q95"] = float(np.percentile(qo, 95))
    median, mean = np.median(qo), qo.mean()
    high = obs & (np.nan_to_num(q, nan=-np.inf) > 9.0 * median)
    low = obs & (np.nan_to_num(q, nan=np.inf) < 0.2 * mean)
    n_years = qo.size / 365.25
    out["high_q_freq"] = float(high.sum() / n_years)
    runs = _runs(high)
    out["high_q_dur"] = float(runs.mean()) if runs.size else 0.0
    out["low_q_freq"] = float(low.sum() / n_years)
    runs = _runs(low)
    out["low_q_dur"] = float(runs.mean()) if runs.size else 0.0
    out["zero_q_freq"] = float(np.mean(qo == 0))
    out["hfd_mean"] = guarded(half_flow_date, q, dates)
    return out


# ------------------------------------------------------------------ reports

def aggregate(rows):
    """Summary statistics over per-basin metric rows (independent of row order)."""
    nses = np.array([r["nse"] for r in rows], dtype=float)
    finite = nses[~np.isnan(nses)]
    out = {"n_basins": len(rows),
           "nse_mean": math.fsum(finite) / finite.size if finite.size else float("nan"),
           "nse_median": float(np.nanmedian(nses)) if len(rows) else float("nan"),
           "n_nse_le_0": int(np.sum(nses <= 0))}
    for name in METRIC_NAMES[1:]:
        vals = np.array([r[name] for r in rows], dtype=float)
        out[f"{name}_median"] = float(np.nanmedian(vals)) if np.any(~np.isnan(vals)) else float("nan")
    return out


def report_csv(rows, columns, comment=None):
    """Delimited text with a format-version comment line and a header row."""
    buf = io.StringIO()
    buf.write(f"# format-version: {REPORT_FORMAT_VERSION}\n")
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def read_report_csv(text):
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    rows = []
    for row in reader:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = float(v)
            except ValueError:
                parsed[k] = v
        rows.append(parsed)
    return rows


def report_json(rows, summary=None):
    return json.dumps({"format_version": REPORT_FORMAT_VERSION, "basins": rows, "summary": summary or {}},
                      indent=2, sort_keys=True)

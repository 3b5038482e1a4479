import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ealstm import metrics
from ealstm.data import synth_basins
from ealstm.exceptions import MetricError
from ealstm.metrics import (aggregate, alpha_nse, baseflow_index, beta_nse, fhv, flv, fms, metric_row, nse,
                            read_report_csv, report_csv, report_json, signatures)

from oracles import brute_fhv, brute_flv, brute_fms, brute_nse


def positive_series(seed, n=200):
    rng = np.random.default_rng(seed)
    return rng.lognormal(0.0, 1.0, n)


def test_nse_examples():
    assert nse([1, 2, 3], [1, 2, 2]) == 0.5
    obs = positive_series(0)
    assert nse(obs, obs) == 1.0
    assert abs(nse(obs, np.full_like(obs, obs.mean()))) < 1e-14


def test_alpha_beta_examples():
    obs = positive_series(1)
    mu, sd = obs.mean(), obs.std()
    assert alpha_nse(obs, obs) == 1.0 and beta_nse(obs, obs) == 0.0
    assert alpha_nse(obs, mu + 2 * (obs - mu)) == pytest.approx(2.0, rel=1e-13)
    assert beta_nse(obs, mu + 2 * (obs - mu)) == pytest.approx(0.0, abs=1e-13)
    assert beta_nse(obs, obs + sd) == pytest.approx(1.0, rel=1e-13)


def test_zero_variance_rejected():
    with pytest.raises(MetricError, match="zero variance"):
        nse([2, 2, 2], [1, 2, 3])
    with pytest.raises(MetricError):
        alpha_nse([2, 2, 2], [1, 2, 3])


def test_missing_observations_dropped_pairwise():
    obs = np.array([1.0, np.nan, 2.0, 3.0])
    sim = np.array([1.0, 100.0, 2.0, 2.0])
    assert nse(obs, sim) == 0.5


def test_fhv_examples():
    obs = positive_series(2)
    assert fhv(obs, obs) == 0.0
    assert fhv(obs, 1.1 * obs) == pytest.approx(10.0, rel=1e-12)
    sim = positive_series(3)
    assert fhv(obs, sim) == pytest.approx(brute_fhv(list(obs), list(sim)), abs=1e-10)


def test_fms_examples():
    obs = positive_series(4)
    assert fms(obs, obs) == 0.0
    assert fms(obs, 3.7 * obs) == pytest.approx(0.0, abs=1e-10)
    for c in (0.5, 1.3, 2.0):
        assert fms(obs, obs ** c) == pytest.approx((c - 1) * 100, abs=1e-10)
    sim = positive_series(5)
    assert fms(obs, sim) == pytest.approx(brute_fms(list(obs), list(sim)), abs=1e-10)


def test_flv_examples():
    obs = positive_series(6)
    assert flv(obs, obs) == 0.0
    assert flv(obs, 0.3 * obs) == pytest.approx(0.0, abs=1e-10)
    sim = positive_series(7)
    assert flv(obs, sim) == pytest.approx(brute_flv(list(obs), list(sim)), abs=1e-10)


def test_flv_zero_flows_use_epsilon():
    obs = np.concatenate([np.zeros(10), positive_series(8, 90)])
    sim = obs.copy()
    sim[:10] = 1e-9  # clipped to the same epsilon
    assert flv(obs, sim) == 0.0


def test_flv_constant_low_segment_rejected():
    obs = np.concatenate([np.ones(50), np.arange(2.0, 52.0)])
    with pytest.raises(MetricError, match="flv"):
        flv(obs, obs)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(60, 400))
def test_identity_at_exact_match(seed, n):
    obs = positive_series(seed, n)
    row = metric_row(obs, obs.copy())
    assert row["nse"] == 1.0 and row["alpha_nse"] == 1.0 and row["beta_nse"] == 0.0
    assert abs(row["fhv"]) <= 1e-12 and abs(row["fms"]) <= 1e-12 and abs(row["flv"]) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), a=st.floats(0.01, 100), b=st.floats(-100, 100))
def test_nse_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    obs, sim = rng.normal(size=50), rng.normal(size=50)
    assert nse(a * obs + b, a * sim + b) == pytest.approx(nse(obs, sim), rel=1e-9, abs=1e-9)
    assert nse(obs, sim) <= 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_fdc_metrics_time_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    obs, sim = rng.lognormal(size=150), rng.lognormal(size=150)
    p1, p2 = rng.permutation(150), rng.permutation(150)
    for fn in (fhv, fms, flv):
        assert fn(obs[p1], sim[p2]) == fn(obs, sim)
    for fn in (nse, alpha_nse, beta_nse):
        assert fn(obs[p1], sim[p1]) == pytest.approx(fn(obs, sim), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_fhv_ignores_flows_outside_top_segment(seed):
    rng = np.random.default_rng(seed)
    obs, sim = rng.lognormal(size=200), rng.lognormal(size=200)
    top_o = np.sort(obs)[-4]
    top_s = np.sort(sim)[-4]
    obs2, sim2 = obs.copy(), sim.copy()
    low_o, low_s = obs < top_o, sim < top_s
    obs2[low_o] = rng.uniform(0, top_o, low_o.sum())
    sim2[low_s] = rng.uniform(0, top_s, low_s.sum())
    assert fhv(obs2, sim2) == fhv(obs, sim)


# -------------------------------------------------------------- signatures

def _dates(start, end):
    return np.arange(np.datetime64(start), np.datetime64(end) + 1)


def test_signatures_constant_flow():
    dates = _dates("2000-10-01", "2002-09-30")
    rng = np.random.default_rng(0)
    p = rng.lognormal(size=dates.size)
    sig = signatures(np.full(dates.size, 2.5), p, dates)
    assert set(sig) == set(metrics.SIGNATURE_NAMES)
    assert sig["q_mean"] == 2.5
    assert sig["slope_fdc"] == 0.0
    assert sig["high_q_freq"] == 0.0 and sig["zero_q_freq"] == 0.0
    assert sig["baseflow_index"] == pytest.approx(1.0)
    assert sig["hfd_mean"] == 183.0


def test_runoff_ratio_identity():
    dates = _dates("2000-10-01", "2001-09-30")
    p = np.random.default_rng(1).lognormal(size=dates.size)
    sig = signatures(p.copy(), p, dates, strict=False)
    assert sig["runoff_ratio"] == pytest.approx(1.0, rel=1e-14)
    assert np.isnan(sig["stream_elas"])  # one year has no year-to-year variation
    with pytest.raises(MetricError, match="stream_elas"):
        signatures(p.copy(), p, dates)


def test_stream_elasticity_of_proportional_response():
    dates = _dates("2000-10-01", "2004-09-30")
    from ealstm.metrics import hydrological_years
    hy = hydrological_years(dates)
    scale = {2000: 1.0, 2001: 1.4, 2002: 0.7, 2003: 1.1}
    p = np.array([scale[y] for y in hy]) * 2.0
    q = 0.5 * p
    assert signatures(q, p, dates)["stream_elas"] == pytest.approx(1.0, rel=1e-12)


def test_frequencies_and_durations():
    dates = _dates("2000-10-01", "2001-09-30")
    q = np.ones(dates.size)
    q[[10, 11, 12, 100]] = 50.0   # above 9 x median, two runs (3 and 1 days)
    q[[200, 201]] = 0.0           # below 0.2 x mean, also zero flow
    sig = signatures(q, np.ones(dates.size), dates, strict=False)
    years = dates.size / 365.25
    assert sig["high_q_freq"] == pytest.approx(4 / years)
    assert sig["high_q_dur"] == 2.0
    assert sig["low_q_freq"] == pytest.approx(2 / years)
    assert sig["low_q_dur"] == 2.0
    assert sig["zero_q_freq"] == pytest.approx(2 / dates.size)


def test_signatures_need_full_year():
    dates = _dates("2000-10-01", "2001-03-01")
    with pytest.raises(MetricError, match="full hydrological year"):
        signatures(np.ones(dates.size), np.ones(dates.size), dates)


def test_baseflow_index_bounds():
    q = positive_series(9, 500)
    bfi = baseflow_index(q)
    assert 0 < bfi < 1


def test_synthetic_q_mean_matches_generator():
    for ds in synth_basins(4, seed=11):
        sig = signatures(ds.discharge, ds.forcings[:, 0], ds.dates)
        assert sig["q_mean"] == pytest.approx(ds.meta["q_mean_expected"], rel=0.02)


# ------------------------------------------------------------------ reports

def test_report_round_trip_and_basin_order():
    rng = np.random.default_rng(0)
    rows = []
    for b in range(5):
        obs, sim = rng.lognormal(size=100), rng.lognormal(size=100)
        rows.append({"basin_id": f"b{b}", **metric_row(obs, sim)})
    cols = ["basin_id"] + list(metrics.METRIC_NAMES)
    text = report_csv(rows, cols)
    assert text.startswith("# format-version: 1\n")
    back = read_report_csv(text)
    assert [r["basin_id"] for r in back] == [r["basin_id"] for r in rows]
    assert all(back[k]["nse"] == rows[k]["nse"] for k in range(5))
    assert aggregate(rows) == aggregate(rows[::-1])
    assert '"format_version": 1' in report_json(rows)


def test_aggregate_counts_failures():
    rows = [{"nse": v, "alpha_nse": 1, "beta_nse": 0, "fhv": 0, "fms": 0, "flv": 0} for v in (0.9, 0.0, -2.0, 0.5)]
    agg = aggregate(rows)
    assert agg["n_nse_le_0"] == 2
    assert agg["nse_median"] == 0.25 and agg["nse_mean"] == pytest.approx(-0.15)


def test_brute_nse_agrees():
    obs, sim = positive_series(12), positive_series(13)
    assert nse(obs, sim) == pytest.approx(brute_nse(list(obs), list(sim)), abs=1e-12)

"""Basin datasets: ingestion, period splits, standardization, windows and a
synthetic linear-reservoir generator.

On-disk layout under a data root::

    forcings/<basin_id>.csv    date,prcp,tmin,tmax,srad,vp
    discharge/<basin_id>.csv   date,qobs          (mm/day, -999 = missing)
    attributes.csv             basin_id,<attribute columns>

``layout="camels"`` reads the whitespace-delimited files shipped with the
CAMELS archive instead (discharge must already be area-normalized to mm/day).
"""
import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DataError

log = logging.getLogger(__name__)

FORCING_NAMES = ("prcp", "tmin", "tmax", "srad", "vp")
FORCING_UNITS = ("mm/day", "degC", "degC", "W/m2", "Pa")
MISSING = -999.0

CAMELS_ATTRIBUTES = (
    "p_mean", "pet_mean", "aridity", "p_seasonality", "frac_snow_daily",
    "high_prec_freq", "high_prec_dur", "low_prec_freq", "low_prec_dur",
    "elev_mean", "slope_mean", "area_gages2", "forest_frac", "lai_max",
    "lai_diff", "gvf_max", "gvf_diff", "soil_depth_pelletier",
    "soil_depth_statsgo", "soil_porosity", "soil_conductivity",
    "max_water_content", "sand_frac", "silt_frac", "clay_frac",
    "carb_rocks_frac", "geol_permeability",
)
SYNTHETIC_INFORMATIVE = ("recession_k", "runoff_coef")
SYNTHETIC_ATTRIBUTES = SYNTHETIC_INFORMATIVE + tuple(f"noise_{i}" for i in range(1, 6))
SCHEMAS = {"camels": CAMELS_ATTRIBUTES, "synthetic": SYNTHETIC_ATTRIBUTES}

# CAMELS forcing column -> our name
_CAMELS_FORCING_COLUMNS = {"prcp(mm/day)": "prcp", "tmin(C)": "tmin", "tmax(C)": "tmax",
                           "srad(W/m2)": "srad", "vp(Pa)": "vp"}

ONE_DAY = np.timedelta64(1, "D")


def as_date(value):
    return np.datetime64(value, "D")


@dataclass(eq=False)
class BasinDataset:
    basin_id: str
    dates: np.ndarray          # datetime64[D], strictly daily
    forcings: np.ndarray       # (days, 5)
    attributes: np.ndarray     # (n_attributes,)
    discharge: np.ndarray      # (days,), NaN where missing
    attribute_names: tuple = CAMELS_ATTRIBUTES
    forcing_names: tuple = FORCING_NAMES
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.forcings = np.asarray(self.forcings, dtype=np.float64)
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        self.discharge = np.asarray(self.discharge, dtype=np.float64)
        n = len(self.dates)
        if self.forcings.shape != (n, len(self.forcing_names)):
            raise DataError(f"basin {self.basin_id}: forcings shape {self.forcings.shape}, "
                            f"expected ({n}, {len(self.forcing_names)})")
        if self.discharge.shape != (n,):
            raise DataError(f"basin {self.basin_id}: discharge length {len(self.discharge)} != {n} dates")
        if self.attributes.shape != (len(self.attribute_names),):
            raise DataError(f"basin {self.basin_id}: {self.attributes.size} attributes for "
                            f"{len(self.attribute_names)} names")
        _check_daily(self.dates, self.basin_id)

    def __len__(self):
        return len(self.dates)

    def index_range(self, interval):
        """Half-open index range ``[lo, hi)`` of days inside ``interval``."""
        start, end = as_date(interval[0]), as_date(interval[1])
        lo = int(np.searchsorted(self.dates, start, side="left"))
        hi = int(np.searchsorted(self.dates, end, side="right"))
        return lo, max(lo, hi)


def _check_daily(dates, basin_id):
    if len(dates) == 0:
        return
    steps = np.diff(dates).astype(np.int64)
    bad = np.flatnonzero(steps != 1)
    if bad.size:
        k = int(bad[0])
        if steps[k] > 1:
            raise DataError(f"basin {basin_id}: gap in daily record, missing date {dates[k] + ONE_DAY}")
        raise DataError(f"basin {basin_id}: non-daily cadence at {dates[k + 1]} (not strictly increasing)")


@dataclass(frozen=True)
class PeriodSplit:
    train: tuple
    validation: tuple

    def __post_init__(self):
        tr = (as_date(self.train[0]), as_date(self.train[1]))
        va = (as_date(self.validation[0]), as_date(self.validation[1]))
        for name, (a, b) in (("train", tr), ("validation", va)):
            if b < a:
                raise DataError(f"{name} interval ends before it starts: {a}..{b}")
        if not (tr[1] < va[0] or va[1] < tr[0]):
            raise DataError(f"training {tr} and validation {va} intervals overlap")
        object.__setattr__(self, "train", tr)
        object.__setattr__(self, "validation", va)

    def interval(self, name):
        if name not in ("train", "validation"):
            raise DataError(f"unknown period {name!r}; use 'train' or 'validation'")
        return getattr(self, name)

    def to_dict(self):
        return {"train": [str(d) for d in self.train], "validation": [str(d) for d in self.validation]}


DEFAULT_SPLIT = PeriodSplit(train=("1999-10-01", "2008-09-30"),
                            validation=("1989-10-01", "1999-09-30"))
SYNTHETIC_SPLIT = PeriodSplit(train=("1998-10-01", "2002-09-30"),
                              validation=("1996-10-01", "1998-09-30"))


# ---------------------------------------------------------------- ingestion

def _read_rows(path, layout):
    try:
        with open(path, newline="") as fh:
            if layout == "camels":
                return [line.split() for line in fh if line.strip()]
            return [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _parse_dates(strings, path):
    try:
        return np.array(strings, dtype="datetime64[D]")
    except ValueError as exc:
        raise DataError(f"{path}: unparseable date ({exc})") from exc


def read_forcings(path, layout="default"):
    rows = _read_rows(path, layout)
    if layout == "camels":
        # three metadata lines (lat, elevation, area) precede the header
        header, body = rows[3], rows[4:]
        cols = {name: header.index(col) for col, name in _CAMELS_FORCING_COLUMNS.items() if col in header}
        if len(cols) != len(FORCING_NAMES):
            raise DataError(f"{path}: missing CAMELS forcing columns")
        dates = _parse_dates([f"{r[0]}-{int(r[1]):02d}-{int(r[2]):02d}" for r in body], path)
        values = np.array([[float(r[cols[n]]) for n in FORCING_NAMES] for r in body])
    else:
        header, body = rows[0], rows[1:]
        if tuple(header) != ("date",) + FORCING_NAMES:
            raise DataError(f"{path}: forcing header must be {('date',) + FORCING_NAMES}, got {tuple(header)}")
        dates = _parse_dates([r[0] for r in body], path)
        try:
            values = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(FORCING_NAMES))
        except ValueError as exc:
            raise DataError(f"{path}: bad forcing value ({exc})") from exc
    if not np.all(np.isfinite(values)):
        row = int(np.flatnonzero(~np.all(np.isfinite(values), axis=1))[0])
        raise DataError(f"{path}: missing forcing value on {dates[row]}")
    return dates, values


def read_discharge(path, layout="default"):
    rows = _read_rows(path, layout)
    if layout == "camels":
        # basin year month day Q flag
        dates = _parse_dates([f"{r[1]}-{int(r[2]):02d}-{int(r[3]):02d}" for r in rows], path)
        q = np.array([float(r[4]) for r in rows])
    else:
        header, body = rows[0], rows[1:]
        if tuple(header) != ("date", "qobs"):
            raise DataError(f"{path}: discharge header must be ('date', 'qobs'), got {tuple(header)}")
        dates = _parse_dates([r[0] for r in body], path)
        try:
            q = np.array([float(r[1]) for r in body])
        except ValueError as exc:
            raise DataError(f"{path}: bad discharge value ({exc})") from exc
    q = np.where((q < 0) | ~np.isfinite(q), np.nan, q)
    return dates, q


def resolve_schema(schema, columns=None):
    if schema == "auto":
        for names in SCHEMAS.values():
            if columns is not None and set(columns) == set(names):
                return names
        unknown = sorted(set(columns or ()) - set(CAMELS_ATTRIBUTES))
        raise DataError(f"attribute columns match no known schema; unknown attribute column(s) {unknown}")
    if isinstance(schema, str):
        try:
            return SCHEMAS[schema]
        except KeyError:
            raise DataError(f"unknown attribute schema {schema!r}") from None
    return tuple(schema)


def read_attributes(path, schema="auto"):
    """Return ``{basin_id: vector}`` in schema order, and the schema."""
    rows = _read_rows(path, "default")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "basin_id":
        raise DataError(f"{path}: first attribute column must be 'basin_id'")
    columns = header[1:]
    names = resolve_schema(schema, columns)
    unknown = [c for c in columns if c not in names]
    if unknown:
        raise DataError(f"{path}: unknown attribute column {unknown[0]!r}")
    missing = [n for n in names if n not in columns]
    if missing:
        raise DataError(f"{path}: missing attribute column {missing[0]!r}")
    order = [columns.index(n) for n in names]
    table = {}
    for line, row in enumerate(rows[1:], start=2):
        try:
            vals = np.array([float(row[1:][k]) for k in order])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{line}: bad attribute row ({exc})") from exc
        table[row[0].strip()] = vals
    return table, names


def load_basin(forcing_file, discharge_file, attributes_table, basin_id, schema="auto", layout="default"):
    """Load one basin. ``attributes_table`` is a path to attributes.csv or a
    ``(table, names)`` pair as returned by :func:`read_attributes`."""
    if isinstance(attributes_table, (str, os.PathLike)):
        table, names = read_attributes(attributes_table, schema)
    else:
        table, names = attributes_table
    if basin_id not in table:
        raise DataError(f"basin {basin_id}: not present in attribute table")
    fdates, forcings = read_forcings(forcing_file, layout)
    qdates, q = read_discharge(discharge_file, layout)
    _check_daily(fdates, basin_id)
    if len(fdates) != len(qdates) or np.any(fdates != qdates):
        if len(fdates) and len(qdates):
            n = min(len(fdates), len(qdates))
            diff = np.flatnonzero(fdates[:n] != qdates[:n])
            where = fdates[diff[0]] if diff.size else (fdates[n] if len(fdates) > n else qdates[n])
        else:
            where = "start"
        raise DataError(f"basin {basin_id}: forcing and discharge dates misaligned at {where}")
    return BasinDataset(basin_id, fdates, forcings, table[basin_id], q, tuple(names))


def load_data_root(root, basin_ids=None, schema="auto", layout="default"):
    table, names = read_attributes(os.path.join(root, "attributes.csv"), schema)
    ids = list(table) if basin_ids is None else list(basin_ids)
    out = []
    for bid in ids:
        out.append(load_basin(os.path.join(root, "forcings", f"{bid}.csv"),
                              os.path.join(root, "discharge", f"{bid}.csv"),
                              (table, names), bid, layout=layout))
    return out


def write_data_root(root, datasets):
    """Write datasets in the default layout (inverse of :func:`load_data_root`)."""
    from .storage import atomic_open

    names = datasets[0].attribute_names
    for ds in datasets:
        if ds.attribute_names != names:
            raise DataError("all basins must share one attribute schema")
        with atomic_open(os.path.join(root, "forcings", f"{ds.basin_id}.csv")) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("date",) + FORCING_NAMES)
            for d, row in zip(ds.dates, ds.forcings):
                w.writerow([str(d)] + [repr(float(v)) for v in row])
        with atomic_open(os.path.join(root, "discharge", f"{ds.basin_id}.csv")) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("date", "qobs"))
            for d, v in zip(ds.dates, ds.discharge):
                w.writerow([str(d), repr(MISSING if np.isnan(v) else float(v))])
    with atomic_open(os.path.join(root, "attributes.csv")) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("basin_id",) + tuple(names))
        for ds in datasets:
            w.writerow([ds.basin_id] + [repr(float(v)) for v in ds.attributes])


# ----------------------------------------------------------- standardization

@dataclass
class StandardizationStats:
    dynamic_mean: np.ndarray
    dynamic_std: np.ndarray
    static_mean: np.ndarray
    static_std: np.ndarray
    discharge_mean: float
    discharge_std: float
    period: tuple                      # provenance: the interval the stats came from
    dynamic_names: tuple = FORCING_NAMES
    static_names: tuple = CAMELS_ATTRIBUTES

    def apply(self, ds):
        return replace(ds,
                       forcings=(ds.forcings - self.dynamic_mean) / self.dynamic_std,
                       attributes=(ds.attributes - self.static_mean) / self.static_std,
                       discharge=(ds.discharge - self.discharge_mean) / self.discharge_std,
                       meta=dict(ds.meta, standardized=True))

    def invert(self, ds):
        return replace(ds,
                       forcings=ds.forcings * self.dynamic_std + self.dynamic_mean,
                       attributes=ds.attributes * self.static_std + self.static_mean,
                       discharge=self.inverse_discharge(ds.discharge),
                       meta={k: v for k, v in ds.meta.items() if k != "standardized"})

    def inverse_discharge(self, values):
        return np.asarray(values, dtype=np.float64) * self.discharge_std + self.discharge_mean

    def to_dict(self):
        return {"dynamic_mean": self.dynamic_mean.tolist(), "dynamic_std": self.dynamic_std.tolist(),
                "static_mean": self.static_mean.tolist(), "static_std": self.static_std.tolist(),
                "discharge_mean": self.discharge_mean, "discharge_std": self.discharge_std,
                "period": [str(d) for d in self.period],
                "dynamic_names": list(self.dynamic_names), "static_names": list(self.static_names)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["dynamic_mean"]), np.array(d["dynamic_std"]),
                   np.array(d["static_mean"]), np.array(d["static_std"]),
                   float(d["discharge_mean"]), float(d["discharge_std"]),
                   tuple(as_date(x) for x in d["period"]),
                   tuple(d["dynamic_names"]), tuple(d["static_names"]))


def _nonzero_std(std, names, kind):
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise DataError(f"zero-variance {kind} feature {names[bad[0]]!r} in the training period")


def compute_stats(datasets, split):
    """Pooled training-period statistics (population standard deviations)."""
    if not datasets:
        raise DataError("no datasets to standardize")
    interval = split.train if isinstance(split, PeriodSplit) else tuple(as_date(x) for x in split)
    dyn, q = [], []
    for ds in datasets:
        lo, hi = ds.index_range(interval)
        if hi <= lo:
            raise DataError(f"basin {ds.basin_id}: training interval {interval[0]}..{interval[1]} is empty")
        dyn.append(ds.forcings[lo:hi])
        q.append(ds.discharge[lo:hi])
    dyn = np.concatenate(dyn)
    q = np.concatenate(q)
    q = q[~np.isnan(q)]
    if q.size == 0:
        raise DataError("no observed discharge in the training period")
    static = np.stack([ds.attributes for ds in datasets])
    names = datasets[0].attribute_names
    stats = StandardizationStats(dyn.mean(axis=0), dyn.std(axis=0), static.mean(axis=0), static.std(axis=0),
                                 float(q.mean()), float(q.std()), interval,
                                 datasets[0].forcing_names, names)
    _nonzero_std(stats.dynamic_std, stats.dynamic_names, "dynamic")
    _nonzero_std(stats.static_std, names, "static")
    _nonzero_std(np.array([stats.discharge_std]), ("discharge",), "target")
    return stats


def standardize(datasets, split):
    """Standardize all periods with statistics from the training period."""
    stats = compute_stats(datasets, split)
    return [stats.apply(ds) for ds in datasets], stats


# ------------------------------------------------------------------ windows

@dataclass
class SequenceInput:
    dynamic: np.ndarray    # (T, dynamic_dim)
    static: np.ndarray = None  # (static_dim,) or None

    def __post_init__(self):
        if self.dynamic.ndim != 2 or self.dynamic.shape[0] < 1:
            raise DataError(f"sequence input needs shape (T>=1, dynamic_dim), got {self.dynamic.shape}")


def window_ends(ds, seq_len, interval, require_target=True):
    """Indices of valid window end days inside ``interval``."""
    if seq_len < 1:
        raise DataError("sequence length must be >= 1")
    lo, hi = ds.index_range(interval)
    lo = max(lo, seq_len - 1)
    if hi <= lo:
        return np.empty(0, dtype=np.int64)
    ends = np.arange(lo, hi)
    if require_target:
        ends = ends[~np.isnan(ds.discharge[ends])]
    return ends


def gather(ds, ends, seq_len):
    """Dynamic blocks ``[d-T+1, d]`` for each end index: (len(ends), T, d)."""
    view = np.lib.stride_tricks.sliding_window_view(ds.forcings, seq_len, axis=0)
    # view[k] covers rows k..k+T-1 with time on the last axis
    return np.ascontiguousarray(view[np.asarray(ends) - (seq_len - 1)].transpose(0, 2, 1))


def windows(ds, seq_len, interval):
    """Yield ``(SequenceInput, target, date)`` for each valid end day."""
    for end in window_ends(ds, seq_len, interval):
        yield (SequenceInput(ds.forcings[end - seq_len + 1:end + 1], ds.attributes),
               float(ds.discharge[end]), ds.dates[end])


# ---------------------------------------------------------------- synthetic

def reservoir_step(storage, inflow, k):
    """Exact one-day integration of dS/dt = inflow - k S with constant inflow.

    Returns ``(new_storage, outflow)`` where outflow is the day's integrated
    k*S, so that storage + inflow = new_storage + outflow holds exactly.
    """
    decay = np.exp(-k)
    new = storage * decay + inflow * (1.0 - decay) / k
    return new, storage + inflow - new


def simulate_reservoir(precip, k, runoff_coef, s0=None):
    """Returns ``(discharge, storage)``, storage of length ``len(precip)+1``."""
    inflow = runoff_coef * np.asarray(precip, dtype=np.float64)
    s = np.empty(len(inflow) + 1)
    s[0] = inflow.mean() / k if s0 is None else s0
    q = np.empty(len(inflow))
    for t, p in enumerate(inflow):
        s[t + 1], q[t] = reservoir_step(s[t], p, k)
    return q, s


def synth_basins(n, seed=0, start="1996-10-01", end="2002-09-30"):
    """Linear-reservoir basins from two separated (k, runoff coefficient) regimes.

    Even-indexed basins are fast/wet, odd-indexed slow/dry. Attributes are
    ``recession_k``, ``runoff_coef`` and five pure-noise columns.
    """
    if n < 2:
        raise DataError("synth_basins needs n >= 2 so both regimes are present")
    rng = np.random.default_rng(seed)
    dates = np.arange(as_date(start), as_date(end) + ONE_DAY, dtype="datetime64[D]")
    days = len(dates)
    doy = (dates - dates.astype("datetime64[Y]")).astype(np.int64)
    season = np.sin(2 * np.pi * (doy - 110) / 365.25)
    out = []
    for b in range(n):
        regime = b % 2
        if regime == 0:
            k, coef = rng.uniform(0.35, 0.5), rng.uniform(0.65, 0.8)
        else:
            k, coef = rng.uniform(0.1, 0.15), rng.uniform(0.3, 0.45)
        wet = rng.random(days) < 0.35 + 0.1 * season
        precip = np.where(wet, rng.lognormal(1.0, 0.9, days), 0.0)
        tmin = 4.0 + 10.0 * season + rng.normal(0, 2.0, days)
        tmax = tmin + 9.0 + rng.normal(0, 1.5, days)
        srad = 220.0 + 90.0 * season - 30.0 * wet + rng.normal(0, 15.0, days)
        vp = 900.0 + 500.0 * season + rng.normal(0, 80.0, days)
        q, storage = simulate_reservoir(precip, k, coef)
        attrs = np.concatenate([[k, coef], rng.normal(0.0, 1.0, 5)])
        meta = {"k": float(k), "runoff_coef": float(coef), "regime": regime,
                "q_mean_expected": float(coef * precip.mean()),
                "storage": storage}
        out.append(BasinDataset(f"synth{b:02d}", dates, np.column_stack([precip, tmin, tmax, srad, vp]),
                                attrs, q, SYNTHETIC_ATTRIBUTES, FORCING_NAMES, meta))
    return out

"""Synthetic patient cohorts, clinical bounds, preprocessing and rejection-
sampling augmentation of the bona fide healthy (BFH) population."""
from dataclasses import dataclass, field, replace
import csv
import json
import logging
import math
import warnings

import numpy as np
from scipy import stats

from .errors import (DataError, EmptyResultError, GenerationTimeoutError,
                     IncompleteRecordError, InfeasibleBoundsError, RangeError)

log = logging.getLogger(__name__)

BFH = "bona_fide_healthy"
APPARENTLY_HEALTHY = "apparently_healthy"
UNHEALTHY = "unhealthy"
LABELS = (BFH, APPARENTLY_HEALTHY, UNHEALTHY)
SEXES = ("female", "male")

AGE_GROUPS = ((36, 45), (46, 50), (51, 55), (56, 60), (61, 65), (66, 75))

P0_FEATURES = ("total_cholesterol", "hdl", "ldl", "triglycerides",
               "fasting_glucose", "hba1c", "crp")

COHORT_HEADER = ("id", "sex", "age", "label", "future_condition", "years_until")
COHORT_MAGIC = "# nplb-cohort v1"
BOUNDS_FORMAT = "nplb-bounds"
BOUNDS_VERSION = 1
SYNTHETIC_PREFIX = "syn-"

CONDITIONS = ("cancer", "diabetes", "other_serious")

REJECTION_CAP = 100_000


def age_group(age):
    """Label such as ``"36-45"`` for an age in [36, 75]."""
    if not 36 <= age <= 75:
        raise RangeError(f"age {age} outside [36, 75]")
    for lo, hi in AGE_GROUPS:
        if age <= hi:
            return f"{lo}-{hi}"
    raise AssertionError("unreachable")


AGE_GROUP_LABELS = tuple(f"{lo}-{hi}" for lo, hi in AGE_GROUPS)


@dataclass
class PatientRecord:
    id: str
    sex: str
    age: float
    label: str
    features: dict
    future_diagnosis: tuple = None  # (condition, years_until)
    synthetic: bool = False

    def __post_init__(self):
        if self.sex not in SEXES:
            raise DataError(f"record {self.id}: unknown sex {self.sex!r}")
        if self.label not in LABELS:
            raise DataError(f"record {self.id}: unknown label {self.label!r}")
        if not 36 <= self.age <= 75:
            raise DataError(f"record {self.id}: age {self.age} outside [36, 75]")

    @property
    def age_group(self):
        return age_group(self.age)

    def vector(self, names):
        return np.array([self.features.get(n, np.nan) for n in names], dtype=np.float64)


@dataclass
class Cohort:
    records: list
    feature_names: tuple
    units: dict = field(default_factory=dict)

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("cohort ids are not unique")

    def __len__(self):
        return len(self.records)

    def matrix(self, names=None):
        names = self.feature_names if names is None else names
        if not self.records:
            return np.zeros((0, len(names)))
        return np.array([[r.features.get(n, np.nan) for n in names] for r in self.records],
                        dtype=np.float64)

    def labels(self):
        return np.array([r.label for r in self.records])

    def ids(self):
        return [r.id for r in self.records]

    def subset(self, predicate):
        return Cohort([r for r in self.records if predicate(r)], self.feature_names, self.units)

    def with_records(self, records):
        return Cohort(list(records), self.feature_names, self.units)

    def real(self):
        return self.subset(lambda r: not r.synthetic)


# --------------------------------------------------------------------------
# clinical bounds
# --------------------------------------------------------------------------

def bfh_condition(sex):
    return f"{BFH}/{sex}"


@dataclass
class FeatureBounds:
    """Per-(condition, feature) acceptance intervals.

    ``lower_closed`` / ``upper_closed`` mark whether each end is inclusive;
    infinite ends are always treated as open.
    """
    conditions: tuple
    features: tuple
    lower: np.ndarray
    upper: np.ndarray
    lower_closed: np.ndarray
    upper_closed: np.ndarray
    units: dict = field(default_factory=dict)

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        self.features = tuple(self.features)
        shape = (len(self.conditions), len(self.features))
        for name in ("lower", "upper", "lower_closed", "upper_closed"):
            if np.shape(getattr(self, name)) != shape:
                raise DataError(f"bounds {name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        both = np.isfinite(self.lower) & np.isfinite(self.upper)
        if np.any(self.lower[both] > self.upper[both]):
            raise DataError("bounds with L > U")

    def row(self, condition):
        try:
            return self.conditions.index(condition)
        except ValueError:
            raise DataError(f"no bounds for condition {condition!r}") from None

    def interval(self, condition, feature):
        i = self.row(condition)
        j = self.features.index(feature)
        return (self.lower[i, j], self.upper[i, j], bool(self.lower_closed[i, j]),
                bool(self.upper_closed[i, j]))

    def constrained_features(self, condition):
        i = self.row(condition)
        mask = np.isfinite(self.lower[i]) | np.isfinite(self.upper[i])
        return [f for f, m in zip(self.features, mask) if m]

    def inside(self, condition, feature, values):
        lo, hi, lo_closed, hi_closed = self.interval(condition, feature)
        return within(values, lo, hi, lo_closed, hi_closed)

    def scaled(self, factor):
        """Bounds for features multiplied by a positive constant."""
        return replace(self, lower=self.lower * factor, upper=self.upper * factor)


def within(values, lo, hi, lo_closed=True, hi_closed=True):
    v = np.asarray(values, dtype=np.float64)
    ok_lo = (v >= lo) if lo_closed else (v > lo)
    ok_hi = (v <= hi) if hi_closed else (v < hi)
    return ok_lo & ok_hi


# Clinically normal ranges for the P0 markers (male / female).
CLINICAL_RANGES = {
    # feature: (unit, {sex: (lower, upper, lower_closed, upper_closed)})
    "total_cholesterol": ("mmol/L", {s: (-math.inf, 5.18, False, True) for s in SEXES}),
    "hdl": ("mmol/L", {"male": (1.0, math.inf, True, False),
                       "female": (1.3, math.inf, True, False)}),
    "ldl": ("mmol/L", {s: (-math.inf, 3.3, False, True) for s in SEXES}),
    "triglycerides": ("mmol/L", {s: (-math.inf, 1.7, False, True) for s in SEXES}),
    "fasting_glucose": ("mg/dL", {s: (70.0, 100.0, True, True) for s in SEXES}),
    "hba1c": ("mmol/mol", {s: (-math.inf, 42.0, False, False) for s in SEXES}),
    "crp": ("mg/L", {s: (-math.inf, 10.0, False, False) for s in SEXES}),
}


def default_bounds(feature_names=P0_FEATURES, units=None):
    """BFH acceptance bounds from the clinical-normal table; any feature not in
    the table is unconstrained."""
    conditions = tuple(bfh_condition(s) for s in SEXES)
    shape = (len(conditions), len(feature_names))
    lower = np.full(shape, -np.inf)
    upper = np.full(shape, np.inf)
    lo_c = np.zeros(shape, dtype=bool)
    hi_c = np.zeros(shape, dtype=bool)
    unit_map = dict(units or {})
    for j, name in enumerate(feature_names):
        if name not in CLINICAL_RANGES:
            continue
        unit, per_sex = CLINICAL_RANGES[name]
        unit_map[name] = unit
        for i, sex in enumerate(SEXES):
            lower[i, j], upper[i, j], lo_c[i, j], hi_c[i, j] = per_sex[sex]
    return FeatureBounds(conditions, tuple(feature_names), lower, upper, lo_c, hi_c, unit_map)


def _num_token(x):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def _parse_num(tok):
    if isinstance(tok, str):
        t = tok.strip().lower()
        if t in ("inf", "+inf"):
            return math.inf
        if t == "-inf":
            return -math.inf
        raise DataError(f"bad bound token {tok!r}")
    return float(tok)


def bounds_text(bounds):
    entries = []
    for i, cond in enumerate(bounds.conditions):
        for j, feat in enumerate(bounds.features):
            entries.append({
                "condition": cond, "feature": feat,
                "lower": _num_token(bounds.lower[i, j]),
                "upper": _num_token(bounds.upper[i, j]),
                "lower_closed": bool(bounds.lower_closed[i, j]),
                "upper_closed": bool(bounds.upper_closed[i, j]),
            })
    doc = {"format": BOUNDS_FORMAT, "version": BOUNDS_VERSION,
           "units": dict(bounds.units), "bounds": entries}
    return json.dumps(doc, indent=1) + "\n"


def write_bounds(path, bounds):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(bounds_text(bounds))


def read_bounds(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a bounds file ({exc})") from None
    if doc.get("format") != BOUNDS_FORMAT or doc.get("version") != BOUNDS_VERSION:
        raise DataError(f"{path}: expected {BOUNDS_FORMAT} v{BOUNDS_VERSION}")
    conditions, features = [], []
    for e in doc["bounds"]:
        if e["condition"] not in conditions:
            conditions.append(e["condition"])
        if e["feature"] not in features:
            features.append(e["feature"])
    shape = (len(conditions), len(features))
    lower = np.full(shape, -np.inf)
    upper = np.full(shape, np.inf)
    lo_c = np.zeros(shape, dtype=bool)
    hi_c = np.zeros(shape, dtype=bool)
    for e in doc["bounds"]:
        i, j = conditions.index(e["condition"]), features.index(e["feature"])
        lower[i, j] = _parse_num(e["lower"])
        upper[i, j] = _parse_num(e["upper"])
        lo_c[i, j] = bool(e.get("lower_closed", True))
        hi_c[i, j] = bool(e.get("upper_closed", True))
    return FeatureBounds(tuple(conditions), tuple(features), lower, upper, lo_c, hi_c,
                         doc.get("units", {}))


def is_bona_fide(record, normal_ranges):
    """True iff every bounded marker of the record lies in its (sex-specific)
    clinical range."""
    cond = bfh_condition(record.sex)
    for feat in normal_ranges.constrained_features(cond):
        value = record.features.get(feat, np.nan)
        if value is None or not np.isfinite(value):
            raise IncompleteRecordError(f"record {record.id} is missing {feat}")
        if not normal_ranges.inside(cond, feat, value):
            return False
    return True


# --------------------------------------------------------------------------
# synthetic cohort generation
# --------------------------------------------------------------------------

@dataclass
class CohortSpec:
    """Gaussian feature model per label.

    Apparently-healthy records carry a latent severity ``s ~ U(0, 1)`` that
    shifts their mean by ``severity_shift * (s - 0.5) * (mean_unhealthy -
    mean_bfh)``; their probability of a future diagnosis is
    ``min(1, (k + 1) * future_fraction * s**k)`` with ``k = conversion_power``
    and the time to diagnosis shrinks linearly with ``s``.
    """
    feature_names: tuple
    units: dict
    means: dict
    stds: dict
    sizes: dict
    male_offset: np.ndarray = None
    age_slope: np.ndarray = None  # per decade away from 55
    severity_shift: float = 2.5
    future_fraction: float = 0.4
    conversion_power: float = 2.0
    conditions: tuple = CONDITIONS
    max_years: float = 10.0
    year_noise: float = 1.0
    missing: dict = field(default_factory=dict)  # feature -> fraction missing

    def __post_init__(self):
        d = len(self.feature_names)
        self.means = {k: np.asarray(v, dtype=np.float64) for k, v in self.means.items()}
        self.stds = {k: np.asarray(v, dtype=np.float64) for k, v in self.stds.items()}
        for lab in LABELS:
            if self.means[lab].shape != (d,) or self.stds[lab].shape != (d,):
                raise DataError(f"means/stds for {lab} must have length {d}")
            if np.any(self.stds[lab] <= 0):
                raise DataError(f"stds for {lab} must be positive")
            if self.sizes.get(lab, 0) < 0:
                raise DataError("sizes must be non-negative")
        self.male_offset = np.zeros(d) if self.male_offset is None else np.asarray(self.male_offset, float)
        self.age_slope = np.zeros(d) if self.age_slope is None else np.asarray(self.age_slope, float)


_DEFAULT_FEATURES = {
    # name: unit, (mean, sd) for bfh / apparently healthy / unhealthy
    "total_cholesterol": ("mmol/L", (4.5, 0.45), (5.4, 0.8), (6.1, 1.0)),
    "hdl": ("mmol/L", (1.65, 0.25), (1.45, 0.35), (1.15, 0.3)),
    "ldl": ("mmol/L", (2.6, 0.4), (3.3, 0.7), (3.9, 0.9)),
    "triglycerides": ("mmol/L", (1.1, 0.3), (1.5, 0.55), (2.2, 0.8)),
    "fasting_glucose": ("mg/dL", (86.0, 7.0), (94.0, 10.0), (112.0, 20.0)),
    "hba1c": ("mmol/mol", (35.0, 3.0), (38.0, 4.0), (46.0, 8.0)),
    "crp": ("mg/L", (2.0, 1.5), (3.0, 2.5), (6.0, 4.0)),
    "albumin": ("g/L", (45.0, 3.0), (44.0, 3.5), (42.0, 4.0)),
    "alt": ("U/L", (22.0, 8.0), (26.0, 10.0), (32.0, 14.0)),
    "creatinine": ("umol/L", (70.0, 12.0), (75.0, 15.0), (85.0, 22.0)),
    "haemoglobin": ("g/dL", (14.0, 1.0), (13.8, 1.2), (13.3, 1.5)),
    "platelets": ("10^9/L", (250.0, 50.0), (255.0, 60.0), (265.0, 70.0)),
    "wbc": ("10^9/L", (6.0, 1.3), (6.6, 1.6), (7.4, 2.0)),
    "vitamin_d": ("nmol/L", (55.0, 18.0), (48.0, 20.0), (40.0, 20.0)),
    "urate": ("umol/L", (300.0, 60.0), (320.0, 70.0), (350.0, 80.0)),
}


def default_cohort_spec(sizes=(200, 800, 800), **overrides):
    """A 15-feature cohort model; ``sizes`` is (bfh, apparently healthy, unhealthy)."""
    names = tuple(_DEFAULT_FEATURES)
    units = {n: v[0] for n, v in _DEFAULT_FEATURES.items()}
    means, stds = {}, {}
    for k, lab in enumerate(LABELS):
        means[lab] = [v[1 + k][0] for v in _DEFAULT_FEATURES.values()]
        stds[lab] = [v[1 + k][1] for v in _DEFAULT_FEATURES.values()]
    male = np.zeros(len(names))
    male[names.index("hdl")] = -0.25
    male[names.index("haemoglobin")] = 1.2
    male[names.index("creatinine")] = 15.0
    male[names.index("urate")] = 50.0
    slope = np.zeros(len(names))
    slope[names.index("total_cholesterol")] = 0.1
    slope[names.index("ldl")] = 0.08
    slope[names.index("hba1c")] = 0.8
    slope[names.index("creatinine")] = 2.0
    kwargs = dict(feature_names=names, units=units, means=means, stds=stds,
                  sizes=dict(zip(LABELS, map(int, sizes))), male_offset=male, age_slope=slope)
    kwargs.update(overrides)
    return CohortSpec(**kwargs)


def _draw_constrained(rng, mean, std, accept, max_attempts, what):
    for _ in range(max_attempts):
        x = rng.normal(mean, std)
        if accept(x):
            return x
    raise GenerationTimeoutError(f"no acceptable {what} record after {max_attempts} draws")


def generate_cohort(spec, bounds, rng, max_attempts=10_000, id_prefix="p"):
    """Sample a labelled cohort.

    BFH records are redrawn until every bounded marker is in range; unhealthy
    records until at least one is out of range; apparently-healthy records are
    unconstrained and may receive a future diagnosis.
    """
    names = spec.feature_names
    records = []
    counter = 0
    for label in LABELS:
        for _ in range(spec.sizes.get(label, 0)):
            sex = SEXES[int(rng.integers(0, 2))]
            age = int(rng.integers(36, 76))
            cond = bfh_condition(sex)
            checks = [(names.index(f), bounds.interval(cond, f)) for f in bounds.constrained_features(cond)
                      if f in names]

            def in_range(x):
                return all(within(x[j], lo, hi, lc, hc) for j, (lo, hi, lc, hc) in checks)

            mean = spec.means[label] + (sex == "male") * spec.male_offset \
                + spec.age_slope * (age - 55) / 10.0
            future = None
            if label == BFH:
                x = _draw_constrained(rng, mean, spec.stds[label], in_range, max_attempts, label)
            elif label == UNHEALTHY:
                x = _draw_constrained(rng, mean, spec.stds[label], lambda v: not in_range(v),
                                      max_attempts, label)
            else:
                s = float(rng.random())
                shift = spec.severity_shift * (s - 0.5) * (spec.means[UNHEALTHY] - spec.means[BFH])
                x = rng.normal(mean + shift, spec.stds[label])
                k = spec.conversion_power
                if rng.random() < min(1.0, (k + 1.0) * spec.future_fraction * s ** k):
                    condition = spec.conditions[int(rng.integers(0, len(spec.conditions)))]
                    years = spec.max_years * (1.0 - s) + spec.year_noise * rng.normal()
                    future = (condition, round(max(0.1, years), 6))
            feats = {n: float(v) for n, v in zip(names, x)}
            for feat, frac in spec.missing.items():
                if rng.random() < frac:
                    feats[feat] = np.nan
            records.append(PatientRecord(f"{id_prefix}{counter:06d}", sex, age, label, feats, future))
            counter += 1
    return Cohort(records, names, dict(spec.units))


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------

class QuantileNormalizer:
    """Rank-based inverse-normal transform of one feature.

    Fitted values map to ``Phi^-1((rank - 0.5) / n)`` with average ranks for
    ties; unseen values are interpolated between fitted ones and clamped at
    the ends.
    """

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise EmptyResultError("cannot fit a normalizer on no values")
        scores = stats.norm.ppf((stats.rankdata(v, method="average") - 0.5) / v.size)
        self.knots, idx = np.unique(v, return_index=True)
        self.scores = scores[idx]

    @classmethod
    def from_knots(cls, knots, scores):
        knots = np.asarray(knots, dtype=np.float64)
        scores = np.asarray(scores, dtype=np.float64)
        if knots.ndim != 1 or knots.shape != scores.shape or knots.size == 0:
            raise DataError("normalizer knots and scores must be equal-length, non-empty vectors")
        if np.any(np.diff(knots) <= 0):
            raise DataError("normalizer knots must be strictly increasing")
        obj = cls.__new__(cls)
        obj.knots, obj.scores = knots, scores
        return obj

    def to_dict(self):
        return {"knots": self.knots.tolist(), "scores": self.scores.tolist()}

    def transform(self, values):
        return np.interp(np.asarray(values, dtype=np.float64), self.knots, self.scores)


@dataclass
class PreprocessReport:
    dropped_features: dict  # feature -> completeness fraction
    dropped_records: list
    retained_features: tuple
    counts: dict  # sex -> retained record count

    def to_dict(self):
        return {"dropped_features": self.dropped_features,
                "dropped_records": self.dropped_records,
                "retained_features": list(self.retained_features),
                "counts": self.counts}


@dataclass
class PreprocessResult:
    cohorts: dict       # sex -> Cohort
    report: PreprocessReport
    normalizers: dict   # sex -> {feature: QuantileNormalizer}; empty if not normalized

    def __getitem__(self, sex):
        return self.cohorts[sex]


def preprocess(cohort, normalize=True, min_completeness=0.75):
    """Drop sparse features, then incomplete records, split by sex and
    (optionally) quantile-normalize every feature within each sex."""
    if len(cohort) == 0:
        raise EmptyResultError("cannot preprocess an empty cohort")
    x = cohort.matrix()
    completeness = np.mean(np.isfinite(x), axis=0) if x.size else np.zeros(len(cohort.feature_names))
    keep = completeness >= min_completeness
    dropped_features = {f: float(c) for f, c, k in zip(cohort.feature_names, completeness, keep) if not k}
    retained = tuple(f for f, k in zip(cohort.feature_names, keep) if k)
    if not retained:
        raise EmptyResultError("every feature fell below the completeness threshold")
    complete = np.all(np.isfinite(x[:, keep]), axis=1)
    dropped_records = [r.id for r, ok in zip(cohort.records, complete) if not ok]
    kept = [r for r, ok in zip(cohort.records, complete) if ok]
    if not kept:
        raise EmptyResultError("every record has a missing value")

    cohorts, normalizers, counts = {}, {}, {}
    for sex in SEXES:
        recs = [r for r in kept if r.sex == sex]
        counts[sex] = len(recs)
        if not recs:
            continue
        mat = np.array([[r.features[f] for f in retained] for r in recs])
        if normalize:
            fitted = {f: QuantileNormalizer(mat[:, j]) for j, f in enumerate(retained)}
            mat = np.column_stack([fitted[f].transform(mat[:, j]) for j, f in enumerate(retained)])
            normalizers[sex] = fitted
        new = [replace(r, features=dict(zip(retained, map(float, row)))) for r, row in zip(recs, mat)]
        cohorts[sex] = Cohort(new, retained, {f: cohort.units.get(f, "") for f in retained})
    report = PreprocessReport(dropped_features, dropped_records, retained, counts)
    return PreprocessResult(cohorts, report, normalizers)


def apply_normalizers(cohort, normalizers):
    """Transform a (same-sex) cohort with previously fitted normalizers."""
    mat = cohort.matrix()
    cols = [normalizers[f].transform(mat[:, j]) for j, f in enumerate(cohort.feature_names)]
    mat = np.column_stack(cols) if cols else mat
    return cohort.with_records(
        replace(r, features=dict(zip(cohort.feature_names, map(float, row))))
        for r, row in zip(cohort.records, mat))


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

def truncated_normal_draws(rng, mu, sigma, lo, hi, n, lo_closed=True, hi_closed=True,
                           cap=REJECTION_CAP, feature=None):
    """``n`` accepted draws of N(mu, sigma) restricted to the interval.

    Each accepted value may consume at most ``cap`` proposals; zero acceptances
    after ``cap`` proposals means the interval is declared infeasible.
    """
    if n == 0:
        return np.zeros(0)
    if sigma == 0.0:
        if within(mu, lo, hi, lo_closed, hi_closed):
            return np.full(n, float(mu))
        raise InfeasibleBoundsError(f"feature {feature}: sigma = 0 and mean {mu} outside bounds",
                                    feature=feature)
    out = []
    got, drawn = 0, 0
    batch = max(2 * n, 1024)
    while got < n:
        z = rng.normal(mu, sigma, size=batch)
        drawn += batch
        acc = z[within(z, lo, hi, lo_closed, hi_closed)]
        out.append(acc)
        got += acc.size
        if got == 0 and drawn >= cap:
            raise InfeasibleBoundsError(
                f"feature {feature}: no draw of N({mu:.4g}, {sigma:.4g}) fell in "
                f"[{lo}, {hi}] after {drawn} proposals", feature=feature)
        if drawn >= cap * n:
            raise InfeasibleBoundsError(f"feature {feature}: rejection cap exceeded", feature=feature)
    return np.concatenate(out)[:n]


def augment_bona_fide(cohort, fold, bounds, rng):
    """Append ``fold`` synthetic BFH records per real BFH record.

    Per sex, every feature is drawn from a Gaussian with the BFH sample mean
    and standard deviation, rejecting values outside that sex's bounds. Age
    is resampled from the same sex's real BFH ages.
    """
    fold = int(fold)
    if fold < 0:
        raise RangeError("fold must be >= 0")
    if fold == 0:
        return cohort
    names = cohort.feature_names
    real_bfh = [r for r in cohort.records if r.label == BFH and not r.synthetic]
    if len(real_bfh) < 2:
        raise InfeasibleBoundsError(
            f"augmentation needs at least 2 bona fide healthy records, found {len(real_bfh)}")
    new_records = []
    existing = {r.id for r in cohort.records}
    serial = 0
    for sex in SEXES:
        group = [r for r in real_bfh if r.sex == sex]
        if not group:
            continue
        if len(group) < 2:
            raise InfeasibleBoundsError(f"only one {sex} bona fide healthy record; cannot estimate spread")
        mat = np.array([r.vector(names) for r in group])
        n_new = fold * len(group)
        cond = bfh_condition(sex)
        columns = []
        for j, feat in enumerate(names):
            col = mat[:, j]
            col = col[np.isfinite(col)]
            if col.size < 2:
                raise InfeasibleBoundsError(f"feature {feat}: fewer than 2 observed values", feature=feat)
            mu, sigma = float(col.mean()), float(col.std(ddof=1))
            if feat in bounds.features and cond in bounds.conditions:
                lo, hi, lc, hc = bounds.interval(cond, feat)
            else:
                lo, hi, lc, hc = -np.inf, np.inf, False, False
            columns.append(truncated_normal_draws(rng, mu, sigma, lo, hi, n_new, lc, hc, feature=feat))
        ages = np.array([r.age for r in group])[rng.integers(0, len(group), size=n_new)]
        for k in range(n_new):
            while f"{SYNTHETIC_PREFIX}{serial:06d}" in existing:
                serial += 1
            rid = f"{SYNTHETIC_PREFIX}{serial:06d}"
            serial += 1
            feats = {f: float(columns[j][k]) for j, f in enumerate(names)}
            new_records.append(PatientRecord(rid, sex, ages[k].item(), BFH, feats, None, True))
    return cohort.with_records(list(cohort.records) + new_records)


# --------------------------------------------------------------------------
# train / test split
# --------------------------------------------------------------------------

def split_train_test(cohort, fraction, rng):
    """Label-stratified split of the real records; synthetic records go to train."""
    if not 0.0 < fraction < 1.0:
        raise RangeError(f"train fraction must lie in (0, 1), got {fraction}")
    train_ids, test_ids = set(), set()
    real = [r for r in cohort.records if not r.synthetic]
    for label in LABELS:
        members = [r.id for r in real if r.label == label]
        if not members:
            continue
        if len(members) < 2:
            warnings.warn(f"stratum {label} has {len(members)} record(s); assigned to train")
            train_ids.update(members)
            continue
        perm = rng.permutation(len(members))
        n_train = int(math.floor(fraction * len(members) + 0.5))
        n_train = min(max(n_train, 1), len(members) - 1)
        train_ids.update(members[i] for i in perm[:n_train])
        test_ids.update(members[i] for i in perm[n_train:])
    train = cohort.subset(lambda r: r.synthetic or r.id in train_ids)
    test = cohort.subset(lambda r: r.id in test_ids)
    return train, test


# --------------------------------------------------------------------------
# cohort file
# --------------------------------------------------------------------------

def _fmt(x):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return repr(float(x))


def write_cohort(path, cohort):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(COHORT_MAGIC + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COHORT_HEADER + cohort.feature_names)
        for r in cohort.records:
            cond, years = r.future_diagnosis if r.future_diagnosis else ("", None)
            age = int(r.age) if float(r.age).is_integer() else r.age
            w.writerow([r.id, r.sex, age, r.label, cond, _fmt(years)]
                       + [_fmt(r.features.get(f)) for f in cohort.feature_names])


def read_cohort(path, units=None):
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != COHORT_MAGIC:
            raise DataError(f"{path}: missing '{COHORT_MAGIC}' header line")
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no column header") from None
        if tuple(header[:len(COHORT_HEADER)]) != COHORT_HEADER:
            raise DataError(f"{path}: header must start with {','.join(COHORT_HEADER)}")
        features = tuple(header[len(COHORT_HEADER):])
        records = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rid, sex, age, label, cond, years = row[:6]
                feats = {f: (float(v) if v != "" else np.nan) for f, v in zip(features, row[6:])}
                future = (cond, float(years)) if cond else None
                age_val = float(age)
                records.append(PatientRecord(rid, sex, int(age_val) if age_val.is_integer() else age_val,
                                             label, feats, future, rid.startswith(SYNTHETIC_PREFIX)))
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return Cohort(records, features, dict(units or {}))

"""Single-visit health risk: reference medians per (sex, age group), percentile
threshold intervals, and the Normal / Lower Risk / Higher Risk mapping."""
from dataclasses import dataclass, field
import enum
import io

import numpy as np
from scipy import linalg

from .cohort_lab import AGE_GROUP_LABELS, APPARENTLY_HEALTHY, BFH, SEXES, UNHEALTHY
from .embedding_net import embed
from .errors import ConfigurationError, DimensionError
from .numeric_core import as_vector, cholesky_factor, columnwise_percentile, pearson_correlation

MIN_CELL_SIZE = 4
NORMAL_Q = 95.0
LOWER_RISK_Q = 98.0
UNDEFINED = "undefined"
INSUFFICIENT = "insufficient"


class RiskGroup(enum.Enum):
    NORMAL = "normal"
    LOWER_RISK = "lower_risk"
    HIGHER_RISK = "higher_risk"
    UNASSIGNED = "unassigned"


ASSIGNED_GROUPS = (RiskGroup.NORMAL, RiskGroup.LOWER_RISK, RiskGroup.HIGHER_RISK)


# --------------------------------------------------------------------------
# distance backends
# --------------------------------------------------------------------------

class DistanceBackend:
    """Maps raw feature rows into a space where health distance is Euclidean.

    ``fit(bfh)`` returns the per-cell representation function; only the
    Mahalanobis backend actually depends on the cell.
    """
    name = "base"

    def fit(self, bfh_matrix):
        return self.represent

    def represent(self, x):
        raise NotImplementedError


class RawEuclidean(DistanceBackend):
    name = "raw"

    def represent(self, x):
        return np.asarray(x, dtype=np.float64)


class P0Euclidean(DistanceBackend):
    name = "p0"

    def __init__(self, columns):
        self.columns = np.asarray(columns, dtype=np.int64)
        if self.columns.size == 0:
            raise ConfigurationError("P0 backend needs at least one feature")

    @classmethod
    def from_names(cls, feature_names, subset):
        missing = [f for f in subset if f not in feature_names]
        if missing:
            raise ConfigurationError(f"P0 features not in cohort: {missing}")
        return cls([list(feature_names).index(f) for f in subset])

    def represent(self, x):
        return np.asarray(x, dtype=np.float64)[:, self.columns]


class Mahalanobis(DistanceBackend):
    """Whitens with the Cholesky factor of the cell's BFH covariance plus a
    ridge of ``ridge * trace / dim``."""
    name = "mahalanobis"

    def __init__(self, ridge=1e-6):
        self.ridge = float(ridge)

    def covariance(self, bfh_matrix):
        x = np.asarray(bfh_matrix, dtype=np.float64)
        cov = np.atleast_2d(np.cov(x, rowvar=False))
        dim = cov.shape[0]
        return cov + self.ridge * np.trace(cov) / dim * np.eye(dim)

    def fit(self, bfh_matrix):
        chol = cholesky_factor(self.covariance(bfh_matrix))

        def represent(x):
            x = np.asarray(x, dtype=np.float64)
            return linalg.solve_triangular(chol, x.T, lower=True).T

        return represent


class EmbeddingEuclidean(DistanceBackend):
    name = "embedding"

    def __init__(self, params):
        if params is None:
            raise ConfigurationError("embedding backend needs a trained model")
        self.params = params

    def represent(self, x):
        return embed(self.params, x)


# --------------------------------------------------------------------------
# scores and intervals
# --------------------------------------------------------------------------

def _distance(u, v):
    diff = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


def health_score(patient_repr, reference, d=None):
    """Distance between a represented patient and a represented reference."""
    p = as_vector(patient_repr, "patient")
    r = as_vector(reference, "reference")
    if p.shape != r.shape:
        raise DimensionError(f"patient has dimension {p.size}, reference {r.size}")
    return float(d(r, p)) if d is not None else _distance(r, p)


def similarity(x, y, d=None):
    return 1.0 / (1.0 + health_score(x, y, d))


@dataclass(frozen=True)
class ThresholdInterval:
    t_lower: float
    t_upper: float
    q: float

    def __post_init__(self):
        if self.t_lower > self.t_upper:
            raise ConfigurationError(f"interval lower {self.t_lower} exceeds upper {self.t_upper}")

    def contains(self, score, clamp_lower_bound=False):
        lo = 0.0 if clamp_lower_bound else self.t_lower
        return lo <= score <= self.t_upper

    def covers(self, other):
        return self.t_lower <= other.t_lower and other.t_upper <= self.t_upper


@dataclass
class CellReference:
    sex: str
    age_group: str
    n_bfh: int
    available: bool
    reference: np.ndarray = None      # represented median
    normal: ThresholdInterval = None
    lower_risk: ThresholdInterval = None
    represent: object = None


@dataclass
class ReferenceSet:
    backend: DistanceBackend
    feature_names: tuple
    cells: dict = field(default_factory=dict)  # (sex, age_group) -> CellReference

    def cell(self, sex, group):
        return self.cells.get((sex, group))


def _represent_row(represent, row):
    """Represent a single feature row (kept row-at-a-time so that batch and
    single-patient scores are bit-identical)."""
    return represent(np.asarray(row, dtype=np.float64).reshape(1, -1))[0]


def threshold_interval(bfh_matrix, q, represent, reference):
    """``[d(P_n, P_50), d(P_{q+n}, P_50)]`` with ``n = (100 - q) / 2``,
    percentiles taken per raw feature and then represented."""
    n = (100.0 - q) / 2.0
    lo = _distance(_represent_row(represent, columnwise_percentile(bfh_matrix, n)), reference)
    hi = _distance(_represent_row(represent, columnwise_percentile(bfh_matrix, q + n)), reference)
    return lo, hi


def build_reference_set(bfh, backend, min_cell_size=MIN_CELL_SIZE):
    """Per (sex, age group) reference medians and N (95%) / LR (98%) intervals.

    Only real (non-synthetic) BFH records are used. Cells with fewer than
    ``min_cell_size`` members are marked unavailable. The literal LR interval
    is widened to the hull of itself and N so that N is always nested in LR.
    """
    names = bfh.feature_names
    refs = ReferenceSet(backend, names)
    records = [r for r in bfh.records if r.label == BFH and not r.synthetic]
    for sex in SEXES:
        for group in AGE_GROUP_LABELS:
            members = [r for r in records if r.sex == sex and r.age_group == group]
            cell = CellReference(sex, group, len(members), len(members) >= min_cell_size)
            if cell.available:
                mat = np.array([r.vector(names) for r in members])
                represent = backend.fit(mat)
                median = _represent_row(represent, columnwise_percentile(mat, 50.0))
                n_lo, n_hi = threshold_interval(mat, NORMAL_Q, represent, median)
                l_lo, l_hi = threshold_interval(mat, LOWER_RISK_Q, represent, median)
                cell.reference = median
                cell.represent = represent
                cell.normal = ThresholdInterval(min(n_lo, n_hi), max(n_lo, n_hi), NORMAL_Q)
                cell.lower_risk = ThresholdInterval(min(l_lo, l_hi, cell.normal.t_lower),
                                                    max(l_lo, l_hi, cell.normal.t_upper), LOWER_RISK_Q)
            refs.cells[(sex, group)] = cell
    return refs


def classify_score(score, cell, clamp_lower_bound=False):
    if cell.normal.contains(score, clamp_lower_bound):
        return RiskGroup.NORMAL
    if cell.lower_risk.contains(score, clamp_lower_bound):
        return RiskGroup.LOWER_RISK
    return RiskGroup.HIGHER_RISK


def assign_risk(patient, refs, clamp_lower_bound=False):
    """Return ``(RiskGroup, health_score)``; score is ``None`` when the
    patient's cell has no reference."""
    cell = refs.cell(patient.sex, patient.age_group)
    if cell is None or not cell.available:
        return RiskGroup.UNASSIGNED, None
    rep = _represent_row(cell.represent, patient.vector(refs.feature_names))
    score = _distance(rep, cell.reference)
    return classify_score(score, cell, clamp_lower_bound), score


def assign_cohort(cohort, refs, clamp_lower_bound=False):
    return [assign_risk(r, refs, clamp_lower_bound) for r in cohort.records]


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def risk_distribution(cohort, refs, clamp_lower_bound=False,
                      labels=(APPARENTLY_HEALTHY, UNHEALTHY)):
    """Fraction of assigned patients of each label falling in each group."""
    out = {}
    assigned = assign_cohort(cohort, refs, clamp_lower_bound)
    for label in labels:
        groups = [g for r, (g, _) in zip(cohort.records, assigned)
                  if r.label == label and g is not RiskGroup.UNASSIGNED]
        unassigned = sum(1 for r, (g, _) in zip(cohort.records, assigned)
                         if r.label == label and g is RiskGroup.UNASSIGNED)
        total = len(groups)
        row = {g.value: (groups.count(g) / total if total else None) for g in ASSIGNED_GROUPS}
        row["n_assigned"] = total
        row["n_unassigned"] = unassigned
        out[label] = row
    return out


def future_risk_validation(cohort, refs, clamp_lower_bound=False, conditions=None):
    """Per condition and group: share of apparently-healthy patients who go on
    to develop that condition. ``None`` marks an empty group."""
    ah = [r for r in cohort.records if r.label == APPARENTLY_HEALTHY and not r.synthetic]
    if conditions is None:
        conditions = sorted({r.future_diagnosis[0] for r in ah if r.future_diagnosis})
    assigned = [(r, assign_risk(r, refs, clamp_lower_bound)[0]) for r in ah]
    table = {}
    for cond in conditions:
        row = {}
        for g in ASSIGNED_GROUPS:
            members = [r for r, grp in assigned if grp is g]
            converted = sum(1 for r in members if r.future_diagnosis and r.future_diagnosis[0] == cond)
            row[g.value] = {"n": len(members), "converted": converted,
                            "rate": converted / len(members) if members else None}
        table[cond] = row
    return table


def pseudotime_correlation(cohort, refs, min_patients=3):
    """Pearson r between health score and years until diagnosis, per condition
    (``None`` when fewer than ``min_patients`` scored converters)."""
    pairs = {}
    for r in cohort.records:
        if r.label != APPARENTLY_HEALTHY or r.synthetic or not r.future_diagnosis:
            continue
        _, score = assign_risk(r, refs)
        if score is None:
            continue
        cond, years = r.future_diagnosis
        pairs.setdefault(cond, []).append((score, years))
    out = {}
    for cond in sorted(pairs):
        rows = pairs[cond]
        if len(rows) < min_patients:
            out[cond] = {"n": len(rows), "r": None}
            continue
        s, y = np.array(rows).T
        out[cond] = {"n": len(rows), "r": pearson_correlation(s, y)}
    return out


def _rate(x):
    return UNDEFINED if x is None else repr(float(x))


def risk_report_text(blocks):
    """Render ``{backend: (distribution, validation)}`` as stable block text."""
    buf = io.StringIO()
    for backend, (dist, validation) in blocks.items():
        buf.write(f"[distribution backend={backend}]\n")
        buf.write("label,n_assigned,n_unassigned,normal,lower_risk,higher_risk\n")
        for label, row in dist.items():
            buf.write(f"{label},{row['n_assigned']},{row['n_unassigned']},"
                      + ",".join(_rate(row[g.value]) for g in ASSIGNED_GROUPS) + "\n")
        buf.write("\n")
        for cond, row in validation.items():
            buf.write(f"[risk backend={backend} condition={cond}]\n")
            buf.write("group,n,converted,rate\n")
            for g in ASSIGNED_GROUPS:
                cell = row[g.value]
                buf.write(f"{g.value},{cell['n']},{cell['converted']},{_rate(cell['rate'])}\n")
            buf.write("\n")
    return buf.getvalue()


def pseudotime_report_text(blocks):
    buf = io.StringIO()
    for backend, table in blocks.items():
        buf.write(f"[pseudotime backend={backend}]\n")
        buf.write("condition,n,pearson_r\n")
        for cond, row in table.items():
            r = INSUFFICIENT if row["r"] is None else repr(row["r"])
            buf.write(f"{cond},{row['n']},{r}\n")
        buf.write("\n")
    return buf.getvalue()

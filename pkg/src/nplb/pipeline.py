"""End-to-end plumbing shared by the command line and the test-suite.

Raw cohort -> complete-case records of one sex -> label-stratified split ->
BFH augmentation of the training part (in raw units, where the clinical
bounds live) -> per-feature quantile normalization fitted on the real
records -> triplet training. Risk references are built on the same
normalized feature space.
"""
from dataclasses import dataclass
import logging

import numpy as np

from .cohort_lab import (P0_FEATURES, QuantileNormalizer, apply_normalizers, augment_bona_fide,
                         preprocess, split_train_test)
from .errors import ConfigurationError, EmptyResultError
from .numeric_core import RandomSource
from .risk_engine import (EmbeddingEuclidean, Mahalanobis, P0Euclidean, RawEuclidean,
                          build_reference_set, future_risk_validation, pseudotime_correlation,
                          risk_distribution)
from .trainer import train

log = logging.getLogger(__name__)

BACKENDS = ("raw", "mahalanobis", "p0", "embedding")


@dataclass
class PreparedData:
    sex: str
    feature_names: tuple
    normalizers: dict   # feature -> QuantileNormalizer
    train: object       # normalized Cohort, synthetic BFH included
    test: object        # normalized Cohort, real records only
    report: object      # PreprocessReport


def sex_cohort(cohort, sex, min_completeness=0.75):
    """Complete-case records of one sex in raw units, plus the preprocessing report."""
    pp = preprocess(cohort, normalize=False, min_completeness=min_completeness)
    if sex not in pp.cohorts:
        raise EmptyResultError(f"no complete {sex} records in cohort")
    return pp[sex], pp.report


def fit_normalizers(cohort):
    real = cohort.real().matrix()
    if real.shape[0] == 0:
        raise EmptyResultError("no real records to fit normalizers on")
    return {f: QuantileNormalizer(real[:, j]) for j, f in enumerate(cohort.feature_names)}


def normalizers_to_dict(normalizers):
    return {f: q.to_dict() for f, q in normalizers.items()}


def normalizers_from_dict(doc):
    return {f: QuantileNormalizer.from_knots(v["knots"], v["scores"]) for f, v in doc.items()}


def prepare_training_data(cohort, bounds, sex, fold, train_fraction, rng, min_completeness=0.75):
    raw, report = sex_cohort(cohort, sex, min_completeness)
    normalizers = fit_normalizers(raw)
    train_raw, test_raw = split_train_test(raw.real(), train_fraction, rng.spawn("split"))
    train_raw = augment_bona_fide(train_raw, fold, bounds, rng.spawn("augment"))
    return PreparedData(sex, raw.feature_names, normalizers,
                        apply_normalizers(train_raw, normalizers),
                        apply_normalizers(test_raw, normalizers), report)


def train_on_cohort(cohort, bounds, config, sex="female", fold=3, train_fraction=0.7,
                    min_completeness=0.75):
    """Returns ``(PreparedData, TrainResult)``; all randomness derives from ``config.seed``."""
    data = prepare_training_data(cohort, bounds, sex, fold, train_fraction,
                                 RandomSource(config.seed).spawn("data"), min_completeness)
    result = train(data.train.matrix(), data.train.labels(), config)
    return data, result


def checkpoint_metadata(data, config, extra=None):
    meta = {"sex": data.sex, "feature_names": list(data.feature_names),
            "normalizers": normalizers_to_dict(data.normalizers), "train_config": config.to_dict()}
    meta.update(extra or {})
    return meta


def normalized_cohort(cohort, sex, normalizers=None, min_completeness=0.75):
    """Real complete-case records of ``sex`` in normalized units.

    ``normalizers`` (e.g. from a checkpoint) are reused when given, otherwise
    fitted on these records."""
    raw, _ = sex_cohort(cohort, sex, min_completeness)
    raw = raw.real()
    if normalizers is None:
        normalizers = fit_normalizers(raw)
    else:
        missing = [f for f in raw.feature_names if f not in normalizers]
        if missing or len(raw.feature_names) != len(normalizers):
            raise ConfigurationError(
                f"cohort features {list(raw.feature_names)} do not match the model's "
                f"{list(normalizers)}")
    return apply_normalizers(raw, normalizers)


def make_backend(name, feature_names, params=None):
    if name == "raw":
        return RawEuclidean()
    if name == "mahalanobis":
        return Mahalanobis()
    if name == "p0":
        return P0Euclidean.from_names(feature_names, [f for f in P0_FEATURES if f in feature_names])
    if name == "embedding":
        if params is None:
            raise ConfigurationError("the embedding backend needs --checkpoint")
        if params.input_dim != len(feature_names):
            raise ConfigurationError(f"model expects {params.input_dim} features, cohort has "
                                     f"{len(feature_names)}")
        return EmbeddingEuclidean(params)
    raise ConfigurationError(f"unknown backend {name!r}; choose from {BACKENDS}")


def risk_evaluation(cohort, backend, clamp_lower_bound=False):
    """``(refs, distribution, future-risk table)`` for a normalized single-sex cohort."""
    refs = build_reference_set(cohort, backend)
    return (refs, risk_distribution(cohort, refs, clamp_lower_bound),
            future_risk_validation(cohort, refs, clamp_lower_bound))


def pseudotime_evaluation(cohort, backend):
    refs = build_reference_set(cohort, backend)
    return refs, pseudotime_correlation(cohort, refs)


def shuffled_years(cohort, rng):
    """Null model: permute years-until-diagnosis among converters of each condition."""
    recs = list(cohort.records)
    by_cond = {}
    for i, r in enumerate(recs):
        if r.future_diagnosis:
            by_cond.setdefault(r.future_diagnosis[0], []).append(i)
    for cond, idx in sorted(by_cond.items()):
        years = np.array([recs[i].future_diagnosis[1] for i in idx])[rng.permutation(len(idx))]
        for i, y in zip(idx, years):
            recs[i] = type(recs[i])(**{**recs[i].__dict__, "future_diagnosis": (cond, float(y))})
    return cohort.with_records(recs)

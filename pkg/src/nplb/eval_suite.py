"""Embedding evaluation: kNN classification, F1 scores, and the multi-seed
loss comparison benchmark."""
from dataclasses import dataclass, field, replace
import io
import logging

import numpy as np
from scipy.stats import special_ortho_group

from . import kernels
from .embedding_net import embed
from .errors import ConfigurationError, DimensionError, EmptyInputError, NPLBError
from .numeric_core import RandomSource, as_matrix
from .trainer import TrainConfig, train
from .triplet_losses import LossKind, mean_uniformity

log = logging.getLogger(__name__)


def knn_predict(train_embeddings, train_labels, query_embeddings, k=50):
    """Majority vote among the k Euclidean-nearest training rows.

    Neighbours at equal distance are taken in training-row order. Vote ties go
    to the label with the smallest summed neighbour distance, then to the
    smallest label in sorted order.
    """
    xt = as_matrix(train_embeddings, "train_embeddings")
    xq = as_matrix(query_embeddings, "query_embeddings")
    yt = np.asarray(train_labels)
    if yt.shape[0] != xt.shape[0]:
        raise DimensionError("train labels and embeddings differ in length")
    if xq.shape[1] != xt.shape[1]:
        raise DimensionError("query and train embeddings differ in dimension")
    k = int(k)
    if not 1 <= k <= xt.shape[0]:
        raise ConfigurationError(f"k={k} must lie in [1, {xt.shape[0]}]")
    classes, codes = np.unique(yt, return_inverse=True)
    dist = kernels.pairwise_distances(xq, xt)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(xq.shape[0]), k)
    votes = np.zeros((xq.shape[0], classes.size))
    sums = np.zeros((xq.shape[0], classes.size))
    np.add.at(votes, (rows, codes[nearest].ravel()), 1.0)
    np.add.at(sums, (rows, codes[nearest].ravel()), np.take_along_axis(dist, nearest, 1).ravel())
    top = votes == votes.max(axis=1, keepdims=True)
    winner = np.argmin(np.where(top, sums, np.inf), axis=1)
    return classes[winner]


@dataclass
class ConfusionCounts:
    labels: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def support(self):
        return self.tp + self.fn


def confusion_counts(true_labels, predicted_labels):
    yt = np.asarray(true_labels)
    yp = np.asarray(predicted_labels)
    if yt.shape != yp.shape:
        raise DimensionError(f"length mismatch: {yt.shape} vs {yp.shape}")
    if yt.size == 0:
        raise EmptyInputError("no labels to score")
    labels = np.unique(np.concatenate([yt, yp]))
    tp = np.array([np.sum((yt == c) & (yp == c)) for c in labels])
    fp = np.array([np.sum((yt != c) & (yp == c)) for c in labels])
    fn = np.array([np.sum((yt == c) & (yp != c)) for c in labels])
    return ConfusionCounts(labels, tp, fp, fn)


def _f1(tp, fp, fn):
    # 2PR / (P + R) with 0 for empty precision, recall or P + R
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    prec = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=tp + fp > 0)
    rec = np.divide(tp, tp + fn, out=np.zeros_like(tp), where=tp + fn > 0)
    return np.divide(2 * prec * rec, prec + rec, out=np.zeros_like(tp), where=prec + rec > 0)


def f1_scores(true_labels, predicted_labels):
    """Per-class, support-weighted and micro-averaged F1."""
    cc = confusion_counts(true_labels, predicted_labels)
    per_class = _f1(cc.tp, cc.fp, cc.fn).astype(float)
    support = cc.support
    weighted = float(np.sum(per_class * support) / np.sum(support))
    micro = float(_f1(cc.tp.sum(), cc.fp.sum(), cc.fn.sum()))
    return {
        "weighted_f1": weighted,
        "micro_f1": micro,
        "per_class_f1": {lab.item() if hasattr(lab, "item") else lab: float(f)
                         for lab, f in zip(cc.labels, per_class)},
    }


# --------------------------------------------------------------------------
# synthetic data + benchmark
# --------------------------------------------------------------------------

def make_blobs(n_per_class, dim, n_classes, separation, rng, scale_range=(0.3, 3.0)):
    """Anisotropic Gaussian classes: random means at distance ``separation``
    from the origin, each with its own random rotation and log-uniform axis
    scales."""
    xs, ys = [], []
    for c in range(n_classes):
        direction = rng.normal(size=dim)
        mean = separation * direction / np.linalg.norm(direction)
        scales = np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), size=dim))
        rotation = special_ortho_group.rvs(dim, random_state=rng.generator) if dim > 1 else np.eye(1)
        z = rng.normal(size=(n_per_class, dim)) * scales
        xs.append(mean + z @ rotation.T)
        ys.append(np.full(n_per_class, c))
    return np.concatenate(xs), np.concatenate(ys)


def stratified_split(labels, fraction, rng):
    """Index arrays ``(train, test)`` with per-label proportion ``fraction``."""
    labels = np.asarray(labels)
    train_idx, test_idx = [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        perm = idx[rng.permutation(idx.size)]
        n_train = min(max(int(np.floor(fraction * idx.size + 0.5)), 1), idx.size - 1) \
            if idx.size > 1 else idx.size
        train_idx.append(perm[:n_train])
        test_idx.append(perm[n_train:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def _default_train_config():
    # desk-scale network and schedule: 40 epochs over 2048 offline triplets
    return TrainConfig(epochs=40, n_triplets=2048, batch_size=128, decay_every=10,
                       hidden=(128, 64), output_dim=16, lr=0.001)


@dataclass
class BenchmarkSpec:
    n_per_class: int = 200
    dim: int = 20
    n_classes: int = 3
    separation: float = 2.5
    losses: tuple = ("traditional", "swap", "nplb")
    seeds: tuple = (0, 1, 2, 3, 4)
    k: int = 50
    train_fraction: float = 0.8
    train: TrainConfig = field(default_factory=_default_train_config)

    def __post_init__(self):
        self.losses = tuple(LossKind.parse(x) if isinstance(x, str) else x for x in self.losses)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigurationError("benchmark needs at least one seed")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")

    def to_dict(self):
        return {"n_per_class": self.n_per_class, "dim": self.dim, "n_classes": self.n_classes,
                "separation": self.separation, "losses": [str(x) for x in self.losses],
                "seeds": list(self.seeds), "k": self.k, "train_fraction": self.train_fraction,
                "train": self.train.to_dict()}


@dataclass
class BenchmarkResult:
    spec: BenchmarkSpec
    per_seed: dict  # loss name -> list of {"seed", "weighted_f1", "micro_f1", "unif"}

    def summary(self):
        rows = {}
        for loss, runs in self.per_seed.items():
            w = np.array([r["weighted_f1"] for r in runs])
            m = np.array([r["micro_f1"] for r in runs])
            u = np.array([r["unif"] for r in runs])
            rows[loss] = {"weighted_f1_mean": float(w.mean()), "weighted_f1_std": float(w.std()),
                          "micro_f1_mean": float(m.mean()), "micro_f1_std": float(m.std()),
                          "mean_unif": float(u.mean())}
        return rows

    def table_text(self):
        buf = io.StringIO()
        buf.write("loss,weighted_f1_mean,weighted_f1_std,micro_f1_mean,micro_f1_std,mean_unif\n")
        for loss, row in self.summary().items():
            buf.write(loss + "," + ",".join(repr(row[c]) for c in (
                "weighted_f1_mean", "weighted_f1_std", "micro_f1_mean", "micro_f1_std",
                "mean_unif")) + "\n")
        buf.write("\nloss,seed,weighted_f1,micro_f1,unif\n")
        for loss, runs in self.per_seed.items():
            for r in runs:
                buf.write(f"{loss},{r['seed']},{r['weighted_f1']!r},{r['micro_f1']!r},{r['unif']!r}\n")
        return buf.getvalue()


def evaluate_embedding(params, x_train, y_train, x_test, y_test, k):
    e_train = embed(params, x_train)
    e_test = embed(params, x_test)
    pred = knn_predict(e_train, y_train, e_test, min(k, e_train.shape[0]))
    scores = f1_scores(y_test, pred)
    return scores["weighted_f1"], scores["micro_f1"], mean_uniformity(e_test, y_test)


def run_benchmark(spec):
    """Train one model per loss for every seed on freshly generated blobs and
    score the test-set embeddings with kNN."""
    per_seed = {str(loss): [] for loss in spec.losses}
    for seed in spec.seeds:
        root = RandomSource(seed)
        x, y = make_blobs(spec.n_per_class, spec.dim, spec.n_classes, spec.separation,
                          root.spawn("data"))
        tr, te = stratified_split(y, spec.train_fraction, root.spawn("split"))
        for loss in spec.losses:
            cfg = replace(spec.train, loss=loss, seed=seed)
            try:
                result = train(x[tr], y[tr], cfg)
                w, m, u = evaluate_embedding(result.params, x[tr], y[tr], x[te], y[te], spec.k)
            except NPLBError as exc:
                raise type(exc)(f"seed {seed}, loss {loss}: {exc}") from exc
            log.info("seed %d %s: weighted F1 %.4f unif %.4f", seed, loss, w, u)
            per_seed[str(loss)].append({"seed": seed, "weighted_f1": w, "micro_f1": m, "unif": u})
    return BenchmarkResult(spec, per_seed)


"""Offline triplet sampling, Adam with step-wise exponential LR decay, and the
training loop."""
from dataclasses import asdict, dataclass, field
import io
import logging

import numpy as np

from .embedding_net import DEFAULT_DROPOUT, DEFAULT_HIDDEN, backward, build_model, forward
from .errors import ConfigurationError, DimensionError, DivergenceError, SamplingError
from .numeric_core import RandomSource, as_matrix
from .triplet_losses import NPLB, LossKind, batch_loss, check_margin

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr: float = 0.001
    gamma: float = 0.95
    decay_every: int = 50
    epochs: int = 1000
    margin: float = 1.0
    loss: LossKind = NPLB
    batch_size: int = 256
    n_triplets: int = 20_000
    seed: int = 0
    output_dim: int = 32
    hidden: tuple = DEFAULT_HIDDEN
    dropout: float = DEFAULT_DROPOUT

    def __post_init__(self):
        if isinstance(self.loss, str):
            self.loss = LossKind.parse(self.loss)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.decay_every < 1:
            raise ConfigurationError("decay_every must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1 or self.n_triplets < 1:
            raise ConfigurationError("batch_size and n_triplets must be >= 1")
        check_margin(self.margin)

    def to_dict(self):
        d = asdict(self)
        d["loss"] = self.loss.name
        d["p"] = self.loss.p
        d["hidden"] = list(self.hidden)
        return d


# --------------------------------------------------------------------------
# triplet sampling
# --------------------------------------------------------------------------

def sample_triplets(labels, n, rng):
    """Draw ``n`` (anchor, positive, negative) index rows.

    Anchors are uniform over records whose class has at least two members,
    positives uniform over the anchor's other class members, negatives uniform
    over all records of other classes.
    """
    labels = np.asarray(labels)
    classes, codes = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise SamplingError("triplet sampling needs at least two classes")
    sizes = np.bincount(codes, minlength=classes.size)
    eligible_rows = np.flatnonzero(sizes[codes] >= 2)
    if eligible_rows.size == 0:
        raise SamplingError("no class has two members; cannot form a positive pair")

    anchors = eligible_rows[rng.integers(0, eligible_rows.size, size=n)]
    anchor_cls = codes[anchors]
    # positive: offset into the anchor's class, skipping the anchor itself
    rank_in_class = np.empty(labels.size, dtype=np.int64)
    for k in range(classes.size):
        rank_in_class[codes == k] = np.arange(sizes[k])
    offsets = (rng.random(n) * (sizes[anchor_cls] - 1)).astype(np.int64)
    offsets += offsets >= rank_in_class[anchors]
    # rows sorted by class; class k occupies order[starts[k]:starts[k] + sizes[k]]
    order = np.argsort(codes, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    positives = order[starts[anchor_cls] + offsets]
    # negative: uniform over rows of all other classes
    outside = labels.size - sizes[anchor_cls]
    pick = (rng.random(n) * outside).astype(np.int64)
    # rows of other classes, in class-sorted order, skip the anchor's block
    idx = np.where(pick >= starts[anchor_cls], pick + sizes[anchor_cls], pick)
    negatives = order[idx]
    return np.stack([anchors, positives, negatives], axis=1)


def check_triplets(triplets, labels):
    labels = np.asarray(labels)
    a, p, n = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    return bool(np.all(labels[a] == labels[p]) and np.all(labels[a] != labels[n])
                and np.all(a != p))


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros_like(cls, tensors):
        return cls({k: np.zeros_like(v) for k, v in tensors.items()},
                   {k: np.zeros_like(v) for k, v in tensors.items()})


def adam_step(params, grads, state, lr_now):
    """One bias-corrected Adam update.

    ``params``, ``grads`` and the moments are ``{name: ndarray}`` mappings;
    returns new parameter and state objects, leaving the inputs untouched.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise DimensionError("parameter, gradient and state keys differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, expected {theta.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_params[k] = theta - lr_now * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


def lr_schedule(config, epoch):
    return config.lr * config.gamma ** (int(epoch) // config.decay_every)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: object
    epochs: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def loss_log_text(self):
        buf = io.StringIO()
        buf.write("epoch,lr,mean_loss\n")
        for e, lr, loss in zip(self.epochs, self.lrs, self.losses):
            buf.write(f"{e},{lr!r},{loss!r}\n")
        return buf.getvalue()


def triplet_step(params, x, triplets, kind, margin, rng):
    """Forward the stacked (a; p; n) batch, return ``(loss, grads)``."""
    b = triplets.shape[0]
    stacked = x[triplets.T.ravel()]
    emb, trace = forward(params, stacked, training=True, rng=rng)
    loss, ga, gp, gn = batch_loss(kind, emb[:b], emb[b:2 * b], emb[2 * b:], margin)
    grads = backward(params, trace, np.concatenate([ga, gp, gn]))
    return loss, grads


def train(x, labels, config, params=None, triplets=None):
    """Train an embedding network on labelled rows ``x``.

    Everything random (initialization, triplets, per-epoch order, dropout)
    derives from ``config.seed``.
    """
    x = as_matrix(x, "dataset")
    labels = np.asarray(labels)
    if x.shape[0] == 0:
        raise ConfigurationError("dataset is empty")
    if labels.shape[0] != x.shape[0]:
        raise DimensionError("labels and dataset rows differ")
    root = RandomSource(config.seed)
    if params is None:
        params = build_model(x.shape[1], config.output_dim, root.spawn("init"),
                             hidden=config.hidden, dropout=config.dropout)
    result = TrainResult(params)
    if config.epochs == 0:
        return result
    if triplets is None:
        triplets = sample_triplets(labels, config.n_triplets, root.spawn("triplets"))
    order_rng = root.spawn("order")
    dropout_rng = root.spawn("dropout")
    state = AdamState.zeros_like(params.tensors)
    step = 0
    for epoch in range(config.epochs):
        lr_now = lr_schedule(config, epoch)
        perm = order_rng.permutation(triplets.shape[0])
        total, count = 0.0, 0
        for start in range(0, perm.size, config.batch_size):
            batch = triplets[perm[start:start + config.batch_size]]
            loss, grads = triplet_step(params, x, batch, config.loss, config.margin, dropout_rng)
            step += 1
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}", step=step)
            tensors, state = adam_step(params.tensors, grads, state, lr_now)
            if not all(np.all(np.isfinite(v)) for v in tensors.values()):
                raise DivergenceError(f"non-finite parameters after epoch {epoch}, step {step}",
                                      step=step)
            params = params.with_tensors(tensors)
            total += loss * batch.shape[0]
            count += batch.shape[0]
        result.epochs.append(epoch)
        result.lrs.append(lr_now)
        result.losses.append(total / count)
        log.debug("epoch %d lr %.3g loss %.6f", epoch, lr_now, total / count)
    result.params = params
    return result

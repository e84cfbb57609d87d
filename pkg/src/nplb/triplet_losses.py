"""Triplet objectives (traditional, Distance Swap, NPLB) and class-density
diagnostics for embedded point clouds."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .numeric_core import as_matrix, as_vector, euclidean_distance

DEFAULT_XI = 1e-8


def check_even_power(p):
    if isinstance(p, bool) or int(p) != p or p < 2 or int(p) % 2:
        raise ConfigurationError(
            f"NPLB power p={p} must be an even integer >= 2; odd powers leave the "
            "regularizer unbounded below (p = 0 mod 2 is required)")
    return int(p)


@dataclass(frozen=True)
class TripletGeometry:
    """Pairwise distances of one embedded triplet."""
    delta_plus: float   # d(anchor, positive)
    delta_minus: float  # d(anchor, negative)
    rho: float          # d(positive, negative)

    @classmethod
    def from_points(cls, anchor, positive, negative):
        return cls(euclidean_distance(anchor, positive),
                   euclidean_distance(anchor, negative),
                   euclidean_distance(positive, negative))


@dataclass(frozen=True)
class LossKind:
    name: str
    p: int = 2

    NAMES = ("traditional", "swap", "nplb")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ConfigurationError(f"unknown loss {self.name!r}; choose from {self.NAMES}")
        if self.name == "nplb":
            check_even_power(self.p)

    @classmethod
    def parse(cls, text, p=2):
        aliases = {"trad": "traditional", "triplet": "traditional",
                   "distance_swap": "swap", "distance-swap": "swap"}
        name = aliases.get(text.strip().lower(), text.strip().lower())
        return cls(name, int(p)) if name == "nplb" else cls(name)

    @property
    def code(self):
        return {"traditional": kernels.TRADITIONAL, "swap": kernels.SWAP,
                "nplb": kernels.REGULARIZED}[self.name]

    def __str__(self):
        return f"nplb(p={self.p})" if self.name == "nplb" else self.name


TRADITIONAL = LossKind("traditional")
SWAP = LossKind("swap")
NPLB = LossKind("nplb", 2)


def check_margin(margin):
    margin = float(margin)
    if not np.isfinite(margin) or margin <= 0.0:
        raise ConfigurationError(f"margin must be finite and positive, got {margin}")
    return margin


def _hinge(x):
    return max(x, 0.0)


def traditional_loss(g, margin=1.0):
    return _hinge(g.delta_plus - g.delta_minus + check_margin(margin))


def nplb_loss(g, margin=1.0, p=2):
    p = check_even_power(p)
    return traditional_loss(g, margin) + (g.rho - g.delta_minus) ** p


def nplb_unbounded_demo(g, margin=1.0):
    """The p=1 regularized variant. Can go negative; only for demonstration."""
    return traditional_loss(g, margin) + (g.rho - g.delta_minus)


def distance_swap_loss(g, margin=1.0):
    return _hinge(g.delta_plus - min(g.delta_minus, g.rho) + check_margin(margin))


def triplet_loss(kind, g, margin=1.0):
    if kind.name == "traditional":
        return traditional_loss(g, margin)
    if kind.name == "swap":
        return distance_swap_loss(g, margin)
    return nplb_loss(g, margin, kind.p)


def loss_gradient(kind, anchor, positive, negative, margin=1.0):
    """Gradients of one triplet's loss wrt its three embeddings.

    Subgradient 0 is used at the hinge kink and for coincident points.
    """
    margin = check_margin(margin)
    rows = [as_vector(v)[None, :] for v in (anchor, positive, negative)]
    _, ga, gp, gn = kernels.triplet_terms(*rows, kind.code, margin, kind.p)
    return ga[0], gp[0], gn[0]


def batch_loss(kind, ea, ep, en, margin=1.0):
    """Mean loss over a batch of embedded triplets plus its gradients.

    Returns ``(mean_loss, grad_a, grad_p, grad_n)`` with the 1/N factor
    already folded into the gradients.
    """
    margin = check_margin(margin)
    losses, ga, gp, gn = kernels.triplet_terms(ea, ep, en, kind.code, margin, kind.p)
    n = losses.shape[0]
    return float(losses.mean()), ga / n, gp / n, gn / n


@dataclass(frozen=True)
class ClassDensity:
    size: int
    local_density: float
    average_density: float
    uniformity: float


def class_density_metrics(embeddings, labels, xi=DEFAULT_XI):
    """Per-class LD (min intra-class pair distance), AD (mean nearest-neighbour
    distance) and Unif = |LD - AD| / (AD + xi); singleton classes get zeros."""
    x = as_matrix(embeddings, "embeddings")
    labels = np.asarray(labels)
    if labels.shape[0] != x.shape[0]:
        raise ConfigurationError("labels and embeddings differ in length")
    classes, codes = np.unique(labels, return_inverse=True)
    nearest = kernels.nearest_same_label(x, codes)
    out = {}
    for k, cls in enumerate(classes):
        nn = nearest[codes == k]
        if nn.size < 2:
            out[cls.item() if hasattr(cls, "item") else cls] = ClassDensity(int(nn.size), 0.0, 0.0, 0.0)
            continue
        ld = float(nn.min())
        ad = float(nn.mean())
        out[cls.item() if hasattr(cls, "item") else cls] = ClassDensity(
            int(nn.size), ld, ad, abs(ld - ad) / (ad + xi))
    return out


def mean_uniformity(embeddings, labels, xi=DEFAULT_XI):
    metrics = class_density_metrics(embeddings, labels, xi)
    return float(np.mean([m.uniformity for m in metrics.values()]))

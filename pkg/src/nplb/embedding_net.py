"""Embedding network: Linear -> Dropout -> PReLU stacks with manual backprop.

The default chain is ``input -> 512 -> 256 -> output`` with a channel-shared
PReLU after every linear layer and inverted dropout (rate 0.1) after the first
two.  Parameters live in a flat ``{name: ndarray}`` mapping so that the
optimizer and the checkpoint format can treat them uniformly.
"""
from dataclasses import dataclass, field
import json

import numpy as np

from . import kernels
from .errors import ConfigurationError, DataError, DimensionError, TraceError
from .numeric_core import as_matrix

CHECKPOINT_FORMAT = "nplb-checkpoint"
CHECKPOINT_VERSION = 1

DEFAULT_HIDDEN = (512, 256)
DEFAULT_DROPOUT = 0.1
PRELU_INIT = 0.25


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    has_prelu: bool = True
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")


@dataclass
class ModelParams:
    specs: tuple
    tensors: dict

    @property
    def input_dim(self):
        return self.specs[0].in_dim

    @property
    def output_dim(self):
        return self.specs[-1].out_dim

    def keys(self):
        return list(self.tensors)

    def n_parameters(self):
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self):
        return ModelParams(self.specs, {k: v.copy() for k, v in self.tensors.items()})

    def with_tensors(self, tensors):
        return ModelParams(self.specs, tensors)


def _param_names(i, spec):
    names = [f"layer{i}.weight", f"layer{i}.bias"]
    if spec.has_prelu:
        names.append(f"layer{i}.prelu")
    return names


def layer_chain(input_dim, output_dim, hidden=DEFAULT_HIDDEN, dropout=DEFAULT_DROPOUT):
    dims = [int(input_dim), *map(int, hidden), int(output_dim)]
    specs = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        specs.append(LayerSpec(dims[i], dims[i + 1], True, 0.0 if last else float(dropout)))
    return tuple(specs)


def init_params(specs, rng):
    tensors = {}
    for i, spec in enumerate(specs):
        bound = 1.0 / np.sqrt(spec.in_dim)
        tensors[f"layer{i}.weight"] = rng.uniform(-bound, bound, size=(spec.out_dim, spec.in_dim))
        tensors[f"layer{i}.bias"] = np.zeros(spec.out_dim)
        if spec.has_prelu:
            tensors[f"layer{i}.prelu"] = np.array([PRELU_INIT])
    return ModelParams(tuple(specs), tensors)


def build_model(input_dim, output_dim, rng, hidden=DEFAULT_HIDDEN, dropout=DEFAULT_DROPOUT):
    """Initialize an embedding network; weights ~ U(+-1/sqrt(fan_in)), biases 0."""
    return init_params(layer_chain(input_dim, output_dim, hidden, dropout), rng)


@dataclass
class ForwardTrace:
    params: ModelParams
    inputs: list = field(default_factory=list)  # input to each linear layer
    pre: list = field(default_factory=list)     # x W^T + b
    dropped: list = field(default_factory=list)  # pre * mask (PReLU input)
    masks: list = field(default_factory=list)   # None when no dropout applied


def forward(params, batch, training=False, rng=None):
    x = as_matrix(batch, "batch")
    if x.shape[1] != params.input_dim:
        raise DimensionError(f"batch has {x.shape[1]} columns, model expects {params.input_dim}")
    if training and rng is None and any(s.dropout_rate > 0 for s in params.specs):
        raise ConfigurationError("training-mode forward needs a RandomSource for dropout")
    t = params.tensors
    trace = ForwardTrace(params)
    for i, spec in enumerate(params.specs):
        trace.inputs.append(x)
        z = x @ t[f"layer{i}.weight"].T + t[f"layer{i}.bias"]
        trace.pre.append(z)
        mask = None
        if training and spec.dropout_rate > 0.0:
            keep = rng.random(z.shape) >= spec.dropout_rate
            mask = keep / (1.0 - spec.dropout_rate)
            z = z * mask
        trace.masks.append(mask)
        trace.dropped.append(z)
        if spec.has_prelu:
            z = kernels.prelu_forward(z, t[f"layer{i}.prelu"][0])
        x = z
    return x, trace


def embed(params, batch):
    """Inference-mode embeddings (no dropout, no RNG)."""
    return forward(params, batch, training=False)[0]


def backward(params, trace, grad_wrt_embeddings):
    if trace.params is not params:
        raise TraceError("trace was produced by a different ModelParams instance")
    g = np.asarray(grad_wrt_embeddings, dtype=np.float64)
    n_rows = trace.inputs[0].shape[0]
    if g.shape != (n_rows, params.output_dim):
        raise TraceError(f"upstream gradient shape {g.shape} does not match trace "
                         f"({n_rows}, {params.output_dim})")
    t = params.tensors
    grads = {}
    for i in reversed(range(len(params.specs))):
        spec = params.specs[i]
        if spec.has_prelu:
            g, dslope = kernels.prelu_backward(g, trace.dropped[i], t[f"layer{i}.prelu"][0],
                                               trace.masks[i])
            grads[f"layer{i}.prelu"] = np.array([dslope])
        elif trace.masks[i] is not None:
            g = g * trace.masks[i]
        grads[f"layer{i}.weight"] = g.T @ trace.inputs[i]
        grads[f"layer{i}.bias"] = g.sum(axis=0)
        if i > 0:
            g = g @ t[f"layer{i}.weight"]
    return {k: grads[k] for k in params.tensors}


# --------------------------------------------------------------------------
# checkpoint file
# --------------------------------------------------------------------------

def checkpoint_text(params, metadata=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [
            {"in_dim": s.in_dim, "out_dim": s.out_dim, "has_prelu": s.has_prelu,
             "dropout_rate": s.dropout_rate}
            for s in params.specs
        ],
        "metadata": metadata or {},
        "tensors": [
            {"key": k, "shape": list(v.shape), "values": v.ravel().tolist()}
            for k, v in params.tensors.items()
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(path, params, metadata=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_text(params, metadata))


def load_checkpoint(path):
    """Return ``(params, metadata)``; raises ``DataError`` on malformed files."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a checkpoint file ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unexpected format {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    specs = tuple(LayerSpec(**layer) for layer in doc["layers"])
    tensors = {}
    for entry in doc["tensors"]:
        values = np.array(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise DataError(f"{path}: tensor {entry['key']} has {values.size} values for shape {shape}")
        tensors[entry["key"]] = values.reshape(shape)
    expected = [n for i, s in enumerate(specs) for n in _param_names(i, s)]
    if sorted(expected) != sorted(tensors):
        raise DataError(f"{path}: tensor keys do not match layer specs")
    return ModelParams(specs, {k: tensors[k] for k in expected}), doc.get("metadata", {})

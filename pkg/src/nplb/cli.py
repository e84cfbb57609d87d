"""Command-line interface.

Every command writes its outputs plus ``config.json`` (the fully resolved
arguments) and ``manifest.json`` (file digests and the only timestamp) into
``--out``. Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
divergence.
"""
import argparse
import datetime
import hashlib
import json
import logging
import os
import sys

from . import __version__
from .cohort_lab import (CohortSpec, augment_bona_fide, bounds_text, default_bounds,
                         default_cohort_spec, generate_cohort, preprocess, read_bounds,
                         read_cohort, write_cohort)
from .embedding_net import embed, load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DataError, DivergenceError, NPLBError
from .eval_suite import BenchmarkSpec, run_benchmark
from .numeric_core import RandomSource
from .pipeline import (BACKENDS, checkpoint_metadata, make_backend, normalized_cohort,
                       normalizers_from_dict, pseudotime_evaluation, risk_evaluation,
                       train_on_cohort)
from .risk_engine import pseudotime_report_text, risk_report_text
from .trainer import TrainConfig
from .triplet_losses import LossKind

log = logging.getLogger("nplb")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with default values for this command's flags")
    p.add_argument("--out", default="out", help="output directory")


def _train_flags(p, epochs=1000, n_triplets=20_000, hidden="512,256", output_dim=32):
    p.add_argument("--loss", default="nplb", help="traditional, swap or nplb")
    p.add_argument("--p", type=int, default=2, help="NPLB power (even, >= 2)")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--decay-every", type=int, default=50)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--n-triplets", type=int, default=n_triplets)
    p.add_argument("--hidden", type=_int_list, default=_int_list(hidden))
    p.add_argument("--output-dim", type=int, default=output_dim)
    p.add_argument("--dropout", type=float, default=0.1)


def build_parser():
    parser = Parser(prog="nplb", description="Triplet embeddings and single-visit health risk.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("generate", help="synthetic cohort + default bounds file")
    _common(p)
    p.add_argument("--sizes", type=_int_list, default=[200, 800, 800],
                   help="bona fide healthy, apparently healthy, unhealthy counts")
    p.add_argument("--severity-shift", type=float, default=CohortSpec.severity_shift)
    p.add_argument("--future-fraction", type=float, default=CohortSpec.future_fraction)
    p.add_argument("--conversion-power", type=float, default=CohortSpec.conversion_power)

    p = sub.add_parser("preprocess", help="completeness filter, sex split, quantile normalization")
    _common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--min-completeness", type=float, default=0.75)
    p.add_argument("--no-normalize", action="store_true")

    p = sub.add_parser("augment", help="append synthetic bona fide healthy records")
    _common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--bounds", help="bounds file (default: built-in clinical ranges)")
    p.add_argument("--fold", type=int, default=3)

    p = sub.add_parser("train", help="preprocess, split, augment and train an embedding")
    _common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--bounds")
    p.add_argument("--sex", choices=("female", "male"), default="female")
    p.add_argument("--fold", type=int, default=3)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--min-completeness", type=float, default=0.75)
    _train_flags(p)

    p = sub.add_parser("embed", help="embed the real records of the model's sex")
    _common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--checkpoint", required=True)

    for name, text in (("risk", "risk distribution and future-risk report"),
                       ("pseudotime", "health score vs years-to-diagnosis correlation")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--cohort", required=True)
        p.add_argument("--checkpoint", help="model for the embedding backend")
        p.add_argument("--backend", type=_name_list, default=list(BACKENDS))
        p.add_argument("--sex", choices=("female", "male"),
                       help="default: the checkpoint's sex, else female")
        p.add_argument("--min-completeness", type=float, default=0.75)
        if name == "risk":
            p.add_argument("--clamp-lower-bound", action="store_true",
                           help="treat scores below the Normal lower end as Normal")

    p = sub.add_parser("benchmark", help="multi-seed loss comparison on Gaussian blobs")
    _common(p)
    p.add_argument("--losses", type=_name_list, default=["traditional", "swap", "nplb"])
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--n-per-class", type=int, default=BenchmarkSpec.n_per_class)
    p.add_argument("--dim", type=int, default=BenchmarkSpec.dim)
    p.add_argument("--n-classes", type=int, default=BenchmarkSpec.n_classes)
    p.add_argument("--separation", type=float, default=BenchmarkSpec.separation)
    p.add_argument("--train-fraction", type=float, default=BenchmarkSpec.train_fraction)
    default_train = BenchmarkSpec().train
    _train_flags(p, default_train.epochs, default_train.n_triplets,
                 ",".join(map(str, default_train.hidden)), default_train.output_dim)
    p.set_defaults(decay_every=default_train.decay_every, batch_size=default_train.batch_size)
    return parser, sub


def parse_args(argv):
    """Values from ``--config`` become defaults of the chosen command, so
    explicit flags still win."""
    parser, sub = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((tok for tok in argv if tok in sub.choices), None)
    if known.config and command:
        try:
            with open(known.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"{known.config}: cannot read config ({exc})") from None
        if not isinstance(overrides, dict):
            raise UsageError(f"{known.config}: expected a JSON object")
        overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
        cmd = sub.choices[command]
        actions = {a.dest: a for a in cmd._actions}
        unknown = sorted(k for k in overrides if k not in actions or k in ("help", "config"))
        if unknown:
            raise UsageError(f"{known.config}: unknown keys for {command}: {unknown}")
        for key in overrides:
            actions[key].required = False
        cmd.set_defaults(**overrides)
    return parser.parse_args(argv)


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

class Outputs:
    def __init__(self, directory, args):
        self.dir = directory
        self.args = args
        self.files = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.dir, name)

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    def write_json(self, name, doc):
        self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def finish(self):
        resolved = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("verbose", "out")}
        self.write_json("config.json", resolved)
        digests = {}
        for name in self.files:
            with open(os.path.join(self.dir, name), "rb") as fh:
                digests[name] = hashlib.sha256(fh.read()).hexdigest()
        manifest = {"command": self.args.command, "version": __version__, "seed": self.args.seed,
                    "out": self.dir,
                    "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                    "files": digests}
        with open(os.path.join(self.dir, "manifest.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _train_config(args):
    return TrainConfig(lr=args.lr, gamma=args.gamma, decay_every=args.decay_every,
                       epochs=args.epochs, margin=args.margin, loss=LossKind.parse(args.loss, args.p),
                       batch_size=args.batch_size, n_triplets=args.n_triplets, seed=args.seed,
                       output_dim=args.output_dim, hidden=tuple(args.hidden), dropout=args.dropout)


def _bounds(args, cohort):
    if getattr(args, "bounds", None):
        return read_bounds(args.bounds)
    return default_bounds(cohort.feature_names, cohort.units)


def _load_model(path):
    params, meta = load_checkpoint(path)
    for key in ("sex", "feature_names", "normalizers"):
        if key not in meta:
            raise DataError(f"{path}: checkpoint metadata lacks {key!r}")
    return params, meta


def _warn_unavailable(refs, backend, cohort):
    sexes = {r.sex for r in cohort.records}
    for cell in refs.cells.values():
        if not cell.available and cell.sex in sexes:
            log.warning("backend %s: cell %s/%s has %d bona fide healthy records; "
                        "its patients are unassigned", backend, cell.sex, cell.age_group, cell.n_bfh)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate(args, out):
    if len(args.sizes) != 3 or min(args.sizes) < 0:
        raise ConfigurationError("--sizes needs three non-negative counts")
    spec = default_cohort_spec(sizes=args.sizes, severity_shift=args.severity_shift,
                               future_fraction=args.future_fraction,
                               conversion_power=args.conversion_power)
    bounds = default_bounds(spec.feature_names, spec.units)
    cohort = generate_cohort(spec, bounds, RandomSource(args.seed).spawn("cohort"))
    write_cohort(out.path("cohort.csv"), cohort)
    out.write_text("bounds.json", bounds_text(bounds))


def cmd_preprocess(args, out):
    cohort = read_cohort(args.cohort)
    result = preprocess(cohort, normalize=not args.no_normalize,
                        min_completeness=args.min_completeness)
    for sex, part in sorted(result.cohorts.items()):
        write_cohort(out.path(f"preprocessed_{sex}.csv"), part)
    out.write_json("preprocess_report.json", result.report.to_dict())


def cmd_augment(args, out):
    cohort = read_cohort(args.cohort)
    augmented = augment_bona_fide(cohort, args.fold, _bounds(args, cohort),
                                  RandomSource(args.seed).spawn("augment"))
    write_cohort(out.path("augmented.csv"), augmented)


def cmd_train(args, out):
    config = _train_config(args)
    cohort = read_cohort(args.cohort)
    data, result = train_on_cohort(cohort, _bounds(args, cohort), config, sex=args.sex,
                                   fold=args.fold, train_fraction=args.train_fraction,
                                   min_completeness=args.min_completeness)
    meta = checkpoint_metadata(data, config, {"n_train": len(data.train), "n_test": len(data.test)})
    save_checkpoint(out.path("checkpoint.json"), result.params, meta)
    out.write_text("loss_log.csv", result.loss_log_text())


def cmd_embed(args, out):
    params, meta = _load_model(args.checkpoint)
    cohort = normalized_cohort(read_cohort(args.cohort), meta["sex"],
                               normalizers_from_dict(meta["normalizers"]))
    emb = embed(params, cohort.matrix())
    lines = ["id," + ",".join(f"e{j}" for j in range(emb.shape[1]))]
    lines += [rid + "," + ",".join(repr(float(v)) for v in row) for rid, row in zip(cohort.ids(), emb)]
    out.write_text("embeddings.csv", "\n".join(lines) + "\n")


def _scoring_inputs(args):
    params, normalizers, sex = None, None, args.sex
    if args.checkpoint:
        params, meta = _load_model(args.checkpoint)
        sex = sex or meta["sex"]
        if sex == meta["sex"]:
            normalizers = normalizers_from_dict(meta["normalizers"])
        elif "embedding" in args.backend:
            raise ConfigurationError(f"model was trained on {meta['sex']} records, not {sex}")
    sex = sex or "female"
    cohort = normalized_cohort(read_cohort(args.cohort), sex, normalizers, args.min_completeness)
    backends = {name: make_backend(name, cohort.feature_names, params) for name in args.backend}
    return cohort, backends


def cmd_risk(args, out):
    cohort, backends = _scoring_inputs(args)
    blocks = {}
    for name, backend in backends.items():
        refs, dist, validation = risk_evaluation(cohort, backend, args.clamp_lower_bound)
        _warn_unavailable(refs, name, cohort)
        blocks[name] = (dist, validation)
    out.write_text("risk_report.txt", risk_report_text(blocks))


def cmd_pseudotime(args, out):
    cohort, backends = _scoring_inputs(args)
    blocks = {}
    for name, backend in backends.items():
        refs, table = pseudotime_evaluation(cohort, backend)
        _warn_unavailable(refs, name, cohort)
        blocks[name] = table
    out.write_text("pseudotime_report.txt", pseudotime_report_text(blocks))


def cmd_benchmark(args, out):
    if args.seeds < 1:
        raise ConfigurationError("--seeds must be >= 1")
    config = _train_config(args)
    spec = BenchmarkSpec(n_per_class=args.n_per_class, dim=args.dim, n_classes=args.n_classes,
                         separation=args.separation,
                         losses=tuple(LossKind.parse(name, args.p) for name in args.losses),
                         seeds=tuple(range(args.seed, args.seed + args.seeds)), k=args.k,
                         train_fraction=args.train_fraction, train=config)
    result = run_benchmark(spec)
    out.write_text("benchmark.csv", result.table_text())


COMMANDS = {"generate": cmd_generate, "preprocess": cmd_preprocess, "augment": cmd_augment,
            "train": cmd_train, "embed": cmd_embed, "risk": cmd_risk,
            "pseudotime": cmd_pseudotime, "benchmark": cmd_benchmark}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        out = Outputs(args.out, args)
        COMMANDS[args.command](args, out)
        out.finish()
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (NPLBError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

import argparse
import dataclasses
import hashlib
import logging
import sys
import time

import numpy as np

from . import __version__
from .errors import InvalidInput, SDAError
from .estimation import PrecisionSpec
from .io import UsageError, config_hash, load_sim_config, read_matrix, write_json, write_rows
from .sda import RAW, SCALED, SDAOptions, run_rsda, run_sda, run_two_sample, run_two_sample_rsda
from .simulation import run_experiment

log = logging.getLogger("sda_filter")

SIM_COLUMNS = [
    "procedure", "structure", "rho", "dist", "n", "p", "pi1", "mu0", "alpha", "reps",
    "fdr", "fdr_se", "ap", "ap_se", "dropped", "precision", "unreliable", "seed", "config_hash",
]
SEL_COLUMNS = ["feature_index", "w", "selected", "seed", "config_hash"]


def _meta_path(out):
    return f"{out}.meta.json"


def cmd_simulate(args):
    config, workers, canonical = load_sim_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.workers is not None:
        workers = args.workers
    digest = config_hash({"config": canonical, "seed": config.seed})
    start = time.time()
    records = run_experiment(config, workers=max(1, workers))
    rows = []
    for rec in records:
        row = rec.row()
        row.update(seed=config.seed, config_hash=digest)
        rows.append(row)
    write_rows(args.out, SIM_COLUMNS, rows)
    write_json(
        _meta_path(args.out),
        {
            "command": "simulate",
            "seed": config.seed,
            "config_hash": digest,
            "config": canonical,
            "version": __version__,
            "workers": workers,
            "wall_time_s": round(time.time() - start, 3),
        },
    )
    for rec in records:
        if rec.unreliable:
            log.warning("%s in %s dropped %d replications", rec.procedure, rec.cell, rec.dropped)
    return 0


def _precision_spec(source, p):
    if source in (None, "glasso"):
        return PrecisionSpec.glasso()
    if source == "identity":
        return PrecisionSpec.identity()
    omega = read_matrix(source)
    if omega.shape != (p, p):
        raise UsageError(f"{source}: precision matrix is {omega.shape[0]}x{omega.shape[1]}, data have p={p}")
    try:
        return PrecisionSpec.known(omega)
    except InvalidInput as exc:
        raise UsageError(f"{source}: {exc}") from None


def _options(args):
    return SDAOptions(plus=args.plus, t1_mode=args.t1)


def _check_shape(data, path):
    n, p = data.shape
    if n < 3:
        raise UsageError(f"{path}: need at least 3 rows, got {n}")
    if p < 2:
        raise UsageError(f"{path}: need at least 2 columns, got {p}")


def _file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _write_selection(args, command, result, meta, inputs):
    settings = {
        "command": command, "inputs": [_file_digest(p) for p in inputs], "alpha": args.alpha, "omega": args.omega,
        "plus": args.plus, "rsda": args.rsda, "t1": args.t1, "seed": args.seed,
    }
    digest = config_hash(settings)
    chosen = set(result.rejected.tolist())
    rows = [
        {"feature_index": j, "w": float(w), "selected": int(j in chosen), "seed": args.seed, "config_hash": digest}
        for j, w in enumerate(result.w)
    ]
    write_rows(args.out, SEL_COLUMNS, rows)
    meta.update(
        settings,
        input_paths=[str(p) for p in inputs],
        config_hash=digest,
        version=__version__,
        threshold=result.threshold,
        fdp_hat_at_L=result.fdp_hat_at_L,
        n_selected=len(chosen),
        screened=int(result.subset.size),
        flags=list(result.flags),
    )
    write_json(_meta_path(args.out), meta)


def cmd_analyze(args):
    data = read_matrix(args.data)
    _check_shape(data, args.data)
    spec = _precision_spec(args.omega, data.shape[1])
    options = _options(args)
    meta = {}
    if args.rsda:
        agg = run_rsda(data, spec, args.alpha, args.rsda, options, args.seed)
        result = agg.final
        meta.update(B=args.rsda, chosen_run=agg.chosen_run, majority_set=agg.majority_set.tolist())
    else:
        result = run_sda(data, spec, args.alpha, options, args.seed)
    _write_selection(args, "analyze", result, meta, [args.data])
    return 0


def cmd_two_sample(args):
    data_a = read_matrix(args.data_a)
    data_b = read_matrix(args.data_b)
    _check_shape(data_a, args.data_a)
    _check_shape(data_b, args.data_b)
    if data_a.shape[1] != data_b.shape[1]:
        raise UsageError(f"feature counts differ: {data_a.shape[1]} vs {data_b.shape[1]}")
    spec = _precision_spec(args.omega, data_a.shape[1])
    options = _options(args)
    meta = {}
    if args.rsda:
        agg = run_two_sample_rsda(data_a, data_b, spec, args.alpha, args.rsda, options, args.seed)
        result = agg.final
        meta.update(B=args.rsda, chosen_run=agg.chosen_run, majority_set=agg.majority_set.tolist())
    else:
        result = run_two_sample(data_a, data_b, spec, args.alpha, options, args.seed)
    _write_selection(args, "two-sample", result, meta, [args.data_a, args.data_b])
    return 0


def _alpha(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _selection_flags(parser):
    parser.add_argument("--omega", default=None, help="precision CSV, 'identity' or 'glasso' (default)")
    parser.add_argument("--alpha", type=_alpha, required=True)
    parser.add_argument("--plus", action="store_true", help="use the conservative +1 threshold")
    parser.add_argument("--rsda", type=_positive, default=None, metavar="B", help="aggregate B random splits")
    parser.add_argument("--t1", choices=(SCALED, RAW), default=SCALED)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="sda-filter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation grid from an INI config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--workers", type=_positive, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="one-sample SDA on a data CSV")
    ana.add_argument("--data", required=True)
    _selection_flags(ana)
    ana.set_defaults(func=cmd_analyze)

    two = sub.add_parser("two-sample", help="two-sample SDA on two data CSVs")
    two.add_argument("--data-a", required=True)
    two.add_argument("--data-b", required=True)
    _selection_flags(two)
    two.set_defaults(func=cmd_two_sample)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sda-filter: error: {exc}", file=sys.stderr)
        return 2
    except (SDAError, np.linalg.LinAlgError, OSError) as exc:
        print(f"sda-filter: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line runner: experiment grids, noise tables, audits, communication summary.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .audit import ldp_audit
from .config import (DEFAULT_EPSILONS, MECHANISM_CHOICES, PREDICTOR_CHOICES, ExperimentConfig,
                     load_config)
from .data import DATASETS
from .errors import (ConfigError, ConvergenceError, DataFormatError, DivergenceError, DomainError,
                     InsufficientSamplesError, RejectionLimitError)
from .mechanism import (BlpMechanism, interval_histogram, laplace_sample, noise_distribution,
                        rating_marginal, snap_to_ranks)
from .pipeline import compare_communication, load_experiment_data, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ldprec")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is our data-error code
    def error(self, message):
        raise ConfigError(message)


def _add_data_args(p):
    p.add_argument("--dataset", choices=sorted(DATASETS), default=None)
    p.add_argument("--data-path", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ldprec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an epsilon sweep and write a CSV report")
    run.add_argument("--config", help="key = value file; flags override it")
    _add_data_args(run)
    run.add_argument("--mechanism", choices=MECHANISM_CHOICES)
    run.add_argument("--predictor", choices=PREDICTOR_CHOICES)
    run.add_argument("--epsilon", type=float, action="append",
                     help=f"repeatable; default {' '.join(map(str, DEFAULT_EPSILONS))}")
    run.add_argument("--folds", type=int)
    run.add_argument("--k-components", type=int)
    run.add_argument("--latent-dim", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--subsample", type=float)
    run.add_argument("--clip-predictions", action="store_true", default=None)
    run.add_argument("--relevance-threshold", type=float)
    run.add_argument("--out", help="CSV path (stdout if omitted); timings go to <out>.timing.csv")

    nd = sub.add_parser("noise-dist", help="theoretical vs sampled BLP noise distribution")
    _add_data_args(nd)
    nd.add_argument("--epsilon", type=float, required=True)
    nd.add_argument("--samples", type=int, default=100_000)
    nd.add_argument("--seed", type=int, default=0)
    nd.add_argument("--out")

    au = sub.add_parser("audit", help="Monte Carlo check of the local-DP inequality")
    au.add_argument("--mechanism", choices=("blp", "laplace-clamp", "laplace"), default="blp")
    au.add_argument("--dataset", choices=sorted(DATASETS), default="movielens",
                    help="takes the rating domain from this dataset")
    au.add_argument("--epsilon", type=float, required=True)
    au.add_argument("--samples", type=int, default=1_000_000)
    au.add_argument("--bins", type=int, default=20)
    au.add_argument("--slack", type=float, default=0.05)
    au.add_argument("--scale-factor", type=float, default=1.0,
                    help="multiply the calibrated scale (below 1 breaks the guarantee)")
    au.add_argument("--seed", type=int, default=0)

    cm = sub.add_parser("comm", help="communication cost per method")
    _add_data_args(cm)
    cm.add_argument("--latent-dim", type=int, default=20)
    cm.add_argument("--value-bytes", type=int, default=8)
    return parser


_RUN_KEYS = {
    "dataset": "dataset", "data_path": "data_path", "mechanism": "mechanism",
    "predictor": "predictor", "folds": "folds", "k_components": "k_components",
    "latent_dim": "latent_dim", "seed": "seed", "subsample": "subsample",
    "clip_predictions": "clip_predictions", "relevance_threshold": "relevance_threshold",
    "out": "out",
}


def config_from_args(args) -> ExperimentConfig:
    overrides = {key: getattr(args, attr) for attr, key in _RUN_KEYS.items()
                 if getattr(args, attr) is not None}
    if args.epsilon:
        overrides["epsilons"] = tuple(args.epsilon)
    if args.config:
        return load_config(args.config, overrides)
    return ExperimentConfig(**overrides)


def cmd_run(args, stdout) -> int:
    config = config_from_args(args)
    report = run_experiment(config)
    if config.out:
        out = Path(config.out)
        report.write_csv(out)
        report.write_timings(out.with_name(out.name + ".timing.csv"))
        log.info("wrote %d rows to %s", len(report.rows), out)
    else:
        stdout.write(report.to_csv())
    return EXIT_OK


def noise_table(R, epsilon: float, samples: int, seed: int = 0):
    """Theoretical BLP noise table next to BLP and Laplace Monte Carlo histograms.

    True ratings are drawn from the observed ratings (snapped to the rank
    grid), so the sampled noise shares the marginal used by the theory.
    """
    domain = R.domain
    mech = BlpMechanism.calibrated(domain, epsilon)
    table = noise_distribution(domain, rating_marginal(R.ratings, domain), mech.scale)
    rng = np.random.default_rng(seed)
    r = snap_to_ranks(rng.choice(R.ratings, size=samples), domain)
    blp_noise = mech.sample(r, rng) - r
    lap_noise = laplace_sample(r, mech.scale, rng) - r
    empirical = interval_histogram(blp_noise, table.edges)
    laplace = interval_histogram(lap_noise, table.edges)
    return table, empirical, laplace


def cmd_noise_dist(args, stdout) -> int:
    name = args.dataset or "movielens"
    R = load_experiment_data(ExperimentConfig(dataset=name, data_path=args.data_path,
                                              epsilons=(args.epsilon,), allow_any_epsilon=True))
    if R.domain.ranks is None:
        raise ConfigError(f"dataset {name} has no rank grid")
    table, empirical, laplace = noise_table(R, args.epsilon, args.samples, args.seed)
    fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("interval_low", "interval_high", "theoretical", "empirical_blp",
                         "empirical_laplace"))
        for (lo, hi), p, e, q in zip(table.intervals, table.probabilities, empirical, laplace):
            writer.writerow((repr(lo), repr(hi), repr(float(p)), repr(float(e)), repr(float(q))))
    finally:
        if args.out:
            fh.close()
    tv = table.total_variation(empirical)
    print(f"total variation (theory vs BLP samples): {tv:.5f}; "
          f"theoretical mass {table.probabilities.sum():.12f}", file=sys.stderr)
    return EXIT_OK


def cmd_audit(args, stdout) -> int:
    if not args.epsilon > 0 or not args.scale_factor > 0:
        raise ConfigError("epsilon and scale factor must be positive")
    domain = DATASETS[args.dataset].domain
    report = ldp_audit(args.mechanism, domain, args.epsilon, bins=args.bins, samples=args.samples,
                       rng=args.seed, slack=args.slack, scale_factor=args.scale_factor)
    stdout.write(report.summary() + "\n")
    return EXIT_OK


def cmd_comm(args, stdout) -> int:
    name = args.dataset or "movielens"
    R = load_experiment_data(ExperimentConfig(dataset=name, data_path=args.data_path))
    writer = csv.writer(stdout, lineterminator="\n")
    writer.writerow(("method", "user_to_sp", "sp_to_user", "sp_to_user_bytes_per_iteration", "note"))
    for row in compare_communication(R.num_items, args.latent_dim, args.value_bytes):
        writer.writerow((row.method, row.user_to_sp, row.sp_to_user,
                         row.sp_to_user_bytes_per_iteration, row.note))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "noise-dist": cmd_noise_dist, "audit": cmd_audit, "comm": cmd_comm}


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args, stdout)
    except (ConfigError, InsufficientSamplesError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, DomainError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, DivergenceError, RejectionLimitError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``bridgelab <command> [options]``.

Commands: train-mean, train-bridge, sample, diagnose, sweep-alpha. Every CSV
starts with a ``#`` metadata line carrying the config hash and seed, followed
by a header row. Exit codes: 0 success, 2 config error, 3 numeric divergence,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import rng
from .config import RunConfig, load_config, parse_floats
from .diagnostics import (NOISE_COLUMNS, ORACLE, default_probe_grid, endpoint_probe,
                          noise_curves, restoration_metrics, theorem1_check)
from .errors import ConfigError, DimensionError, DivergenceError, StageError
from .interpolant import I2SB, NADB
from .regressor import RegressorParams, load_params, save_params
from .sampler import generate, make_plan, oracle_eps, trajectory_rows
from .tasks import PairedSamples, dump_fields, make_task
from .training import VARIANTS, train_bridge, train_mean_network

log = logging.getLogger("bridgelab")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
PROBE_COLUMNS = ("t", "pred_variance", "target_variance", "variance_ratio",
                 "cosine_similarity", "n_samples")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, config: RunConfig, header, rows, command: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# bridgelab command={command} config_hash={config.config_hash} "
                 f"seed={config.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    """Return ``(metadata line, header, rows)`` of a file written by ``write_csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        meta = fh.readline().rstrip("\n")
        rows = list(csv.reader(fh))
    return meta, rows[0], rows[1:]


def _tag(config: RunConfig, *parts) -> str:
    return "_".join([*map(str, parts), config.hash8, f"s{config.seed}"])


def bridge_checkpoint_path(config: RunConfig) -> Path:
    return config.out / f"bridge_{_tag(config, config.variant)}.brlb"


def datasets(config: RunConfig) -> tuple[PairedSamples, PairedSamples]:
    ds = make_task(config.task, **config.task_params)
    train = ds.sample(config.n_train, rng.stream(config.seed, rng.TRAIN_DATA))
    test = ds.sample(config.n_test, rng.stream(config.seed, rng.TEST_DATA))
    return train, test


def _load_checkpoint(path: Path, dim: int, what: str) -> RegressorParams:
    if not path.is_file():
        raise FileNotFoundError(f"{what} checkpoint not found: {path}")
    params = load_params(path)
    if params.out_dim != dim:
        raise DimensionError(f"{path}: checkpoint works on dimension {params.out_dim}, "
                             f"task has dimension {dim}")
    return params


def load_mean(config: RunConfig, dim: int) -> RegressorParams | None:
    if not config.uses_mean:
        return None
    return _load_checkpoint(config.mean_path(), dim, f"mean network (needed by {config.variant})")


# -- commands -----------------------------------------------------------------

def cmd_train_mean(config: RunConfig) -> Path:
    train, test = datasets(config)
    result = train_mean_network(train, config.mean_config())
    path = config.mean_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    save_params(path, result.params)
    write_csv(config.out / f"mean_log_{_tag(config)}.csv", config, ("step", "loss"),
              enumerate(result.losses), "train-mean")
    mse = float(np.mean((result.params(test.x1) - test.x0) ** 2))
    print(f"mean network: final train loss {result.losses[-1]:.6g}, test mse {mse:.6g} -> {path}")
    return path


def cmd_train_bridge(config: RunConfig) -> Path:
    train, _ = datasets(config)
    mean = load_mean(config, train.x0.shape[1])
    result = train_bridge(train, config.train_config(), config.variant, mean)
    path = bridge_checkpoint_path(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_params(path, result.params)
    bins = config.train.time_bins
    header = ("step", "loss", *(f"bin_{b}" for b in range(bins)))
    rows = ((i, loss, *b) for i, (loss, b) in enumerate(zip(result.losses, result.bin_losses)))
    write_csv(config.out / f"train_log_{_tag(config, config.variant)}.csv", config, header, rows,
              "train-bridge")
    print(f"{config.variant}: final loss {result.losses[-1]:.6g} -> {path}")
    return path


def _eps_for(config: RunConfig, checkpoint: Path | None, oracle: bool, test: PairedSamples):
    if oracle:
        return oracle_eps(config.bridge_spec, test.x0)
    path = checkpoint or bridge_checkpoint_path(config)
    return _load_checkpoint(path, test.x0.shape[1], "bridge")


def run_sampler(config: RunConfig, eps, test: PairedSamples):
    mean = load_mean(config, test.x0.shape[1])
    s = config.sampler
    plan = make_plan(config.bridge_spec, s.nfe, s.d, s.w_rule, s.w_const, s.spacing)
    return generate(plan, eps, mean, test.x1, seed=config.seed)


def cmd_sample(config: RunConfig, checkpoint: Path | None = None, oracle: bool = False,
               trajectory: bool = False) -> Path:
    _, test = datasets(config)
    eps = _eps_for(config, checkpoint, oracle, test)
    rec = run_sampler(config, eps, test)
    tag = _tag(config, config.variant, f"nfe{config.sampler.nfe}")
    config.out.mkdir(parents=True, exist_ok=True)
    path = dump_fields(config.out / f"samples_{tag}.brds", rec.final, test.x1, test.x0)
    if trajectory:
        write_csv(config.out / f"trajectory_{tag}.csv", config,
                  ("step", "t", "state_norm", "stage", "sigma"), trajectory_rows(rec), "sample")
    mse, psnr = restoration_metrics(test.x0, rec.final)
    print(f"{config.variant} nfe={config.sampler.nfe}: mse {mse:.6g}, psnr {psnr:.4g} -> {path}")
    return path


def cmd_diagnose(config: RunConfig, checkpoint: Path | None = None,
                 oracle: bool = False) -> dict[str, Path]:
    ds = make_task(config.task, **config.task_params)
    _, test = datasets(config)
    dim = test.x0.shape[1]
    eps = ORACLE if oracle else _eps_for(config, checkpoint, False, test)
    mean = load_mean(config, dim)
    spec = config.bridge_spec
    out: dict[str, Path] = {}

    out["noise_curves"] = write_csv(
        config.out / f"noise_curves_{_tag(config)}.csv", config, NOISE_COLUMNS,
        noise_curves(replace(spec, kind=I2SB), replace(spec, kind=NADB)), "diagnose")

    d = config.diagnose
    report = endpoint_probe(eps, spec, ds, default_probe_grid(d.t_low, d.points),
                            d.samples_per_t, config.seed, mean)
    out["endpoint_probe"] = write_csv(
        config.out / f"endpoint_probe_{_tag(config, config.variant)}.csv", config, PROBE_COLUMNS,
        ((r.t, r.pred_variance, r.target_variance, r.variance_ratio, r.cosine_similarity,
          r.n_samples) for r in report.rows), "diagnose")

    # The W2 check needs a mean network; pooled over components when dim > 1.
    mean_for_check = mean
    if mean_for_check is None and config.mean_path().is_file():
        mean_for_check = _load_checkpoint(config.mean_path(), dim, "mean network")
    if mean_for_check is not None:
        pairs = ds.sample(d.w2_samples, rng.stream(config.seed, rng.W2_CHECK))
        xhat = mean_for_check(pairs.x1).reshape(-1, 1)
        flat = PairedSamples(pairs.x0.reshape(-1, 1), pairs.x1.reshape(-1, 1))
        th = theorem1_check(lambda _: xhat, flat)
        report.w2_rho0_rho1, report.w2_rho0_rhohat0 = th.w2_before, th.w2_after
        out["theorem1"] = write_csv(
            config.out / f"theorem1_{_tag(config)}.csv", config,
            ("n", "w2_rho0_rho1", "w2_rho0_rhohat0", "w2_se", "holds", "mse_rho1", "mse_rhohat0",
             "premise_holds"),
            [(len(flat), th.w2_before, th.w2_after, th.se, int(th.holds), th.mse_before,
              th.mse_after, int(th.premise_holds))], "diagnose")
    else:
        log.warning("no mean checkpoint at %s; skipping the mean-network check",
                    config.mean_path())

    rec = run_sampler(config, oracle_eps(spec, test.x0) if oracle else eps, test)
    report.mse, report.psnr_toy = restoration_metrics(test.x0, rec.final)
    out["metrics"] = write_csv(
        config.out / f"metrics_{_tag(config, config.variant)}.csv", config,
        ("variant", "nfe", "mse", "psnr", "w2_rho0_rho1", "w2_rho0_rhohat0"),
        [(config.variant, config.sampler.nfe, report.mse, report.psnr_toy,
          report.w2_rho0_rho1, report.w2_rho0_rhohat0)], "diagnose")
    low = report.rows[0]
    print(f"{config.variant}: t={low.t:.3g} ratio {low.variance_ratio:.4g} "
          f"cos {low.cosine_similarity:.4g}; mse {report.mse:.6g}")
    return out


def cmd_sweep_alpha(config: RunConfig, alphas) -> Path:
    alphas = tuple(alphas)
    if not alphas:
        raise ConfigError("sweep-alpha needs at least one alpha")
    bad = [a for a in alphas if not (0.0 < a < 1.0)]
    if bad:
        raise ConfigError(f"alpha values must lie in (0, 1): {bad}")
    if config.bridge_spec.kind != NADB:
        log.warning("variant %s ignores alpha", config.variant)
    rows = []
    for a in alphas:
        cfg = config.with_alpha(a)
        ckpt = cmd_train_bridge(cfg)
        files = cmd_diagnose(cfg, ckpt)
        _, _, probe = read_csv(files["endpoint_probe"])
        _, _, metrics = read_csv(files["metrics"])
        rows.append((a, cfg.hash8, float(probe[0][0]), float(probe[0][3]), float(probe[0][4]),
                     float(metrics[0][2]), float(metrics[0][3])))
    return write_csv(config.out / f"sweep_alpha_{_tag(config, config.variant)}.csv", config,
                     ("alpha", "config_hash8", "t_low", "variance_ratio", "cosine_similarity",
                      "mse", "psnr"), rows, "sweep-alpha")


# -- argument handling ----------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", type=Path, help="override [run] out directory")
    common.add_argument("--variant", choices=sorted(VARIANTS), help="override [run] variant")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bridgelab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-mean", parents=[common], help="train the posterior-mean network")
    sub.add_parser("train-bridge", parents=[common], help="train one bridge arm")
    p = sub.add_parser("sample", parents=[common], help="run the reverse sampler on the test set")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--nfe", type=_positive_int)
    p.add_argument("--trajectory", action="store_true", help="also dump a trajectory CSV")
    p.add_argument("--oracle", action="store_true", help=argparse.SUPPRESS)
    p = sub.add_parser("diagnose", parents=[common], help="write probe, noise and metric CSVs")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--nfe", type=_positive_int)
    p.add_argument("--oracle", action="store_true", help=argparse.SUPPRESS)
    p = sub.add_parser("sweep-alpha", parents=[common], help="train and diagnose per alpha")
    p.add_argument("--alphas", type=parse_floats, help="comma-separated list, e.g. 0.3,0.4,0.5")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.variant is not None:
        overrides["variant"] = args.variant
    if getattr(args, "nfe", None) is not None:
        overrides["sampler"] = replace(config.sampler, nfe=args.nfe)
    return replace(config, **overrides)


def _dispatch(args: argparse.Namespace):
    config = resolve_config(args)
    if args.command == "train-mean":
        return cmd_train_mean(config)
    if args.command == "train-bridge":
        return cmd_train_bridge(config)
    if args.command == "sample":
        return cmd_sample(config, args.checkpoint, args.oracle, args.trajectory)
    if args.command == "diagnose":
        return cmd_diagnose(config, args.checkpoint, args.oracle)
    alphas = args.alphas if args.alphas is not None else config.alphas
    return cmd_sweep_alpha(config, alphas)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("BRIDGELAB_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"error: BRIDGELAB_THREADS must be a positive integer, got {threads!r}",
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=limit):
            _dispatch(args)
    except DivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, DimensionError, StageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

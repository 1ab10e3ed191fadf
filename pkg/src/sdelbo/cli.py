"""
cli.py — ``sdelbo`` command-line entry point.

Subcommands:

``train CONFIG [key=value ...]``
    Train a score network from a run config (a YAML path or a bundled name
    such as ``train/smoke``); writes ``checkpoint.yaml``, ``metrics.csv`` and
    ``config.yaml`` into the config's ``out_dir``.
``elbo (CHECKPOINT | --oracle) [--lambda L] [--ode] ...``
    CT-ELBO of a point, a dataset CSV or oracle draws; writes ``elbo.json``.
``sample (CHECKPOINT | --oracle) [--lambda L] ...``
    Draw from a λ-family sampler; writes ``samples.csv`` and, for d = 2,
    ``samples.svg``.
``check SUITE [key=value ...]``
    Run a property suite; exits 0 only if every assertion passes.
``data NAME``
    Export a toy dataset as CSV.

Every command writes its resolved arguments to ``config.yaml`` next to its
outputs. ``$SDE_ELBO_SEED`` overrides the seed of every command.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np
from hydra.errors import HydraException
from hydra.utils import instantiate
from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

import sdelbo.configs
from sdelbo.checks import SUITES, PropertyCheck
from sdelbo.config_manager import (
    ConfigManager,
    ConfigValidationError,
    apply_seed_override,
    config_hash,
    load_file,
)
from sdelbo.elbo import (
    DIV_MODES,
    TRANSITIONS,
    bits_per_dim,
    ct_elbo_lambda,
    ct_elbo_plugin,
    dataset_elbo,
    ode_log_likelihood,
)
from sdelbo.errors import DomainError, SdeElboError
from sdelbo.reports import (
    scatter_svg,
    write_check_report,
    write_json,
    write_points_csv,
    write_text,
)
from sdelbo.run_config import validate_train_config
from sdelbo.sampler import DEFAULT_STEPS, SCHEMES, LambdaSampler, sample
from sdelbo.score_model import ScoreModel, audit
from sdelbo.score_net import Checkpoint, load_checkpoint, save_checkpoint
from sdelbo.toy_data import DATASETS, load_csv, make_dataset, save_csv, train_test_split
from sdelbo.trainer import metrics_to_csv, train
from sdelbo.vp_sde import GaussianOracle, OracleScore, VpSde

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _write_resolved(out_dir: Path, cfg: DictConfig) -> Path:
    return write_text(out_dir / "config.yaml", OmegaConf.to_yaml(cfg, resolve=True))


def _args_config(args: argparse.Namespace, *keys: str) -> DictConfig:
    """Resolved config of an argparse-driven command, with the seed override applied."""
    cfg = OmegaConf.create({k: getattr(args, k) for k in keys})
    apply_seed_override(cfg)
    return cfg


def _load_model(args: argparse.Namespace) -> tuple[ScoreModel, VpSde, GaussianOracle | None]:
    """Score model from ``--oracle`` or a checkpoint, audited before use."""
    if args.oracle:
        oracle = GaussianOracle.standard(args.dim)
        model: ScoreModel = OracleScore(oracle)
        sde = oracle.sde
    else:
        if args.checkpoint is None:
            raise DomainError("pass a checkpoint path or --oracle")
        checkpoint = load_checkpoint(args.checkpoint)
        model, sde, oracle = checkpoint.score_model(), checkpoint.sde, None
    audit(model)
    return model, sde, oracle


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    path = Path(args.config)
    if path.suffix == ".yaml" or path.is_file():
        cfg = load_file(path, args.overrides)
    else:
        manager = ConfigManager(sdelbo.configs)
        manager.validate(args.config)
        cfg = manager.get_config(args.config, param_overrides=args.overrides)
    run = validate_train_config(cfg)
    digest = config_hash(cfg)
    out_dir = Path(run.out_dir)
    logger.info("training run %s into %s", digest, out_dir)

    sde = run.sde.build()
    dataset = run.data.build()
    train_set, held_out = train_test_split(dataset, run.data.holdout)
    net = run.net.build(dataset.dim)
    result = train(
        net, train_set.points, sde, run.train, eval_data=held_out.points, config_hash=digest
    )

    checkpoint = Checkpoint(
        net=result.net,
        sde=sde,
        parameterize=run.train.parameterize,
        config_hash=digest,
        run_config=OmegaConf.to_container(cfg, resolve=True),
    )
    save_checkpoint(out_dir / "checkpoint.yaml", checkpoint)
    write_text(
        out_dir / "metrics.csv",
        metrics_to_csv(result.metrics, record_wall_clock=run.train.record_wall_clock),
    )
    _write_resolved(out_dir, cfg)
    logger.info("wrote checkpoint, metrics and config to %s", out_dir)
    return 0


def cmd_elbo(args: argparse.Namespace) -> int:
    if args.lam >= 1.0 and not args.ode:
        raise DomainError(
            f"--lambda {args.lam} >= 1: the lambda-ELBO is undefined at lambda = 1 because its "
            "inference drift divides by 1 - lambda; the limit is the probability-flow ODE "
            "likelihood, requested with --lambda 1 --ode"
        )
    if args.ode:
        if args.lam not in (0.0, 1.0):
            raise DomainError(f"--ode is the lambda = 1 limit; got --lambda {args.lam}")
        args.lam = 1.0
    cfg = _args_config(
        args,
        "checkpoint",
        "oracle",
        "dim",
        "lam",
        "paths",
        "steps",
        "div",
        "probes",
        "ode",
        "transition",
        "control_variate",
        "x",
        "data",
        "seed",
        "out",
    )
    model, sde, oracle = _load_model(args)
    rng = np.random.default_rng(cfg.seed)
    common = dict(div_mode=args.div, probes=args.probes, threads=args.threads)

    if args.x is not None:
        starts, n_paths = np.asarray(args.x, dtype=np.float64), args.paths
    else:
        if args.data is not None:
            starts = load_csv(args.data).points
        elif oracle is not None:
            starts = oracle.sample(args.paths, rng)
        else:
            raise DomainError("pass --x or --data to evaluate a checkpoint")
        n_paths = starts.shape[0]

    if args.transition == "exact" and args.lam != 0.0:
        raise DomainError("--transition exact applies to the lambda = 0 plug-in bound only")
    paths = dict(control_variate=args.control_variate)
    if args.ode:
        estimate = ode_log_likelihood(model, sde, starts, n_paths, args.steps, rng, **common)
    elif args.lam == 0.0:
        paths["transition"] = args.transition
        if starts.ndim == 2:
            estimate = dataset_elbo(model, sde, starts, args.steps, rng, **common, **paths)
        else:
            estimate = ct_elbo_plugin(
                model, sde, starts, n_paths, args.steps, rng, **common, **paths
            )
    else:
        truth = OracleScore(oracle) if oracle is not None else None
        estimate = ct_elbo_lambda(
            model,
            sde,
            args.lam,
            starts,
            n_paths,
            args.steps,
            rng,
            true_score=truth,
            **common,
            **paths,
        )

    dim = model.dim
    record = estimate.to_record()
    record["bits_per_dim"] = bits_per_dim(estimate.mean, dim)
    record["bits_per_dim_stderr"] = estimate.stderr / (dim * math.log(2.0))
    out_dir = Path(args.out)
    write_json(out_dir / "elbo.json", record)
    _write_resolved(out_dir, cfg)
    print(
        f"{estimate.estimator}: {estimate.mean:.6f} +- {estimate.stderr:.2g} nats "
        f"({record['bits_per_dim']:.4f} bits/dim) over {estimate.n_paths} paths"
    )
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    cfg = _args_config(
        args, "checkpoint", "oracle", "dim", "lam", "n", "steps", "scheme", "seed", "out"
    )
    model, sde, _ = _load_model(args)
    sampler = LambdaSampler(args.lam, model, sde, args.steps, args.scheme)
    points = sample(sampler, args.n, np.random.default_rng(cfg.seed), threads=args.threads)
    out_dir = Path(args.out)
    write_points_csv(out_dir / "samples.csv", points)
    if points.shape[1] == 2:
        write_text(
            out_dir / "samples.svg", scatter_svg(points, title=f"lambda = {args.lam:g}")
        )
    _write_resolved(out_dir, cfg)
    logger.info("wrote %d samples to %s", points.shape[0], out_dir)
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    manager = ConfigManager(sdelbo.configs)
    name = f"check/{args.suite}"
    manager.validate(name)
    cfg = manager.get_config(name, param_overrides=args.overrides)
    if "check" not in cfg:
        raise ConfigValidationError(f"Config '{name}' has no 'check' section.")
    check: PropertyCheck = instantiate(cfg.check)
    if args.quick:
        check = instantiate(cfg.check, **check.dummy_budget())
    if hasattr(check, "threads"):
        check.threads = args.threads
    logger.info("running suite %s with seed %d", args.suite, cfg.seed)
    report = check.run(np.random.default_rng(cfg.seed))
    out_dir = Path(args.out) if args.out else Path("runs") / "check" / args.suite
    write_check_report(out_dir, report)
    _write_resolved(out_dir, cfg)
    if report.passed:
        logger.info("suite %s passed %d assertions", args.suite, len(report.assertions))
        return 0
    lines = [f"{a.name}: {a.measured:.6g} > {a.tolerance:.6g}" for a in report.failures]
    print(f"suite {args.suite} failed:\n  " + "\n  ".join(lines), file=sys.stderr)
    return 1


def cmd_data(args: argparse.Namespace) -> int:
    cfg = _args_config(args, "name", "n", "seed", "noise_std", "standardize", "out")
    dataset = make_dataset(
        args.name, args.n, cfg.seed, noise_std=args.noise_std, standardize=args.standardize
    )
    out = Path(args.out)
    save_csv(dataset, out)
    if dataset.dim == 2:
        write_text(out.with_suffix(".svg"), scatter_svg(dataset.points, title=dataset.name))
    _write_resolved(out.parent, cfg)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("checkpoint", nargs="?", default=None, help="checkpoint.yaml path")
    parser.add_argument(
        "--oracle", action="store_true", help="use the exact N(0, I) score instead"
    )
    parser.add_argument("--dim", type=_positive_int, default=2, help="dimension for --oracle")
    parser.add_argument("--lambda", dest="lam", type=float, default=0.0)
    parser.add_argument("--steps", type=_positive_int, default=DEFAULT_STEPS)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdelbo", description="ELBOs, samplers and checks for score-based diffusion models."
    )
    parser.add_argument(
        "--threads",
        type=_positive_int,
        default=1,
        help="worker threads for path shards; results do not depend on it",
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a score network from a run config")
    p.add_argument("config", help="YAML path or bundled config name, e.g. train/smoke")
    p.add_argument("overrides", nargs="*", help="Hydra-style key=value overrides")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("elbo", help="estimate the CT-ELBO")
    _add_model_args(p)
    p.add_argument("--paths", type=_positive_int, default=4096)
    p.add_argument("--div", choices=DIV_MODES, default="exact")
    p.add_argument("--probes", type=_positive_int, default=1)
    p.add_argument("--ode", action="store_true", help="probability-flow ODE likelihood (lambda 1)")
    p.add_argument(
        "--transition",
        choices=TRANSITIONS,
        default="euler",
        help="inference path steps for the lambda 0 bound",
    )
    p.add_argument(
        "--control-variate", action="store_true", help="subtract the zero-mean Girsanov term"
    )
    where = p.add_mutually_exclusive_group()
    where.add_argument("--x", type=float, nargs="+", default=None, help="evaluation point")
    where.add_argument("--data", default=None, help="dataset CSV, one path per row")
    p.add_argument("--out", default="runs/elbo")
    p.set_defaults(func=cmd_elbo)

    p = sub.add_parser("sample", help="draw samples from a lambda-family sampler")
    _add_model_args(p)
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--scheme", choices=SCHEMES, default="euler_maruyama")
    p.add_argument("--out", default="runs/sample")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check", help="run a property suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("overrides", nargs="*", help="Hydra-style key=value overrides")
    p.add_argument("--quick", action="store_true", help="run at the suite's dummy budget")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("data", help="export a toy dataset as CSV")
    p.add_argument("name", choices=DATASETS)
    p.add_argument("--n", type=_positive_int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--no-standardize", dest="standardize", action="store_false")
    p.add_argument("--out", default="runs/data/points.csv")
    p.set_defaults(func=cmd_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Run the CLI; returns the process exit code (2 for usage errors)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    try:
        return args.func(args)
    except (
        SdeElboError,
        ConfigValidationError,
        HydraException,
        OmegaConfBaseException,
        OSError,
    ) as exc:
        print(f"sdelbo {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

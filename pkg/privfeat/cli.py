"""Command-line entry point: ``privfeat <command> ...``."""
import argparse
import logging
import os
import sys
from typing import List, Optional

import pydantic

from . import __meta__
from .accountant import DEFAULT_ORDERS, calibrate, orders_up_to
from .base import PrivacyBudget, SeededRng
from .dre import DreConfig, Discriminator, WeightedPublicModel, compute_weights, sample_dre, train_dp_dre
from .enums import GpStyle, MetricName, gp_style_aliases
from .exceptions import ContractViolation, FeatureIOError, PrivFeatError
from .features import load_features, project_to_unit_ball, save_features
from .gan import GanConfig, LatentGan, pretrain_public_gan, sample_gan, train_dp_latent_gan
from .harness import ExperimentConfig, emit_reports, load_config, run_experiment
from .metrics import evaluate
from .mge import GaussianModel, fit_dp_mge, sample_mge
from .oracle import gen_synthetic
from .serializer import json_encode, load_record, save_record
from .utils import parse_real

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CELL_FAILED = 1
EXIT_ERROR = 2


def _epsilon(value: str) -> float:
    try:
        return parse_real(value)
    except ValueError:
        raise argparse.ArgumentTypeError("not a number or 'inf': {0!r}".format(value))


def _add_budget(p):
    p.add_argument("--eps", type=_epsilon, required=True, help="target epsilon, or 'inf' for non-private")
    p.add_argument("--delta", type=float, default=1e-5)


def _add_sgd(p, iters, lr, batch):
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privfeat", description=__meta__.description)
    parser.add_argument("--version", action="version", version="%(prog)s " + __meta__.version)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="noise multiplier for DP-SGD at a target epsilon")
    p.add_argument("--eps", type=_epsilon, required=True)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--q", type=float, required=True, help="Poisson sampling rate")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--grid-max", type=int, default=None, help="largest RDP order to consider")

    p = sub.add_parser("fit-mge", help="DP diagonal Gaussian of a feature file")
    p.add_argument("--in", dest="input", required=True)
    _add_budget(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-dre", help="DP density-ratio discriminator")
    p.add_argument("--priv", required=True)
    p.add_argument("--pub", required=True)
    _add_budget(p)
    p.add_argument("--width", type=int, nargs="+", default=[16], help="hidden layer widths")
    _add_sgd(p, iters=10_000, lr=1e-3, batch=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="draw feature vectors from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--pub", default=None, help="public pool (for density-ratio models)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-gan", help="DP latent GAN baseline")
    p.add_argument("--priv", required=True)
    p.add_argument("--pretrain-pub", default=None, help="public pool to pretrain on (finetuning mode)")
    _add_budget(p)
    p.add_argument("--zdim", type=int, default=25)
    p.add_argument("--width", type=int, nargs="+", default=[64, 64, 64])
    p.add_argument("--gp-style", choices=[s.value for s in GpStyle] + list(gp_style_aliases), default=GpStyle.REAL.value)
    _add_sgd(p, iters=1000, lr=1e-3, batch=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="FID / PRD / NDB of fake against real features")
    p.add_argument("--real", required=True)
    p.add_argument("--fake", required=True)
    p.add_argument("--metric", choices=[m.value for m in MetricName] + ["all"], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("experiment", help="run the method x epsilon x seed grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallel", type=int, default=None)
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("generate", help="write the synthetic public/private pools")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    return parser


def _emit(text: str, out: Optional[str]):
    if out is None:
        print(text)
        return
    try:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    except OSError as err:
        raise FeatureIOError(out, err.strerror or str(err)) from err


def cmd_calibrate(args) -> int:
    orders = DEFAULT_ORDERS if args.grid_max is None else orders_up_to(args.grid_max)
    result = calibrate(args.eps, args.delta, args.q, args.steps, orders)
    print(result.model_dump_json())
    return EXIT_OK


def cmd_fit_mge(args) -> int:
    priv = project_to_unit_ball(load_features(args.input))
    model = fit_dp_mge(priv, PrivacyBudget(epsilon=args.eps, delta=args.delta), SeededRng(seed=args.seed))
    save_record(model, args.out)
    return EXIT_OK


def cmd_train_dre(args) -> int:
    priv = project_to_unit_ball(load_features(args.priv))
    pub = project_to_unit_ball(load_features(args.pub))
    cfg = DreConfig(
        hidden_widths=tuple(args.width),
        steps=args.iters,
        batch_size=args.batch,
        learning_rate=args.lr,
        clip_norm=args.clip,
        seed=args.seed,
    )
    disc = train_dp_dre(priv, pub, PrivacyBudget(epsilon=args.eps, delta=args.delta), cfg, SeededRng(seed=args.seed))
    save_record(disc, args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    model = load_record(args.model)
    rng = SeededRng(seed=args.seed)
    if isinstance(model, GaussianModel):
        samples = sample_mge(model, args.k, rng)
    elif isinstance(model, LatentGan):
        samples = sample_gan(model, args.k, rng)
    elif isinstance(model, (Discriminator, WeightedPublicModel)):
        if args.pub is None:
            raise ContractViolation("--pub is required to sample from a density-ratio model")
        pub = project_to_unit_ball(load_features(args.pub))
        if isinstance(model, Discriminator):
            model = compute_weights(model, pub)
        samples = sample_dre(model, pub, args.k, rng)
    else:
        raise ContractViolation("cannot sample from a {0}".format(type(model).__name__))
    save_features(samples, args.out)
    return EXIT_OK


def cmd_train_gan(args) -> int:
    priv = project_to_unit_ball(load_features(args.priv))
    cfg = GanConfig(
        z_dim=args.zdim,
        generator_widths=tuple(args.width),
        critic_widths=tuple(args.width),
        gp_style=GpStyle(args.gp_style),
        steps=args.iters,
        batch_size=args.batch,
        learning_rate=args.lr,
        clip_norm=args.clip,
        seed=args.seed,
    )
    rng = SeededRng(seed=args.seed)
    init = None
    if args.pretrain_pub is not None:
        pub = project_to_unit_ball(load_features(args.pretrain_pub))
        init = pretrain_public_gan(pub, cfg, rng.split(0))
    gan = train_dp_latent_gan(priv, init, PrivacyBudget(epsilon=args.eps, delta=args.delta), cfg, rng.split(1))
    save_record(gan, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    real = load_features(args.real)
    fake = load_features(args.fake)
    metrics = list(MetricName) if args.metric == "all" else [MetricName(args.metric)]
    report = evaluate(real, fake, seed=args.seed, metrics=metrics)
    _emit(json_encode(report, pretty=True), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    table = run_experiment(cfg, parallel=args.parallel, progress=args.progress)
    json_path, csv_path = emit_reports(table, args.out)
    log.info("wrote {0} and {1}".format(json_path, csv_path))
    return EXIT_CELL_FAILED if table.failed else EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    pub, priv = gen_synthetic(cfg.oracle, SeededRng(seed=args.seed))
    os.makedirs(args.out_dir, exist_ok=True)
    save_features(pub, os.path.join(args.out_dir, "public.dpfv"))
    save_features(priv, os.path.join(args.out_dir, "private.dpfv"))
    return EXIT_OK


commands = {
    "calibrate": cmd_calibrate,
    "fit-mge": cmd_fit_mge,
    "train-dre": cmd_train_dre,
    "sample": cmd_sample,
    "train-gan": cmd_train_gan,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "generate": cmd_generate,
}


def _configure_logging(verbose: int, quiet: bool):
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        return commands[args.command](args)
    except (PrivFeatError, pydantic.ValidationError) as err:
        print("privfeat {0}: {1}".format(args.command, err), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

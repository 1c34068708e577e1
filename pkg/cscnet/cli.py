"""Command line entry point.

Examples:

    cscnet gen-data --out runs/desk
    cscnet train --seed 3 --out runs/desk
    cscnet eval --out runs/desk --set beta=0.1
    cscnet beta-sweep --out runs/desk --betas 0,0.1,0.2,1
    cscnet ablate --config desk.cfg --out runs/ablation
    cscnet grad-check
"""
import argparse
import logging
import sys
from collections import OrderedDict

from cscnet.comm.config import RunConfig
from cscnet.system import experiments

log = logging.getLogger(__name__)

# exit codes
OK = 0
FAILED = 1
GRAD_CHECK_FAILED = 2

COMMANDS = ("gen-data", "train", "eval", "ablate", "beta-sweep", "grad-check")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key = value file")
    common.add_argument("--seed", default=None, help="u64 seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration value",
    )
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(
        prog="cscnet",
        description="Cascaded networks for compositional zero-shot learning.",
    )
    commands = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        sub = commands.add_parser(name, parents=[common])
        if name == "beta-sweep":
            sub.add_argument(
                "--betas", default=None, help="comma separated betas in [0, 1]"
            )
    return parser


def load_config(args):
    """RunConfig from --config plus the flag overrides."""
    overrides = OrderedDict()
    for item in args.set:
        if "=" not in item:
            msg = "--set expects KEY=VALUE, got '{}'."
            log.error(msg.format(item))
            raise ValueError(msg.format(item))
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "betas", None) is not None:
        overrides["betas"] = args.betas

    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig(overrides)


def run(args):
    cfg = load_config(args)

    if args.command == "gen-data":
        paths, split = experiments.gen_data(cfg)
        print(split.summary())
        for key in ("embeddings", "features", "labels"):
            print("{}: {}".format(key, paths[key]))

    elif args.command == "train":
        _, train_log, path = experiments.train(cfg)
        if train_log.shape[0]:
            print(
                "epochs={} final_loss={:.6f}".format(
                    train_log.shape[0], train_log["loss"].iloc[-1]
                )
            )
        print("checkpoint: {}".format(path))

    elif args.command == "eval":
        print(experiments.eval_checkpoint(cfg).summary())

    elif args.command == "beta-sweep":
        print(experiments.beta_sweep(cfg).to_csv(index=False, float_format="%.4f"))

    elif args.command == "ablate":
        _, means = experiments.ablate(cfg)
        print(means.to_csv(index=False, float_format="%.4f"))

    elif args.command == "grad-check":
        checks, passed = experiments.grad_check_suite(cfg)
        print(checks.to_csv(index=False))
        if not passed:
            failed = checks[~checks["passed"]]
            sys.stderr.write(
                "error: GradientCheckFailed: {}\n".format(
                    ", ".join(
                        "{} worst block {} (max rel error {:.3e})".format(
                            c, b, e
                        )
                        for c, b, e in zip(
                            failed["check"],
                            failed["worst_block"],
                            failed["max_rel_error"],
                        )
                    )
                )
            )
            return GRAD_CHECK_FAILED

    return OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return FAILED

    level = getattr(logging, str(args.log_level).upper(), logging.INFO)
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    # basicConfig is a no-op once the root logger has handlers
    logging.getLogger("cscnet").setLevel(level)

    try:
        return run(args)
    except Exception as e:
        message = " ".join(str(e).split())
        sys.stderr.write("error: {}: {}\n".format(type(e).__name__, message))
        return FAILED


if __name__ == "__main__":
    sys.exit(main())

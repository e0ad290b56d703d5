"""Command-line entry point: ``confauction <verb> [options]``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 when a guard
refuses to run (for example too few calibration profiles for alpha).
"""

import argparse
import json
import logging
import sys

from . import harness
from .conformal import CalibrationSizeError
from .regret import GridTooLargeError

EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 2, 3

VERBS = ("generate", "train", "fit-estimator", "calibrate", "audit", "pipeline", "sweep",
         "emit-plots")


def build_parser():
    parser = argparse.ArgumentParser(prog="confauction",
                                     description="Learned auctions with a conformal regret gate.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--seed", type=int, help="override the training seed")
        p.add_argument("--out", help="artifact directory")
        p.add_argument("--mode", choices=("shared", "blackbox"), help="estimator input mode")
        p.add_argument("--alpha", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("-v", "--verbose", action="store_true")
        if verb == "generate":
            p.add_argument("--split", default="all", choices=("all",) + harness.SPLITS)
        if verb in ("pipeline", "fit-estimator", "calibrate", "audit"):
            p.add_argument("--resume", action="store_true",
                           help="reuse artifacts already in --out")
        if verb == "sweep":
            p.add_argument("--grid", help="comma-separated epsilon values")
    return parser


def _run(args):
    cfg = harness.load_config(args.config, seed=args.seed, out=args.out, mode=args.mode,
                              alpha=args.alpha, epsilon=args.epsilon)
    resume = getattr(args, "resume", False)
    if args.verb == "generate":
        result = harness.cmd_generate(cfg, args.split)
    elif args.verb == "train":
        _, trainlog = harness.cmd_train(cfg)
        result = trainlog.records[-1] if trainlog.records else {}
    elif args.verb == "fit-estimator":
        _, history = harness.cmd_fit_estimator(cfg, resume=resume)
        result = {"l1_by_epoch": history}
    elif args.verb == "calibrate":
        result = harness.cmd_calibrate(cfg, resume=resume).to_json()
    elif args.verb == "audit":
        result = harness.cmd_audit(cfg, resume=resume)
    elif args.verb == "pipeline":
        result = harness.cmd_pipeline(cfg, resume=resume)
    elif args.verb == "sweep":
        grid = None
        if args.grid:
            try:
                grid = [float(x) for x in args.grid.split(",") if x.strip()]
            except ValueError:
                raise harness.ConfigError(f"bad --grid {args.grid!r}") from None
        result = [dict(zip(("epsilon", "rejections", "acceptance_rate"), row))
                  for row in harness.cmd_sweep_epsilon(cfg, grid)]
    else:
        result = harness.cmd_emit_plots(cfg)
    print(json.dumps(result, sort_keys=True, indent=2))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        _run(args)
    except (CalibrationSizeError, GridTooLargeError, harness.GuardError) as e:
        print(f"guard: {e}", file=sys.stderr)
        return EXIT_GUARD
    except (harness.ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

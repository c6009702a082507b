"""Command line entry point: ``kidqn train|eval|viz|bench``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .harness import SUITES, SuiteMismatchError, cmd_eval, cmd_viz, train
from .qfunc import DivergenceError
from .sim import Regime

log = logging.getLogger("kidqn")


def _train(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    out = Path(args.output or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    except OSError as exc:
        log.error("cannot write to %s: %s", out, exc)
        return 2

    def progress(it, rep):
        log.info("iter %d  %s/%s  success %.3f  mean actions %.2f", it, rep.suite, rep.regime,
                 rep.success_rate, rep.mean_actions)

    try:
        res = train(cfg, out, progress=progress)
    except DivergenceError as exc:
        log.error("%s", exc)
        return 3
    log.info("done in %.1fs, output in %s", res.seconds, out)
    return 0


def _eval(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
        rep = cmd_eval(ckpt, args.suite, Regime(args.regime), args.eval_seed)
    except (CheckpointError, SuiteMismatchError) as exc:
        log.error("%s", exc)
        return 2
    if args.verbose:
        for l in rep.logs:
            print(f"scene {l.seed:>10d}  {'ok  ' if l.success else 'fail'}  actions {l.actions:2d}  "
                  f"collisions {l.collisions}")
    print(f"suite={rep.suite} regime={rep.regime} success_rate={rep.success_rate:.4f} "
          f"mean_actions={rep.mean_actions:.3f} collisions={rep.collisions}")
    return 0


def _viz(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        log.error("%s", exc)
        return 2
    for p in cmd_viz(ckpt, args.seed, args.out, args.suite):
        print(p)
    return 0


def _bench(args) -> int:
    from .acceptance import main as acceptance_main

    return acceptance_main(["--quick"] if args.quick else [])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="kidqn", description=__doc__)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("config")
    p.add_argument("--output", help="override output_dir")
    p.set_defaults(fn=_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a frozen suite")
    p.add_argument("checkpoint")
    p.add_argument("--suite", choices=tuple(SUITES), default="train-dist")
    p.add_argument("--regime", type=str.upper, choices=[r.value for r in Regime], default=Regime.SIM.value)
    p.add_argument("--eval-seed", type=int, default=None, help="assert the suite seed")
    p.add_argument("-v", "--verbose", action="store_true", help="per-scene log")
    p.set_defaults(fn=_eval)

    p = sub.add_parser("viz", help="export Q-map heatmaps and observation images")
    p.add_argument("checkpoint")
    p.add_argument("--seed", type=int, required=True, help="scene seed")
    p.add_argument("--suite", choices=tuple(SUITES), default="unseen-walls")
    p.add_argument("--out", default="viz")
    p.set_defaults(fn=_viz)

    p = sub.add_parser("bench", help="run the acceptance criteria")
    p.add_argument("--quick", action="store_true", help="skip the training experiments")
    p.set_defaults(fn=_bench)

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface.

Verbs: train, eval, generate, flops, gradcheck, make-data. Machine-parsable
output: JSON on stdout, single-line `error <code>: <message>` on stderr with
exit code 2 for config/geometry problems and 3 for I/O problems.
"""

import argparse
import json
import os
import sys

from .config import ConfigError, RunConfig, load_config
from .params import CheckpointError
from .tensor import ShapeError


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args):
    from .training import train
    cfg = _load_cfg(args)
    out = args.out or cfg.out_dir
    summary = train(cfg, out_dir=out)
    summary.pop("model", None)
    print(json.dumps({"out_dir": out, **summary}, sort_keys=True))


def cmd_eval(args):
    from .training import evaluate
    cfg = _load_cfg(args)
    print(json.dumps(evaluate(cfg, args.checkpoint, split=args.split),
                     sort_keys=True))


def cmd_generate(args):
    from .training import generate
    cfg = _load_cfg(args)
    for row in generate(cfg, args.checkpoint, split=args.split,
                        limit=args.limit):
        print(json.dumps(row, sort_keys=True))


def cmd_flops(args):
    from .multiview import attention_flops
    if args.config:
        cfg = load_config(args.config)
        side = cfg.image_size // cfg.patch_size
        report = attention_flops(cfg.views, side * side, cfg.embed_dim,
                                 cfg.window)
    else:
        report = attention_flops(args.views, args.tokens, args.dim, args.window)
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_gradcheck(args):
    from .gradcheck import run_all
    results = run_all(points=args.points, seed=args.seed_value, tol=args.tol)
    failed = []
    for name, r in sorted(results.items()):
        status = "ok" if r["passed"] else "FAIL"
        print(f"{name:16s} {status}  max_rel_err={r['max_rel_err']:.3e} "
              f"points={r['points']}")
        if not r["passed"]:
            failed.append(name)
    print(json.dumps({"ops": len(results), "failed": failed}, sort_keys=True))
    if failed:
        sys.exit(1)


def cmd_make_data(args):
    from . import data as D
    cfg = _load_cfg(args)
    out = args.out or "dataset"
    seed = cfg.resolved_data_seed
    train = D.generate(cfg.train_samples, cfg.image_size, cfg.views,
                       seed=seed, label_mode=cfg.label_mode)
    test = D.generate(cfg.test_samples, cfg.image_size, cfg.views,
                      seed=seed + 1, label_mode=cfg.label_mode)
    D.save_dataset(train, os.path.join(out, "train"))
    D.save_dataset(test, os.path.join(out, "test"))
    print(json.dumps({"out_dir": out, "train_samples": len(train),
                      "test_samples": len(test), "seed": seed},
                     sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="fundusfusion")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("train", help="train per the config task")
    common(sp)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("generate", help="emit greedy reports")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument("--limit", type=int, default=4)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("flops", help="analytic attention cost report")
    sp.add_argument("--config", default=None)
    sp.add_argument("--views", type=int, default=4)
    sp.add_argument("--tokens", type=int, default=196)
    sp.add_argument("--dim", type=int, default=768)
    sp.add_argument("--window", type=int, default=7)
    sp.set_defaults(fn=cmd_flops)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op")
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--seed", dest="seed_value", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("make-data", help="write dataset splits to disk")
    common(sp, config_required=False)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_make_data)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ConfigError, ShapeError) as e:
        print(f"error invalid-config: {e}", file=sys.stderr)
        sys.exit(2)
    except (FileNotFoundError, CheckpointError) as e:
        print(f"error io: {e}", file=sys.stderr)
        sys.exit(3)


if __name__ == "__main__":
    main()

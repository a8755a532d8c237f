"""Command-line front end.

Exit codes: 0 success, 2 usage/config error, 3 data or checkpoint error,
4 training divergence, 5 gradient check above tolerance.
"""

import argparse
import logging
from pathlib import Path
import sys

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, format_run_config, load_run_config
from .data import SynthSpec, load_dataset, ship_spec, write_synthetic
from .errors import (ConfigError, DatasetError, DivergenceError, FormatError, InvalidInputError,
                     ShapeError)
from .graph import ImageSample
from .model import GRAPH_KINDS, LayerSpec, ModelConfig, gradient_check, init_params
from .pruning import dataset_cost, count_flops, prune_weights, sweep, sweep_tsv
from .training import evaluate, history_tsv, train

log = logging.getLogger("sargnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_model_flags(p):
    p.add_argument("--layer-type", choices=GRAPH_KINDS)
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--grid-size", type=int)
    p.add_argument("--input-channels", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--no-vertex-attention", dest="vertex_attention", action="store_false",
                   default=None)
    p.add_argument("--no-feature-attention", dest="feature_attention", action="store_false",
                   default=None)


def _run_config(args):
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    keys = [f for f in RunConfig.__dataclass_fields__ if hasattr(args, f)]
    return cfg.override(**{k: getattr(args, k) for k in keys})


# -- commands -------------------------------------------------------------------


def cmd_synth(args):
    kw = dict(num_classes=args.classes, per_class=args.per_class, size=args.size,
              channels=args.channels, seed=args.seed)
    kw = {k: v for k, v in kw.items() if v is not None}
    spec = ship_spec(**kw) if args.ship else SynthSpec(**kw)
    train_path, test_path = write_synthetic(spec, args.out)
    print(f"train\t{train_path}")
    print(f"test\t{test_path}")
    return EXIT_OK


def cmd_train(args):
    rc = _run_config(args)
    train_manifest = rc.train_manifest
    if not train_manifest:
        raise ConfigError("no training manifest (use --train or train_manifest in the config)")
    out = Path(rc.out_dir or ".")
    config = rc.model_config()
    train_set = load_dataset(train_manifest)
    val_set = load_dataset(rc.val_manifest) if rc.val_manifest else None
    if train_set.num_classes != config.num_classes:
        raise DatasetError(f"manifest has {train_set.num_classes} classes, config expects "
                           f"{config.num_classes}")
    hyper = rc.hyper()
    result = train(config, hyper, train_set, val_set, iv=rc.iv, workers=rc.workers)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(rc.checkpoint) if rc.checkpoint else out / "model.ckpt"
    ckpt_io.save(path, ckpt_io.Checkpoint(config, result.params, hyper.seed, result.best_epoch + 1))
    (out / "history.tsv").write_text(history_tsv(result.history))
    print(f"checkpoint\t{path}")
    print(f"best_epoch\t{result.best_epoch}")
    return EXIT_OK


def cmd_eval(args):
    ck = ckpt_io.load(args.checkpoint)
    data = load_dataset(args.data)
    res = evaluate(ck.config, ck.params, data, args.iv, sparse=args.sparse)
    print(f"accuracy\t{res.accuracy:.4f}")
    k = ck.config.num_classes
    print("true\\pred\t" + "\t".join(str(c) for c in range(k)))
    for c in range(k):
        print(f"{c}\t" + "\t".join(str(int(v)) for v in res.confusion[c]))
    return EXIT_OK


def cmd_prune(args):
    ck = ckpt_io.load(args.checkpoint)
    pruned, stats = prune_weights(ck.params, args.iw)
    ckpt_io.save(args.out, ckpt_io.Checkpoint(ck.config, pruned, ck.seed, ck.epoch))
    print("name\tpruned_pct")
    for name, frac in stats.items():
        print(f"{name}\t{100 * frac:.4f}")
    print(f"stored_params\t{pruned.num_nonzero()}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args):
    ck = ckpt_io.load(args.checkpoint)
    data = load_dataset(args.data)
    rows = sweep(ck.config, ck.params, data, args.iv_list, args.iw_list, sparse=args.sparse)
    text = sweep_tsv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_flops(args):
    if args.checkpoint:
        ck = ckpt_io.load(args.checkpoint)
        config, params = ck.config, ck.params
    else:
        config, params = _run_config(args).model_config(), None
    if args.data:
        report = dataset_cost(config, params, load_dataset(args.data), args.iv, args.baseline_flops)
    elif args.iv:
        raise ConfigError("--iv needs --data to measure surviving vertices")
    else:
        report = count_flops(config, None, params, baseline_flops=args.baseline_flops)
    sys.stdout.write(report.to_tsv() if args.tsv else report.to_text())
    return EXIT_OK


def cmd_gradcheck(args):
    rc = _run_config(args)
    grid = args.grid
    if args.stack:
        stack = [LayerSpec.parse(t) for t in args.stack.split(",")]
        config = ModelConfig(rc.connectivity, rc.input_channels, grid, stack,
                             stack[-1].out_width, rc.vertex_attention, rc.feature_attention)
    else:
        config = rc.override(grid_size=grid).model_config()
    rng = np.random.default_rng(rc.seed)
    params = init_params(config, rc.seed)
    sample = ImageSample(rng.uniform(0.0, 1.0, (grid, grid, config.input_channels)), 0)
    res = gradient_check(config, params, sample, epsilon=args.epsilon, n_coords=args.coords,
                         seed=rc.seed, iv=rc.iv)
    ok = res.ok(args.tolerance)
    print("max_rel_err\tchecked\tskipped_at_kinks\ttolerance\tstatus")
    print(f"{res.max_rel_err:.3e}\t{res.checked}\t{res.skipped}\t{args.tolerance:.1e}"
          f"\t{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_config(args):
    if args.check:
        cfg = load_run_config(args.check)
        sys.stdout.write(format_run_config(cfg))
        return EXIT_OK
    sys.stdout.write("# sargnn run configuration (defaults)\n")
    sys.stdout.write(format_run_config(RunConfig()))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="sargnn", description="Grid-graph GNN image classifier")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ship", action="store_true", help="two-class clutter vs target set")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--train", dest="train_manifest")
    p.add_argument("--val", dest="val_manifest")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--checkpoint")
    _add_model_flags(p)
    for flag, typ in (("--epochs", int), ("--batch-size", int), ("--lr0", float),
                      ("--lambda-l1", float), ("--l2-decay", float), ("--lr-step", int),
                      ("--lr-gamma", float), ("--seed", int), ("--iv", float),
                      ("--workers", int)):
        p.add_argument(flag, type=typ)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--iv", type=float, default=0.0)
    p.add_argument("--sparse", action="store_true", help="use the sparse weight path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune", help="magnitude-prune weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--iw", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("sweep", help="accuracy and cost over threshold grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--iv-list", type=_floats, default=[0.0])
    p.add_argument("--iw-list", type=_floats, default=[0.0])
    p.add_argument("--sparse", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("flops", help="FLOP and parameter report")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    _add_model_flags(p)
    p.add_argument("--data", help="manifest used to measure surviving vertices")
    p.add_argument("--iv", type=float, default=0.0)
    p.add_argument("--baseline-flops", type=float)
    p.add_argument("--tsv", action="store_true", help="per-layer table instead of a summary")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config")
    _add_model_flags(p)
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--stack", help="comma-separated kind:in:out layers (overrides the default)")
    p.add_argument("--seed", type=int)
    p.add_argument("--iv", type=float)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("config", help="print or validate a run configuration")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--print-default", action="store_true")
    g.add_argument("--check", metavar="FILE")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

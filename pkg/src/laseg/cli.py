"""Command-line entry point: ``laseg <command> [--config PATH] [--seed N] [--out DIR] ...``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from . import pipeline as pl
from .clic import ClicError
from .config import ConfigError, PipelineConfig, load_config
from .fusion import FusionError
from .levelset import LevelSetError
from .metrics import EmptyMaskError
from .mhd import MhdError
from .registration import RegistrationError
from .transforms import TransformFormatError
from .volume import GridMismatchError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

INPUT_ERRORS = (
    ConfigError,
    MhdError,
    TransformFormatError,
    GridMismatchError,
    pl.PipelineInputError,
    FusionError,
    EmptyMaskError,
    FileNotFoundError,
)
NUMERIC_ERRORS = (ClicError, RegistrationError, LevelSetError, FloatingPointError)


def _config(args, needs_paths=False) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config, check_paths=needs_paths)
    else:
        if needs_paths:
            raise ConfigError("this command needs --config")
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = cfg.with_output(args.out)
    return cfg


def _require(*paths):
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"input not found: {p}")


def _out_file(args, default_name: str) -> Path:
    out = Path(args.out or ".")
    if out.suffix == ".mhd":
        return out
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name


def cmd_phantom(args):
    cfg = _config(args)
    n = args.n if args.n is not None else cfg.n_cases
    pairs = pl.stage_phantom(cfg.phantom, n, cfg.seed, args.out or "phantoms")
    print(f"wrote {len(pairs)} image/label pairs under {Path(args.out or 'phantoms')}")


def cmd_normalize(args):
    cfg = _config(args)
    _require(args.input)
    out = _out_file(args, Path(args.input).name)
    print(pl.stage_normalize(args.input, out, cfg.clic))


def cmd_register(args):
    cfg = _config(args)
    _require(args.target, *args.atlases)
    out = _out_file(args, "transforms.txt") if not (args.out or "").endswith(".txt") else Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    print(pl.stage_register(args.target, args.atlases, out, cfg.registration))


def cmd_select(args):
    cfg = _config(args)
    mode = args.mode or cfg.modes[0]
    _require(args.target, args.transforms, *args.labels)
    out = Path(args.out) if (args.out or "").endswith(".txt") else _out_file(args, f"selection_{mode}.txt")
    seed = pl.case_seed(cfg.seed, args.case_index)
    path, _ = pl.stage_select(args.target, args.transforms, args.labels, out, mode, cfg.simple, seed)
    print(path)


def cmd_fuse(args):
    _config(args)
    _require(args.target, args.transforms, args.selection, *args.labels)
    mode, _ = pl.read_selection(args.selection)
    out = _out_file(args, f"fused_{mode}.mhd")
    print(pl.stage_fuse(args.target, args.transforms, args.labels, args.selection, out))


def cmd_refine(args):
    cfg = _config(args)
    _require(args.image, args.mask)
    out = _out_file(args, f"refined_{args.tag}.mhd")
    pl.stage_refine(args.image, args.mask, out, out.parent / f"energy_{args.tag}.csv", cfg.levelset)
    print(out)


def cmd_evaluate(args):
    from .plotting import plot_case_metrics

    _config(args)
    _require(*args.pred, *args.truth)
    rows = pl.evaluate_pairs(args.pred, args.truth)
    out = Path(args.out or ".")
    path = pl.write_csv(rows, pl.EVAL_FIELDS, out / "evaluation.csv")
    fig_rows = [{"case_id": r["case_id"], "dice_atlas": r["dice"], "dice_refined": r["dice"],
                 "apd_ssd_mm_atlas": r["apd_ssd_mm"], "apd_ssd_mm_refined": r["apd_ssd_mm"]}
                for r in rows]
    plot_case_metrics({"evaluation": fig_rows}, out / "figures" / "evaluation.png")
    sys.stdout.write(path.read_text())


def cmd_pipeline(args):
    cfg = _config(args, needs_paths=True)
    result = pl.run_pipeline(cfg, figures=not args.no_figures)
    for mode in cfg.modes:
        print(result.out_dir / f"results_{mode}.csv")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key = value configuration file")
    common.add_argument("--seed", type=int, help="override the configured rng seed")
    common.add_argument("--out", help="output directory (or file for single-output stages)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="laseg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"laseg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", parents=[common], help="write a synthetic image/label cohort")
    s.add_argument("--n", type=int, help="number of cases (default: [run] n_cases)")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("normalize", parents=[common], help="intensity image -> probability map")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("register", parents=[common], help="groupwise registration to a target")
    s.add_argument("--target", required=True)
    s.add_argument("--atlases", nargs="+", required=True)
    s.set_defaults(func=cmd_register)

    for name, func, helptext in (("select", cmd_select, "atlas selection"),
                                 ("fuse", cmd_fuse, "majority-vote fusion of selected atlases")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--target", required=True)
        s.add_argument("--transforms", required=True)
        s.add_argument("--labels", nargs="+", required=True,
                       help="atlas labels, in the order the atlases were registered")
        if name == "select":
            s.add_argument("--mode", choices=("simple", "random"))
            s.add_argument("--case-index", type=int, default=0,
                           help="target position in a leave-one-out run (seeds random selection)")
        else:
            s.add_argument("--selection", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("refine", parents=[common], help="level-set refinement of a mask")
    s.add_argument("--image", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--tag", default="simple")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("evaluate", parents=[common], help="Dice and surface distance vs truth")
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--truth", nargs="+", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("pipeline", parents=[common], help="run every stage from a config")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except INPUT_ERRORS as exc:
        print(f"laseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"laseg {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Commands: train, stylize, scan-viz, gradcheck, selftest. Exit codes:
0 success, 1 failed selftest or aborted training, 2 configuration problem,
3 data problem, 4 checkpoint problem. The STYMAM_SEED environment variable
overrides the config seed; an explicit --seed flag beats both.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import CheckpointError
from .generator import generator_forward
from .imageio import (
    ImageFormatError,
    float_to_img,
    img_to_float,
    pad_to_multiple,
    read_image,
    resize_nearest,
    write_pgm,
    write_ppm,
)
from .scan import Orientation, build_strip_zigzag
from .selftest import run_gradcheck, run_selftest
from .tensor import ConfigurationError, Tensor
from .training import DatasetError, TrainAbort, load_config, load_generator, train

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stymam", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the adversarial training loop")
    p_train.add_argument("--config", required=True, help="key=value training config file")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_sty = sub.add_parser("stylize", help="run one image through a trained generator")
    p_sty.add_argument("--checkpoint", required=True)
    p_sty.add_argument("--in", dest="in_path", required=True)
    p_sty.add_argument("--out", dest="out_path", required=True)
    p_sty.add_argument("--size", type=int, default=None, help="resize the input square first")

    p_viz = sub.add_parser("scan-viz", help="dump a strip scan order as CSV and a PGM brightness map")
    p_viz.add_argument("height", type=int)
    p_viz.add_argument("width", type=int)
    p_viz.add_argument("--strip", type=int, default=4)
    p_viz.add_argument("--orientation", choices=["h", "v"], default="h")
    p_viz.add_argument("--out", dest="out_prefix", required=True, help="prefix for .csv and .pgm files")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient sweep")
    p_grad.add_argument("--profile", choices=["desk", "paper"], default="desk")

    p_self = sub.add_parser("selftest", help="run the built-in verification suite")
    p_self.add_argument("--mutate", default=None, help="perturb one named check to test the tester")

    return parser


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    env_seed = os.environ.get("STYMAM_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigurationError(f"STYMAM_SEED must be an integer, got {env_seed!r}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    state = train(cfg, on_step=lambda m: print(
        f"step {m['step']:>6}  d {m['loss_d']:.4f}  g {m['loss_g']:.4f}  "
        f"c {m['loss_c']:.4f}  total {m['loss_total']:.4f}"
    ))
    print(f"trained {state.step} steps; outputs in {cfg.out_dir}")
    return EXIT_OK


def cmd_stylize(args) -> int:
    gw = load_generator(args.checkpoint)
    for tensor in gw.named().values():
        tensor.requires_grad = False  # inference builds no graph
    img = read_image(args.in_path)
    if args.size is not None:
        if args.size < 4:
            raise ConfigurationError(f"--size must be at least 4, got {args.size}")
        img = resize_nearest(img, args.size, args.size)
    arr, (h0, w0) = pad_to_multiple(img_to_float(img), 4)
    out = generator_forward(Tensor(arr), gw).data[:h0, :w0]
    write_ppm(args.out_path, float_to_img(out))
    print(f"stylized {args.in_path} -> {args.out_path} ({w0}x{h0})")
    return EXIT_OK


def cmd_scan_viz(args) -> int:
    orientation = Orientation(args.orientation)
    order = build_strip_zigzag(args.height, args.width, args.strip, orientation)
    csv_path = args.out_prefix + ".csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("t,row,col\n")
        for t, flat in enumerate(order.perm):
            f.write(f"{t},{flat // args.width},{flat % args.width}\n")
    total = len(order)
    if total > 1:
        brightness = (order.inv_perm.reshape(args.height, args.width) * 255) // (total - 1)
    else:
        brightness = np.zeros((1, 1), dtype=np.int64)
    write_pgm(args.out_prefix + ".pgm", brightness.astype(np.uint8))
    print(f"wrote {csv_path} and {args.out_prefix}.pgm")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "stylize":
            return cmd_stylize(args)
        if args.command == "scan-viz":
            return cmd_scan_viz(args)
        if args.command == "gradcheck":
            return EXIT_OK if run_gradcheck(args.profile) else EXIT_FAIL
        if args.command == "selftest":
            try:
                return EXIT_OK if run_selftest(mutate=args.mutate) else EXIT_FAIL
            except ValueError as err:
                print(f"error: {err}", file=sys.stderr)
                return EXIT_CONFIG
    except ConfigurationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, ImageFormatError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainAbort as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

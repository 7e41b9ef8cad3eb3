"""Batch command-line driver: synth, train, infer, eval, bench.

Exit codes: 0 success, 2 usage error, 3 I/O or format error, 4 non-finite loss.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import data, metrics
from .decoder import LAMBDA_C
from .errors import DomainError, FormatError, InvalidValueError, ShapeError
from .numerics import SeededRng
from .pipeline import (
    DEFAULT_T, DEFAULT_TAU, init_model, run_pipeline, train_decoder, train_refiner,
)
from .scheduler import make_schedule
from .sparse import bench_line

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
BENCH_OCCUPANCIES = (0.01, 0.05, 0.1, 0.5, 1.0)
REFINE_STEPS = 2000
REFINE_LR = 3e-3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    size: int = 64
    T: int = DEFAULT_T
    tau: float = DEFAULT_TAU
    lambda_c: float = LAMBDA_C
    lr: float = 1e-2
    steps: int | None = None
    seed: int = 0
    paths: dict = field(default_factory=dict)

    def validate(self):
        if self.size < 8 or self.size % 8:
            raise UsageError(f"--size must be a positive multiple of 8, got {self.size}")
        if self.T < 1:
            raise UsageError(f"--T must be >= 1, got {self.T}")
        if not 0.0 <= self.tau <= 1.0:
            raise UsageError(f"--tau must lie in [0, 1], got {self.tau}")
        if self.lr < 0:
            raise UsageError("--lr must be nonnegative")
        if self.steps is not None and self.steps < 0:
            raise UsageError("--steps must be nonnegative")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def build_parser():
    parser = _Parser(prog="mask2alpha", description="Mask-guided alpha matting toolkit.")
    sub = parser.add_subparsers(dest="subcommand", metavar="{synth,train,infer,eval,bench}",
                                parser_class=_Parser)
    sub.required = True

    def common(p, size=64):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--size", type=int, default=size)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train on a dataset directory and write a checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lambda-c", dest="lambda_c", type=float, default=LAMBDA_C)
    p.add_argument("--T", type=int, default=DEFAULT_T)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--refine-steps", type=int, default=REFINE_STEPS)
    p.add_argument("--refine-lr", type=float, default=REFINE_LR)
    p.add_argument("--log-every", type=int, default=50)

    p = sub.add_parser("infer", help="predict mattes with a trained checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", help="3-channel P6 input (single-image mode)")
    p.add_argument("--mask", help="P5 coarse mask (single-image mode)")
    p.add_argument("--out", help="output stem; writes <out>.pgm and <out>_conf.pgm")
    p.add_argument("--data", help="dataset directory (batch mode)")
    p.add_argument("--out-dir", help="batch-mode output directory")
    p.add_argument("--T", type=int, default=DEFAULT_T)
    p.add_argument("--steps", type=int, default=None,
                   help="number of refinement steps; overrides --T")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--no-sparse", action="store_true",
                   help="skip detail recovery; emit the upsampled low-resolution matte")
    p.add_argument("--trace", action="store_true", help="print decode_calls=<k>")

    p = sub.add_parser("eval", help="score predicted mattes against ground truth")
    common(p)
    p.add_argument("--pred", required=True, help="directory holding <id>.pgm predictions")
    p.add_argument("--data", required=True, help="dataset directory with ground truth")

    p = sub.add_parser("bench", help="sparse vs dense refiner cost")
    common(p, size=256)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--backend", default=None, choices=("compiled", "python"))
    return parser


def report_table(reports):
    """``reports``: sequence of (sample_id, MetricReport).  One line each, then the mean."""
    reports = list(reports)
    if not reports:
        raise ValueError("report_table needs at least one report")
    lines = []
    for sample_id, r in reports:
        lines.append(f"{sample_id} sad={r.sad:.6g} mse={r.mse:.6g} grad={r.grad:.6g} conn={r.conn:.6g}")
    values = np.array([[v for _, v in r.items()] for _, r in reports], dtype=float)
    mean = values.mean(axis=0)
    lines.append("mean sad={:.6g} mse={:.6g} grad={:.6g} conn={:.6g}".format(*mean))
    return "\n".join(lines)


def _config(args):
    cfg = RunConfig(subcommand=args.subcommand, size=args.size, seed=args.seed)
    for name in ("T", "tau", "lambda_c", "lr", "steps"):
        if hasattr(args, name) and getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    if args.subcommand == "infer" and args.steps is not None:
        cfg.T = args.steps
    cfg.paths = {k: getattr(args, k) for k in ("out", "data", "checkpoint", "pred", "image",
                                               "mask", "out_dir") if getattr(args, k, None)}
    cfg.validate()
    return cfg


def _load_samples(data_dir):
    ids = data.read_manifest(data_dir)
    if not ids:
        raise FormatError(f"empty manifest in {data_dir}")
    return ids, [data.load_sample(data_dir, i) for i in ids]


def _load_params(path, seed):
    with open(path, "rb") as fh:
        ck = data.checkpoint_load(fh.read())
    params = init_model(seed)
    missing = set(params) - set(ck.tensors)
    if missing:
        raise FormatError(f"checkpoint lacks {len(missing)} tensors, e.g. {sorted(missing)[0]!r}")
    for name, p in params.items():
        value = ck.tensors[name]
        if value.shape != p.data.shape:
            raise FormatError(f"tensor {name!r} has shape {value.shape}, expected {p.data.shape}")
        p.data[...] = value.astype(np.float64)
    return params


def cmd_synth(args, cfg, out):
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    data.synth_generate(args.count, cfg.size, cfg.seed, cfg.paths["out"])
    print(f"wrote={args.count} out={cfg.paths['out']}", file=out)


def cmd_train(args, cfg, out):
    _, samples = _load_samples(cfg.paths["data"])
    schedule = make_schedule(cfg.T)
    params = init_model(cfg.seed)

    def log(step, loss):
        print(f"step={step} loss={loss:.6g}", file=out)

    train_decoder(params, samples, schedule, cfg.steps, cfg.lr, cfg.seed, cfg.lambda_c,
                  log_every=max(args.log_every, 1), on_log=log)

    def log_refine(step, loss):
        print(f"refine_step={step} loss={loss:.6g}", file=out)

    train_refiner(params, samples, schedule, args.refine_steps, args.refine_lr, cfg.tau,
                  on_log=log_refine, log_every=max(args.log_every, 1))
    blob = data.checkpoint_save(params)
    with open(cfg.paths["checkpoint"], "wb") as fh:
        fh.write(blob)
    print(f"checkpoint={cfg.paths['checkpoint']} tensors={len(params)}", file=out)


def _write_outputs(stem, result):
    data.pnm_write(stem + ".pgm", result.alpha)
    data.pnm_write(stem + "_conf.pgm", result.error_full)


def cmd_infer(args, cfg, out):
    params = _load_params(cfg.paths["checkpoint"], cfg.seed)
    schedule = make_schedule(cfg.T)
    if args.data:
        if not args.out_dir:
            raise UsageError("batch mode needs --out-dir")
        jobs = []
        for sample_id in data.read_manifest(args.data):
            image, _, mask = data.load_sample(args.data, sample_id)
            jobs.append((os.path.join(args.out_dir, sample_id), image, mask))
        os.makedirs(args.out_dir, exist_ok=True)
    else:
        if not (args.image and args.mask and args.out):
            raise UsageError("single-image mode needs --image, --mask and --out")
        image = data.pnm_read(args.image)
        mask = (data.pnm_read(args.mask) >= 0.5).astype(np.uint8)
        if image.ndim != 3:
            raise FormatError(f"{args.image} is not a color image")
        jobs = [(args.out, image, mask)]
    for stem, image, mask in jobs:
        res = run_pipeline(params, image, mask, schedule, cfg.tau, sparse=not args.no_sparse)
        _write_outputs(stem, res)
        line = f"out={stem}.pgm active={res.active_fraction:.6g}"
        if args.trace:
            line += f" decode_calls={res.decode_calls}"
        print(line, file=out)


def cmd_eval(args, cfg, out):
    ids = data.read_manifest(cfg.paths["data"])
    reports = []
    for sample_id in ids:
        pred = data.pnm_read(os.path.join(cfg.paths["pred"], sample_id + ".pgm"))
        _, alpha, _ = data.load_sample(cfg.paths["data"], sample_id)
        reports.append((sample_id, metrics.evaluate(pred, alpha)))
    print(report_table(reports), file=out)


def cmd_bench(args, cfg, out):
    from .sparse import init_sparse

    rng = SeededRng(cfg.seed, 0xBE)
    params = init_sparse(rng)
    # a nonzero head so the benchmark exercises every layer's arithmetic
    params["sgsdr.head.w"].data[...] = rng.normal(0.0, 0.1, params["sgsdr.head.w"].data.shape)
    for occ in BENCH_OCCUPANCIES:
        print(bench_line(occ, cfg.size, params, rng, repeats=args.repeats, backend=args.backend),
              file=out)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer,
            "eval": cmd_eval, "bench": cmd_bench}


def run(argv=None, out=None, err=None):
    """Parse ``argv`` and execute; returns the process exit code."""
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
        # non-finite values are caught and reported as errors; the warnings add nothing
        with np.errstate(over="ignore", invalid="ignore"):
            COMMANDS[args.subcommand](args, cfg, out)
    except UsageError as exc:
        print(str(exc).rstrip(), file=err)
        if "usage:" not in str(exc):
            print(parser.format_usage().rstrip(), file=err)
        return EXIT_USAGE
    except InvalidValueError as exc:
        print(f"error: numeric failure: {exc}", file=err)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_IO
    except (DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

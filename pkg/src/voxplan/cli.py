"""Command line: compile plans, run volumes, time, verify, generate models.

Subcommands:

* ``compile``  model.prototxt + weights.pznw -> plan file, with per-pass
  optimization switches and an optional rewrite report.
* ``run``      plan + input volume -> output volume, tiling the volume
  into plan-shaped patches when it is larger than one patch.
* ``bench``    warmup/timed iteration protocol on synthetic input.
* ``verify``   engine (optimized and unoptimized) against the naive
  reference implementation on seeded random input.
* ``zoo``      generate the three U-Net variants plus seeded weights.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .backend import BACKEND_ENV, available_backends
from .bench import (DEFAULT_ITERS, DEFAULT_JITTER_BOUND, DEFAULT_WARMUP,
                    BenchProtocol, bench_plan, jitter_warning)
from .errors import ParseError, VoxplanError
from .executor import PlanRunner
from .formats import read_volume, read_weights, write_volume, write_weights
from .netspec import LayerKind
from .oracle import ref_run
from .plan import (DEFAULT_PATCH_EXTENT, compile_network, read_plan,
                   write_plan)
from .prototxt import parse_network, print_network
from .shapes import validate_shapes
from .tiling import WORKERS_ENV, grid_for, run_tiled
from .zoo import VARIANTS, ZooConfig, generate_zoo


def _triple(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            "expected three comma-separated integers, got %r" % text)
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(
            "expected three comma-separated integers, got %r" % text)


def _int_list(text: str):
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            "expected comma-separated integers, got %r" % text)


def _load_model(model_path, weights_path):
    with open(model_path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        spec = parse_network(text)
    except ParseError as exc:
        line = ":%d" % exc.line if exc.line is not None else ""
        raise VoxplanError("%s%s: %s" % (model_path, line,
                                         str(exc).split(": ", 1)[-1]))
    store = read_weights(weights_path)
    return spec, store


def cmd_compile(args) -> int:
    spec, store = _load_model(args.model, args.weights)
    plan, report = compile_network(
        spec, store,
        simd=args.simd,
        patch_extent=args.patch,
        fuse_add=not args.no_fuse_add,
        fold_lin=not args.no_fold_linear,
        fuse_act=not args.no_fuse_act,
        elide_pad=not args.no_elide_pad,
    )
    write_plan(args.output, plan)
    if args.report:
        for line in report.lines():
            print(line)
    print("wrote %s (%d steps, %.1f MiB arena)"
          % (args.output, len(plan.steps), plan.arena_bytes / 2**20))
    return 0


def cmd_run(args) -> int:
    plan = read_plan(args.plan)
    volume = read_volume(args.input)
    if volume.ndim != 5:
        raise VoxplanError("input volume must have rank 5, got %d" % volume.ndim)
    single = (len(plan.inputs) == 1
              and volume.shape == tuple(plan.inputs[0][2])
              and args.tile is None and args.overlap is None)
    if single:
        out = next(iter(PlanRunner(plan, backend=args.backend)
                        .run(volume).values()))
    else:
        grid = grid_for(plan, volume.shape[2:], args.overlap)
        if args.tile is not None and grid.counts != args.tile:
            raise VoxplanError(
                "requested %s tiling but the volume decomposes as %s"
                % ("x".join(map(str, args.tile)),
                   "x".join(map(str, grid.counts))))
        out = run_tiled(plan, volume, backend=args.backend,
                        workers=args.workers, grid=grid)
        print("tiled %s over %d patches"
              % ("x".join(map(str, grid.counts)), len(grid.tiles)))
    write_volume(args.output, out)
    print("wrote %s %s" % (args.output, "x".join(map(str, out.shape))))
    return 0


def cmd_bench(args) -> int:
    plan = read_plan(args.plan)
    protocol = BenchProtocol(warmup_iters=args.warmup, timed_iters=args.iters)
    names = available_backends() if args.compare_backends else [args.backend]
    reports = {}
    for name in names:
        report = bench_plan(plan, protocol, backend=name, seed=args.seed)
        reports[name] = report
        if args.compare_backends:
            print("backend: %s" % name)
        print(report.format())
        warning = jitter_warning(report, args.jitter_bound)
        if warning:
            print(warning, file=sys.stderr)
    if args.compare_backends and len(reports) > 1:
        base = reports["python"].mean_ms
        for name, report in reports.items():
            if name != "python":
                print("speedup_%s_vs_python: %.2f"
                      % (name, base / report.mean_ms))
    return 0


def cmd_verify(args) -> int:
    spec, store = _load_model(args.model, args.weights)
    shapes = validate_shapes(spec, store)
    rng = np.random.default_rng(args.seed)
    inputs = {}
    for layer in spec.layers:
        if layer.kind is LayerKind.INPUT:
            inputs[layer.tops[0]] = rng.standard_normal(
                tuple(shapes[layer.tops[0]]), dtype=np.float32)
    reference = ref_run(spec, store, inputs)
    worst = 0.0
    for label, toggles in (("optimized", {}),
                           ("unoptimized", dict(fuse_add=False, fold_lin=False,
                                                fuse_act=False, elide_pad=False))):
        plan, _ = compile_network(spec, store, simd=args.simd, **toggles)
        got = PlanRunner(plan, backend=args.backend).run(inputs)
        for name, ref in reference.items():
            diff = np.abs(got[name] - ref)
            max_abs = float(diff.max()) if diff.size else 0.0
            max_rel = float((diff / (np.abs(ref) + 1e-6)).max()) if diff.size else 0.0
            print("%s_%s_max_abs: %.3e" % (label, name, max_abs))
            print("%s_%s_max_rel: %.3e" % (label, name, max_rel))
            worst = max(worst, max_abs)
    if worst > args.tolerance:
        print("FAIL: max abs difference %.3e exceeds %.1e"
              % (worst, args.tolerance))
        return 1
    print("PASS: max abs difference %.3e within %.1e" % (worst, args.tolerance))
    return 0


def cmd_zoo(args) -> int:
    cfg = ZooConfig(
        variant=args.variant,
        levels=args.levels,
        base_features=args.base_features,
        input_spatial=args.input,
        batch=args.batch,
        seed=args.seed,
        features=args.features,
    )
    spec, store = generate_zoo(cfg)
    text = print_network(spec)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
        print("wrote %s (%d layers)" % (args.output, len(spec.layers)))
    else:
        sys.stdout.write(text)
    if args.weights:
        write_weights(args.weights, store)
        print("wrote %s (%d tensors)" % (args.weights, len(store)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxplan",
        description="3D convolutional network plan compiler and runner",
        epilog="environment: %s picks the default backend, %s caps tile "
               "worker threads" % (BACKEND_ENV, WORKERS_ENV),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a model into an execution plan")
    p.add_argument("model", help="network description (.prototxt)")
    p.add_argument("weights", help="weight container (.pznw)")
    p.add_argument("-o", "--output", required=True, help="plan file to write")
    p.add_argument("--simd", type=int, default=8, help="lane width (default 8)")
    p.add_argument("--patch", type=_triple, default=DEFAULT_PATCH_EXTENT,
                   metavar="X,Y,Z", help="convolution patch extent")
    p.add_argument("--no-fuse-add", action="store_true",
                   help="keep element-wise additions as separate steps")
    p.add_argument("--no-fold-linear", action="store_true",
                   help="keep batchnorm/scale as separate steps")
    p.add_argument("--no-fuse-act", action="store_true",
                   help="keep activations as separate steps")
    p.add_argument("--no-elide-pad", action="store_true",
                   help="keep explicit padding copies")
    p.add_argument("--report", action="store_true",
                   help="print per-pass rewrite counts")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="run a plan over a volume file")
    p.add_argument("plan", help="compiled plan file")
    p.add_argument("input", help="input volume (.pznv)")
    p.add_argument("output", help="output volume to write (.pznv)")
    p.add_argument("--tile", type=_triple, metavar="X,Y,Z",
                   help="assert the tile grid decomposes as X,Y,Z")
    p.add_argument("--overlap", type=int,
                   help="input overlap between tiles (default: the "
                        "network's shrinkage)")
    p.add_argument("--workers", type=int,
                   help="tile worker threads (capped by %s)" % WORKERS_ENV)
    p.add_argument("--backend", help="kernel backend (auto, python, compiled)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="time a plan on synthetic input")
    p.add_argument("plan", help="compiled plan file")
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP,
                   help="untimed iterations (default %d)" % DEFAULT_WARMUP)
    p.add_argument("--iters", type=int, default=DEFAULT_ITERS,
                   help="timed iterations (default %d)" % DEFAULT_ITERS)
    p.add_argument("--seed", type=int, default=0, help="synthetic input seed")
    p.add_argument("--backend", help="kernel backend (auto, python, compiled)")
    p.add_argument("--compare-backends", action="store_true",
                   help="time every available backend and report speedups")
    p.add_argument("--jitter-bound", type=float, default=DEFAULT_JITTER_BOUND,
                   help="warn when std/mean exceeds this (default %.2f)"
                        % DEFAULT_JITTER_BOUND)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify",
                       help="compare the engine against the naive reference")
    p.add_argument("model", help="network description (.prototxt)")
    p.add_argument("weights", help="weight container (.pznw)")
    p.add_argument("--tolerance", type=float, default=1e-4,
                   help="max abs difference allowed (default 1e-4)")
    p.add_argument("--seed", type=int, default=0, help="input seed")
    p.add_argument("--simd", type=int, default=8, help="lane width (default 8)")
    p.add_argument("--backend", help="kernel backend (auto, python, compiled)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("zoo", help="generate a reference U-Net variant")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--levels", type=int, default=4,
                   help="resolution levels (default 4)")
    p.add_argument("--input", type=_triple, default=(16, 16, 16),
                   metavar="X,Y,Z", help="input patch shape (default 16,16,16)")
    p.add_argument("--base-features", type=int,
                   help="override the first level's feature count")
    p.add_argument("--features", type=_int_list, metavar="F0,F1,...",
                   help="override the whole per-level feature schedule")
    p.add_argument("--batch", type=int, default=1, help="batch size (default 1)")
    p.add_argument("--seed", type=int, default=0, help="weight init seed")
    p.add_argument("-o", "--output", help="model file to write (default stdout)")
    p.add_argument("--weights", help="weight container to write")
    p.set_defaults(func=cmd_zoo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VoxplanError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``kernquant`` command line: plan, compress, eval, convcheck, sweep.

Exit codes: 0 ok, 1 check failed, 2 usage/config error, 3 infeasible plan,
4 corrupt file, 5 shape mismatch.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


from . import __version__
from .container import CodebookContainer, read_container, write_container
from .conv import MulCounter, conv_direct, conv_dl, conv_vq, relative_deviation
from .core import KernelSet, LayerShape, aggregate_errors, partition_kernels, quantization_error, reconstruct_kernels
from .dl import dl_approximate
from .estimators import KernelQuantizer
from .evaluation import SweepConfig, run_sweep, write_sweep
from .exceptions import CorruptFile, InfeasibleSparsity, KernQuantError, ShapeMismatch
from .io import atomic_write_text, read_kernels, read_volume
from .planner import cost_original, plan
from .vq import vq_approximate

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_CORRUPT, EXIT_SHAPE = 0, 1, 2, 3, 4, 5
SCHEMA = 1
DEVIATION_TOL = 1e-4


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _shape(text):
    try:
        return LayerShape.parse(text)
    except (ValueError, KernQuantError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _default_threads():
    env = os.environ.get("KERNQUANT_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _existing(path):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _emit(report: dict, out=None):
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        atomic_write_text(out, text + "\n")
    print(text)


def layer_report(kernels, container: CodebookContainer) -> dict:
    """Per-subspace and layer errors plus exact costs of a codebook container."""
    if kernels.shape.kernel_extent != container.shape.kernel_extent:
        raise ShapeMismatch(
            f"kernels {kernels.shape.kernel_extent} do not match codebook layer {container.shape.kernel_extent}"
        )
    shape = container.shape
    mats = partition_kernels(kernels, container.partition)
    subspaces, reports = [], []
    m2 = shape.m**2
    T = 0
    for s, (W, cb) in enumerate(zip(mats, container.codebooks)):
        if container.method == "vq":
            approx = vq_approximate(cb)
            L, alpha = 0, 0
            T += m2 * container.partition.Nprime * cb.K
        else:
            approx = dl_approximate(cb)
            L, alpha = cb.L, cb.alpha
            T += m2 * (container.partition.Nprime * cb.L + cb.alpha * cb.K)
        rep = quantization_error(W, approx)
        reports.append(rep)
        subspaces.append({"subspace": s, "K": cb.K, "L": L, "alpha": alpha, "mse": rep.mse, "relfrob": rep.rel_frob})
    layer = aggregate_errors(reports)
    T_o = cost_original(shape)
    return {
        "schema": SCHEMA,
        "method": container.method,
        "shape": str(shape),
        "Nprime": container.partition.Nprime,
        "S": container.partition.S,
        "subspaces": subspaces,
        "layer": {"mse": layer.mse, "relfrob": layer.rel_frob},
        "costs": {"T_o": T_o, "T_method": T, "rho_achieved": T_o / T},
    }


def cmd_plan(args):
    try:
        result = plan(args.shape, args.nprime, args.rho, args.c, args.alpha)
    except InfeasibleSparsity:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(result.table())
    doc = {"schema": SCHEMA, **result.to_dict()}
    _emit(doc, args.out)
    return EXIT_OK


def cmd_compress(args):
    kernels = read_kernels(_existing(args.input))
    if args.rho <= 1:
        raise UsageError("--rho must exceed 1")
    est = KernelQuantizer(
        method=args.method,
        nprime=args.nprime,
        rho=args.rho,
        c=args.c,
        alpha=args.alpha,
        max_iter=args.max_iters,
        init_iter=args.init_iters,
        omp_guard=not args.no_omp_guard,
        random_state=args.seed,
    ).fit(kernels)
    container = est.container()
    write_container(args.out, container)
    report = layer_report(kernels, container)
    report["plan"] = est.plan_.to_dict()
    report["iterations"] = [t.n_iter if t is not None else cb.n_iter for t, cb in zip(est.traces_, est.codebooks_)]
    report["container"] = str(args.out)
    _emit(report, args.report)
    return EXIT_OK


def cmd_eval(args):
    kernels = read_kernels(_existing(args.input))
    container = read_container(_existing(args.codebook))
    _emit(layer_report(kernels, container), args.out)
    return EXIT_OK


def cmd_convcheck(args):
    kernels = read_kernels(_existing(args.input))
    container = read_container(_existing(args.codebook))
    volume = read_volume(_existing(args.volume))
    if kernels.shape.kernel_extent != container.shape.kernel_extent:
        raise ShapeMismatch("kernel file and codebook describe different layers")
    if volume.shape[0] != container.shape.N:
        raise ShapeMismatch(f"volume has {volume.shape[0]} channels, layer expects {container.shape.N}")
    base = container.shape
    shape = LayerShape(base.M, base.N, base.p, volume.shape[1])
    part = container.partition
    approx_cb = container.codebooks
    if container.method == "vq":
        mats = [vq_approximate(cb) for cb in approx_cb]
    else:
        mats = [dl_approximate(cb) for cb in approx_cb]
    approx_kernels = reconstruct_kernels(mats, shape)
    kernels = KernelSet(shape, kernels.weights)

    direct_counter, fast_counter = MulCounter(), MulCounter()
    reference = conv_direct(volume, approx_kernels, direct_counter)
    original = conv_direct(volume, kernels)
    run = conv_vq if container.method == "vq" else conv_dl
    fast = run(volume, shape, part, approx_cb, fast_counter)

    m2 = shape.m**2
    if container.method == "vq":
        expected = sum(m2 * part.Nprime * cb.K for cb in approx_cb)
    else:
        expected = sum(m2 * (part.Nprime * cb.L + cb.alpha * cb.K) for cb in approx_cb)
    deviation = relative_deviation(fast, reference)
    counters_ok = direct_counter.total == cost_original(shape) and fast_counter.total == expected
    ok = deviation <= DEVIATION_TOL and counters_ok
    report = {
        "schema": SCHEMA,
        "method": container.method,
        "shape": str(shape),
        "max_relative_deviation": deviation,
        "tolerance": DEVIATION_TOL,
        "deviation_from_original_layer": relative_deviation(fast, original),
        "counters": {
            "direct": {"counted": direct_counter.total, "formula": cost_original(shape)},
            container.method: {"counted": fast_counter.total, "formula": expected, "actual": fast_counter.actual},
        },
        "counters_match": counters_ok,
        "ok": ok,
    }
    _emit(report, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(args):
    path = _existing(args.config)
    try:
        cfg = SweepConfig.from_json(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid sweep config: {exc!r}") from exc
    result = run_sweep(cfg, threads=args.threads)
    out_dir = Path(args.out or "sweep_out")
    paths = write_sweep(result, out_dir)
    header = f"{'method':<6} {'rho':>8} {'rho_ach':>9} {'relfrob_mean':>13} {'relfrob_std':>12}"
    print(header)
    for rec in result.summary():
        print(
            f"{rec['method']:<6} {rec['rho_target']:>8g} {rec['rho_achieved']:>9.3f} "
            f"{rec['relfrob_mean']:>13.6f} {rec['relfrob_std']:>12.6f}"
        )
    if set(cfg.methods) == {"vq", "dl"} and len(cfg.rho_grid) >= 2:
        try:
            gains = result.gain()
        except (KernQuantError, ValueError) as exc:
            print(f"gain at equal error: unavailable ({exc})")
        else:
            print("gain at equal error (relfrob, %):", ", ".join(f"{e:.4f}:{g:.1f}" for e, g in gains))
    for name, p in paths.items():
        print(f"wrote {name}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--threads", type=_positive_int, default=_default_threads(),
                        help="worker threads (default $KERNQUANT_THREADS or 1)")
    common.add_argument("--out", help="output path")

    parser = argparse.ArgumentParser(prog="kernquant", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="equal-budget VQ/DL parameters for a layer")
    p.add_argument("--shape", type=_shape, required=True, help="MxNxpxm")
    p.add_argument("--nprime", type=_positive_int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--alpha", type=int, required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("compress", parents=[common], help="fit per-subspace codebooks and write a KQC1 container")
    p.add_argument("--input", required=True, help="KQZ1 (or JSON) kernel file")
    p.add_argument("--method", choices=("vq", "dl"), required=True)
    p.add_argument("--nprime", type=_positive_int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--c", type=float, default=3.0)
    p.add_argument("--alpha", type=int, default=2)
    p.add_argument("--max-iters", type=_positive_int, default=30)
    p.add_argument("--init-iters", type=int, default=20)
    p.add_argument("--no-omp-guard", action="store_true")
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", parents=[common], help="quantisation error of a container against kernels")
    p.add_argument("--input", required=True)
    p.add_argument("--codebook", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convcheck", parents=[common], help="verify accelerated conv paths and MUL counters")
    p.add_argument("--input", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--volume", required=True, help="input volume (KQZ1 with M=1, or JSON)")
    p.set_defaults(func=cmd_convcheck)

    p = sub.add_parser("sweep", parents=[common], help="error-vs-acceleration sweep to CSV")
    p.add_argument("--config", required=True, help="sweep JSON config")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "compress" and args.out is None:
        parser.error("compress requires --out")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kernquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleSparsity as exc:
        print(f"kernquant: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CorruptFile as exc:
        print(f"kernquant: corrupt file: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except ShapeMismatch as exc:
        print(f"kernquant: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (KernQuantError, ValueError) as exc:
        print(f"kernquant: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

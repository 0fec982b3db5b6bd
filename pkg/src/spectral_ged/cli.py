"""Command-line driver.

Exit codes: 0 success, 1 failed gradient check, 2 invalid arguments,
3 training divergence, 4 I/O error.
"""

import argparse
import os
import sys

from threadpoolctl import threadpool_limits

from . import experiments as ex
from .checks import TOLERANCE, gradcheck_suite
from .optim import TrainingDivergedError
from .spectral_distance import DEFAULT_WINDOWS, DistanceConfig, per_scale_breakdown
from .wav import wav_read

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _int_list(text):
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return values


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def cmd_distance(args, out):
    a, b = wav_read(args.file_a), wav_read(args.file_b)
    if a.sample_rate_hz != b.sample_rate_hz:
        raise ValueError(f"sample-rate mismatch: {a.sample_rate_hz} Hz vs {b.sample_rate_hz} Hz")
    n = min(len(a), len(b))
    cfg = DistanceConfig(window_lens=args.windows, oversample_m=args.oversample,
                         log_eps=args.log_eps, use_mel=args.mel, n_mel=args.n_mel,
                         sample_rate_hz=a.sample_rate_hz)
    rows = per_scale_breakdown(a.samples[:n], b.samples[:n], cfg)
    total = sum(l1 + l2 for _, l1, l2 in rows)
    out.write(f"distance {total!r}\n")
    out.write("k,term,value\n")
    for k, l1, l2 in rows:
        out.write(f"{k},l1,{l1!r}\n{k},log_l2,{l2!r}\n")
    return EXIT_OK


def _summary_line(report):
    keys = {
        "gmm": lambda r: (f"fraction_within={r['mode_coverage']['fraction_within']:.3f} "
                          f"shares={[round(s, 3) for s in r['mode_coverage']['per_mode_share']]} "
                          f"median_nearest={r['mode_coverage']['median_nearest_dist']:.4f}"),
        "highdim": lambda r: (f"mean_l2_norm={r['stats']['mean_l2_norm']:.4f} "
                              f"target={r['target_mean_l2_norm']:.4f}"),
        "locscale": lambda r: f"mu={r['mu_hat']:.4f} sigma={r['sigma_hat']:.4f}",
        "unbiasedness": lambda r: (f"mc_mean={r['monte_carlo_mean']:.5f} exact={r['exact']:.5f} "
                                   f"z={r['z_score']:.2f}"),
        "audio": lambda r: (f"pitch_accuracy={r['pitch_accuracy']:.2f} "
                            f"distance_ratio={r['distance_ratio']:.3f}"),
        "ablate": lambda r: f"rows={r['n_rows']} all_finite={r['all_finite']}",
    }
    return f"{report['experiment']}: " + keys[report["experiment"]](report)


def _run(fn, build):
    """Command calling ``fn(**build(args, out))`` and printing a summary."""

    def command(args, out):
        report = fn(**build(args, out))
        out.write(_summary_line(report) + "\n")
        return EXIT_OK
    return command


def _with_lr(args, extra=None):
    kwargs = {"out_dir": args.out, "steps": args.steps, "batch": args.batch,
              "seed": args.seed, "repulsive": not args.no_repulsive}
    if args.lr is not None:
        kwargs["lr"] = args.lr
    kwargs.update(extra or {})
    return kwargs


def cmd_gradcheck(args, out):
    results = gradcheck_suite(n_points=args.points, seed=args.seed)
    width = max(len(name) for name, _ in results)
    failed = 0
    for name, err in results:
        ok = err < TOLERANCE
        failed += not ok
        out.write(f"{name:<{width}}  {err:.3e}  {'pass' if ok else 'FAIL'}\n")
    out.write(f"{len(results) - failed}/{len(results)} passed (tolerance {TOLERANCE:g})\n")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def _ablate_progress(out):
    def progress(row):
        out.write(f"  {row['config']}: pitch={row['pitch_accuracy']:.2f} "
                  f"frechet={row['frechet_proxy']:.3f}\n")
        out.flush()
    return progress


def build_parser():
    parser = argparse.ArgumentParser(prog="spectral-ged",
                                     description="Spectral energy-distance experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distance", help="spectral distance between two WAV files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--windows", type=_int_list, default=DEFAULT_WINDOWS)
    p.add_argument("--oversample", type=_positive_int, default=8)
    p.add_argument("--mel", action="store_true")
    p.add_argument("--n-mel", type=_positive_int, default=None)
    p.add_argument("--log-eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_distance)

    def training(name, help_text, steps, batch):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--steps", type=_positive_int, default=steps)
        p.add_argument("--batch", type=_positive_int, default=batch)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--no-repulsive", action="store_true")
        return p

    p = training("train-gmm", "3-component 2-D mixture", 5000, 64)
    p.add_argument("--ema", action="store_true")
    p.set_defaults(func=_run(ex.run_gmm, lambda a, o: _with_lr(a, {"use_ema": a.ema})))

    p = training("train-highdim", "100-dimensional standard normal", 5000, 64)
    p.add_argument("--ema", action="store_true")
    p.set_defaults(func=_run(ex.run_highdim, lambda a, o: _with_lr(a, {"use_ema": a.ema})))

    p = training("train-locscale", "1-D location-scale recovery", 5000, 64)
    p.set_defaults(func=_run(ex.run_locscale, lambda a, o: _with_lr(a)))

    p = training("train-audio", "conditional harmonic-tone synthesis", 10000, 4)
    p.add_argument("--chunk", type=_positive_int, default=16)
    p.add_argument("--blocks", type=_positive_int, default=4)
    p.add_argument("--hidden", type=_positive_int, default=128)
    p.add_argument("--bottleneck", type=_positive_int, default=32)
    p.add_argument("--n-chunks", type=_positive_int, default=64)
    p.add_argument("--windows", type=_int_list, default=ex.AUDIO_WINDOWS)
    p.add_argument("--oversample", type=_positive_int, default=2)
    p.add_argument("--log-eps", type=float, default=1e-2)
    p.add_argument("--ema", action="store_true")
    p.add_argument("--no-wavs", action="store_true")
    p.set_defaults(func=_run(ex.run_audio, lambda a, o: _with_lr(a, {
        "chunk": a.chunk, "blocks": a.blocks, "hidden_channels": a.hidden,
        "bottleneck_channels": a.bottleneck, "n_chunks": a.n_chunks, "windows": a.windows,
        "oversample": a.oversample, "log_eps": a.log_eps, "use_ema": a.ema,
        "write_wavs": not a.no_wavs})))

    p = sub.add_parser("ablate", help="single-window and oversampling ablation grid")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--windows-singletons", type=_int_list, default=DEFAULT_WINDOWS)
    p.add_argument("--oversample-list", type=_int_list, default=ex.ABLATION_OVERSAMPLING)
    p.add_argument("--steps", type=_positive_int, default=200)
    p.add_argument("--batch", type=_positive_int, default=4)
    p.set_defaults(func=_run(ex.run_ablate, lambda a, o: {
        "out_dir": a.out, "seed": a.seed, "steps": a.steps, "batch": a.batch,
        "windows": a.windows_singletons, "oversample_list": a.oversample_list,
        "progress": _ablate_progress(o)}))

    p = sub.add_parser("unbiasedness", help="Monte Carlo check of the minibatch loss")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--draws", type=_positive_int, default=100000)
    p.add_argument("--batch", type=_positive_int, default=4)
    p.add_argument("--no-repulsive", action="store_true")
    p.set_defaults(func=_run(ex.run_unbiasedness, lambda a, o: {
        "out_dir": a.out, "seed": a.seed, "draws": a.draws, "batch": a.batch,
        "repulsive": not a.no_repulsive}))

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--points", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _threads():
    text = os.environ.get("GED_THREADS", "1")
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"GED_THREADS must be a positive integer, got {text!r}")
    if value < 1:
        raise ValueError(f"GED_THREADS must be a positive integer, got {text!r}")
    return value


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args, out)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

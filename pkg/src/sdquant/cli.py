"""Command-line front end.

Every command prints machine-readable ``key=value`` lines on stdout and
human-oriented messages on stderr. Exit codes: 0 success, 2 usage error,
3 file format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import compression_ratio, error_report, osr_sweep, spectrum_report, sweep_csv
from .engine import LOOP_FORMS, UPDATE_RULES, QuantizeConfig, quantize_matrix, reconstruct, sd_quantize_block
from .errors import FormatError, NumericError
from .inference import forward, forward_reference
from .osr_planner import OsrPlan, collect_stats, load_manifest, plan
from .tensor_io import load_float, load_quantized, save_float, save_quantized

log = logging.getLogger("sdquant")

EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _emit(**fields) -> None:
    parts = []
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    print(" ".join(parts), flush=True)


def _osr(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"OSR must be a real number, got {text!r}") from None
    if not np.isfinite(value) or value < 1:
        raise argparse.ArgumentTypeError(f"OSR must be >= 1 (got {text})")
    return value


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def load_calibration(spec: str, cols: int) -> np.ndarray:
    """A calibration file path, or ``synthetic:<rows>:<seed>`` for standard-normal rows."""
    if spec.startswith("synthetic:"):
        try:
            _, rows, seed = spec.split(":")
            rows, seed = int(rows), int(seed)
        except ValueError:
            raise UsageError(f"bad synthetic calibration spec {spec!r}; expected synthetic:<rows>:<seed>") from None
        if rows < 1:
            raise UsageError("synthetic calibration needs at least one row")
        return np.random.default_rng(seed).standard_normal((rows, cols))
    x = load_float(spec)
    if x.shape[1] != cols:
        raise UsageError(f"calibration has {x.shape[1]} columns, weights have {cols}")
    return x


def _add_quant_flags(p: argparse.ArgumentParser, *, with_osr: bool = True) -> None:
    if with_osr:
        p.add_argument("--osr", type=_osr, default=2.0, help="oversampling ratio (real >= 1)")
    p.add_argument("--quantizer", choices=("binary", "ternary"), default="ternary")
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--hadamard", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--lambda-frac", type=float, default=0.01)
    p.add_argument("--compensation", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--loop-form", choices=LOOP_FORMS, default="eq7")
    p.add_argument("--update-rule", choices=UPDATE_RULES, default="obs")


def _config(args, osr: float | None = None) -> QuantizeConfig:
    try:
        return QuantizeConfig(osr=args.osr if osr is None else osr, quantizer=args.quantizer,
                              block_size=args.block_size, hadamard=args.hadamard, seed=args.seed,
                              lambda_fraction=args.lambda_frac, compensation=args.compensation,
                              loop_form=args.loop_form, update_rule=args.update_rule)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ------------------------------------------------------------------------ commands


def cmd_quantize(args) -> int:
    start = time.perf_counter()
    w = load_float(args.weights)
    cfg = _config(args)
    x = load_calibration(args.calib, w.shape[1])
    q = quantize_matrix(w, x, cfg)
    save_quantized(q, args.out)
    rep = error_report(w, q, x)
    _emit(eta=compression_ratio(cfg.quantizer, cfg.osr), frob_rel=rep["frobenius_rel"],
          out_rel=rep["output_frobenius_rel"], cols_up=q.cols_up, wall_s=time.perf_counter() - start)
    log.info("wrote %s", args.out)
    return 0


def cmd_plan(args) -> int:
    entries = load_manifest(args.manifest)
    stats = collect_stats(entries, threads=_threads(args))
    result = plan(stats, args.target_osr, args.osr_min, args.osr_max, gamma=args.gamma)
    Path(args.out).write_text(result.to_json())
    _emit(achieved_average=result.achieved_average, target=result.target, modules=len(result.osr))
    return 0


def cmd_quantize_batch(args) -> int:
    entries = load_manifest(args.manifest)
    try:
        osr_plan = OsrPlan.from_json(Path(args.plan).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read plan: {exc}") from None
    missing = [e.key for e in entries if e.key not in osr_plan.osr]
    if missing:
        raise FormatError(f"plan has no OSR for modules {missing}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(entry):
        w = load_float(entry.path)
        cfg = _config(args, osr=osr_plan.osr[entry.key])
        x = load_calibration(entry.calib or args.calib, w.shape[1])
        q = quantize_matrix(w, x, cfg)
        target = out_dir / f"{entry.key}.sdqw"
        save_quantized(q, target)
        rep = error_report(w, q, x)
        return dict(module=entry.key, osr=cfg.osr, eta=compression_ratio(cfg.quantizer, cfg.osr),
                    frob_rel=rep["frobenius_rel"], out_rel=rep["output_frobenius_rel"], path=target)

    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        results = list(pool.map(one, entries))
    for r in results:
        _emit(**r)
    return 0


def cmd_reconstruct(args) -> int:
    q = load_quantized(args.quantized)
    dense = reconstruct(q)
    save_float(dense, args.out)
    _emit(rows=dense.shape[0], cols=dense.shape[1])
    return 0


def cmd_eval(args) -> int:
    w = load_float(args.weights)
    q = load_quantized(args.quantized)
    if w.shape != (q.rows, q.cols_orig):
        raise UsageError(f"weights {w.shape} do not match quantized ({q.rows}, {q.cols_orig})")
    x = load_calibration(args.activations, w.shape[1])
    rep = error_report(w, q, x)
    fast = forward(q, x, threads=_threads(args))
    ref = forward_reference(q, x)
    scale = np.max(np.abs(ref)) or 1.0
    _emit(frob_rel=rep["frobenius_rel"], max_abs=rep["max_abs"], out_rel=rep["output_frobenius_rel"],
          forward_rel_err=float(np.max(np.abs(fast - ref)) / scale), osr=q.osr,
          eta=compression_ratio(q.quantizer, q.osr))
    return 0


def cmd_spectrum(args) -> int:
    w = load_float(args.weights)
    if not 0 <= args.row < w.shape[0]:
        raise UsageError(f"row {args.row} out of range for {w.shape[0]} rows")
    row = w[args.row]
    y, s, _ = sd_quantize_block(row[None, :], args.osr, args.quantizer, loop_form=args.loop_form)
    rep = spectrum_report(row, y[0], s[0], args.osr, args.bands)
    if args.out:
        Path(args.out).write_text(rep.to_csv())
    else:
        sys.stdout.write(rep.to_csv())
    low, high = rep.half_split()
    _emit(in_band_frac=rep.in_band_fraction, low_half=low, high_half=high)
    return 0


def cmd_sweep(args) -> int:
    w = load_float(args.weights)
    x = load_calibration(args.calib, w.shape[1])
    try:
        osr_list = [_osr(t) for t in args.osr_list.split(",")]
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc)) from None
    rows = osr_sweep(w, x, _config(args, osr=osr_list[0]), osr_list, threads=_threads(args))
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
        _emit(points=len(rows), out=args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    m = rng.standard_normal((args.rows, args.cols)) * args.std
    n_out = int(round(args.outlier_frac * args.cols))
    if n_out:
        m[:, rng.choice(args.cols, n_out, replace=False)] *= args.outlier_gain
    save_float(m, args.out)
    _emit(rows=args.rows, cols=args.cols, outlier_cols=n_out)
    return 0


# -------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdquant", description="Sigma-Delta weight quantization toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--threads", type=int, default=None, help="bound on worker threads")
        return p

    p = add("quantize", cmd_quantize, "quantize one SDQT weight matrix to SDQW")
    p.add_argument("--weights", required=True)
    p.add_argument("--calib", required=True, help="SDQT activations or synthetic:<rows>:<seed>")
    p.add_argument("--out", required=True)
    _add_quant_flags(p)

    p = add("plan", cmd_plan, "allocate per-module OSR from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target-osr", type=_osr, required=True)
    p.add_argument("--osr-min", type=_osr, default=1.0)
    p.add_argument("--osr-max", type=_osr, default=8.0)
    p.add_argument("--gamma", type=float, default=1.0, help="sensitivity exponent")
    p.add_argument("--out", required=True)

    p = add("quantize-batch", cmd_quantize_batch, "quantize every manifest module with its planned OSR")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--calib", default="synthetic:256:0", help="used for modules without their own calib")
    _add_quant_flags(p, with_osr=False)

    p = add("reconstruct", cmd_reconstruct, "dense SDQT surrogate of an SDQW file")
    p.add_argument("--quantized", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "error report and forward-vs-reference agreement")
    p.add_argument("--weights", required=True)
    p.add_argument("--quantized", required=True)
    p.add_argument("--activations", default="synthetic:64:1")

    p = add("spectrum", cmd_spectrum, "error spectrum of one Sigma-Delta quantized row (CSV)")
    p.add_argument("--weights", required=True)
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--osr", type=_osr, default=2.0)
    p.add_argument("--quantizer", choices=("binary", "ternary"), default="ternary")
    p.add_argument("--loop-form", choices=LOOP_FORMS, default="eq7")
    p.add_argument("--bands", type=int, default=32)
    p.add_argument("--out")

    p = add("sweep", cmd_sweep, "quantize at several OSRs and emit a CSV table")
    p.add_argument("--weights", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--osr-list", default="1,1.25,1.5,1.75,2,2.5,3,3.5,4")
    p.add_argument("--out")
    _add_quant_flags(p, with_osr=False)

    p = add("synth", cmd_synth, "write a Gaussian SDQT matrix (optionally with outlier columns)")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--outlier-frac", type=float, default=0.0)
    p.add_argument("--outlier-gain", type=float, default=10.0)
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sdquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"sdquant: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"sdquant: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"sdquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())

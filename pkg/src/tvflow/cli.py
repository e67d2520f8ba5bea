"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .baseline import BENCH_CONFIG, BaselineConfig, InnerSolveError, baseline_flow, benchmark, discrepancy
from .kmd import build_dictionary, fit, flow_snapshots, rate_grid
from .rdmd import SegmentSamplingError, reparametrize, rdmd
from .spectral import decompose, filter_band, spectrum
from .tv1d import InternalConsistencyError, evolve
from .tv2d import StallError, aniso_flow, spectral_bands_2d

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- option types, checked before any compute ------------------------------------------


def _positive(s: str) -> float:
    v = float(s)
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s!r}")
    return v


def _nonneg(s: str) -> float:
    v = float(s)
    if not (math.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {s!r}")
    return v


def _pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s!r}")
    return v


def _delta(s: str) -> float:
    v = float(s)
    if not 0 < v < 2:
        raise argparse.ArgumentTypeError(f"delta must lie in (0, 2), got {s!r}")
    return v


def _band(s: str) -> tuple[float, float]:
    """``LO:HI`` with ``HI`` possibly ``inf``."""
    try:
        lo_s, hi_s = s.split(":")
        lo, hi = float(lo_s), float(hi_s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must look like LO:HI, got {s!r}") from None
    if not (math.isfinite(lo) and lo >= 0 and hi > lo):
        raise argparse.ArgumentTypeError(f"band needs 0 <= LO < HI, got {s!r}")
    return lo, hi


# -- helpers ---------------------------------------------------------------------------


def _load_flow(path: str, tol: float):
    if path.lower().endswith(".json"):
        return io.flow_from_dict(io.read_json(path))
    return evolve(io.read_signal_csv(path), tol=tol)


def _resolve_bands(bands, percent: bool, T_end: float):
    if not percent:
        return list(bands)
    out = []
    for lo, hi in bands:
        out.append((T_end * lo / 100.0, np.nextafter(T_end * hi / 100.0, np.inf) if hi >= 100 else T_end * hi / 100.0))
    return out


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# -- subcommands -----------------------------------------------------------------------


def cmd_flow(args) -> int:
    f = io.read_signal_csv(args.input)
    flow = evolve(f, tol=args.tol)
    io.write_json(args.out, io.flow_to_dict(flow))
    _say(args, f"{flow.n_events} events, extinction at t={float(flow.extinction_time):.6g} -> {args.out}")
    if args.verify:
        cfg = BaselineConfig(dt=args.dt or 1e-3, record_every=max(1, int(round(0.01 / (args.dt or 1e-3)))))
        traj = baseline_flow(f, cfg)
        d = discrepancy(traj, flow)
        print(json.dumps({"verify_dt": cfg.dt, "discrepancy": d, "baseline_steps": traj.n_steps}))
        if d > args.verify_tol:
            print(f"verification failed: discrepancy {d:.3e} > {args.verify_tol:.1e}", file=sys.stderr)
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_spectrum(args) -> int:
    spec = decompose(_load_flow(args.input, args.tol))
    atoms = spectrum(spec)
    io.write_matrix_csv(args.out, np.array(atoms).reshape(-1, 2), header=["t", "mass"])
    if args.json:
        io.write_json(args.json, io.spectral_to_dict(spec))
    _say(args, f"{len(atoms)} atoms -> {args.out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    spec = decompose(_load_flow(args.input, args.tol))
    T_end = float(np.max(spec.times)) if len(spec) else 0.0
    bands = _resolve_bands(args.band, args.percent, T_end)
    cols = [filter_band(spec, lo, hi, include_mean=args.include_mean) for lo, hi in bands]
    if len(cols) == 1:
        io.write_signal_csv(args.out, cols[0])
    else:
        io.write_matrix_csv(args.out, np.array(cols, dtype=float).T)
    _say(args, f"{len(cols)} band(s) -> {args.out}")
    return EXIT_OK


def cmd_rdmd(args) -> int:
    flow = _load_flow(args.input, args.tol)
    spec = decompose(flow)
    segs = rdmd(np.asarray(flow.initial, dtype=float), dt=args.dt, tol=args.tol)
    out = {"segments": io.segments_to_list(segs)}
    if len(spec):
        rep = reparametrize(spec)
        out.update(
            lambdas=rep.lambdas.tolist(),
            a=rep.a.tolist(),
            c=rep.c.tolist(),
            taus=[io._maybe_inf(x) for x in rep.taus],
        )
    io.write_json(args.out, out)
    worst = max((s.reconstruction_error for s in segs), default=0.0)
    _say(args, f"{len(segs)} segments, worst reconstruction error {worst:.3e} -> {args.out}")
    return EXIT_OK


def cmd_kmd(args) -> int:
    flow = _load_flow(args.input, args.tol)
    spec = decompose(flow)
    if len(spec) == 0:
        io.write_json(args.out, {"lambdas": [], "modes": [], "residual": 0.0})
        return EXIT_OK
    T_end = float(np.max(spec.times))
    dt = args.dt or T_end / 200
    horizon = int(np.floor(1.1 * T_end / dt)) + 1
    lambdas = spec.lambdas if args.exact_rates else rate_grid(args.rate_max or 1.25 * T_end, args.n_rates)
    dic = build_dictionary(lambdas, dt, horizon)
    Psi = flow_snapshots(spec, dt, horizon)
    sparsity = args.sparsity or len(spec) + 1
    fitted = fit(Psi, dic, sparsity, threshold=args.threshold)
    io.write_json(args.out, io.fit_to_dict(fitted))
    _say(args, f"{fitted.active_lambdas.size} atoms, residual {fitted.residual:.3e} -> {args.out}")
    if fitted.ill_conditioned:
        print("warning: active set became ill-conditioned; fit stopped early", file=sys.stderr)
    return EXIT_OK


def cmd_flow2d(args) -> int:
    if args.input:
        img = io.read_image(args.input)
    else:
        h, w = args.random
        img = np.random.default_rng(args.seed).random((h, w))
    traj = aniso_flow(img, delta=args.delta, stop_ratio=args.stop_ratio, max_steps=args.max_steps, tol=args.tol)
    meta = {
        "delta": args.delta,
        "mean": traj.mean,
        "n_steps": traj.n_steps,
        "converged": traj.converged,
        "max_identity_defect": float(traj.identity_defect.max()) if traj.n_steps else 0.0,
    }
    io.write_trajectory(args.out, traj.times, traj.images, meta=meta)
    _say(args, f"{traj.n_steps} steps, {len(traj.times)} frames, converged={traj.converged} -> {args.out}")
    if not traj.converged:
        print("flow did not reach the stop ratio within --max-steps", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_bands2d(args) -> int:
    from .tv2d import AnisoTrajectory

    times, frames, index = io.read_trajectory(args.input)
    traj = AnisoTrajectory(
        delta=float(index.get("delta", 1.0)),
        mean=float(index.get("mean", frames[-1].mean())),
        times=times,
        images=frames,
        step_times=np.zeros(0),
        step_energy=np.zeros(0),
        step_norm2=np.zeros(0),
        identity_defect=np.zeros(0),
        converged=bool(index.get("converged", True)),
    )
    bands = _resolve_bands(args.band, args.percent, float(times[-1]))
    outdir = Path(args.out)
    names = []
    for i, (lo, hi) in enumerate(bands):
        (band,) = spectral_bands_2d(traj, [lo, hi], n_grid=args.n_grid)
        name = f"band_{i:02d}.csv"
        io.write_matrix_csv(outdir / name, band)
        names.append({"file": name, "lo": lo, "hi": io._maybe_inf(hi)})
    io.write_json(outdir / "bands.json", {"bands": names, "n_grid": args.n_grid})
    _say(args, f"{len(bands)} band(s) -> {outdir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.input:
        f = io.read_signal_csv(args.input)
    else:
        f = np.random.default_rng(args.seed).random(args.random)
    cfg = BENCH_CONFIG if args.dt is None else BaselineConfig(dt=args.dt, record_every=BENCH_CONFIG.record_every)
    report = benchmark(f, repeats=args.repeats, cfg=cfg, baseline_repeats=args.baseline_repeats)
    if args.out:
        io.atomic_write_text(args.out, report.to_json() + "\n")
    _say(args, report.table())
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def _shape(s: str) -> tuple[int, int]:
    try:
        h, w = (int(x) for x in s.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like HxW, got {s!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"shape must be positive, got {s!r}")
    return h, w


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--tol", type=_nonneg, default=0.0, help="plateau detection tolerance (default 0)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized inputs")
    common.add_argument("-q", "--quiet", action="store_true")

    p = _Parser(prog="tvflow", description="Exact 1D TV flow, spectral decomposition, DMD/KMD and 2D anisotropic flow.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("flow", parents=[common], help="event-driven flow of a CSV signal -> JSON")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--verify", action="store_true", help="cross-check against the implicit baseline")
    s.add_argument("--dt", type=_positive, help="baseline step for --verify (default 1e-3)")
    s.add_argument("--verify-tol", type=_positive, default=1e-3)
    s.set_defaults(func=cmd_flow)

    s = sub.add_parser("spectrum", parents=[common], help="spectrum atoms (t, mass) as CSV")
    s.add_argument("input", help="signal CSV or flow JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--json", help="also write the components as JSON")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("filter", parents=[common], help="band-pass filtered signal(s)")
    s.add_argument("input", help="signal CSV or flow JSON")
    s.add_argument("--band", type=_band, action="append", required=True, help="LO:HI, repeatable")
    s.add_argument("--percent", action="store_true", help="band edges are percent of the extinction time")
    s.add_argument("--include-mean", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("rdmd", parents=[common], help="rescaled DMD per segment -> JSON")
    s.add_argument("input", help="signal CSV or flow JSON")
    s.add_argument("--dt", type=_positive, help="rescaled-time sampling step")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rdmd)

    s = sub.add_parser("kmd", parents=[common], help="decay-profile fit -> JSON")
    s.add_argument("input", help="signal CSV or flow JSON")
    s.add_argument("--dt", type=_positive, help="snapshot spacing (default T_L/200)")
    s.add_argument("--sparsity", type=_pos_int, help="atom budget (default L+1)")
    s.add_argument("--threshold", type=_positive, default=1e-10)
    s.add_argument("--n-rates", type=_pos_int, default=400, help="size of the decay-rate grid")
    s.add_argument("--rate-max", type=_positive, help="largest extinction time on the grid")
    s.add_argument("--exact-rates", action="store_true", help="use the flow's own rates as dictionary")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_kmd)

    s = sub.add_parser("flow2d", parents=[common], help="anisotropic 2D flow -> trajectory directory")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("input", nargs="?", help="PGM or CSV image")
    src.add_argument("--random", type=_shape, help="random HxW image from --seed")
    s.add_argument("--delta", type=_delta, default=1.0)
    s.add_argument("--stop-ratio", type=_positive, default=1e-6)
    s.add_argument("--max-steps", type=_pos_int, default=100_000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_flow2d)

    s = sub.add_parser("bands2d", parents=[common], help="spectral bands of a stored 2D trajectory")
    s.add_argument("input", help="trajectory directory")
    s.add_argument("--band", type=_band, action="append", required=True)
    s.add_argument("--percent", action="store_true")
    s.add_argument("--n-grid", type=_pos_int, default=4096)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bands2d)

    s = sub.add_parser("bench", parents=[common], help="fast path vs baseline wall clock")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("input", nargs="?", help="signal CSV (length >= 64)")
    src.add_argument("--random", type=_pos_int, help="random signal of this length from --seed")
    s.add_argument("--repeats", type=_pos_int, default=5)
    s.add_argument("--baseline-repeats", type=_pos_int, default=1)
    s.add_argument("--dt", type=_positive, help=f"baseline step (default {BENCH_CONFIG.dt})")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except (io.ParseError, FileNotFoundError, IsADirectoryError, SegmentSamplingError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InternalConsistencyError, InnerSolveError, StallError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

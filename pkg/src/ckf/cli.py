"""Command-line interface: ``ckf fit | track | synth | inspect``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import checkpoint
from .belief import DriftMode, DriftScope, ModelConfig
from .errors import CKFError, ConfigError
from .harness import DEFAULT_WARMUP, OnlineRun, ingest, run_tracking, attach_logs
from .kernels import BACKENDS
from .probit import Partition, build_partition
from .synth import DriftSchedule, SynthSpec, generate


def parse_width(text: str, sigma: float) -> float:
    if text == "sigma":
        return sigma
    if text == "half-sigma":
        return sigma / 2.0
    try:
        w = float(text)
    except ValueError:
        raise ConfigError(f"--width must be sigma, half-sigma or a number, not {text!r}") from None
    if not w > 0:
        raise ConfigError("--width must be positive")
    return w


def parse_partition(text: str, width: float) -> Partition | None:
    """``stars:M`` (labels 1..M), ``grid:lo:hi:step`` or ``real`` (no partition)."""
    kind, _, rest = text.partition(":")
    if kind == "real" and not rest:
        return None
    if kind == "stars":
        try:
            m = int(rest)
        except ValueError:
            raise ConfigError(f"bad partition {text!r}; expected stars:M") from None
        return build_partition(m, width, [float(k) for k in range(1, m + 1)])
    if kind == "grid":
        try:
            lo, hi, step = (float(x) for x in rest.split(":"))
        except ValueError:
            raise ConfigError(f"bad partition {text!r}; expected grid:lo:hi:step") from None
        if not step > 0 or hi <= lo:
            raise ConfigError("grid partition needs lo < hi and step > 0")
        m = int(round((hi - lo) / step)) + 1
        if abs(lo + (m - 1) * step - hi) > 1e-9:
            raise ConfigError("grid step must divide hi - lo")
        return build_partition(m, width, [lo + k * step for k in range(m)])
    raise ConfigError(f"unknown partition {text!r}; use stars:M, grid:lo:hi:step or real")


def parse_drift(text: str) -> dict:
    """Map a ``--drift`` value to ModelConfig fields."""
    shared, entity = DriftScope.SHARED, DriftScope.ENTITY
    presets = {
        "none": dict(drift_mode=DriftMode.NONE),
        "shared": dict(drift_mode=DriftMode.GBM, row_scope=shared, col_scope=shared),
        "entity": dict(drift_mode=DriftMode.GBM, row_scope=entity, col_scope=entity),
        "mixed": dict(drift_mode=DriftMode.GBM, row_scope=entity, col_scope=shared),
    }
    if text in presets:
        return presets[text]
    if text.startswith("fixed:"):
        try:
            alpha = float(text[6:])
        except ValueError:
            raise ConfigError(f"bad drift {text!r}; expected fixed:ALPHA") from None
        return dict(drift_mode=DriftMode.FIXED, fixed_alpha=alpha)
    raise ConfigError(f"unknown drift {text!r}; use none, shared, entity, mixed or fixed:ALPHA")


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("CKF_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"CKF_SEED must be an integer, got {env!r}") from None
    return 0


def config_from_args(args) -> ModelConfig:
    width = parse_width(args.width, args.sigma)
    c_row = args.c_row if args.c_row is not None else args.c
    c_col = args.c_col if args.c_col is not None else args.c
    return ModelConfig(
        latent_dim=args.dim,
        obs_sigma=args.sigma,
        partition=parse_partition(args.partition, width),
        c_row=c_row,
        c_col=c_col,
        init_log_drift=args.a0,
        iters=args.iters,
        tol=args.tol,
        init_scale=args.init_scale,
        seed=resolve_seed(args.seed),
        **parse_drift(args.drift),
    )


def _model_flags(p, dim, sigma, partition, drift, c_row, c_col):
    g = p.add_argument_group("model")
    g.add_argument("--dim", type=int, default=dim, help="latent dimension")
    g.add_argument("--sigma", type=float, default=sigma, help="observation noise std")
    g.add_argument("--partition", default=partition, help="stars:M, grid:lo:hi:step or real")
    g.add_argument("--width", default="sigma", help="class width: sigma, half-sigma or a number")
    g.add_argument("--drift", default=drift, help="none, shared, entity, mixed (row entity, col shared) or fixed:ALPHA")
    g.add_argument("--c", type=float, default=0.0, help="log-drift variance rate for both sides")
    g.add_argument("--c-row", type=float, default=c_row, help="log-drift variance rate, rows")
    g.add_argument("--c-col", type=float, default=c_col, help="log-drift variance rate, columns")
    g.add_argument("--a0", type=float, default=-5.0, help="initial log drift")
    g.add_argument("--iters", type=int, default=5, help="coordinate-ascent sweeps per event")
    g.add_argument("--tol", type=float, default=1e-6, help="early-exit tolerance on the means")
    g.add_argument("--init-scale", type=float, default=1.0, help="std of the random initial means")
    g.add_argument("--seed", type=int, default=None, help="RNG seed (default: $CKF_SEED or 0)")
    g.add_argument("--backend", choices=sorted(BACKENDS), default=None, help="event kernel")
    p.add_argument("--input", required=True, help="event file: header, then row_key,col_key,t,value")
    p.add_argument("--time-unit", type=float, default=1.0, help="divide raw timestamps by this")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckf", description="Collaborative Kalman filtering of dyadic event streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="prequential fit of a rating-like stream")
    _model_flags(fit, dim=10, sigma=1.76, partition="stars:5", drift="shared", c_row=None, c_col=None)
    fit.add_argument("--warmup", type=int, default=DEFAULT_WARMUP, help="events both entities need before scoring")
    fit.add_argument("--resume", default=None, help="checkpoint to continue from; --input holds the later events")
    fit.set_defaults(func=cmd_fit)

    track = sub.add_parser("track", help="one-step tracking of real-valued series against one shared column")
    _model_flags(track, dim=5, sigma=0.01, partition="real", drift="mixed", c_row=0.05, c_col=0.0)
    track.add_argument("--burn-in", type=int, default=50, help="per-series events excluded from the summary")
    track.set_defaults(func=cmd_track)

    synth = sub.add_parser("synth", help="write a synthetic stream and its ground truth")
    synth.add_argument("--rows", type=int, default=50)
    synth.add_argument("--cols", type=int, default=20)
    synth.add_argument("--dim", type=int, default=5)
    synth.add_argument("--events", type=int, default=10000)
    synth.add_argument("--sigma", type=float, default=1.0)
    synth.add_argument("--partition", default="stars:5", help="stars:M, grid:lo:hi:step or real")
    synth.add_argument("--width", default="sigma")
    synth.add_argument("--alpha-row", default="0.01", help="rate, or alt:LO:HI:SEGMENT for alternating segments")
    synth.add_argument("--alpha-col", default="0.01", help="as --alpha-row")
    synth.add_argument("--init-scale", type=float, default=1.0)
    synth.add_argument("--dyad-rate", type=float, default=1.0, help="Poisson arrival rate per dyad")
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(func=cmd_synth)

    inspect = sub.add_parser("inspect", help="summarize a checkpoint")
    inspect.add_argument("checkpoint")
    inspect.set_defaults(func=cmd_inspect)
    return parser


def _open_log(path: Path, append: bool):
    exists = append and path.exists() and path.stat().st_size > 0
    return open(path, "a" if exists else "w", newline="", encoding="utf-8"), exists


def cmd_fit(args) -> int:
    config = config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        run = checkpoint.load(args.resume, config=config, warmup=args.warmup, backend=args.backend)
    else:
        run = OnlineRun(config, warmup=args.warmup, backend=args.backend)
    stream = ingest(args.input, config, rows=run.rows, cols=run.cols, time_unit=args.time_unit)
    pred_fh, pred_cont = _open_log(out / "predictions.csv", bool(args.resume))
    drift_fh, drift_cont = _open_log(out / "drift.csv", bool(args.resume))
    with pred_fh, drift_fh:
        attach_logs(run, pred_fh, drift_fh, header=(not pred_cont, not drift_cont))
        report = run.run(stream.events)
    metrics = report.to_dict()
    metrics["n_events"] = run.n_events
    (out / "metrics.txt").write_text(json.dumps(metrics, indent=1) + "\n", encoding="utf-8")
    checkpoint.save(run, out / "ckpt")
    rmse = "undefined" if report.rmse is None else f"{report.rmse:.6f}"
    print(f"events={run.n_events} scored={report.n_scored} skipped_warmup={report.n_skipped_warmup} rmse={rmse}")
    return 0


def cmd_track(args) -> int:
    config = config_from_args(args)
    if config.ordinal:
        raise ConfigError("track needs real-valued observations (--partition real)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = ingest(args.input, config, time_unit=args.time_unit)
    with open(out / "drift.csv", "w", newline="", encoding="utf-8") as drift_fh:
        report = run_tracking(stream, config, burn_in=args.burn_in, backend=args.backend, drift_log=drift_fh)
    with open(out / "errors.csv", "w", encoding="utf-8") as fh:
        fh.write("t,row,predicted,observed,error\n")
        for t, i, pred, obs, err, _ in report.errors:
            fh.write(f"{t!r},{stream.rows.keys[i]},{pred!r},{obs!r},{err!r}\n")
    (out / "tracking.txt").write_text(report.to_text(), encoding="utf-8")
    med = "undefined" if report.median_abs_error is None else f"{report.median_abs_error:.6g}"
    print(f"events={report.n_events} after_burn_in={report.n_after_burn_in} median_abs_error={med}")
    return 0


def parse_schedule(text: str) -> DriftSchedule:
    if text.startswith("alt:"):
        try:
            lo, hi, seg = (float(x) for x in text[4:].split(":"))
        except ValueError:
            raise ConfigError(f"bad schedule {text!r}; expected alt:LO:HI:SEGMENT") from None
        if not seg > 0:
            raise ConfigError("segment length must be positive")
        # enough segments for any horizon; the last rate would extend forever
        return DriftSchedule.alternating((lo, hi), seg, 100_000)
    try:
        return DriftSchedule.constant(float(text))
    except ValueError as exc:
        raise ConfigError(f"bad drift rate {text!r}: {exc}") from None


def cmd_synth(args) -> int:
    partition = parse_partition(args.partition, parse_width(args.width, args.sigma))
    spec = SynthSpec(
        n_rows=args.rows,
        n_cols=args.cols,
        latent_dim=args.dim,
        horizon=args.events,
        row_drift=parse_schedule(args.alpha_row),
        col_drift=parse_schedule(args.alpha_col),
        sigma=args.sigma,
        partition=partition,
        init_scale=args.init_scale,
        dyad_rate=args.dyad_rate,
        seed=resolve_seed(args.seed),
    )
    data = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "events.csv", "w", newline="", encoding="utf-8") as fh:
        data.write_csv(fh)
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        data.write_truth(fh)
    print(f"wrote {len(data.events)} events to {out / 'events.csv'}")
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(checkpoint.summary(args.checkpoint), indent=1))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CKFError, OSError, ValueError) as exc:
        print(f"ckf {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Throughput of the compiled event kernel against the pure-Python one.

Each case replays the same synthetic stream through a fresh engine per
backend, checks that the final means agree, and reports events per second.

    python benchmarks/bench_kernels.py [--events N] [--dims 5 10 20] [--repeat R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ckf import CollaborativeKalmanFilter, ModelConfig, Side, compiled_available
from ckf.synth import DriftSchedule, SynthSpec, generate, star_partition


def replay(events, config, backend):
    eng = CollaborativeKalmanFilter(config, backend=backend)
    t0 = time.perf_counter()
    for ev in events:
        eng.process_event(ev)
    return time.perf_counter() - t0, eng


def final_gap(a, b):
    gap = 0.0
    for side in Side:
        sa, sb = a.store.side(side), b.store.side(side)
        gap = max(gap, float(np.max(np.abs(sa.means[: sa.n] - sb.means[: sb.n]))))
    return gap


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--events", type=int, default=3000)
    parser.add_argument("--dims", type=int, nargs="+", default=[5, 10, 20])
    parser.add_argument("--repeat", type=int, default=3, help="best of R timings")
    args = parser.parse_args(argv)
    if not compiled_available():
        raise SystemExit("compiled kernel not built; run `pip install --no-build-isolation -e .` first")

    print(f"{'case':<22}{'python ev/s':>13}{'compiled ev/s':>15}{'speedup':>9}{'max |dmean|':>13}")
    for d in args.dims:
        for label, partition, drift in (
            ("ordinal gbm", star_partition(5, 1.0), "gbm"),
            ("ordinal none", star_partition(5, 1.0), "none"),
            ("real gbm", None, "gbm"),
        ):
            spec = SynthSpec(200, 100, d, args.events, DriftSchedule.constant(1e-2), DriftSchedule.constant(1e-2),
                             partition=partition, init_scale=0.7, seed=d)
            events = generate(spec).events
            config = ModelConfig(latent_dim=d, obs_sigma=1.0, partition=partition, drift_mode=drift, c_row=0.1, seed=d)
            best, engines = {}, {}
            for backend in ("python", "compiled"):
                times = []
                for _ in range(args.repeat):
                    dt, engines[backend] = replay(events, config, backend)
                    times.append(dt)
                best[backend] = min(times)
            py, cc = args.events / best["python"], args.events / best["compiled"]
            gap = final_gap(engines["python"], engines["compiled"])
            print(f"{f'd={d} {label}':<22}{py:>13.0f}{cc:>15.0f}{cc / py:>8.1f}x{gap:>13.1e}")


if __name__ == "__main__":
    main()

"""Event-stream ingestion and prequential (predict-then-update) evaluation."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .belief import EntityId, ModelConfig, Side
from .engine import CollaborativeKalmanFilter
from .errors import ConfigError, IngestError
from .inference import DyadEvent
from .probit import class_probs

BUCKET_WIDTH = 10
N_BUCKETS = 21  # 0, 10, ..., 190, 200+
DEFAULT_WARMUP = 200


@dataclass(frozen=True)
class EventRecord:
    row_key: str
    col_key: str
    t: float
    value: float


class Interner:
    """Stable string-key to index mapping, in first-seen order."""

    def __init__(self, keys: Iterable[str] = ()):
        self.keys: list[str] = []
        self.index: dict[str, int] = {}
        for k in keys:
            self.add(k)

    def add(self, key: str) -> int:
        i = self.index.get(key)
        if i is None:
            i = self.index[key] = len(self.keys)
            self.keys.append(key)
        return i

    def __len__(self):
        return len(self.keys)


def read_records(
    path, delimiter: str | None = None, time_unit: float = 1.0
) -> tuple[list[EventRecord], list[int]]:
    """Parse a delimited event file (header line required) into time-sorted records.

    Returns the records and their source line numbers.
    ``time_unit`` divides the raw timestamps, e.g. 86400 to turn epoch seconds
    into days.  Ties keep their file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise IngestError("missing header line", line=1)
        if delimiter is None:
            delimiter = "\t" if "\t" in header and "," not in header else ","
        if len(next(csv.reader([header], delimiter=delimiter))) < 4:
            raise IngestError("header must name four columns: row_key, col_key, t, value", line=1)
        records = []
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 4:
                raise IngestError(f"expected 4 fields, got {len(row)}", line=lineno)
            try:
                t = float(row[2]) / time_unit
                value = float(row[3])
            except ValueError as exc:
                raise IngestError(str(exc), line=lineno) from None
            if not math.isfinite(t) or not math.isfinite(value):
                raise IngestError("non-finite time or value", line=lineno)
            records.append((t, lineno, EventRecord(row[0].strip(), row[1].strip(), t, value)))
    records.sort(key=lambda r: (r[0], r[1]))
    return [r[2] for r in records], [r[1] for r in records]


@dataclass
class EventStream:
    events: list[DyadEvent]
    rows: Interner
    cols: Interner
    values: list[float]


def to_stream(
    records: Sequence[EventRecord],
    config: ModelConfig,
    rows: Interner | None = None,
    cols: Interner | None = None,
    lines: Sequence[int] | None = None,
) -> EventStream:
    rows = rows if rows is not None else Interner()
    cols = cols if cols is not None else Interner()
    events, values = [], []
    for n, rec in enumerate(records):
        if config.partition is not None:
            try:
                obs = config.partition.class_of_label(rec.value)
            except ValueError as exc:
                raise IngestError(str(exc), line=None if lines is None else lines[n]) from None
        else:
            obs = rec.value
        i, j = rows.add(rec.row_key), cols.add(rec.col_key)
        events.append(DyadEvent(EntityId(Side.ROW, i), EntityId(Side.COL, j), rec.t, obs))
        values.append(rec.value)
    return EventStream(events, rows, cols, values)


def ingest(
    path,
    config: ModelConfig,
    rows: Interner | None = None,
    cols: Interner | None = None,
    delimiter: str | None = None,
    time_unit: float = 1.0,
) -> EventStream:
    """Read, sort and intern an event file.

    In ordinal mode every value must sit within 1e-9 of a partition label.
    Pass the interners of a resumed run so keys keep their indices.
    """
    records, lines = read_records(path, delimiter=delimiter, time_unit=time_unit)
    return to_stream(records, config, rows, cols, lines)


def warmup_gate(counts, row: EntityId, col: EntityId, threshold: int = DEFAULT_WARMUP) -> bool:
    """True when both entities already have ``threshold`` processed events.

    ``counts`` is anything with a ``count(EntityId)`` method (a belief store)
    or a mapping from ``EntityId`` to counts.
    """
    if threshold <= 0:
        return True
    get = counts.count if hasattr(counts, "count") else (lambda e: counts.get(e, 0))
    return get(row) >= threshold and get(col) >= threshold


def bucket_of(count: int) -> int:
    return min(count // BUCKET_WIDTH, N_BUCKETS - 1)


@dataclass
class MetricsReport:
    rmse: float | None
    mae: float | None
    n_scored: int
    n_skipped_warmup: int
    bucket_rmse: list[list[float | None]]
    bucket_counts: list[list[int]]

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "n_scored": self.n_scored,
            "n_skipped_warmup": self.n_skipped_warmup,
            "bucket_width": BUCKET_WIDTH,
            "bucket_rmse": self.bucket_rmse,
            "bucket_counts": self.bucket_counts,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


class MetricsAccumulator:
    """Running prequential error sums.

    Bucket cells are disjoint by ``(row count // 10, col count // 10)``; the
    reported matrix is cumulative ("at least ``10 (m - 1)`` events").
    """

    def __init__(self):
        self.sum_sq = 0.0
        self.sum_abs = 0.0
        self.n_scored = 0
        self.n_skipped = 0
        self.bucket_sq = np.zeros((N_BUCKETS, N_BUCKETS))
        self.bucket_n = np.zeros((N_BUCKETS, N_BUCKETS), dtype=np.int64)

    def add(self, err: float, scored: bool, row_count: int, col_count: int) -> None:
        br, bc = bucket_of(row_count), bucket_of(col_count)
        self.bucket_sq[br, bc] += err * err
        self.bucket_n[br, bc] += 1
        if scored:
            self.sum_sq += err * err
            self.sum_abs += abs(err)
            self.n_scored += 1
        else:
            self.n_skipped += 1

    def report(self) -> MetricsReport:
        sq = self.bucket_sq[::-1, ::-1].cumsum(0).cumsum(1)[::-1, ::-1]
        n = self.bucket_n[::-1, ::-1].cumsum(0).cumsum(1)[::-1, ::-1]
        grid = [[math.sqrt(sq[a, b] / n[a, b]) if n[a, b] else None for b in range(N_BUCKETS)] for a in range(N_BUCKETS)]
        if self.n_scored:
            rmse = math.sqrt(self.sum_sq / self.n_scored)
            mae = self.sum_abs / self.n_scored
        else:
            rmse = mae = None
        return MetricsReport(rmse, mae, self.n_scored, self.n_skipped, grid, n.tolist())

    def state(self) -> dict:
        return {
            "scalars": [self.sum_sq, self.sum_abs],
            "counts": [self.n_scored, self.n_skipped],
            "bucket_sq": self.bucket_sq,
            "bucket_n": self.bucket_n,
        }

    @classmethod
    def from_state(cls, st: dict) -> "MetricsAccumulator":
        m = cls()
        m.sum_sq, m.sum_abs = (float(x) for x in st["scalars"])
        m.n_scored, m.n_skipped = (int(x) for x in st["counts"])
        m.bucket_sq = np.array(st["bucket_sq"], dtype=float)
        m.bucket_n = np.array(st["bucket_n"], dtype=np.int64)
        return m


@dataclass
class TrackingReport:
    n_events: int
    n_after_burn_in: int
    median_abs_error: float | None
    rmse: float | None
    histogram: dict[int, int]
    errors: list[tuple] = field(repr=False, default_factory=list)

    def to_text(self) -> str:
        out = {
            "n_events": self.n_events,
            "n_after_burn_in": self.n_after_burn_in,
            "median_abs_error": self.median_abs_error,
            "rmse": self.rmse,
            "log2_abs_error_histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }
        return json.dumps(out, indent=1) + "\n"


def log2_histogram(errors: Iterable[float]) -> dict[int, int]:
    """Counts of ``floor(log2 |e|)``; exact zeros are dropped."""
    c = Counter(math.floor(math.log2(abs(e))) for e in errors if e != 0.0)
    return dict(sorted(c.items()))


class OnlineRun:
    """Prequential driver: predict each event, score it, then learn from it.

    Holds everything a resumable run needs (engine, interners, metric sums),
    which is what a checkpoint stores.
    """

    def __init__(
        self,
        config: ModelConfig,
        warmup: int = DEFAULT_WARMUP,
        backend: str | None = None,
        engine: CollaborativeKalmanFilter | None = None,
        rows: Interner | None = None,
        cols: Interner | None = None,
        metrics: MetricsAccumulator | None = None,
        n_events: int = 0,
    ):
        self.config = config
        self.warmup = warmup
        self.engine = engine if engine is not None else CollaborativeKalmanFilter(config, backend=backend)
        self.rows = rows if rows is not None else Interner()
        self.cols = cols if cols is not None else Interner()
        self.metrics = metrics if metrics is not None else MetricsAccumulator()
        self.n_events = n_events
        self.prediction_log = None
        self.drift_log = None
        self.errors: list[tuple] | None = None
        self.drift_sides = (Side.ROW, Side.COL)
        self._labels = np.asarray(config.partition.labels) if config.ordinal else None

    def predict(self, event: DyadEvent) -> float:
        store = self.engine.store
        mu_u = store.side(Side.ROW).means[event.row.index]
        mu_w = store.side(Side.COL).means[event.col.index]
        dot = float(mu_u @ mu_w)
        if self._labels is None:
            return dot
        return float(self._labels @ class_probs(dot, self.config.obs_sigma, self.config.partition))

    def observed_value(self, event: DyadEvent) -> float:
        if self._labels is None:
            return float(event.obs)
        return float(self._labels[int(event.obs) - 1])

    def process_name(self, eid: EntityId) -> str:
        if self.engine.config.scope(eid.side).value == "shared":
            return f"{eid.side.value}:*"
        keys = self.rows.keys if eid.side is Side.ROW else self.cols.keys
        return f"{eid.side.value}:{keys[eid.index]}"

    def step(self, event: DyadEvent) -> float:
        eng = self.engine
        eng.ensure(event.row, event.t)
        eng.ensure(event.col, event.t)
        pred = self.predict(event)
        observed = self.observed_value(event)
        store = eng.store
        rc, cc = store.count(event.row), store.count(event.col)
        scored = warmup_gate(store, event.row, event.col, self.warmup)
        err = pred - observed
        self.metrics.add(err, scored, rc, cc)
        diag = eng.process_event(event)
        self.n_events += 1
        if self.prediction_log is not None:
            self.prediction_log.writerow(
                [repr(event.t), self.rows.keys[event.row.index], self.cols.keys[event.col.index],
                 repr(pred), repr(observed), int(scored)]
            )
        if self.errors is not None:
            self.errors.append((event.t, event.row.index, pred, observed, err, rc))
        if self.drift_log is not None:
            for eid, proc in diag.drift_updates:
                if eid.side not in self.drift_sides:
                    continue
                self.drift_log.writerow([self.process_name(eid), repr(event.t), repr(proc.a), repr(math.exp(proc.a))])
        return pred

    def run(self, events: Iterable[DyadEvent]) -> MetricsReport:
        for ev in events:
            self.step(ev)
        return self.metrics.report()


PREDICTION_HEADER = ["t", "row", "col", "predicted", "observed", "scored"]
DRIFT_HEADER = ["process", "t", "a", "exp_a"]


def run_online(
    stream: EventStream | Sequence[DyadEvent],
    config: ModelConfig,
    warmup: int = DEFAULT_WARMUP,
    backend: str | None = None,
    prediction_log=None,
    drift_log=None,
) -> MetricsReport:
    """Prequential evaluation of a whole stream from a fresh engine.

    ``prediction_log`` / ``drift_log`` are optional text handles; CSV rows
    (with header) are written to them.
    """
    run = OnlineRun(config, warmup=warmup, backend=backend)
    events = stream.events if isinstance(stream, EventStream) else stream
    if isinstance(stream, EventStream):
        run.rows, run.cols = stream.rows, stream.cols
    else:
        run.rows = Interner(str(i) for i in range(1 + max((e.row.index for e in events), default=-1)))
        run.cols = Interner(str(i) for i in range(1 + max((e.col.index for e in events), default=-1)))
    attach_logs(run, prediction_log, drift_log)
    return run.run(events)


def attach_logs(run: OnlineRun, prediction_log=None, drift_log=None, header=(True, True)) -> None:
    """Route a run's per-event CSV output to open text handles."""
    if prediction_log is not None:
        run.prediction_log = csv.writer(prediction_log, lineterminator="\n")
        if header[0]:
            run.prediction_log.writerow(PREDICTION_HEADER)
    if drift_log is not None:
        run.drift_log = csv.writer(drift_log, lineterminator="\n")
        if header[1]:
            run.drift_log.writerow(DRIFT_HEADER)


def tracking_report(errors: Sequence[tuple], burn_in: int) -> TrackingReport:
    errs = [e[4] for e in errors]
    late = np.array([abs(e[4]) for e in errors if e[5] >= burn_in])
    return TrackingReport(
        n_events=len(errs),
        n_after_burn_in=int(late.size),
        median_abs_error=float(np.median(late)) if late.size else None,
        rmse=float(np.sqrt(np.mean(late**2))) if late.size else None,
        histogram=log2_histogram(errs),
        errors=list(errors),
    )


def run_tracking(
    stream: EventStream,
    config: ModelConfig,
    burn_in: int = 50,
    backend: str | None = None,
    drift_log=None,
) -> TrackingReport:
    """One-step-ahead tracking of observed series against a single shared column.

    Errors are summarized over events whose row entity has at least
    ``burn_in`` earlier events.  The drift log gets the row processes only.
    """
    if config.ordinal:
        raise ConfigError("tracking needs observed-y (real-valued) mode")
    if len(stream.cols) > 1:
        raise ConfigError(f"tracking uses one state-of-the-world column, found {len(stream.cols)} column keys")
    run = OnlineRun(config, warmup=0, backend=backend)
    run.rows, run.cols = stream.rows, stream.cols
    run.errors = []
    run.drift_sides = (Side.ROW,)
    attach_logs(run, None, drift_log)
    run.run(stream.events)
    return tracking_report(run.errors, burn_in)

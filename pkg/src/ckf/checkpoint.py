"""Binary checkpoints of a prequential run.

Layout (all integers little-endian)::

    magic      8 bytes  b"CKFCKPT\\0"
    version    uint32
    hdr_len    uint64
    header     hdr_len bytes of JSON (sorted keys)
    arrays     raw little-endian buffers, in header order
    digest     32 bytes, SHA-256 of everything above

The header carries the model configuration, its fingerprint, entity keys,
drift processes, the generator state and scalar metric sums; the arrays hold
beliefs, counts and the bucket accumulators.  Writing is deterministic, so a
save -> load -> save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .belief import ModelConfig, Side
from .drift import DriftProcess
from .engine import CollaborativeKalmanFilter
from .errors import CheckpointError
from .harness import Interner, MetricsAccumulator, OnlineRun

MAGIC = b"CKFCKPT\0"
FORMAT_VERSION = 1
_DIGEST = 32
_PREFIX = struct.Struct("<8sIQ")


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_fingerprint(config: ModelConfig, warmup: int) -> str:
    """Hash of everything that changes the meaning of a saved state."""
    return hashlib.sha256(_canonical({"config": config.to_dict(), "warmup": int(warmup)})).hexdigest()


def _drift_record(side: str, index, proc: DriftProcess) -> dict:
    return {
        "side": side,
        "index": index,
        "scope": proc.scope,
        "a": proc.a,
        "c": proc.c,
        "last_time": proc.last_time,
        "updates": proc.updates,
    }


def _arrays(run: OnlineRun) -> list[tuple[str, np.ndarray]]:
    out = []
    for side in Side:
        s = run.engine.store.side(side)
        n = s.n
        out += [
            (f"{side.value}.means", s.means[:n]),
            (f"{side.value}.covs", s.covs[:n]),
            (f"{side.value}.last_time", s.last_time[:n]),
            (f"{side.value}.counts", s.counts[:n]),
            (f"{side.value}.frozen", s.frozen[:n].astype(np.uint8)),
        ]
    out += [("metrics.bucket_sq", run.metrics.bucket_sq), ("metrics.bucket_n", run.metrics.bucket_n)]
    return out


_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8"), "u1": np.dtype("u1")}


def _dtype_code(a: np.ndarray) -> str:
    if a.dtype.kind == "f":
        return "f8"
    if a.dtype.kind in "iu" and a.dtype.itemsize == 8:
        return "i8"
    return "u1"


def dumps(run: OnlineRun) -> bytes:
    eng = run.engine
    drifts = []
    for side in Side:
        for k, proc in enumerate(eng.entity_drifts[side]):
            drifts.append(_drift_record(side.value, k, proc))
        if eng.shared_drifts[side] is not None:
            drifts.append(_drift_record(side.value, None, eng.shared_drifts[side]))
    manifest, blobs = [], []
    for name, arr in _arrays(run):
        code = _dtype_code(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        manifest.append({"name": name, "dtype": code, "shape": list(data.shape)})
        blobs.append(data.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "fingerprint": config_fingerprint(run.config, run.warmup),
        "config": run.config.to_dict(),
        "warmup": run.warmup,
        "n_events": run.n_events,
        "row_keys": run.rows.keys,
        "col_keys": run.cols.keys,
        "drifts": drifts,
        "rng_state": eng.rng.bit_generator.state,
        "metrics": {
            "sum_sq": run.metrics.sum_sq,
            "sum_abs": run.metrics.sum_abs,
            "n_scored": run.metrics.n_scored,
            "n_skipped": run.metrics.n_skipped,
        },
        "arrays": manifest,
    }
    hdr = _canonical(header)
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hdr)) + hdr + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save(run: OnlineRun, path) -> None:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(run))
    os.replace(tmp, path)


def read_header(data: bytes) -> tuple[dict, int]:
    """Validate framing and checksum; return the header and the array offset."""
    if len(data) < _PREFIX.size + _DIGEST:
        raise CheckpointError("checkpoint truncated")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    magic, version, hdr_len = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint corrupted or truncated")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version} (expected {FORMAT_VERSION})")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + hdr_len].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {header.get('format_version')}")
    return header, start + hdr_len


def _read_arrays(data: bytes, header: dict, offset: int) -> dict[str, np.ndarray]:
    out = {}
    end = len(data) - _DIGEST
    for item in header["arrays"]:
        dt = _DTYPES[item["dtype"]]
        count = int(np.prod(item["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > end:
            raise CheckpointError(f"array {item['name']} runs past end of file")
        out[item["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(item["shape"]).copy()
        offset += nbytes
    if offset != end:
        raise CheckpointError("trailing bytes after array section")
    return out


def loads(data: bytes, config: ModelConfig | None = None, warmup: int | None = None, backend: str | None = None) -> OnlineRun:
    """Rebuild a run.  If ``config`` / ``warmup`` are given they must match the saved ones."""
    header, offset = read_header(data)
    saved_config = ModelConfig.from_dict(header["config"])
    saved_warmup = int(header["warmup"])
    fp = config_fingerprint(saved_config, saved_warmup)
    if fp != header["fingerprint"]:
        raise CheckpointError("stored fingerprint does not match stored configuration")
    if config is not None or warmup is not None:
        want = config_fingerprint(
            config if config is not None else saved_config, warmup if warmup is not None else saved_warmup
        )
        if want != fp:
            raise CheckpointError("configuration fingerprint mismatch: checkpoint was written with different settings")
    arrays = _read_arrays(data, header, offset)

    eng = CollaborativeKalmanFilter(saved_config, backend=backend)
    for side in Side:
        s = eng.store.side(side)
        means = arrays[f"{side.value}.means"]
        n = means.shape[0]
        s._alloc(max(16, n))
        s.n = n
        s.means[:n] = means
        s.covs[:n] = arrays[f"{side.value}.covs"]
        s.last_time[:n] = arrays[f"{side.value}.last_time"]
        s.counts[:n] = arrays[f"{side.value}.counts"]
        s.frozen[:n] = arrays[f"{side.value}.frozen"].astype(bool)
    for rec in header["drifts"]:
        side = Side(rec["side"])
        proc = DriftProcess(float(rec["a"]), float(rec["c"]), float(rec["last_time"]), rec["scope"], int(rec["updates"]))
        if rec["index"] is None:
            eng.shared_drifts[side] = proc
        else:
            eng.entity_drifts[side].append(proc)
    eng.rng.bit_generator.state = header["rng_state"]

    m = header["metrics"]
    metrics = MetricsAccumulator.from_state(
        {
            "scalars": [m["sum_sq"], m["sum_abs"]],
            "counts": [m["n_scored"], m["n_skipped"]],
            "bucket_sq": arrays["metrics.bucket_sq"],
            "bucket_n": arrays["metrics.bucket_n"],
        }
    )
    return OnlineRun(
        saved_config,
        warmup=saved_warmup,
        engine=eng,
        rows=Interner(header["row_keys"]),
        cols=Interner(header["col_keys"]),
        metrics=metrics,
        n_events=int(header["n_events"]),
    )


def load(path, config: ModelConfig | None = None, warmup: int | None = None, backend: str | None = None) -> OnlineRun:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    return loads(data, config=config, warmup=warmup, backend=backend)


def summary(path) -> dict:
    """Entity counts, covariance traces and drift values of a checkpoint."""
    data = Path(path).read_bytes()
    header, offset = read_header(data)
    arrays = _read_arrays(data, header, offset)
    out = {
        "format_version": header["format_version"],
        "fingerprint": header["fingerprint"],
        "n_events": header["n_events"],
        "config": header["config"],
    }
    for side in Side:
        covs = arrays[f"{side.value}.covs"]
        traces = np.trace(covs, axis1=1, axis2=2) if covs.shape[0] else np.zeros(0)
        out[side.value] = {
            "n_entities": int(covs.shape[0]),
            "n_frozen": int(arrays[f"{side.value}.frozen"].sum()),
            "cov_trace_min": float(traces.min()) if traces.size else None,
            "cov_trace_median": float(np.median(traces)) if traces.size else None,
            "cov_trace_max": float(traces.max()) if traces.size else None,
        }
    out["drifts"] = [
        {"side": d["side"], "index": d["index"], "a": d["a"], "exp_a": float(np.exp(d["a"])), "updates": d["updates"]}
        for d in header["drifts"]
    ]
    return out

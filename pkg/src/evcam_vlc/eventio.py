"""Event stream persistence: a fixed-record binary format and CSV.

Binary layout: 8-byte magic ``EVLC0001`` followed by 16-byte little-endian
records ``t:u64 (us), x:u16, y:u16, p:i8, pad:u8[3]``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .channel_sim import EVENT_DTYPE, SENSOR_H, SENSOR_W, sort_events
from .errors import EventFileError

MAGIC = b"EVLC0001"
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1", (3,))])
assert RECORD_DTYPE.itemsize == 16
CSV_HEADER = "t_us,x,y,p"


def _is_sorted(ev) -> bool:
    return bool(np.all(np.diff(ev["t"]) >= 0)) if ev.size > 1 else True


def _prepare(ev: np.ndarray) -> np.ndarray:
    ev = np.asarray(ev, dtype=EVENT_DTYPE)
    if ev.size and (ev["t"].min() < 0):
        raise ValueError("event timestamps must be non-negative")
    return ev if _is_sorted(ev) else sort_events(ev)


def write_events(ev: np.ndarray, path, fmt: str | None = None) -> Path:
    """Write events; unsorted input is sorted by (t, y, x) first."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    ev = _prepare(ev)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            if ev.size:
                data = np.stack([ev["t"], ev["x"], ev["y"], ev["p"]], axis=1).astype(np.int64)
                np.savetxt(fh, data, fmt="%d", delimiter=",")
    elif fmt == "bin":
        rec = np.zeros(ev.size, dtype=RECORD_DTYPE)
        for name in ("t", "x", "y", "p"):
            rec[name] = ev[name]
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(rec.tobytes())
    else:
        raise ValueError(f"unknown event format {fmt!r}")
    return path


def _validate(ev, offset_of):
    bad = np.flatnonzero((ev["p"] != 1) & (ev["p"] != -1))
    if bad.size:
        raise EventFileError(f"invalid polarity {int(ev['p'][bad[0]])}", offset_of(bad[0]))
    bad = np.flatnonzero((ev["x"] >= SENSOR_W) | (ev["y"] >= SENSOR_H))
    if bad.size:
        raise EventFileError("pixel coordinate outside sensor", offset_of(bad[0]))
    if ev.size > 1:
        bad = np.flatnonzero(np.diff(ev["t"]) < 0)
        if bad.size:
            raise EventFileError("timestamps not monotonic", offset_of(bad[0] + 1))


def _read_bin(raw: bytes) -> np.ndarray:
    if raw[: len(MAGIC)] != MAGIC:
        raise EventFileError("bad magic, expected EVLC0001", 0)
    body = raw[len(MAGIC):]
    n, rem = divmod(len(body), RECORD_DTYPE.itemsize)
    if rem:
        raise EventFileError("truncated record", len(MAGIC) + n * RECORD_DTYPE.itemsize)
    rec = np.frombuffer(body, dtype=RECORD_DTYPE, count=n)
    if n and rec["t"].max() > np.iinfo(np.int64).max:
        bad = int(np.argmax(rec["t"] > np.iinfo(np.int64).max))
        raise EventFileError("timestamp overflow", len(MAGIC) + bad * 16)
    ev = np.empty(n, dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = rec[name]
    _validate(ev, lambda i: len(MAGIC) + int(i) * RECORD_DTYPE.itemsize)
    return ev


def _read_csv(raw: bytes) -> np.ndarray:
    text = raw.decode("ascii", errors="strict")
    lines = text.splitlines(keepends=True)
    if not lines or lines[0].strip() != CSV_HEADER:
        raise EventFileError(f"missing CSV header {CSV_HEADER!r}", 0)
    offsets = np.cumsum([0] + [len(l) for l in lines])
    rows = []
    for i, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        try:
            if len(parts) != 4:
                raise ValueError
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])))
        except ValueError:
            raise EventFileError(f"malformed CSV row {line.strip()!r}", int(offsets[i])) from None
    row_lines = [i for i, l in enumerate(lines) if i > 0 and l.strip()]
    data = np.array(rows, dtype=np.int64).reshape(-1, 4)
    offset_of = lambda k: int(offsets[row_lines[int(k)]])
    if data.size:
        bad = np.flatnonzero((data[:, 0] < 0) | (data[:, 1] < 0) | (data[:, 2] < 0)
                             | (data[:, 1] >= SENSOR_W) | (data[:, 2] >= SENSOR_H))
        if bad.size:
            raise EventFileError("negative or out-of-range field", offset_of(bad[0]))
    ev = np.empty(len(rows), dtype=EVENT_DTYPE)
    ev["t"], ev["x"], ev["y"] = data[:, 0], data[:, 1], data[:, 2]
    ev["p"] = np.clip(data[:, 3], -128, 127)
    _validate(ev, offset_of)
    return ev


def read_events(path, fmt: str | None = None) -> np.ndarray:
    """Read and validate an event file; raises :class:`EventFileError` with a byte offset."""
    path = Path(path)
    raw = path.read_bytes()
    if fmt is None:
        fmt = "bin" if raw[: len(MAGIC)] == MAGIC else ("csv" if path.suffix.lower() == ".csv" else "bin")
    if fmt == "bin":
        return _read_bin(raw)
    if fmt == "csv":
        try:
            return _read_csv(raw)
        except UnicodeDecodeError as exc:
            raise EventFileError("non-ASCII byte in CSV", exc.start) from None
    raise ValueError(f"unknown event format {fmt!r}")


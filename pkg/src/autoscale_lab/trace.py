"""Azure-Functions-style invocation traces and per-second arrival schedules.

The public Azure 2019 release stores one CSV per day with one row per
function and 1440 per-minute invocation columns named "1".."1440".  The
simulator runs on 1 s ticks, so every trace is expanded into an
:class:`ArrivalSchedule` before use.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

MINUTES_PER_DAY = 1440
TICKS_PER_MINUTE = 60
DEFAULT_TICK_CAP = 10_000


class TraceFormatError(ValueError):
    """Malformed trace input.  ``row`` is the 1-based line number (header = 1)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TraceSchema:
    id_column: str = "HashFunction"
    minute_columns: tuple[str, ...] = tuple(str(i) for i in range(1, MINUTES_PER_DAY + 1))
    delimiter: str = ","
    # columns written before the id column when serializing (Azure layout)
    extra_columns: tuple[str, ...] = ("HashOwner", "HashApp")
    trigger_column: str | None = "Trigger"


AZURE_2019 = TraceSchema()


@dataclass(frozen=True)
class MinuteTrace:
    function_id: str
    day_index: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if not self.function_id:
            raise ValueError("function_id must be non-empty")
        if self.day_index < 0:
            raise ValueError("day_index must be non-negative")
        if len(self.counts) != MINUTES_PER_DAY:
            raise ValueError(f"expected {MINUTES_PER_DAY} minute counts, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise ValueError("minute counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True, eq=False)
class ArrivalSchedule:
    """Arrivals per 1 s tick.  ``ticks`` is a read-only int64 array."""

    ticks: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        arr = np.array(self.ticks, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("ticks must be one-dimensional")
        if (arr < 0).any():
            raise ValueError("arrival counts must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "ticks", arr)

    def __len__(self) -> int:
        return len(self.ticks)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArrivalSchedule):
            return NotImplemented
        return self.source_id == other.source_id and np.array_equal(self.ticks, other.ticks)

    def window(self, start: int, length: int) -> "ArrivalSchedule":
        if start < 0 or start + length > len(self):
            raise ValueError(f"window [{start}, {start + length}) outside schedule of {len(self)} ticks")
        return ArrivalSchedule(self.ticks[start:start + length], f"{self.source_id}@{start}")

    def minute_sums(self) -> np.ndarray:
        n = len(self) // TICKS_PER_MINUTE
        return self.ticks[: n * TICKS_PER_MINUTE].reshape(n, TICKS_PER_MINUTE).sum(axis=1)

    def to_csv(self, stream: TextIO) -> None:
        stream.write("tick_index,arrivals\n")
        for i, a in enumerate(self.ticks.tolist()):
            stream.write(f"{i},{a}\n")

    @classmethod
    def from_csv(cls, stream: TextIO, source_id: str = "") -> "ArrivalSchedule":
        reader = csv.reader(stream)
        header = next(reader, None)
        if header != ["tick_index", "arrivals"]:
            raise TraceFormatError("expected header 'tick_index,arrivals'", 1)
        ticks = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise TraceFormatError(f"expected 2 columns, got {len(row)}", lineno)
            try:
                idx, a = int(row[0]), int(row[1])
            except ValueError:
                raise TraceFormatError("non-integer field", lineno) from None
            if idx != len(ticks):
                raise TraceFormatError(f"tick_index {idx} out of sequence", lineno)
            if a < 0:
                raise TraceFormatError("negative arrival count", lineno)
            ticks.append(a)
        return cls(np.array(ticks, dtype=np.int64), source_id)


def _parse_count(text: str, lineno: int, column: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise TraceFormatError(f"non-integer count {text!r} in column {column!r}", lineno) from None
    if value < 0:
        raise TraceFormatError(f"negative count {value} in column {column!r}", lineno)
    return value


def parse_trace(source: TextIO, schema: TraceSchema = AZURE_2019, day_index: int = 0) -> list[MinuteTrace]:
    """Parse one day of per-minute invocation counts.

    Raises :class:`TraceFormatError` naming the offending row for a missing
    header, a wrong column count, or a non-integer / negative count.
    """
    reader = csv.reader(source, delimiter=schema.delimiter)
    header = next(reader, None)
    if not header:
        raise TraceFormatError("missing header row", 1)
    positions = {name: i for i, name in enumerate(header)}
    missing = [c for c in (schema.id_column, *schema.minute_columns) if c not in positions]
    if missing:
        shown = ", ".join(repr(c) for c in missing[:3])
        raise TraceFormatError(f"header lacks {len(missing)} required column(s): {shown}", 1)
    id_pos = positions[schema.id_column]
    minute_pos = [positions[c] for c in schema.minute_columns]

    traces = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise TraceFormatError(f"expected {len(header)} columns, got {len(row)}", lineno)
        fid = row[id_pos].strip()
        if not fid:
            raise TraceFormatError("empty function id", lineno)
        counts = tuple(_parse_count(row[p], lineno, schema.minute_columns[k]) for k, p in enumerate(minute_pos))
        traces.append(MinuteTrace(fid, day_index, counts))
    return traces


def write_trace(traces: Iterable[MinuteTrace], stream: TextIO, schema: TraceSchema = AZURE_2019) -> None:
    """Serialize traces as an Azure-layout CSV readable by :func:`parse_trace`."""
    writer = csv.writer(stream, delimiter=schema.delimiter, lineterminator="\n")
    lead = list(schema.extra_columns) + [schema.id_column]
    if schema.trigger_column:
        lead.append(schema.trigger_column)
    writer.writerow(lead + list(schema.minute_columns))
    for t in traces:
        row = ["-"] * len(schema.extra_columns) + [t.function_id]
        if schema.trigger_column:
            row.append("http")
        writer.writerow(row + [str(c) for c in t.counts])


def select_function(traces: Sequence[MinuteTrace], *, function_id: str | None = None,
                    rank: int | None = None) -> MinuteTrace:
    """Pick one trace by exact id or by 1-based rank of total volume.

    Rank ties are broken by lexicographic function_id.  When several days of
    the same function are present, an id match returns the earliest day.
    """
    if not traces:
        raise ValueError("no traces to select from")
    if (function_id is None) == (rank is None):
        raise ValueError("give exactly one of function_id or rank")
    if function_id is not None:
        matches = [t for t in traces if t.function_id == function_id]
        if not matches:
            raise KeyError(f"no trace with function_id {function_id!r}")
        return min(matches, key=lambda t: t.day_index)
    ordered = sorted(traces, key=lambda t: (-t.total, t.function_id, t.day_index))
    if not 1 <= rank <= len(ordered):
        raise IndexError(f"rank {rank} out of range 1..{len(ordered)}")
    return ordered[rank - 1]


def expand_to_seconds(trace: MinuteTrace, mode: str = "uniform", seed: int = 0,
                      tick_cap: int = DEFAULT_TICK_CAP) -> ArrivalSchedule:
    """Spread per-minute counts over 60 one-second ticks.

    uniform: ``c // 60`` per tick plus one extra on the first ``c % 60``
    ticks of the minute (exact conservation).  poisson: each tick draws
    Poisson(c / 60) from a generator seeded with ``seed``.
    """
    counts = np.asarray(trace.counts, dtype=np.int64)
    if mode == "uniform":
        base = np.repeat(counts // TICKS_PER_MINUTE, TICKS_PER_MINUTE).reshape(-1, TICKS_PER_MINUTE)
        extra = np.arange(TICKS_PER_MINUTE)[None, :] < (counts % TICKS_PER_MINUTE)[:, None]
        ticks = (base + extra).ravel()
    elif mode == "poisson":
        rng = np.random.default_rng(seed)
        ticks = rng.poisson(np.repeat(counts / TICKS_PER_MINUTE, TICKS_PER_MINUTE)).astype(np.int64)
    else:
        raise ValueError(f"unknown expansion mode {mode!r}")
    np.minimum(ticks, tick_cap, out=ticks)
    return ArrivalSchedule(ticks, f"{trace.function_id}/d{trace.day_index}")


def expand_days(traces: Sequence[MinuteTrace], mode: str = "uniform", seed: int = 0,
                tick_cap: int = DEFAULT_TICK_CAP) -> ArrivalSchedule:
    """Concatenate several days of one function in day order."""
    if not traces:
        raise ValueError("no traces to expand")
    ids = {t.function_id for t in traces}
    if len(ids) != 1:
        raise ValueError(f"expected a single function_id, got {sorted(ids)}")
    ordered = sorted(traces, key=lambda t: t.day_index)
    # each day gets its own stream so adding a day never changes earlier ones
    parts = [expand_to_seconds(t, mode, seed + t.day_index, tick_cap).ticks for t in ordered]
    return ArrivalSchedule(np.concatenate(parts), f"{ordered[0].function_id}/d{ordered[0].day_index}-{ordered[-1].day_index}")


# -- synthetic schedules -----------------------------------------------------

@dataclass(frozen=True)
class Constant:
    rate: float


@dataclass(frozen=True)
class Sinusoid:
    base: float
    amplitude: float
    period: float


@dataclass(frozen=True)
class Step:
    """Piecewise-constant rate; ``segments`` holds (start_s, rate) pairs sorted by start."""

    segments: tuple[tuple[int, float], ...]


def _rates(pattern, length_s: int) -> np.ndarray:
    t = np.arange(length_s, dtype=np.float64)
    if isinstance(pattern, Constant):
        if pattern.rate < 0:
            raise ValueError("rate must be non-negative")
        return np.full(length_s, float(pattern.rate))
    if isinstance(pattern, Sinusoid):
        if pattern.base < 0 or pattern.amplitude < 0 or pattern.period <= 0:
            raise ValueError("sinusoid needs base, amplitude >= 0 and period > 0")
        if pattern.amplitude > pattern.base:
            raise ValueError("amplitude must not exceed base")
        return pattern.base + pattern.amplitude * np.sin(2 * math.pi * t / pattern.period)
    if isinstance(pattern, Step):
        if not pattern.segments or pattern.segments[0][0] != 0:
            raise ValueError("step profile must start at t=0")
        rates = np.empty(length_s)
        starts = [s for s, _ in pattern.segments]
        if starts != sorted(starts):
            raise ValueError("step segments must be sorted by start")
        for k, (start, rate) in enumerate(pattern.segments):
            if rate < 0:
                raise ValueError("rate must be non-negative")
            end = pattern.segments[k + 1][0] if k + 1 < len(pattern.segments) else length_s
            rates[start:end] = rate
        return rates
    raise TypeError(f"unknown pattern {pattern!r}")


def synth_schedule(pattern, length_s: int, seed: int = 0, jitter: bool = False) -> ArrivalSchedule:
    """Controlled workload: per-tick count = rate rounded half-up, optionally Poisson-jittered."""
    if length_s <= 0:
        raise ValueError("length_s must be positive")
    rates = _rates(pattern, length_s)
    if jitter:
        ticks = np.random.default_rng(seed).poisson(rates)
    else:
        ticks = np.floor(rates + 0.5)
    return ArrivalSchedule(ticks.astype(np.int64), type(pattern).__name__.lower())


def read_trace_file(path, schema: TraceSchema = AZURE_2019, day_index: int = 0) -> list[MinuteTrace]:
    with open(path, newline="") as fh:
        return parse_trace(fh, schema, day_index)


def trace_to_text(traces: Iterable[MinuteTrace], schema: TraceSchema = AZURE_2019) -> str:
    buf = io.StringIO()
    write_trace(traces, buf, schema)
    return buf.getvalue()

"""Append-only, hash-chained log of scaling decisions.

Each record hash is SHA-256 over the previous record hash followed by the
canonical serialization of the record's own fields.  Truncating the tail
cannot be detected from the file alone; compare ``head_hash`` against a copy
kept elsewhere for that.

File format: ``#`` lines are comments, every other line is one record with
tab-separated fields in :data:`FILE_COLUMNS` order and lowercase hex hashes.
"""
from __future__ import annotations

import hashlib
import math
from typing import Iterable, NamedTuple

from .env import N_ACTIONS, EnvState

SEP = "\x1f"
ZERO_HASH = bytes(32)
FIELDS = ("tick", "policy_name", "instances", "avg_rps", "avg_cpu_usage", "avg_violation_rate",
          "action_code", "resulting_instances")
FILE_COLUMNS = FIELDS + ("prev_hash", "record_hash")
_FORBIDDEN = (SEP, "\t", "\n", "\r")


class LedgerError(ValueError):
    pass


class LedgerParseError(LedgerError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class LedgerVerifyError(LedgerError):
    def __init__(self, index: int):
        super().__init__(f"chain broken at record {index}")
        self.index = index


class DecisionRecord(NamedTuple):
    tick: int
    policy_name: str
    observed: EnvState
    action_code: int
    resulting_instances: int
    prev_hash: bytes
    record_hash: bytes


def _int(name: str, value, lo: int = 0, hi: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise LedgerError(f"{name} must be an integer, got {value!r}")
    if value < lo or (hi is not None and value > hi):
        raise LedgerError(f"{name} out of range: {value}")
    return value


def _float(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise LedgerError(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise LedgerError(f"{name} must be finite")
    return value


def _check_name(name) -> str:
    if not isinstance(name, str):
        raise LedgerError("policy_name must be a string")
    if any(ch in name for ch in _FORBIDDEN):
        raise LedgerError("policy_name may not contain separators, tabs or newlines")
    return name


def canonical(tick: int, policy_name: str, observed: EnvState, action_code: int,
              resulting_instances: int) -> bytes:
    """Fixed field order, decimal integers, shortest round-trip floats, 0x1F separated."""
    parts = [str(tick), policy_name, str(observed.instances), repr(float(observed.avg_rps)),
             repr(float(observed.avg_cpu_usage)), repr(float(observed.avg_violation_rate)),
             str(action_code), str(resulting_instances)]
    return SEP.join(parts).encode("utf-8")


def record_hash(prev_hash: bytes, tick: int, policy_name: str, observed: EnvState, action_code: int,
                resulting_instances: int) -> bytes:
    return hashlib.sha256(prev_hash + canonical(tick, policy_name, observed, action_code,
                                                resulting_instances)).digest()


def _expected(rec: DecisionRecord) -> bytes:
    return record_hash(rec.prev_hash, rec.tick, rec.policy_name, rec.observed, rec.action_code,
                       rec.resulting_instances)


class Ledger:
    def __init__(self):
        self._records: list[DecisionRecord] = []

    @classmethod
    def from_records(cls, records: Iterable[DecisionRecord]) -> "Ledger":
        """Wrap existing records without checking them; call :meth:`verify`."""
        led = cls()
        led._records = list(records)
        return led

    @property
    def records(self) -> tuple[DecisionRecord, ...]:
        return tuple(self._records)

    @property
    def head_hash(self) -> bytes:
        return self._records[-1].record_hash if self._records else ZERO_HASH

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, i: int) -> DecisionRecord:
        return self._records[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, Ledger) and self._records == other._records

    def append(self, *, tick: int, policy_name: str, observed: EnvState, action_code: int,
               resulting_instances: int) -> bytes:
        tick = _int("tick", tick)
        policy_name = _check_name(policy_name)
        if len(observed) != 4:
            raise LedgerError("observed must have 4 fields")
        observed = EnvState(_int("instances", observed[0]), *(_float(n, v) for n, v in
                                                              zip(EnvState._fields[1:], observed[1:])))
        action_code = _int("action_code", action_code, 0, N_ACTIONS - 1)
        resulting_instances = _int("resulting_instances", resulting_instances)
        prev = self.head_hash
        h = record_hash(prev, tick, policy_name, observed, action_code, resulting_instances)
        self._records.append(DecisionRecord(tick, policy_name, observed, action_code, resulting_instances, prev, h))
        return h

    def verify(self) -> tuple[bool, int | None]:
        """``(True, None)`` or ``(False, index of the earliest bad record)``."""
        prev = ZERO_HASH
        for i, rec in enumerate(self._records):
            try:
                ok = rec.prev_hash == prev and _expected(rec) == rec.record_hash
            except (TypeError, AttributeError, ValueError):
                ok = False
            if not ok:
                return False, i
            prev = rec.record_hash
        return True, None

    # -- file form ----------------------------------------------------------

    def export(self, stream) -> None:
        stream.write("# " + "\t".join(FILE_COLUMNS) + "\n")
        for r in self._records:
            o = r.observed
            row = [str(r.tick), r.policy_name, str(o.instances), repr(float(o.avg_rps)),
                   repr(float(o.avg_cpu_usage)), repr(float(o.avg_violation_rate)), str(r.action_code),
                   str(r.resulting_instances), r.prev_hash.hex(), r.record_hash.hex()]
            stream.write("\t".join(row) + "\n")

    @classmethod
    def load(cls, stream, verify: bool = True) -> "Ledger":
        """Parse an exported ledger; raises LedgerParseError or LedgerVerifyError."""
        records = []
        for lineno, raw in enumerate(stream, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            records.append(_parse_line(line, lineno))
        led = cls.from_records(records)
        if verify:
            ok, bad = led.verify()
            if not ok:
                raise LedgerVerifyError(bad)
        return led


def _parse_line(line: str, lineno: int) -> DecisionRecord:
    cols = line.split("\t")
    if len(cols) != len(FILE_COLUMNS):
        raise LedgerParseError(lineno, f"expected {len(FILE_COLUMNS)} fields, got {len(cols)}")
    try:
        tick, inst, action, res = (int(cols[k]) for k in (0, 2, 6, 7))
        rps, cpu, vr = (float(cols[k]) for k in (3, 4, 5))
        prev, rh = bytes.fromhex(cols[8]), bytes.fromhex(cols[9])
    except ValueError as exc:
        raise LedgerParseError(lineno, str(exc)) from None
    if len(prev) != 32 or len(rh) != 32:
        raise LedgerParseError(lineno, "hashes must be 32 bytes")
    if cols[8] != prev.hex() or cols[9] != rh.hex():
        raise LedgerParseError(lineno, "hashes must be lowercase hex")
    return DecisionRecord(tick, cols[1], EnvState(inst, rps, cpu, vr), action, res, prev, rh)


def read_ledger(path: str, verify: bool = True) -> Ledger:
    with open(path, encoding="utf-8") as fh:
        return Ledger.load(fh, verify=verify)


def write_ledger(ledger: Ledger, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        ledger.export(fh)

"""Per-law append-only ledgers of controller events and operations.

File format, one record per entry::

    u32 length (big-endian) ‖ canonical entry bytes ‖ previous-entry hash (32 bytes)

The hash of a record is ``sha256(entry bytes ‖ previous hash)``; the first
record's previous hash is 32 zero bytes. Because the newest record's hash is
not covered by any successor, a ``<file>.head`` sidecar holds the record count
and the head hash; it is rewritten after every append.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import os
import socket
import socketserver
import struct
import threading
import time
from collections.abc import Iterator
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from cop.encoding import EncodingError, decode, encode, frame, read_frame

logger = logging.getLogger(__name__)

ZERO_HASH = bytes(32)
_U32 = struct.Struct(">I")


class LedgerError(Exception):
    pass


class SequenceGap(LedgerError):
    pass


class LedgerUnavailable(LedgerError):
    pass


class CorruptLedger(LedgerError):
    pass


class EntryKind(str, enum.Enum):
    EVENT = "event"
    OPERATION = "op"
    RULING_END = "ruling-end"
    REPAIR = "repair"
    RECONSTRUCTED = "reconstructed"


@dataclass(frozen=True)
class LedgerEntry:
    law: str
    controller: str
    ctrl_seq: int
    kind: EntryKind
    body: bytes
    timestamp: int
    node: str
    global_seq: int = -1

    def __post_init__(self):
        object.__setattr__(self, "kind", EntryKind(self.kind))

    def to_wire(self) -> dict[str, Any]:
        return {
            "global_seq": self.global_seq,
            "law": self.law,
            "controller": self.controller,
            "ctrl_seq": self.ctrl_seq,
            "kind": self.kind.value,
            "body": self.body,
            "timestamp": self.timestamp,
            "node": self.node,
        }

    def to_bytes(self) -> bytes:
        return encode(self.to_wire())

    @classmethod
    def from_wire(cls, d: dict[str, Any]) -> LedgerEntry:
        return cls(
            law=d["law"],
            controller=d["controller"],
            ctrl_seq=d["ctrl_seq"],
            kind=EntryKind(d["kind"]),
            body=d["body"],
            timestamp=d["timestamp"],
            node=d["node"],
            global_seq=d["global_seq"],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> LedgerEntry:
        return cls.from_wire(decode(data))


def chain_hash(entry_bytes: bytes, prev: bytes) -> bytes:
    return hashlib.sha256(entry_bytes + prev).digest()


class Ledger:
    """In-memory ledger; the base for the file-backed one."""

    def __init__(self, law: str, chain: bool = True):
        self.law = law
        self.chain = chain
        self._entries: list[LedgerEntry] = []
        self._raw: list[bytes] = []
        self._prev: list[bytes] = []
        self._head = ZERO_HASH
        self._by_ctrl: dict[str, list[int]] = {}
        self._cond = threading.Condition()
        self.listeners: list = []

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def head_hash(self) -> bytes:
        return self._head

    def last_ctrl_seq(self, controller: str) -> int:
        idx = self._by_ctrl.get(controller)
        return self._entries[idx[-1]].ctrl_seq if idx else 0

    def controllers(self) -> list[str]:
        return list(self._by_ctrl)

    def append(self, entry: LedgerEntry) -> int:
        with self._cond:
            if entry.law != self.law:
                raise LedgerError(f"entry for law {entry.law!r} appended to ledger {self.law!r}")
            expected = self.last_ctrl_seq(entry.controller) + 1
            if entry.ctrl_seq != expected:
                raise SequenceGap(f"{entry.controller}: ctrl_seq {entry.ctrl_seq}, expected {expected}")
            stored = replace(entry, global_seq=len(self._entries))
            raw = stored.to_bytes()
            prev = self._head if self.chain else ZERO_HASH
            self._persist(raw, prev)
            self._add(stored, raw, prev)
            self._cond.notify_all()
        for fn in self.listeners:
            fn(stored)
        return stored.global_seq

    def _persist(self, raw: bytes, prev: bytes) -> None:
        pass

    def _add(self, entry: LedgerEntry, raw: bytes, prev: bytes) -> None:
        self._entries.append(entry)
        self._raw.append(raw)
        self._prev.append(prev)
        if self.chain:
            self._head = chain_hash(raw, prev)
        self._by_ctrl.setdefault(entry.controller, []).append(entry.global_seq)

    def read(self, start: int = 0, limit: int | None = None) -> list[LedgerEntry]:
        """Non-blocking read of entries ``start..`` (at most ``limit``)."""
        if start < 0:
            raise ValueError("start must be >= 0")
        end = None if limit is None else start + limit
        return self._entries[start:end]

    def wait_for(self, count: int, timeout: float | None) -> bool:
        """Block until the ledger holds more than ``count`` entries."""
        with self._cond:
            return self._cond.wait_for(lambda: len(self._entries) > count, timeout)

    def stream(
        self, start: int = 0, *, stop: threading.Event | None = None, idle_timeout: float | None = None,
        poll: float = 0.05,
    ) -> Iterator[LedgerEntry]:
        """Yield entries in global order, waiting at the head for new ones.

        Runs until ``stop`` is set, or until nothing arrives for
        ``idle_timeout`` seconds; with neither, it blocks forever.
        """
        pos = start
        idle_since = time.monotonic()
        while stop is None or not stop.is_set():
            batch = self.read(pos)
            if batch:
                for entry in batch:
                    yield entry
                pos += len(batch)
                idle_since = time.monotonic()
                continue
            if idle_timeout is not None and time.monotonic() - idle_since >= idle_timeout:
                return
            self.wait_for(pos, poll)

    def controller_view(self, controller: str, from_ctrl_seq: int = 1) -> Iterator[LedgerEntry]:
        for gseq in list(self._by_ctrl.get(controller, ())):
            entry = self._entries[gseq]
            if entry.ctrl_seq >= from_ctrl_seq:
                yield entry

    def record_bytes(self, global_seq: int) -> bytes:
        return record(self._raw[global_seq], self._prev[global_seq])

    def verify_chain(self, upto: int | None = None) -> bool:
        """Recompute the hash chain over the first ``upto`` entries."""
        if not self.chain:
            return True
        prev = ZERO_HASH
        n = len(self._entries) if upto is None else upto
        for i in range(n):
            if self._prev[i] != prev or self._entries[i].to_bytes() != self._raw[i]:
                return False
            prev = chain_hash(self._raw[i], prev)
        return upto is not None or prev == self._head

    def close(self) -> None:
        pass


def record(raw: bytes, prev: bytes) -> bytes:
    return _U32.pack(len(raw)) + raw + prev


class FileLedger(Ledger):
    """Ledger persisted to an append-only file, flushed on every append.

    ``sync=True`` also fsyncs each record. Opening an existing file replays and
    verifies it; any inconsistency raises :class:`CorruptLedger`.
    """

    def __init__(self, path: str | os.PathLike, law: str | None = None, chain: bool = True,
                 sync: bool = False, readonly: bool = False):
        self.path = Path(path)
        self.head_path = head_path(self.path)
        self.sync = sync
        self.readonly = readonly
        if self.path.exists():
            header, entries = read_ledger_file(self.path)
            law = law or header["law"]
            if header["law"] != law:
                raise CorruptLedger(f"{self.path}: ledger is for law {header['law']!r}, not {law!r}")
            super().__init__(law, chain=header["chain"])
            for entry, raw, prev in entries:
                self._add(entry, raw, prev)
        else:
            if readonly:
                raise FileNotFoundError(self.path)
            if law is None:
                raise ValueError("law is required to create a new ledger file")
            super().__init__(law, chain=chain)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            self._write_head()
        self._fh = None if readonly else open(self.path, "ab")

    def _persist(self, raw: bytes, prev: bytes) -> None:
        if self._fh is None:
            raise LedgerError(f"{self.path} is open read-only")
        self._fh.write(record(raw, prev))
        self._fh.flush()
        if self.sync:
            os.fsync(self._fh.fileno())

    def _add(self, entry, raw, prev) -> None:
        super()._add(entry, raw, prev)
        if getattr(self, "_fh", None) is not None:
            self._write_head()

    def _write_head(self) -> None:
        tmp = self.head_path.with_suffix(self.head_path.suffix + ".tmp")
        tmp.write_bytes(encode({"law": self.law, "chain": self.chain, "count": len(self._entries),
                                "head": self._head}))
        os.replace(tmp, self.head_path)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def head_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".head")


def read_ledger_file(path: str | os.PathLike) -> tuple[dict[str, Any], list[tuple[LedgerEntry, bytes, bytes]]]:
    """Parse and fully verify a ledger file and its head sidecar."""
    path = Path(path)
    hp = head_path(path)
    if not hp.exists():
        raise CorruptLedger(f"{path}: missing head file {hp.name}")
    try:
        header = decode(hp.read_bytes())
        law, chain, count, head = header["law"], header["chain"], header["count"], header["head"]
    except (EncodingError, KeyError, TypeError) as exc:
        raise CorruptLedger(f"{hp}: unreadable head file ({exc})") from None
    data = path.read_bytes()
    entries: list[tuple[LedgerEntry, bytes, bytes]] = []
    last_seq: dict[str, int] = {}
    pos = 0
    prev = ZERO_HASH
    while pos < len(data):
        where = f"{path}: record {len(entries)} at byte {pos}"
        if pos + 4 > len(data):
            raise CorruptLedger(f"{where}: truncated length")
        (n,) = _U32.unpack_from(data, pos)
        end = pos + 4 + n + 32
        if end > len(data):
            raise CorruptLedger(f"{where}: truncated record")
        raw = data[pos + 4 : pos + 4 + n]
        stored_prev = data[pos + 4 + n : end]
        if chain and stored_prev != prev:
            raise CorruptLedger(f"{where}: hash chain broken")
        if not chain and stored_prev != ZERO_HASH:
            raise CorruptLedger(f"{where}: unexpected hash in unchained ledger")
        try:
            entry = LedgerEntry.from_bytes(raw)
        except (EncodingError, KeyError, TypeError, ValueError) as exc:
            raise CorruptLedger(f"{where}: undecodable entry ({exc})") from None
        if entry.to_bytes() != raw:
            raise CorruptLedger(f"{where}: non-canonical entry")
        if entry.global_seq != len(entries) or entry.law != law:
            raise CorruptLedger(f"{where}: wrong global_seq or law")
        if entry.ctrl_seq != last_seq.get(entry.controller, 0) + 1:
            raise CorruptLedger(f"{where}: ctrl_seq gap for {entry.controller}")
        last_seq[entry.controller] = entry.ctrl_seq
        entries.append((entry, raw, stored_prev))
        if chain:
            prev = chain_hash(raw, stored_prev)
        pos = end
    if count != len(entries):
        raise CorruptLedger(f"{path}: head says {count} records, file has {len(entries)}")
    if chain and head != prev:
        raise CorruptLedger(f"{path}: head hash mismatch")
    return {"law": law, "chain": chain}, entries


def verify_file(path: str | os.PathLike) -> int:
    """Verify a ledger file; return its entry count or raise CorruptLedger."""
    _, entries = read_ledger_file(path)
    return len(entries)


# --- network access -------------------------------------------------------

class _LedgerHandler(socketserver.StreamRequestHandler):
    def handle(self):
        ledger: Ledger = self.server.ledger  # type: ignore[attr-defined]
        while True:
            try:
                req = read_frame(self.rfile)
            except (EncodingError, OSError):
                return
            if req is None:
                return
            try:
                resp = _dispatch(ledger, decode(req))
            except LedgerError as exc:
                resp = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
            except (EncodingError, KeyError, TypeError, ValueError) as exc:
                resp = {"ok": False, "error": "BadRequest", "message": str(exc)}
            self.wfile.write(frame(encode(resp)))


def _dispatch(ledger: Ledger, req: dict[str, Any]) -> dict[str, Any]:
    verb = req["verb"]
    if verb == "append":
        return {"ok": True, "global_seq": ledger.append(LedgerEntry.from_bytes(req["entry"]))}
    if verb == "read":
        entries = ledger.read(req["start"], req.get("limit"))
        return {"ok": True, "entries": [e.to_bytes() for e in entries]}
    if verb == "view":
        entries = list(ledger.controller_view(req["controller"], req.get("from_ctrl_seq", 1)))
        return {"ok": True, "entries": [e.to_bytes() for e in entries]}
    if verb == "info":
        return {"ok": True, "law": ledger.law, "count": len(ledger)}
    if verb == "last_ctrl_seq":
        return {"ok": True, "ctrl_seq": ledger.last_ctrl_seq(req["controller"])}
    raise ValueError(f"unknown verb {verb!r}")


class LedgerServer(socketserver.ThreadingTCPServer):
    """Serves append/read/view over length-prefixed canonical frames."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, ledger: Ledger, host: str = "127.0.0.1", port: int = 0):
        self.ledger = ledger
        super().__init__((host, port), _LedgerHandler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]  # type: ignore[return-value]

    def start(self) -> LedgerServer:
        self._thread = threading.Thread(target=self.serve_forever, name="ledger-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class RemoteLedger:
    """Client for :class:`LedgerServer` with the same verbs as :class:`Ledger`."""

    def __init__(self, address: tuple[str, int], timeout: float = 5.0):
        self.address = address
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._file = None
        self._lock = threading.Lock()
        self.law = self._call({"verb": "info"})["law"]

    def _connect(self):
        self._sock = socket.create_connection(self.address, timeout=self.timeout)
        self._file = self._sock.makefile("rwb")

    def _call(self, req: dict[str, Any]) -> dict[str, Any]:
        with self._lock:
            try:
                if self._sock is None:
                    self._connect()
                self._file.write(frame(encode(req)))
                self._file.flush()
                raw = read_frame(self._file)
            except (OSError, EncodingError) as exc:
                self._drop()
                raise LedgerUnavailable(f"ledger at {self.address}: {exc}") from None
            if raw is None:
                self._drop()
                raise LedgerUnavailable(f"ledger at {self.address} closed the connection")
        resp = decode(raw)
        if not resp["ok"]:
            err = {"SequenceGap": SequenceGap}.get(resp["error"], LedgerError)
            raise err(resp["message"])
        return resp

    def _drop(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._file = None

    def __len__(self) -> int:
        return self._call({"verb": "info"})["count"]

    def append(self, entry: LedgerEntry) -> int:
        return self._call({"verb": "append", "entry": entry.to_bytes()})["global_seq"]

    def read(self, start: int = 0, limit: int | None = None) -> list[LedgerEntry]:
        resp = self._call({"verb": "read", "start": start, "limit": limit})
        return [LedgerEntry.from_bytes(b) for b in resp["entries"]]

    def last_ctrl_seq(self, controller: str) -> int:
        return self._call({"verb": "last_ctrl_seq", "controller": controller})["ctrl_seq"]

    def controller_view(self, controller: str, from_ctrl_seq: int = 1) -> Iterator[LedgerEntry]:
        resp = self._call({"verb": "view", "controller": controller, "from_ctrl_seq": from_ctrl_seq})
        return iter([LedgerEntry.from_bytes(b) for b in resp["entries"]])

    def stream(self, start: int = 0, *, stop: threading.Event | None = None,
               idle_timeout: float | None = None, poll: float = 0.05) -> Iterator[LedgerEntry]:
        pos = start
        idle_since = time.monotonic()
        while stop is None or not stop.is_set():
            batch = self.read(pos)
            if batch:
                yield from batch
                pos += len(batch)
                idle_since = time.monotonic()
                continue
            if idle_timeout is not None and time.monotonic() - idle_since >= idle_timeout:
                return
            time.sleep(poll)

    def close(self) -> None:
        with self._lock:
            self._drop()

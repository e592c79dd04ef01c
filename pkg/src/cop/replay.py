"""Off-line inspection of recorded ledger files.

Each ledger file ``<law>.ledger`` is accompanied by a manifest
``<law>.ledger.law`` naming the law kind and parameters it was recorded
under, so the law can be rebuilt for replay.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path
from typing import Any

from cop.inspector import Inspector, ShardedInspector, ShardPlan, Verdict, verdict_order
from cop.law import Law
from cop.ledger import CorruptLedger, LedgerEntry, read_ledger_file
from cop.laws import kind_of, make_law

logger = logging.getLogger(__name__)

_U32 = struct.Struct(">I")
_HASH = 32


class ManifestError(ValueError):
    pass


def manifest_path(ledger_path: str | os.PathLike) -> Path:
    p = Path(ledger_path)
    return p.with_name(p.name + ".law")


def write_manifest(ledger_path: str | os.PathLike, law: Law) -> Path:
    path = manifest_path(ledger_path)
    path.write_text(json.dumps({
        "law_id": law.law_id,
        "kind": kind_of(law),
        "params": dict(law.params),
        "version_hash": law.version_hash,
    }, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(ledger_path: str | os.PathLike) -> dict[str, Any]:
    path = manifest_path(ledger_path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"{path} not found; cannot tell which law the ledger was recorded under") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def law_from_manifest(manifest: dict[str, Any]) -> Law:
    law = make_law(manifest["kind"], manifest["law_id"], **manifest.get("params", {}))
    recorded = manifest.get("version_hash")
    if recorded is not None and law.version_hash != recorded:
        raise ManifestError(f"law {law.law_id} differs from the version the ledger was recorded under")
    return law


def iter_records(data: bytes):
    """Yield the canonical entry bytes of each record without checking hashes."""
    pos = 0
    end = len(data)
    while pos < end:
        (n,) = _U32.unpack_from(data, pos)
        yield data[pos + 4 : pos + 4 + n]
        pos += 4 + n + _HASH


def peek_controller(raw: bytes) -> str:
    """Read an encoded entry's controller id without decoding the body.

    Entry maps encode their keys sorted, so ``body`` comes first and
    ``controller`` second.
    """
    pos = 5  # map tag and pair count
    pos += 1 + 4 + _U32.unpack_from(raw, pos + 1)[0]  # key "body"
    pos += 1 + 4 + _U32.unpack_from(raw, pos + 1)[0]  # body bytes
    pos += 1 + 4 + _U32.unpack_from(raw, pos + 1)[0]  # key "controller"
    (n,) = _U32.unpack_from(raw, pos + 1)
    return raw[pos + 5 : pos + 5 + n].decode()


@dataclass
class ReplayResult:
    law: str
    entries: int
    verdicts: list[Verdict]
    elapsed: float

    @property
    def failures(self) -> list[Verdict]:
        return [v for v in self.verdicts if v.failed]


def replay_file(path: str | os.PathLike, *, shards: int = 1, law: Law | None = None) -> ReplayResult:
    """Verify the file's hash chain, then inspect it with ``shards`` in-process shards."""
    header, records = read_ledger_file(path)
    law = law or law_from_manifest(load_manifest(path))
    if law.law_id != header["law"]:
        raise ManifestError(f"manifest names law {law.law_id}, ledger holds {header['law']}")
    t0 = time.perf_counter()
    insp = ShardedInspector(law, ShardPlan(shards))
    for entry, _, _ in records:
        insp.feed(entry)
    insp.flush()
    return ReplayResult(law.law_id, len(records), insp.verdicts, time.perf_counter() - t0)


def _replay_shard(args: tuple) -> list[bytes]:
    path, manifest, count, shard = args
    law = law_from_manifest(manifest)
    plan = ShardPlan(count)
    insp = Inspector(law)
    data = Path(path).read_bytes()
    for raw in iter_records(data):
        if plan.shard_of(peek_controller(raw)) == shard:
            insp.feed(LedgerEntry.from_bytes(raw))
    insp.flush()
    return [v.to_bytes() for v in insp.verdicts]


def parallel_replay(path: str | os.PathLike, shards: int, *, processes: int | None = None) -> ReplayResult:
    """Inspect a ledger file with one worker process per shard.

    Each worker scans the whole file, peeks at each record's controller and
    decodes only the records of its own shard. The chain is not checked here;
    call :func:`cop.ledger.verify_file` first when that matters.
    """
    manifest = load_manifest(path)
    t0 = time.perf_counter()
    if shards == 1 and not processes:
        blobs = [_replay_shard((str(path), manifest, 1, 0))]
    else:
        ctx = get_context("fork") if hasattr(os, "fork") else get_context()
        with ProcessPoolExecutor(max_workers=processes or shards, mp_context=ctx) as pool:
            blobs = list(pool.map(_replay_shard, [(str(path), manifest, shards, i) for i in range(shards)]))
    verdicts = sorted((Verdict.from_bytes(b) for part in blobs for b in part), key=verdict_order)
    elapsed = time.perf_counter() - t0
    entries = sum(1 for _ in iter_records(Path(path).read_bytes()))
    return ReplayResult(manifest["law_id"], entries, verdicts, elapsed)


__all__ = [
    "CorruptLedger",
    "ManifestError",
    "ReplayResult",
    "iter_records",
    "law_from_manifest",
    "load_manifest",
    "manifest_path",
    "parallel_replay",
    "peek_controller",
    "replay_file",
    "write_manifest",
]

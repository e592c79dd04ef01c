"""Canonical binary encoding shared by the wire protocol and the ledger file.

Every value is a one-byte tag followed by its content:

    N                       null
    T / F                   boolean true / false
    I  int64 (8 bytes BE)   signed integer
    S  u32 len ‖ utf-8      string
    B  u32 len ‖ raw        byte string
    L  u32 count ‖ items    list
    M  u32 count ‖ pairs    map; keys are strings, sorted by their utf-8 bytes

All lengths and integers are big-endian. Maps are always written in sorted key
order, so two semantically equal values encode to identical bytes regardless
of dict insertion order.
"""

from __future__ import annotations

import struct
from typing import Any

__all__ = ["EncodingError", "encode", "decode", "decode_prefix", "frame", "read_frame"]

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")


class EncodingError(ValueError):
    pass


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: Any, out: bytearray) -> None:
    t = type(value)
    if t is str or (t is not bool and isinstance(value, str)):
        raw = value.encode("utf-8")
        out += b"S"
        out += _U32.pack(len(raw))
        out += raw
    elif t is bytes:
        out += b"B"
        out += _U32.pack(len(value))
        out += value
    elif t is dict:
        _encode_map(value, out)
    elif value is None:
        out += b"N"
    elif value is True:
        out += b"T"
    elif value is False:
        out += b"F"
    elif isinstance(value, int):
        try:
            out += b"I"
            out += _I64.pack(value)
        except struct.error:
            raise EncodingError(f"integer out of int64 range: {value}") from None
    elif isinstance(value, (bytes, bytearray, memoryview)):
        _encode_into(bytes(value), out)
    elif isinstance(value, (list, tuple)):
        out += b"L"
        out += _U32.pack(len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict) or hasattr(value, "items"):
        _encode_map(value, out)
    else:
        raise EncodingError(f"cannot encode {type(value).__name__}")


def _encode_map(value: Any, out: bytearray) -> None:
    pairs = []
    for k, v in value.items():
        if type(k) is not str:
            raise EncodingError(f"map keys must be strings, got {type(k).__name__}")
        pairs.append((k.encode("utf-8"), v))
    pairs.sort(key=_first)
    out += b"M"
    out += _U32.pack(len(pairs))
    prev = None
    for kb, v in pairs:
        if kb == prev:
            raise EncodingError("duplicate map key")
        prev = kb
        out += b"S"
        out += _U32.pack(len(kb))
        out += kb
        _encode_into(v, out)


def _first(pair: tuple) -> bytes:
    return pair[0]


def decode(data: bytes) -> Any:
    value, end = decode_prefix(data, 0)
    if end != len(data):
        raise EncodingError(f"trailing bytes after value ({len(data) - end})")
    return value


def decode_prefix(data: bytes, pos: int = 0) -> tuple[Any, int]:
    """Decode one value starting at ``pos``; return it and the end offset."""
    if not isinstance(data, bytes):
        data = bytes(data)
    try:
        return _decode_at(data, pos, len(data))
    except (IndexError, struct.error, UnicodeDecodeError) as exc:
        raise EncodingError(f"malformed encoding at offset {pos}: {exc}") from None


_N, _T, _F, _I, _S, _B, _L, _M = b"NTFISBLM"


def _decode_at(buf: bytes, pos: int, size: int) -> tuple[Any, int]:
    if pos >= size:
        raise EncodingError("truncated value")
    tag = buf[pos]
    pos += 1
    if tag == _S or tag == _B:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        if pos + n > size:
            raise EncodingError("truncated value")
        raw = buf[pos : pos + n]
        return (raw.decode("utf-8") if tag == _S else raw), pos + n
    if tag == _I:
        return _I64.unpack_from(buf, pos)[0], pos + 8
    if tag == _M:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        result: dict[str, Any] = {}
        prev = None
        for _ in range(n):
            if pos >= size or buf[pos] != _S:
                raise EncodingError("map key is not a string")
            (k,) = _U32.unpack_from(buf, pos + 1)
            pos += 5
            if pos + k > size:
                raise EncodingError("truncated value")
            kb = buf[pos : pos + k]
            pos += k
            if prev is not None and kb <= prev:
                raise EncodingError("map keys not in canonical order")
            prev = kb
            result[kb.decode("utf-8")], pos = _decode_at(buf, pos, size)
        return result, pos
    if tag == _L:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        items = []
        for _ in range(n):
            item, pos = _decode_at(buf, pos, size)
            items.append(item)
        return items, pos
    if tag == _N:
        return None, pos
    if tag == _T:
        return True, pos
    if tag == _F:
        return False, pos
    raise EncodingError(f"unknown tag {bytes([tag])!r} at offset {pos - 1}")


def frame(payload: bytes) -> bytes:
    """Length-prefix ``payload`` for stream transports."""
    return _U32.pack(len(payload)) + payload


def read_frame(sock_file) -> bytes | None:
    """Read one length-prefixed frame from a binary file-like; None at clean EOF."""
    head = sock_file.read(4)
    if not head:
        return None
    if len(head) < 4:
        raise EncodingError("truncated frame header")
    (n,) = _U32.unpack(head)
    body = sock_file.read(n)
    if len(body) < n:
        raise EncodingError("truncated frame body")
    return body

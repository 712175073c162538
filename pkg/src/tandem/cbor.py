"""Canonical CBOR subset used for every wire message and persisted file.

Supports unsigned/negative integers, byte strings, text strings, arrays,
maps, and the simple values false/true/null.  Encoding follows the RFC 8949
core deterministic profile: definite lengths only, minimally-sized length
arguments, and map keys sorted by their encoded bytes.  The decoder rejects
anything the encoder cannot produce, so encode(decode(b)) == b on every
accepted input.
"""

from __future__ import annotations

from typing import Any


class CBORError(ValueError):
    pass


def _head(major: int, arg: int) -> bytes:
    if arg < 24:
        return bytes([(major << 5) | arg])
    if arg < 0x100:
        return bytes([(major << 5) | 24, arg])
    if arg < 0x10000:
        return bytes([(major << 5) | 25]) + arg.to_bytes(2, "big")
    if arg < 0x100000000:
        return bytes([(major << 5) | 26]) + arg.to_bytes(4, "big")
    if arg < 0x10000000000000000:
        return bytes([(major << 5) | 27]) + arg.to_bytes(8, "big")
    raise CBORError("argument too large for CBOR head")


def encode(obj: Any) -> bytes:
    out: list[bytes] = []
    _encode_into(obj, out)
    return b"".join(out)


def _encode_into(obj: Any, out: list[bytes]) -> None:
    if obj is False:
        out.append(b"\xf4")
    elif obj is True:
        out.append(b"\xf5")
    elif obj is None:
        out.append(b"\xf6")
    elif isinstance(obj, int):
        if obj >= 0:
            out.append(_head(0, obj))
        else:
            out.append(_head(1, -1 - obj))
    elif isinstance(obj, (bytes, bytearray)):
        obj = bytes(obj)
        out.append(_head(2, len(obj)))
        out.append(obj)
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out.append(_head(3, len(raw)))
        out.append(raw)
    elif isinstance(obj, (list, tuple)):
        out.append(_head(4, len(obj)))
        for item in obj:
            _encode_into(item, out)
    elif isinstance(obj, dict):
        entries = []
        for k, v in obj.items():
            entries.append((encode(k), v))
        entries.sort(key=lambda kv: kv[0])
        prev = None
        for kb, _ in entries:
            if kb == prev:
                raise CBORError("duplicate map key")
            prev = kb
        out.append(_head(5, len(entries)))
        for kb, v in entries:
            out.append(kb)
            _encode_into(v, out)
    else:
        raise CBORError(f"type {type(obj).__name__} not encodable")


class _Decoder:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CBORError("truncated input")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def _read_head(self) -> tuple[int, int]:
        ib = self._take(1)[0]
        major, info = ib >> 5, ib & 0x1F
        if info < 24:
            return major, info
        if info == 24:
            arg = self._take(1)[0]
            if arg < 24:
                raise CBORError("non-minimal length argument")
            return major, arg
        if info in (25, 26, 27):
            width = {25: 2, 26: 4, 27: 8}[info]
            arg = int.from_bytes(self._take(width), "big")
            if arg < (1 << (4 * width)):
                raise CBORError("non-minimal length argument")
            return major, arg
        raise CBORError("indefinite lengths and reserved info values rejected")

    def decode_item(self, depth: int = 0) -> Any:
        if depth > 64:
            raise CBORError("nesting too deep")
        major, arg = self._read_head()
        if major == 0:
            return arg
        if major == 1:
            return -1 - arg
        if major == 2:
            return self._take(arg)
        if major == 3:
            raw = self._take(arg)
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CBORError("invalid utf-8 in text string") from exc
            if text.encode("utf-8") != raw:
                raise CBORError("non-canonical text string")
            return text
        if major == 4:
            return [self.decode_item(depth + 1) for _ in range(arg)]
        if major == 5:
            result: dict[Any, Any] = {}
            prev_kb = None
            for _ in range(arg):
                kstart = self.pos
                key = self.decode_item(depth + 1)
                kb = self.buf[kstart : self.pos]
                if prev_kb is not None and kb <= prev_kb:
                    raise CBORError("map keys not in canonical order")
                prev_kb = kb
                if not isinstance(key, (int, str, bytes)):
                    raise CBORError("unsupported map key type")
                result[key] = self.decode_item(depth + 1)
            return result
        if major == 7:
            if arg == 20:
                return False
            if arg == 21:
                return True
            if arg == 22:
                return None
            raise CBORError("unsupported simple value")
        raise CBORError("tags and floats rejected")


def decode(buf: bytes) -> Any:
    dec = _Decoder(buf)
    obj = dec.decode_item()
    if dec.pos != len(buf):
        raise CBORError("trailing bytes after CBOR item")
    return obj


def decode_prefix(buf: bytes, offset: int = 0) -> tuple[Any, int]:
    """Decode one item starting at offset; return (item, next offset)."""
    dec = _Decoder(buf)
    dec.pos = offset
    obj = dec.decode_item()
    return obj, dec.pos

"""Inter-process wire format.

Every datagram starts with a 24-byte big-endian header::

    topic hash u64 | seq u64 | fragment index u16 | fragment count u16 | flags u32

Fragment 0 additionally ends with an 8-byte trailer holding ``publish_ts``
(u64 ns). Acknowledgements are 16 bytes: topic hash u64 + seq u64.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Hashable, Optional

HEADER = struct.Struct(">QQHHI")
TRAILER = struct.Struct(">Q")
ACK = struct.Struct(">QQ")
HEADER_SIZE = HEADER.size  # 24
MAX_DATAGRAM = 60 * 1024
MAX_FRAGMENTS = 0xFFFF

FLAG_RELIABLE = 0x1

REASSEMBLY_WINDOW_NS = 100_000_000


class FramingError(ValueError):
    pass


def topic_hash(topic: str) -> int:
    return int.from_bytes(hashlib.blake2b(topic.encode(), digest_size=8).digest(), "big")


def chunk_size(max_datagram: int = MAX_DATAGRAM) -> int:
    return max_datagram - HEADER_SIZE - TRAILER.size


def fragment(thash: int, seq: int, publish_ts: int, payload: bytes, flags: int = 0,
             max_datagram: int = MAX_DATAGRAM) -> list[bytes]:
    size = chunk_size(max_datagram)
    if size <= 0:
        raise FramingError(f"max datagram {max_datagram} too small for header and trailer")
    view = memoryview(payload)
    count = max(1, -(-len(view) // size))
    if count > MAX_FRAGMENTS:
        raise FramingError(f"payload of {len(view)} bytes needs {count} fragments")
    out = []
    for i in range(count):
        parts = [HEADER.pack(thash, seq, i, count, flags), view[i * size:(i + 1) * size]]
        if i == 0:
            parts.append(TRAILER.pack(publish_ts))
        out.append(b"".join(parts))
    return out


@dataclass(frozen=True)
class Fragment:
    topic_hash: int
    seq: int
    index: int
    count: int
    flags: int
    publish_ts: Optional[int]
    chunk: bytes


def parse_fragment(datagram: bytes) -> Fragment:
    if len(datagram) < HEADER_SIZE:
        raise FramingError(f"datagram of {len(datagram)} bytes is shorter than the header")
    thash, seq, index, count, flags = HEADER.unpack_from(datagram)
    if count == 0 or index >= count:
        raise FramingError(f"bad fragment index {index}/{count}")
    if index == 0:
        if len(datagram) < HEADER_SIZE + TRAILER.size:
            raise FramingError("fragment 0 lacks the timestamp trailer")
        (ts,) = TRAILER.unpack_from(datagram, len(datagram) - TRAILER.size)
        chunk = datagram[HEADER_SIZE:len(datagram) - TRAILER.size]
    else:
        ts = None
        chunk = datagram[HEADER_SIZE:]
    return Fragment(thash, seq, index, count, flags, ts, chunk)


def pack_ack(thash: int, seq: int) -> bytes:
    return ACK.pack(thash, seq)


def unpack_ack(datagram: bytes) -> tuple[int, int]:
    if len(datagram) != ACK.size:
        raise FramingError(f"ack must be {ACK.size} bytes, got {len(datagram)}")
    return ACK.unpack(datagram)


@dataclass
class _Partial:
    count: int
    flags: int
    started: int
    chunks: dict = field(default_factory=dict)
    publish_ts: Optional[int] = None


@dataclass(frozen=True)
class Assembled:
    topic_hash: int
    seq: int
    flags: int
    publish_ts: int
    payload: bytes


class Reassembler:
    """Collects fragments per (source, topic hash, seq).

    Incomplete messages older than ``window_ns`` are discarded by `expire`.
    """

    def __init__(self, window_ns: int = REASSEMBLY_WINDOW_NS):
        self.window_ns = window_ns
        self._partials: dict[tuple, _Partial] = {}
        self.expired = 0

    def __len__(self) -> int:
        return len(self._partials)

    def add(self, source: Hashable, frag: Fragment, now: int) -> Optional[Assembled]:
        if frag.count == 1:
            return Assembled(frag.topic_hash, frag.seq, frag.flags, frag.publish_ts, frag.chunk)
        key = (source, frag.topic_hash, frag.seq)
        part = self._partials.get(key)
        if part is None:
            part = self._partials[key] = _Partial(frag.count, frag.flags, now)
        elif part.count != frag.count:
            raise FramingError(f"fragment count changed for seq {frag.seq}")
        part.chunks[frag.index] = frag.chunk
        if frag.index == 0:
            part.publish_ts = frag.publish_ts
        if len(part.chunks) < part.count:
            return None
        del self._partials[key]
        payload = b"".join(part.chunks[i] for i in range(part.count))
        return Assembled(frag.topic_hash, frag.seq, part.flags, part.publish_ts, payload)

    def expire(self, now: int) -> list[tuple]:
        stale = [k for k, p in self._partials.items() if now - p.started > self.window_ns]
        for k in stale:
            del self._partials[k]
        self.expired += len(stale)
        return stale

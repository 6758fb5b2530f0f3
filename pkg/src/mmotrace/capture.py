"""Classic libpcap reading/writing and per-connection TCP stream reassembly."""

from __future__ import annotations

import bisect
import logging
import socket
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D

FLOW_IDLE_TIMEOUT_US = 3600 * 1_000_000
MAX_PAYLOAD = 65_495

TH_FIN = 0x01
TH_SYN = 0x02
TH_RST = 0x04
TH_ACK = 0x10

C2S = "c2s"
S2C = "s2c"


class PcapError(ValueError):
    """The capture file cannot be read at all (bad global header, unsupported link type)."""


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    tcp_seq: int
    tcp_ack: int
    tcp_flags: int
    payload: bytes
    frame_len: int = 0

    @property
    def ts(self) -> float:
        return self.ts_us / 1e6

    @property
    def syn(self) -> bool:
        return bool(self.tcp_flags & TH_SYN)

    @property
    def fin(self) -> bool:
        return bool(self.tcp_flags & TH_FIN)

    @property
    def rst(self) -> bool:
        return bool(self.tcp_flags & TH_RST)

    @property
    def ack(self) -> bool:
        return bool(self.tcp_flags & TH_ACK)


@dataclass
class TraceStats:
    """Whole-capture counters. Byte counters are captured frame lengths."""

    total_packets: int = 0
    total_bytes: int = 0
    tcp_packets: int = 0
    tcp_bytes: int = 0
    tcp_payload_bytes: int = 0
    other_packets: int = 0
    other_bytes: int = 0
    ts_violations: int = 0
    truncated: bool = False
    first_ts_us: int | None = None
    last_ts_us: int | None = None
    link_type: int = LINKTYPE_ETHERNET


@dataclass
class Trace:
    packets: list[PacketRecord]
    stats: TraceStats


# --------------------------------------------------------------------------- reading


def _parse_ipv4_tcp(ip: bytes | memoryview):
    """Return (src, dst, sport, dport, seq, ack, flags, payload) or None for non-TCP/IPv4."""
    if len(ip) < 20 or ip[0] >> 4 != 4:
        return None
    ihl = (ip[0] & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        return None
    total_len, frag, proto = struct.unpack_from("!H2xH1xB", ip, 2)
    if proto != 6 or frag & 0x3FFF:
        # non-TCP, or an IP fragment (no defragmentation)
        return None
    end = min(total_len, len(ip)) if total_len >= ihl else len(ip)
    if end < ihl + 20:
        return None
    src = socket.inet_ntoa(bytes(ip[12:16]))
    dst = socket.inet_ntoa(bytes(ip[16:20]))
    sport, dport, seq, ack, off_flags = struct.unpack_from("!HHIIH", ip, ihl)
    doff = (off_flags >> 12) * 4
    if doff < 20 or ihl + doff > end:
        return None
    payload = bytes(ip[ihl + doff:end])
    return src, dst, sport, dport, seq, ack, off_flags & 0x3F, payload


def _network_layer(frame: bytes | memoryview, link_type: int):
    if link_type == LINKTYPE_RAW:
        return frame
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    off = 14
    while ethertype in (0x8100, 0x88A8) and len(frame) >= off + 4:
        ethertype = struct.unpack_from("!H", frame, off + 2)[0]
        off += 4
    if ethertype != 0x0800:
        return None
    return frame[off:]


def read_trace(path: str | Path) -> Trace:
    """Read a classic pcap file and return its IPv4/TCP packets in file order.

    Everything else (ARP, UDP, IPv6, fragments) only feeds the ``other_*``
    counters. A truncated trailing record ends the read with a warning.
    """
    data = Path(path).read_bytes()
    if len(data) < 24:
        raise PcapError(f"{path}: missing pcap global header")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le in (MAGIC_US, MAGIC_NS):
        endian = "<"
    elif struct.unpack_from(">I", data, 0)[0] in (MAGIC_US, MAGIC_NS):
        endian = ">"
    else:
        raise PcapError(f"{path}: bad pcap magic 0x{magic_le:08x}")
    nanos = struct.unpack_from(endian + "I", data, 0)[0] == MAGIC_NS
    link_type = struct.unpack_from(endian + "I", data, 20)[0] & 0x0FFFFFFF
    if link_type not in (LINKTYPE_ETHERNET, LINKTYPE_RAW):
        raise PcapError(f"{path}: unsupported link type {link_type}")

    stats = TraceStats(link_type=link_type)
    packets: list[PacketRecord] = []
    view = memoryview(data)
    rec_hdr = struct.Struct(endian + "IIII")
    pos = 24
    n = len(data)
    last_ts = None
    while pos < n:
        if pos + 16 > n:
            logger.warning("%s: truncated record header at offset %d", path, pos)
            stats.truncated = True
            break
        sec, frac, incl, _orig = rec_hdr.unpack_from(data, pos)
        pos += 16
        if pos + incl > n:
            logger.warning("%s: truncated record body at offset %d", path, pos)
            stats.truncated = True
            break
        frame = view[pos:pos + incl]
        pos += incl
        ts_us = sec * 1_000_000 + (frac // 1000 if nanos else frac)
        if last_ts is not None and ts_us < last_ts:
            stats.ts_violations += 1
        last_ts = ts_us
        if stats.first_ts_us is None or ts_us < stats.first_ts_us:
            stats.first_ts_us = ts_us
        if stats.last_ts_us is None or ts_us > stats.last_ts_us:
            stats.last_ts_us = ts_us
        stats.total_packets += 1
        stats.total_bytes += incl

        ip = _network_layer(frame, link_type)
        parsed = _parse_ipv4_tcp(ip) if ip is not None else None
        if parsed is None:
            stats.other_packets += 1
            stats.other_bytes += incl
            continue
        src, dst, sport, dport, seq, ack, flags, payload = parsed
        stats.tcp_packets += 1
        stats.tcp_bytes += incl
        stats.tcp_payload_bytes += len(payload)
        packets.append(PacketRecord(ts_us, src, dst, sport, dport, seq, ack, flags, payload, incl))
    if stats.ts_violations:
        logger.warning("%s: %d out-of-order timestamps", path, stats.ts_violations)
    return Trace(packets, stats)


# --------------------------------------------------------------------------- writing


class PcapWriter:
    """Minimal classic-pcap writer (microsecond timestamps, little-endian)."""

    def __init__(self, path: str | Path, link_type: int = LINKTYPE_ETHERNET, snaplen: int = 65535):
        self._fh = open(path, "wb")
        self._fh.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, snaplen, link_type))

    def write(self, ts_us: int, frame: bytes) -> None:
        sec, usec = divmod(ts_us, 1_000_000)
        self._fh.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        self._fh.write(frame)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_raw_records(path: str | Path) -> Iterable[tuple[int, bytes]]:
    """Yield (ts_us, frame bytes) for every record, without decoding."""
    data = Path(path).read_bytes()
    if len(data) < 24:
        raise PcapError(f"{path}: missing pcap global header")
    if struct.unpack_from("<I", data, 0)[0] in (MAGIC_US, MAGIC_NS):
        endian = "<"
    elif struct.unpack_from(">I", data, 0)[0] in (MAGIC_US, MAGIC_NS):
        endian = ">"
    else:
        raise PcapError(f"{path}: bad pcap magic")
    nanos = struct.unpack_from(endian + "I", data, 0)[0] == MAGIC_NS
    pos = 24
    while pos + 16 <= len(data):
        sec, frac, incl, _ = struct.unpack_from(endian + "IIII", data, pos)
        pos += 16
        if pos + incl > len(data):
            break
        yield sec * 1_000_000 + (frac // 1000 if nanos else frac), data[pos:pos + incl]
        pos += incl


def pcap_link_type(path: str | Path) -> int:
    head = Path(path).read_bytes()[:24]
    endian = "<" if struct.unpack_from("<I", head, 0)[0] in (MAGIC_US, MAGIC_NS) else ">"
    return struct.unpack_from(endian + "I", head, 20)[0] & 0x0FFFFFFF


# --------------------------------------------------------------------------- reassembly


@dataclass(frozen=True, slots=True)
class FlowKey:
    client_ip: str
    client_port: int
    server_ip: str
    server_port: int

    def __str__(self) -> str:
        return f"{self.client_ip}:{self.client_port}->{self.server_ip}:{self.server_port}"


@dataclass(frozen=True, slots=True)
class Segment:
    """A payload-bearing packet as placed in a stream."""

    offset: int  # relative to stream start; may be < 0 or overlap if it added no new bytes
    length: int
    ts_us: int
    new_bytes: int  # bytes this segment contributed to the stream


@dataclass
class DirectionalStream:
    direction: str
    data: bytes = b""
    segments: list[Segment] = field(default_factory=list)
    gapped: bool = False
    # (stream offset, ts_us) for each contiguous piece, ascending by offset
    byte_offsets: list[tuple[int, int]] = field(default_factory=list)

    def ts_at(self, offset: int) -> int:
        """Capture timestamp of the packet that delivered stream byte ``offset``."""
        if not 0 <= offset < len(self.data):
            raise IndexError(offset)
        i = bisect.bisect_right(self.byte_offsets, (offset, float("inf"))) - 1
        return self.byte_offsets[i][1]


@dataclass
class Flow:
    key: FlowKey
    c2s: DirectionalStream
    s2c: DirectionalStream
    first_ts_us: int
    last_ts_us: int
    syn_seen: bool
    pkts: dict[str, int]
    payload_pkts: dict[str, int]
    payload_bytes: dict[str, int]
    wire_bytes: int
    payload_sizes: dict[str, list[int]]
    duplicates: int = 0
    duplicate_bytes: int = 0

    @property
    def gapped(self) -> bool:
        return self.c2s.gapped or self.s2c.gapped

    @property
    def first_ts(self) -> float:
        return self.first_ts_us / 1e6

    @property
    def last_ts(self) -> float:
        return self.last_ts_us / 1e6

    @property
    def duration(self) -> float:
        return (self.last_ts_us - self.first_ts_us) / 1e6

    @property
    def midstream(self) -> bool:
        return not self.syn_seen


def _rel(seq: int, base: int) -> int:
    """Signed distance from base to seq modulo 2**32."""
    return ((seq - base + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def _stream(direction: str, pkts: list[PacketRecord], isn: int | None) -> DirectionalStream:
    """Reassemble one direction. ``isn`` is the SYN sequence number if one was seen."""
    with_data = [p for p in pkts if p.payload]
    out = DirectionalStream(direction)
    if not with_data:
        return out
    if isn is not None:
        base = (isn + 1) & 0xFFFFFFFF
    else:
        ref = with_data[0].tcp_seq
        base = (ref + min(_rel(p.tcp_seq, ref) for p in with_data)) & 0xFFFFFFFF

    offsets = [_rel(p.tcp_seq, base) for p in with_data]
    # first-writer-wins: earlier capture time claims overlapping bytes
    order = sorted(range(len(with_data)), key=lambda i: (with_data[i].ts_us, i))
    covered: list[list[int]] = []
    pieces: list[tuple[int, int, int]] = []  # (start, end, segment index)
    for i in order:
        off = offsets[i]
        for a, b in _claim(covered, max(off, 0), off + len(with_data[i].payload)):
            pieces.append((a, b, i))
    pieces.sort()

    buf = bytearray()
    new = [0] * len(with_data)
    for a, b, i in pieces:
        if a != len(buf):
            out.gapped = True
            break
        off = offsets[i]
        buf += with_data[i].payload[a - off:b - off]
        new[i] += b - a
        out.byte_offsets.append((a, with_data[i].ts_us))
    out.data = bytes(buf)
    out.segments = [Segment(offsets[i], len(p.payload), p.ts_us, new[i])
                    for i, p in enumerate(with_data)]
    out.segments.sort(key=lambda s: (s.offset, s.ts_us))
    return out


def _claim(covered: list[list[int]], a: int, b: int) -> list[tuple[int, int]]:
    """Mark [a, b) as covered; return the sub-ranges that were not covered before."""
    if a >= b:
        return []
    i = bisect.bisect_right(covered, [a, float("inf")]) - 1
    if i < 0 or covered[i][1] < a:
        i += 1
    fresh = []
    cur = a
    j = i
    lo, hi = a, b
    while j < len(covered) and covered[j][0] <= b:
        s, e = covered[j]
        if s > cur:
            fresh.append((cur, min(s, b)))
        cur = max(cur, e)
        lo, hi = min(lo, s), max(hi, e)
        j += 1
    if cur < b:
        fresh.append((cur, b))
    covered[i:j] = [[lo, hi]]
    return fresh


def _split_idle(pkts: list[PacketRecord]) -> list[list[PacketRecord]]:
    groups = [[pkts[0]]]
    for p in pkts[1:]:
        if p.ts_us - groups[-1][-1].ts_us > FLOW_IDLE_TIMEOUT_US:
            groups.append([p])
        else:
            groups[-1].append(p)
    return groups


def _build_flow(pkts: list[PacketRecord]) -> Flow:
    # exact capture duplicates (same packet copied twice) count once
    seen = set()
    unique = []
    dup_bytes = 0
    for p in pkts:
        k = (p.src_ip, p.src_port, p.tcp_seq, p.tcp_ack, p.tcp_flags, p.ts_us, p.payload)
        if k in seen:
            dup_bytes += p.frame_len
            continue
        seen.add(k)
        unique.append(p)
    dups = len(pkts) - len(unique)

    syns = [p for p in unique if p.syn and not p.ack]
    first = syns[0] if syns else unique[0]
    key = FlowKey(first.src_ip, first.src_port, first.dst_ip, first.dst_port)
    fwd = [p for p in unique if p.src_ip == key.client_ip and p.src_port == key.client_port]
    rev = [p for p in unique if not (p.src_ip == key.client_ip and p.src_port == key.client_port)]

    def isn_of(ps: list[PacketRecord]) -> int | None:
        s = [p for p in ps if p.syn]
        return s[0].tcp_seq if s else None

    c2s_isn = isn_of(fwd) if syns else None
    s2c_isn = isn_of(rev) if syns else None
    c2s = _stream(C2S, fwd, c2s_isn)
    s2c = _stream(S2C, rev, s2c_isn)
    return Flow(
        key=key,
        c2s=c2s,
        s2c=s2c,
        first_ts_us=min(p.ts_us for p in unique),
        last_ts_us=max(p.ts_us for p in unique),
        syn_seen=bool(syns),
        pkts={C2S: len(fwd), S2C: len(rev)},
        payload_pkts={C2S: sum(1 for p in fwd if p.payload), S2C: sum(1 for p in rev if p.payload)},
        payload_bytes={C2S: sum(len(p.payload) for p in fwd), S2C: sum(len(p.payload) for p in rev)},
        wire_bytes=sum(p.frame_len for p in unique),
        payload_sizes={C2S: [len(p.payload) for p in fwd if p.payload],
                       S2C: [len(p.payload) for p in rev if p.payload]},
        duplicates=dups,
        duplicate_bytes=dup_bytes,
    )


def reassemble(packets: Iterable[PacketRecord]) -> list[Flow]:
    """Group packets into TCP connections and rebuild both byte streams.

    Packets are grouped by unordered 4-tuple, ordered by capture time and split
    on idle gaps longer than an hour. The result does not depend on the order
    the packets arrive in. Flows come back sorted by (first_ts, key).
    """
    by_tuple: dict[tuple, list[PacketRecord]] = defaultdict(list)
    for p in packets:
        a, b = (p.src_ip, p.src_port), (p.dst_ip, p.dst_port)
        by_tuple[(a, b) if a <= b else (b, a)].append(p)
    flows = []
    for pkts in by_tuple.values():
        pkts.sort(key=lambda p: (p.ts_us, p.tcp_flags & TH_SYN == 0, p.tcp_seq, p.payload))
        for group in _split_idle(pkts):
            flows.append(_build_flow(group))
    flows.sort(key=lambda f: (f.first_ts_us, f.key.client_ip, f.key.client_port,
                              f.key.server_ip, f.key.server_port))
    return flows

import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from conftest import T0, pkt, syn_pair
from mmotrace.capture import (FLOW_IDLE_TIMEOUT_US, MAGIC_NS, PcapError, PcapWriter, TH_ACK, TH_SYN,
                              read_trace, reassemble)
from mmotrace.synthgen.emit import tcp_frame, udp_frame
from mmotrace.synthgen.simulate import UdpSpec


def write(path, frames, link=1):
    with PcapWriter(path, link) as w:
        for ts, f in frames:
            w.write(ts, f)


def test_header_only_capture(tmp_path):
    p = tmp_path / "empty.pcap"
    write(p, [])
    t = read_trace(p)
    assert t.packets == [] and t.stats.total_bytes == 0 and t.stats.total_packets == 0


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.pcap"
    p.write_bytes(b"\x00" * 40)
    with pytest.raises(PcapError):
        read_trace(p)


def test_handshake_records(tmp_path):
    p = tmp_path / "hs.pcap"
    frames = [
        (T0, tcp_frame("10.0.0.1", "10.0.0.2", 40000, 80, 100, 0, TH_SYN, b"")),
        (T0 + 10, tcp_frame("10.0.0.2", "10.0.0.1", 80, 40000, 500, 101, TH_SYN | TH_ACK, b"", c2s=False)),
        (T0 + 20, tcp_frame("10.0.0.1", "10.0.0.2", 40000, 80, 101, 501, TH_ACK, b"")),
    ]
    write(p, frames)
    t = read_trace(p)
    assert len(t.packets) == 3
    assert [r.payload for r in t.packets] == [b""] * 3
    assert [r.tcp_seq for r in t.packets] == [100, 500, 101]
    assert t.packets[1].src_ip == "10.0.0.2" and t.packets[1].syn and t.packets[1].ack
    assert t.packets[0].ts_us == T0


def test_udp_counted_as_other(tmp_path):
    p = tmp_path / "mix.pcap"
    u = udp_frame(UdpSpec(T0, "10.0.0.9", "10.0.0.53", 5000, 53, b"q" * 30))
    write(p, [(T0, u), (T0 + 5, tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, 0, 0, TH_ACK, b"hi"))])
    t = read_trace(p)
    assert len(t.packets) == 1
    assert t.stats.other_packets == 1 and t.stats.other_bytes == len(u)
    assert t.stats.total_bytes == len(u) + t.packets[0].frame_len


def test_nanosecond_big_endian(tmp_path):
    frame = tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, 7, 0, TH_ACK, b"xyz")
    head = struct.pack(">IHHiIII", MAGIC_NS, 2, 4, 0, 0, 65535, 1)
    rec = struct.pack(">IIII", 1000, 123_456_789, len(frame), len(frame)) + frame
    p = tmp_path / "ns.pcap"
    p.write_bytes(head + rec)
    (r,) = read_trace(p).packets
    assert r.ts_us == 1000 * 1_000_000 + 123_456 and r.payload == b"xyz"


def test_raw_ip_link_type(tmp_path):
    frame = tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, 7, 0, TH_ACK, b"abc")[14:]
    p = tmp_path / "raw.pcap"
    write(p, [(T0, frame)], link=101)
    assert read_trace(p).packets[0].payload == b"abc"


def test_truncated_tail_is_tolerated(tmp_path):
    p = tmp_path / "cut.pcap"
    write(p, [(T0, tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, 0, 0, TH_ACK, b"abc"))] * 2)
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    t = read_trace(p)
    assert len(t.packets) == 1 and t.stats.truncated


def stream(pkts):
    (f,) = reassemble(pkts)
    return f


def test_in_order():
    f = stream(syn_pair() + [pkt(10, b"AB", seq=1), pkt(20, b"CD", seq=3)])
    assert f.c2s.data == b"ABCD" and not f.gapped


def test_reordered_matches_in_order():
    a = stream(syn_pair() + [pkt(10, b"AB", seq=1), pkt(20, b"CD", seq=3)])
    b = stream(syn_pair() + [pkt(20, b"CD", seq=3), pkt(10, b"AB", seq=1)])
    assert b.c2s.data == a.c2s.data == b"ABCD"


def test_retransmit_counts_packet_once_in_stream():
    f = stream(syn_pair() + [pkt(10, b"AB", seq=1), pkt(15, b"AB", seq=1), pkt(20, b"CD", seq=3)])
    assert f.c2s.data == b"ABCD"
    assert f.payload_pkts["c2s"] == 3
    assert f.payload_bytes["c2s"] == 6  # packet stats see the retransmission
    assert len(f.c2s.data) == 4


def test_hole_truncates_and_flags():
    f = stream(syn_pair() + [pkt(10, b"AB", seq=1), pkt(20, b"EF", seq=5)])
    assert f.c2s.data == b"AB" and f.gapped


def test_overlap_first_writer_wins():
    f = stream(syn_pair() + [pkt(10, b"ABC", seq=1), pkt(20, b"XYZW", seq=2)])
    assert f.c2s.data == b"ABCZW"


def test_sequence_wraparound():
    isn = 2**32 - 2
    f = stream(syn_pair(cisn=isn) + [pkt(10, b"AB", seq=isn + 1), pkt(20, b"CD", seq=(isn + 3) % 2**32)])
    assert f.c2s.data == b"ABCD"


def test_orientation_from_syn_even_if_server_speaks_first_in_capture():
    sa, s = syn_pair()[1], syn_pair()[0]
    f = stream([sa, s])
    assert f.key.client_ip == "10.0.0.1" and f.syn_seen


def test_midstream_flow():
    f = stream([pkt(10, b"hello", seq=1000)])
    assert f.midstream and f.c2s.data == b"hello"


def test_idle_split():
    a = syn_pair() + [pkt(10, b"AB", seq=1)]
    b = [pkt(10 + FLOW_IDLE_TIMEOUT_US + 1, b"CD", seq=3)]
    flows = reassemble(a + b)
    assert len(flows) == 2
    assert flows[0].first_ts <= flows[0].last_ts


def test_exact_duplicates_dropped():
    p = pkt(10, b"AB", seq=1)
    f = stream(syn_pair() + [p, p])
    assert f.duplicates == 1 and f.payload_pkts["c2s"] == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.binary(min_size=1, max_size=9), min_size=1, max_size=12), st.randoms(use_true_random=False),
       st.integers(0, 2**32 - 1))
def test_permutation_invariance(chunks, rnd, isn):
    segs, seq = [], isn + 1
    for i, c in enumerate(chunks):
        segs.append(pkt(100 + i, c, seq=seq % 2**32))
        seq += len(c)
    base = stream(syn_pair(cisn=isn) + segs).c2s.data
    shuffled = list(segs)
    rnd.shuffle(shuffled)
    assert stream(syn_pair(cisn=isn) + shuffled).c2s.data == base == b"".join(chunks)


def test_conservation(small_trace):
    pcap, _ = small_trace
    t = read_trace(pcap)
    assert t.stats.tcp_bytes + t.stats.other_bytes == t.stats.total_bytes
    assert sum(r.frame_len for r in t.packets) == t.stats.tcp_bytes
    assert t.stats.tcp_payload_bytes == sum(len(r.payload) for r in t.packets)
    for f in reassemble(t.packets):
        assert f.first_ts_us <= f.last_ts_us


def test_reassembly_is_deterministic_under_input_order():
    pkts = syn_pair() + [pkt(10 + i, bytes([65 + i]), seq=1 + i) for i in range(20)]
    ref = [(f.key, f.c2s.data) for f in reassemble(pkts)]
    random.Random(3).shuffle(pkts)
    assert [(f.key, f.c2s.data) for f in reassemble(pkts)] == ref

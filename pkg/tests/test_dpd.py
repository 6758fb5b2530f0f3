import itertools

from conftest import pkt, syn_pair
from mmotrace import wow
from mmotrace.capture import reassemble
from mmotrace.dpd import Detector, DpdState, Kind, classify, confirm_responder, detect, match_initiator
from mmotrace.pipeline import analyze
from mmotrace.synthgen import load_manifest


def test_initiator_signatures():
    assert match_initiator(bytes.fromhex("0000220057") + b"oW") is Kind.LOGON
    assert match_initiator(bytes.fromhex("0031ed01") + b"\x00" * 8) is Kind.GAME
    assert match_initiator(b"GET ") is None
    assert match_initiator(b"\x00\x31") is None


def test_double_match_prefers_logon():
    assert match_initiator(b"\x00\x00\xed\x01WoW") is Kind.LOGON


def test_responder_signatures():
    assert confirm_responder(Kind.LOGON, b"\x00\x00" + bytes(32)) is DpdState.CONFIRMED
    assert confirm_responder(Kind.GAME, bytes.fromhex("0006ec01") + bytes(4)) is DpdState.CONFIRMED
    assert confirm_responder(Kind.GAME, bytes.fromhex("0006ed01") + bytes(4)) is DpdState.REJECTED
    assert confirm_responder(Kind.LOGON, b"\x01") is DpdState.REJECTED


def test_exhaustive_two_step_soundness():
    inits = [wow.build_logon_challenge("AB", 8606), wow.build_game_auth("AB", 8606, 1).encode(),
             b"GET / HTTP/1.1", b"\x00\x01\x02\x03XYZ", b"\x10\x00\xed\x01"]
    resps = [b"\x00\x00" + bytes(32), wow.build_auth_challenge(1).encode(), b"\x01\x00", b"HTTP/1.1 200",
             b"\x00\x06\xed\x01\x00\x00\x00\x00"]
    for i, r in itertools.product(inits, resps):
        d = Detector()
        d.on_initiator(i)
        d.on_responder(r)
        d.close()
        k = match_initiator(i)
        want = k is not None and confirm_responder(k, r) is DpdState.CONFIRMED
        assert (d.state is DpdState.CONFIRMED) == want
        assert d.state in (DpdState.CONFIRMED, DpdState.REJECTED)


def test_rejected_is_final():
    d = Detector()
    d.on_initiator(b"GET /")
    d.on_initiator(wow.build_logon_challenge("A", 8606))
    d.on_responder(b"\x00\x00")
    assert d.state is DpdState.REJECTED


def test_candidate_without_reply_is_rejected():
    d = Detector()
    d.on_initiator(wow.build_logon_challenge("A", 8606))
    d.close()
    assert d.state is DpdState.REJECTED


def _game_flow(mid=False):
    auth = wow.build_game_auth("AXKQ", 8606, 7).encode()
    chal = wow.build_auth_challenge(1).encode()
    pkts = [pkt(10, auth, seq=1), pkt(20, chal, seq=1, src="10.0.0.2", dst="10.0.0.1", sport=8085, dport=40000)]
    return pkts if mid else syn_pair() + pkts


def test_game_flow_confirmed_and_attributed():
    (c,) = detect(reassemble(_game_flow()))
    assert c.is_game and c.token == "AXKQ" and c.version is wow.ProtocolVersion.A


def test_midstream_never_confirmed():
    (c,) = detect(reassemble(_game_flow(mid=True)))
    assert c.state is DpdState.REJECTED and "mid-stream" in c.reason


def test_signature_split_across_segments():
    auth = wow.build_game_auth("AXKQ", 8606, 7).encode()
    chal = wow.build_auth_challenge(1).encode()
    pkts = syn_pair() + [pkt(10, auth[:2], seq=1), pkt(11, auth[2:], seq=3),
                         pkt(20, chal, seq=1, src="10.0.0.2", dst="10.0.0.1", sport=8085, dport=40000)]
    (f,) = reassemble(pkts)
    assert classify(f).is_game


def test_generated_adversarial_flows_rejected(small_trace):
    pcap, manifest = small_trace
    a = analyze(pcap)
    adv = {tuple(k) for k in load_manifest(pcap.with_name("trace.manifest.json")).adversarial_flows}
    assert adv == {tuple(k) for k in manifest.adversarial_flows} and len(adv) == 10
    seen = 0
    for c in a.connections:
        k = (c.key.client_ip, c.key.client_port, c.key.server_ip, c.key.server_port)
        if k in adv:
            seen += 1
            assert c.state is DpdState.REJECTED and c.kind is not None
    assert seen == len(adv)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmotrace.capture import TH_ACK, TH_SYN, PacketRecord  # noqa: E402
from mmotrace.synthgen import from_dict, generate  # noqa: E402

T0 = 1_218_196_800_000_000


def pkt(ts, payload=b"", seq=1, src="10.0.0.1", dst="10.0.0.2", sport=40000, dport=8085,
        flags=TH_ACK, ack=0):
    return PacketRecord(T0 + ts, src, dst, sport, dport, seq, ack, flags, payload, 54 + len(payload))


def syn_pair(ts=0, cisn=0, sisn=0, **kw):
    """Client SYN and server SYN-ACK for the default 4-tuple."""
    return [pkt(ts, seq=cisn, flags=TH_SYN, **kw),
            pkt(ts + 1, seq=sisn, flags=TH_SYN | TH_ACK, src=kw.get("dst", "10.0.0.2"),
                dst=kw.get("src", "10.0.0.1"), sport=kw.get("dport", 8085), dport=kw.get("sport", 40000))]


def run_scenario(tmp: Path, data: dict, name: str = "trace", seed=None):
    sc = from_dict(data)
    pcap = tmp / f"{name}.pcap"
    m = generate(sc, pcap, tmp / f"{name}.manifest.json", seed=seed)
    return pcap, m


@pytest.fixture(scope="session")
def small_trace(tmp_path_factory):
    """Ten users, mixed versions, teleports and background noise."""
    tmp = tmp_path_factory.mktemp("small")
    return run_scenario(tmp, {
        "duration_s": 1800, "seed": 11,
        "users": {"count": 10, "group_size_histogram": {"1": 4, "2": 2, "3": 1},
                  "session_model": {"sessions_per_user_mean": 1.5,
                                    "duration_lognormal": {"mu": 5.5, "sigma": 0.6}}},
        "movement": {"teleport_avatar_fraction": 0.2},
        "version_mix": {"fraction_A": 0.5},
        "background": {"flow_count": 60, "adversarial_count": 10, "byte_volume_target": 300_000,
                       "udp_packets": 25},
    })


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

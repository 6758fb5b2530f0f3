import math
from types import SimpleNamespace as NS

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import T0, pkt, run_scenario
from mmotrace import analytics as an
from mmotrace import wow
from mmotrace.capture import TH_ACK, TH_SYN, reassemble
from mmotrace.dpd import Kind, detect
from mmotrace.pipeline import analyze
from mmotrace.sessions import User

H = 3600 * 1_000_000
DAY0 = T0 - 12 * H  # 2008-08-08 00:00 UTC


def fake_user(token, intervals_us):
    conns = [NS(is_game=True, first_ts_us=a, last_ts_us=b) for a, b in intervals_us]
    return User(token, conns, {"10.0.0.1"})


def test_constant_stream_flow_stats():
    srv = dict(src="10.0.0.2", dst="10.0.0.1", sport=8085, dport=40000)
    auth = wow.build_game_auth("A" * 32, 8606, 1).encode()
    move = wow.build_movement(wow.MovementMessage(wow.short_id(1), 0.0, 0.0, 0.0), wow.ProtocolVersion.A).encode()
    assert len(auth) == len(move) == 43
    pkts = [pkt(0, seq=0, flags=TH_SYN), pkt(1, seq=0, flags=TH_SYN | TH_ACK, **srv)]
    seq = 1
    for i, body in enumerate([auth] + [move] * 9):
        pkts.append(pkt((i + 1) * 1_000_000, body, seq=seq))
        seq += len(body)
    pkts.append(pkt(1_500_000, wow.build_auth_challenge(0).encode(), seq=1, **srv))
    conns = detect(reassemble(pkts))
    fs = an.flow_stats(conns, Kind.GAME, "c2s")
    assert list(fs.sizes.values) == [43.0] * 10
    assert fs.rates.values[0] == pytest.approx(1.0)
    assert fs.throughputs.values[0] == pytest.approx(43.0)


def test_version_a_size_cdf_peak(tmp_path):
    pcap, _ = run_scenario(tmp_path, {"duration_s": 900, "users": {
        "count": 3, "group_size_histogram": {"1": 3},
        "session_model": {"duration_lognormal": {"mu": 5.5, "sigma": 0.3}}}, "version_mix": {"fraction_A": 1}})
    cdf = analyze(pcap).cdfs["size_game_c2s"]
    jumps = np.diff(np.concatenate([[0.0], cdf.fractions]))
    vals = np.unique(cdf.values)
    step = [jumps[cdf.values == v].sum() for v in vals]
    assert vals[int(np.argmax(step))] == 43.0


def test_movement_share_edges():
    none = [NS(is_game=True, game=NS(movement_packets=0, c2s_payload_packets=4))]
    every = [NS(is_game=True, game=NS(movement_packets=4, c2s_payload_packets=4))]
    assert an.movement_share(none) == 0.0 and an.movement_share(every) == 1.0
    assert an.movement_share([]) == 0.0


def test_movement_share_matches_manifest(small_trace):
    pcap, m = small_trace
    num, den = an.movement_counts(analyze(pcap).connections)
    assert (num, den) == (m.movement["movement_packets"], m.movement["c2s_packets"])


def test_wow_share_matches_manifest(small_trace):
    pcap, m = small_trace
    s = analyze(pcap).summary()
    assert (s["wow"]["packets"], s["trace"]["total_packets"]) == (m.wow["packets"], m.trace["packets"])
    assert s["wow"]["packet_share"] == m.wow["packet_share"]


def test_identical_sessions_degenerate_cdf(tmp_path):
    pcap, _ = run_scenario(tmp_path, {"duration_s": 3700, "users": {
        "count": 5, "group_size_histogram": {"1": 5},
        "session_model": {"fixed_sessions": [[50, 3650]]}}, "movement": {"movement_hz": 0.2}})
    cdf = analyze(pcap).cdfs["playing_user_all"]
    assert list(cdf.values) == [3600.0] * 5 and cdf.fractions[-1] == 1.0


def test_evening_slots():
    u = fake_user("A", [(DAY0 + 19 * H, DAY0 + 23 * H)])
    m = an.time_of_day({"A": u}, 60, DAY0)
    mins = m.minutes[0]
    assert list(np.nonzero(mins)[0]) == [19, 20, 21, 22] and all(mins[19:23] == 60)


def test_quarter_hour():
    u = fake_user("A", [(DAY0 + 10 * H + H // 2, DAY0 + 10 * H + 3 * H // 4)])
    m = an.time_of_day({"A": u}, 60, DAY0)
    assert m.minutes[0][10] == 15 and m.minutes[0].sum() == 15


def test_columns_rotate_to_trace_start():
    u = fake_user("A", [(T0, T0 + H // 2)])
    assert an.time_of_day({"A": u}, 60, T0).minutes[0][0] == 30


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3 * 24 * H), st.integers(1, 6 * H)), min_size=1, max_size=6),
       st.sampled_from([5, 10, 15, 30, 60]))
def test_row_sum_identity(spans, slot):
    ivs = [(DAY0 + a, DAY0 + a + d) for a, d in spans]
    u = fake_user("A", ivs)
    m = an.time_of_day({"A": u}, slot, DAY0)
    played = sum(b - a for a, b in u.playing_intervals)
    assert int(m.cells_us[0].sum()) == played
    assert m.cells_us.min() >= 0


def test_row_cells_bounded_by_slot_within_one_day():
    u = fake_user("A", [(DAY0 + 3 * H, DAY0 + 20 * H)])
    m = an.time_of_day({"A": u}, 60, DAY0)
    assert (m.cells_us <= 60 * an.US_PER_MIN).all()


def mv(x, y, z, ts_s):
    return wow.MovementMessage(b"\x01\x00\x00\x00", x, y, z, ts_us=int(ts_s * 1e6))


def test_three_four_five():
    (ps,) = an.path_stats({"a": [mv(0, 0, 0, 0), mv(3, 4, 0, 1)]}).values()
    assert ps.total_distance == 5 and ps.steps[0].speed == 5


def test_same_timestamp_steps_merge():
    (ps,) = an.path_stats({"a": [mv(0, 0, 0, 0), mv(3, 4, 0, 1), mv(6, 8, 0, 1)]}).values()
    assert len(ps.steps) == 1 and ps.total_distance == 10


def test_walk_distance_triangle_inequality(small_trace):
    pcap, m = small_trace
    a = analyze(pcap)
    for avatar, ps in a.raw_paths.items():
        by_ts = sorted((mm for c in a.connections if c.game for mm in c.game.movements if mm.avatar_id == avatar),
                       key=lambda mm: mm.ts_us)
        p, q = by_ts[0], by_ts[-1]
        assert ps.total_distance >= math.dist((p.x, p.y, p.z), (q.x, q.y, q.z)) - 1e-6
    for u in m.users:
        assert u.total_distance_wm >= u.walk_distance_wm


def test_configured_speed_recovered(small_trace):
    pcap, _ = small_trace
    a = analyze(pcap)
    assert an.mean_avatar_speed(a.paths) == pytest.approx(4.25, rel=0.02)


def test_teleport_filter_noop_and_bound(small_trace):
    pcap, _ = small_trace
    a = analyze(pcap)
    same, rep = an.teleport_filter(a.raw_paths, 1e12)
    assert not rep.affected
    assert all(p.kept == a.raw_paths[k].steps for k, p in same.items())
    _, rep = an.teleport_filter(a.raw_paths, 100)
    kept = [s.speed for p in a.paths.values() for s in p.kept]
    assert max(kept) <= 100 * rep.median_speed


def test_teleport_filter_rejects_small_factor():
    with pytest.raises(ValueError):
        an.teleport_filter({}, 1.0)


def test_cdf_invariants(small_trace):
    pcap, _ = small_trace
    a = analyze(pcap)
    for name, cdf in a.cdfs.items():
        if len(cdf):
            assert np.all(np.diff(cdf.values) >= 0) and np.all(np.diff(cdf.fractions) > 0), name
            assert cdf.fractions[-1] == 1.0
    assert len(a.cdfs["playing_user_all"]) == len(a.users)
    assert len(a.cdfs["duration_game_all"]) == sum(c.is_game for c in a.connections)
    assert len(a.cdfs["playing_user_all_tiger"]) + len(a.cdfs["playing_user_all_lion"]) == \
        sum(len(u.client_ips) for u in a.users.values())


def test_cdf_probes():
    c = an.Cdf.from_samples([1, 2, 3, 4, 5])
    assert c.fraction_below(3) == 0.4 and c.fraction_above(3) == 0.4
    assert an.Cdf.from_samples([]).fraction_below(1) == 0.0


def test_empty_summary(tmp_path):
    from mmotrace.capture import PcapWriter

    p = tmp_path / "e.pcap"
    PcapWriter(p).close()
    s = analyze(p).summary()
    assert s["users"]["count"] == 0 and s["trace"]["total_packets"] == 0
    assert s["movement"]["share"] == 0.0 and s["speed"]["mean_filtered_wm_s"] == 0.0

"""Packetize a Simulation into a pcap and compute the exact ground-truth manifest."""

from __future__ import annotations

import json
import math
import random
import socket
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..capture import TH_ACK, TH_FIN, TH_SYN, PcapWriter
from ..sessions import SIZE_ROWS, size_row, union_intervals
from .simulate import C2S, FlowSpec, Simulation, TrackPoint, UdpSpec

TH_PSH = 0x08
MSS = 1460
CLIENT_MAC = bytes.fromhex("020000000002")
SERVER_MAC = bytes.fromhex("020000000001")
CATEGORIES = ("wow-logon", "wow-game", "wow-movement", "background", "adversarial", "other")


def inet_checksum(data: bytes) -> int:
    if len(data) & 1:
        data += b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def tcp_frame(src: str, dst: str, sport: int, dport: int, seq: int, ack: int, flags: int,
              payload: bytes, ident: int = 0, c2s: bool = True) -> bytes:
    """Ethernet + IPv4 + TCP frame with valid checksums."""
    s, d = socket.inet_aton(src), socket.inet_aton(dst)
    tcp = struct.pack("!HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF, 5 << 4, flags, 65535, 0, 0)
    pseudo = s + d + struct.pack("!BBH", 0, 6, len(tcp) + len(payload))
    csum = inet_checksum(pseudo + tcp + payload)
    tcp = tcp[:16] + struct.pack("!H", csum) + tcp[18:]
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(tcp) + len(payload), ident & 0xFFFF, 0x4000, 64, 6, 0, s, d)
    ip = ip[:10] + struct.pack("!H", inet_checksum(ip)) + ip[12:]
    eth = (SERVER_MAC + CLIENT_MAC) if c2s else (CLIENT_MAC + SERVER_MAC)
    return eth + b"\x08\x00" + ip + tcp + payload


def udp_frame(u: UdpSpec, ident: int = 0) -> bytes:
    s, d = socket.inet_aton(u.src_ip), socket.inet_aton(u.dst_ip)
    udp = struct.pack("!HHHH", u.src_port, u.dst_port, 8 + len(u.payload), 0) + u.payload
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), ident & 0xFFFF, 0x4000, 64, 17, 0, s, d)
    ip = ip[:10] + struct.pack("!H", inet_checksum(ip)) + ip[12:]
    return SERVER_MAC + CLIENT_MAC + b"\x08\x00" + ip + udp


@dataclass
class _Pkt:
    ts_us: int
    order: tuple
    frame: bytes
    category: str
    movement: bool = False


@dataclass
class _Emitted:
    flow: FlowSpec
    packets: list[_Pkt]
    track: list[TrackPoint]  # movement points with their final timestamps


def _packetize(idx: int, f: FlowSpec, rng: random.Random) -> _Emitted:
    isn = {C2S: rng.getrandbits(32), "s2c": rng.getrandbits(32)}
    nxt = {C2S: isn[C2S], "s2c": isn["s2c"]}
    plan: list[tuple[int, str, int, bytes, bool, TrackPoint | None]] = []
    o = f.open_us
    plan.append((o, C2S, TH_SYN, b"", False, None))
    plan.append((o + 20_000, "s2c", TH_SYN | TH_ACK, b"", False, None))
    plan.append((o + 40_000, C2S, TH_ACK, b"", False, None))
    for m in f.messages:
        body = m.payload
        if f.category.startswith("wow") or len(body) <= MSS:
            plan.append((m.ts_us, m.direction, TH_PSH | TH_ACK, body, m.kind == "movement", m.point))
        else:
            for k in range(0, len(body), MSS):
                plan.append((m.ts_us, m.direction, TH_PSH | TH_ACK, body[k:k + MSS], False, None))
    c = f.close_us
    plan.append((c - 40_000, C2S, TH_FIN | TH_ACK, b"", False, None))
    plan.append((c - 20_000, "s2c", TH_FIN | TH_ACK, b"", False, None))
    plan.append((c, C2S, TH_ACK, b"", False, None))

    pkts, track = [], []
    last = None
    syn_done = {C2S: False, "s2c": False}
    for k, (ts, d, flags, body, is_move, point) in enumerate(plan):
        if last is not None and ts <= last:
            ts = last + 1
        last = ts
        other = "s2c" if d == C2S else C2S
        seq = nxt[d]
        ack = nxt[other] if syn_done[other] or flags & TH_ACK else 0
        if flags & (TH_SYN | TH_FIN):
            nxt[d] = (nxt[d] + 1) & 0xFFFFFFFF
            if flags & TH_SYN:
                syn_done[d] = True
        nxt[d] = (nxt[d] + len(body)) & 0xFFFFFFFF
        c2s = d == C2S
        src, dst = (f.client_ip, f.server_ip) if c2s else (f.server_ip, f.client_ip)
        sp, dp = (f.client_port, f.server_port) if c2s else (f.server_port, f.client_port)
        frame = tcp_frame(src, dst, sp, dp, seq, ack if flags & TH_ACK else 0, flags, body, ident=k, c2s=c2s)
        pkts.append(_Pkt(ts, (idx, k), frame, f.category, is_move))
        if point is not None:
            track.append(TrackPoint(ts, point.x, point.y, point.z, point.teleport))
    return _Emitted(f, pkts, track)


# --------------------------------------------------------------------------- manifest


@dataclass
class UserTruth:
    token: str
    version: str
    avatar_id: str
    ips: list[str]
    group_sizes: dict[str, int]
    user_class: str
    teleporter: bool
    sessions: list[list]  # [client ip, first packet us, last packet us] per game connection
    playing_us: int
    playing_s: float
    total_distance_wm: float
    walk_distance_wm: float
    mean_walk_speed_wm_s: float | None
    movement_frames: int


@dataclass
class Manifest:
    scenario: dict
    seed: int
    trace: dict
    categories: dict[str, dict[str, int]]
    wow: dict
    movement: dict
    speed: dict
    groups: list[dict]
    users: list[UserTruth] = field(default_factory=list)
    adversarial_flows: list[list] = field(default_factory=list)

    def user(self, token: str) -> UserTruth:
        for u in self.users:
            if u.token == token:
                return u
        raise KeyError(token)

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        d = dict(d)
        d["users"] = [UserTruth(**u) for u in d.get("users", [])]
        return cls(**d)


def load_manifest(path: str | Path) -> Manifest:
    return Manifest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def track_steps(track: list[TrackPoint]) -> list[tuple[float, float, bool]]:
    """(distance, dt seconds, teleport) for consecutive emitted movement points."""
    out = []
    for p, q in zip(track, track[1:]):
        d = math.sqrt((q.x - p.x) ** 2 + (q.y - p.y) ** 2 + (q.z - p.z) ** 2)
        out.append((d, (q.ts_us - p.ts_us) / 1e6, q.teleport))
    return out


def _user_truth(sim: Simulation, emitted: list[_Emitted]) -> list[UserTruth]:
    by_user: dict[int, list[_Emitted]] = {}
    for e in emitted:
        if e.flow.user is not None and e.flow.category == "wow-game":
            by_user.setdefault(e.flow.user, []).append(e)
    out = []
    for u in sim.users:
        games = sorted(by_user.get(u.index, []), key=lambda e: e.packets[0].ts_us)
        sessions = [[e.flow.client_ip, e.packets[0].ts_us, e.packets[-1].ts_us] for e in games]
        playing = sum(b - a for a, b in union_intervals((s[1], s[2]) for s in sessions))
        track = sorted((p for e in games for p in e.track), key=lambda p: p.ts_us)
        steps = track_steps(track)
        walk = [(d, dt) for d, dt, tele in steps if not tele]
        moving = [(d, dt) for d, dt in walk if d > 0 and dt > 0]
        sizes = {ip: len(sim.ip_members[ip]) for ip in u.ips}
        out.append(UserTruth(
            token=u.token, version=u.version.value, avatar_id=u.avatar_id.hex(), ips=list(u.ips),
            group_sizes=sizes, user_class="lion" if any(s > 1 for s in sizes.values()) else "tiger",
            teleporter=u.teleporter, sessions=sessions, playing_us=playing, playing_s=playing / 1e6,
            total_distance_wm=math.fsum(d for d, _, _ in steps),
            walk_distance_wm=math.fsum(d for d, _ in walk),
            mean_walk_speed_wm_s=(math.fsum(d for d, _ in moving) / math.fsum(dt for _, dt in moving)) if moving else None,
            movement_frames=len(track)))
    return out


def _group_rows(sim: Simulation) -> list[dict]:
    rows = {s: {"size": s, "n_ips": 0, "n_users": 0} for s in SIZE_ROWS}
    for ip, members in sim.ip_members.items():
        r = rows[size_row(len(members))]
        r["n_ips"] += 1
        r["n_users"] += len(members)
    return list(rows.values())


def emit_pcap(sim: Simulation, out: str | Path) -> Manifest:
    """Write the simulation as an Ethernet pcap and return the exact manifest."""
    rng = random.Random(f"{sim.seed}:isn")
    emitted = [_packetize(i, f, rng) for i, f in enumerate(sim.flows)]
    allp = [p for e in emitted for p in e.packets]
    for j, u in enumerate(sim.udp):
        allp.append(_Pkt(u.ts_us, (len(emitted), j), udp_frame(u, j), "other"))
    allp.sort(key=lambda p: (p.ts_us, p.order))

    cats = {c: {"flows": 0, "packets": 0, "bytes": 0} for c in CATEGORIES}
    for e in emitted:
        cats[e.flow.category]["flows"] += 1
    with PcapWriter(out) as w:
        for p in allp:
            w.write(p.ts_us, p.frame)
            c = cats[p.category]
            c["packets"] += 1
            c["bytes"] += len(p.frame)
            if p.movement:
                cats["wow-movement"]["packets"] += 1
                cats["wow-movement"]["bytes"] += len(p.frame)
    cats["other"]["flows"] = 0

    total_p = len(allp)
    total_b = sum(len(p.frame) for p in allp)
    wow_p = cats["wow-logon"]["packets"] + cats["wow-game"]["packets"]
    wow_b = cats["wow-logon"]["bytes"] + cats["wow-game"]["bytes"]
    c2s_payload = sum(1 for e in emitted if e.flow.category == "wow-game"
                      for m in e.flow.messages if m.direction == C2S)
    mv = cats["wow-movement"]["packets"]

    users = _user_truth(sim, emitted)
    speeds = [u.mean_walk_speed_wm_s for u in users if u.mean_walk_speed_wm_s is not None]
    sc = sim.scenario
    return Manifest(
        scenario=sc.to_dict(), seed=sim.seed,
        trace={"first_ts_us": allp[0].ts_us if allp else None, "last_ts_us": allp[-1].ts_us if allp else None,
               "packets": total_p, "bytes": total_b},
        categories=cats,
        wow={"packets": wow_p, "bytes": wow_b,
             "packet_share": wow_p / total_p if total_p else 0.0,
             "byte_share": wow_b / total_b if total_b else 0.0},
        movement={"movement_packets": mv, "c2s_packets": c2s_payload,
                  "share": mv / c2s_payload if c2s_payload else 0.0},
        speed={"walk_speed_wm_s": sc.movement.walk_speed_wm_s,
               "mean_walk_speed_wm_s": math.fsum(speeds) / len(speeds) if speeds else None,
               "n_avatars": sum(1 for u in users if u.movement_frames > 1),
               "teleport_avatars": sum(1 for u in users if u.teleporter and u.movement_frames > 1)},
        groups=_group_rows(sim),
        users=users,
        adversarial_flows=[[f.client_ip, f.client_port, f.server_ip, f.server_port]
                           for f in sim.flows if f.category == "adversarial"],
    )


def generate(scenario, out: str | Path, manifest_path: str | Path | None = None, seed: int | None = None) -> Manifest:
    from .simulate import simulate

    m = emit_pcap(simulate(scenario, seed), out)
    if manifest_path is not None:
        m.dump(manifest_path)
    return m

"""Turn a Scenario into timed connection events.

Everything here is driven by ``random.Random`` instances seeded from the
scenario seed, so a (scenario, seed) pair always yields the same events.
"""

from __future__ import annotations

import math
import random
import string
import struct
from dataclasses import dataclass, field
from statistics import NormalDist

from .. import wow
from ..wow import ProtocolVersion, f32
from .scenario import LOGON_LEAD_S, MIN_SESSION_S, SESSION_TAIL_S, Scenario

C2S, S2C = "c2s", "s2c"

LOGON_PORT = 3724
GAME_PORT = 8085
HANDSHAKE_US = 40_000  # SYN .. ACK spans this long; FIN exchange likewise


@dataclass
class Message:
    ts_us: int
    direction: str
    payload: bytes
    kind: str = "other"  # movement | auth | other
    point: "TrackPoint | None" = None


@dataclass
class FlowSpec:
    category: str  # wow-logon | wow-game | background | adversarial
    client_ip: str
    client_port: int
    server_ip: str
    server_port: int
    open_us: int
    close_us: int
    messages: list[Message] = field(default_factory=list)
    user: int | None = None


@dataclass
class UdpSpec:
    ts_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    payload: bytes


@dataclass
class TrackPoint:
    ts_us: int
    x: float
    y: float
    z: float
    teleport: bool = False


@dataclass
class SimUser:
    index: int
    token: str
    version: ProtocolVersion
    avatar_id: bytes
    ips: list[str]
    teleporter: bool = False
    sessions: list[tuple[str, float, float]] = field(default_factory=list)  # (ip, start_s, end_s)


@dataclass
class Simulation:
    scenario: Scenario
    seed: int
    flows: list[FlowSpec]
    udp: list[UdpSpec]
    users: list[SimUser]
    ip_members: dict[str, list[int]]  # client ip -> user indices

    def label_of(self, ip: str) -> str:
        return "tiger" if len(self.ip_members[ip]) == 1 else "lion"


def _rng(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}:{name}")


def _poisson(rng: random.Random, lam: float) -> int:
    if lam <= 0:
        return 0
    k, p, limit = 0, 1.0, math.exp(-lam)
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def _ip(prefix: tuple[int, int], n: int) -> str:
    return f"{prefix[0]}.{prefix[1]}.{n // 250}.{n % 250 + 1}"


class _Ports:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.next: dict[str, int] = {}

    def take(self, ip: str) -> int:
        p = self.next.get(ip)
        if p is None:
            p = 49152 + self.rng.randrange(4096)
        self.next[ip] = 49152 + ((p - 49152 + 1) % 16384)
        return p


# --------------------------------------------------------------------------- population


def _tokens(rng: random.Random, n: int) -> list[str]:
    alphabet = string.ascii_uppercase + string.digits
    out, seen = [], set()
    while len(out) < n:
        t = "".join(rng.choice(alphabet) for _ in range(rng.randint(4, 10)))
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def _assign_ips(sc: Scenario, rng: random.Random) -> tuple[dict[str, list[int]], list[list[str]]]:
    """Fill every IP's slots with distinct users; surplus slots reuse users (IP reallocation)."""
    n_users = sc.users.count
    ips: list[tuple[str, int]] = []
    idx = 1
    for size in sorted(sc.users.group_size_histogram):
        for _ in range(sc.users.group_size_histogram[size]):
            ips.append((_ip((10, 1), idx), size))
            idx += 1
    slots = [(ip, k) for ip, size in ips for k in range(size)]
    order = list(range(len(slots)))
    rng.shuffle(order)
    members: dict[str, list[int]] = {ip: [] for ip, _ in ips}
    user_ips: list[list[str]] = [[] for _ in range(n_users)]
    for pos, si in enumerate(order):
        ip = slots[si][0]
        if pos < n_users:
            u = pos
        else:
            cands = [u for u in range(n_users) if u not in members[ip]]
            fewest = min(len(user_ips[u]) for u in cands)
            u = rng.choice([c for c in cands if len(user_ips[c]) == fewest])
        members[ip].append(u)
        user_ips[u].append(ip)
    for ip in members:
        members[ip].sort()
    return members, user_ips


# --------------------------------------------------------------------------- sessions


def _weighted_start(rng: random.Random, sc: Scenario, weights: list[float], lo: float, hi: float) -> float:
    if hi <= lo:
        return lo
    pieces = []
    t = lo
    epoch = sc.trace_start_epoch
    while t < hi:
        abs_t = epoch + t
        nxt = min(hi, (math.floor(abs_t / 3600) + 1) * 3600 - epoch)
        pieces.append((t, nxt, weights[int(abs_t // 3600) % 24] * (nxt - t)))
        t = nxt
    total = sum(w for *_, w in pieces)
    if total <= 0:
        return rng.uniform(lo, hi)
    r = rng.random() * total
    for a, b, w in pieces:
        if r < w:
            return a + (b - a) * (r / w)
        r -= w
    return pieces[-1][1]


def _plan_sessions(sc: Scenario, users: list[SimUser], members: dict[str, list[int]], rng: random.Random):
    label = {ip: ("tiger" if len(m) == 1 else "lion") for ip, m in members.items()}
    D = sc.duration_s
    base = sc.users.session_model
    if base.fixed_sessions:
        for u in users:
            for j, (a, b) in enumerate(base.fixed_sessions):
                u.sessions.append((u.ips[j % len(u.ips)], float(a), float(b)))
        return

    plans = []  # (user, ip, window_lo, window_hi)
    for u in users:
        extra = _poisson(rng, base.sessions_per_user_mean - 1.0)
        room = int(D // (MIN_SESSION_S + LOGON_LEAD_S + SESSION_TAIL_S))
        k = max(len(u.ips), min(1 + extra, room))
        ips = list(u.ips) + [rng.choice(u.ips) for _ in range(k - len(u.ips))]
        rng.shuffle(ips)
        for j, ip in enumerate(ips):
            plans.append((u, ip, D * j / k, D * (j + 1) / k))

    durations: list[float] = [0.0] * len(plans)
    by_label: dict[str, list[int]] = {}
    for i, (_u, ip, _a, _b) in enumerate(plans):
        by_label.setdefault(label[ip], []).append(i)
    for lab, idxs in sorted(by_label.items()):
        sm = sc.session_model_for(lab)
        mu, sigma = sm.duration_lognormal.mu, sm.duration_lognormal.sigma
        if sm.stratified:
            shuffled = list(idxs)
            rng.shuffle(shuffled)
            n = len(shuffled)
            for r, i in enumerate(shuffled):
                z = NormalDist().inv_cdf((r + 0.5) / n) if sigma > 0 else 0.0
                durations[i] = math.exp(mu + sigma * z)
        else:
            for i in idxs:
                durations[i] = rng.lognormvariate(mu, sigma)

    for i, (u, ip, w0, w1) in enumerate(plans):
        sm = sc.session_model_for(label[ip])
        lo = w0 + LOGON_LEAD_S
        max_d = (w1 - SESSION_TAIL_S) - lo
        d = min(max(durations[i], MIN_SESSION_S), max_d)
        start = _weighted_start(rng, sc, sm.start_hour_weights, lo, w1 - SESSION_TAIL_S - d)
        u.sessions.append((ip, start, start + d))
    for u in users:
        u.sessions.sort(key=lambda s: s[1])


# --------------------------------------------------------------------------- movement


class _Avatar:
    def __init__(self, rng: random.Random, radius: float):
        self.rng = rng
        self.radius = radius
        self.home = (rng.uniform(-3000, 3000), rng.uniform(-3000, 3000))
        self.pos = (f32(self.home[0]), f32(self.home[1]), f32(rng.uniform(0, 50)))
        self.waypoint = None

    def pick_waypoint(self, min_dist: float):
        for _ in range(32):
            ang = self.rng.uniform(0, 2 * math.pi)
            r = self.radius * math.sqrt(self.rng.random())
            wp = (self.home[0] + r * math.cos(ang), self.home[1] + r * math.sin(ang), self.rng.uniform(0, 50))
            if math.dist(wp, self.pos) >= min_dist:
                self.waypoint = wp
                return
        # radius too small for the step length: head straight out from the current spot
        ang = self.rng.uniform(0, 2 * math.pi)
        x, y, z = self.pos
        self.waypoint = (x + min_dist * math.cos(ang), y + min_dist * math.sin(ang), z)


def _movement_track(avatar: _Avatar, mv, teleporter: bool, t0: float, t_end: float,
                    rng: random.Random) -> list[tuple[float, tuple[float, float, float], bool, int]]:
    """Random-waypoint walk sampled at movement_hz; returns (t, pos, teleport, move_flags)."""
    v, dt = mv.walk_speed_wm_s, 1.0 / mv.movement_hz
    out = [(t0, avatar.pos, False, 0)]
    t = t0
    while True:
        if avatar.waypoint is None:
            avatar.pick_waypoint(2 * v * dt)
        remaining = math.dist(avatar.pos, avatar.waypoint)
        if remaining < 1e-3:
            avatar.waypoint = None
            continue
        t_rem = remaining / v
        if mv.waypoint_pause_s == 0 and remaining <= v * dt:
            # no pause: walk through the waypoint so every step is exactly v * dt long
            t_next = t + dt
            if t_next > t_end:
                break
            frac = v * dt / remaining
            avatar.pos = tuple(f32(p + (w - p) * frac) for p, w in zip(avatar.pos, avatar.waypoint))
            avatar.waypoint = None
            out.append((t_next, avatar.pos, False, 1))
            t = t_next
            continue
        if mv.waypoint_pause_s > 0 and t_rem <= 1.1 * dt:
            t_next = t + t_rem
            if t_next > t_end:
                break
            avatar.pos = tuple(f32(c) for c in avatar.waypoint)
            avatar.waypoint = None
            out.append((t_next, avatar.pos, False, 0))
            t = t_next
            if mv.waypoint_pause_s > 0:
                t_next = t + rng.expovariate(1.0 / mv.waypoint_pause_s)
                if t_next > t_end:
                    break
                out.append((t_next, avatar.pos, False, 1))
                t = t_next
            continue
        t_next = t + dt
        if t_next > t_end:
            break
        if teleporter and rng.random() < mv.teleport_step_fraction:
            ang = rng.uniform(0, 2 * math.pi)
            jump = mv.teleport_speed_factor * v * dt
            x, y, z = avatar.pos
            avatar.pos = (f32(x + jump * math.cos(ang)), f32(y + jump * math.sin(ang)), z)
            avatar.home = avatar.pos[:2]
            avatar.waypoint = None
            out.append((t_next, avatar.pos, True, 1))
        else:
            frac = v * dt / remaining
            avatar.pos = tuple(f32(p + (w - p) * frac) for p, w in zip(avatar.pos, avatar.waypoint))
            out.append((t_next, avatar.pos, False, 1))
        t = t_next
    return out


def _poisson_times(rng: random.Random, rate: float, t0: float, t1: float) -> list[float]:
    out = []
    if rate <= 0:
        return out
    t = t0
    while True:
        t += rng.expovariate(rate)
        if t >= t1:
            return out
        out.append(t)


# --------------------------------------------------------------------------- flows


class _Clock:
    def __init__(self, sc: Scenario):
        self.base = sc.trace_start_epoch * 1_000_000

    def us(self, t: float) -> int:
        return self.base + round(t * 1_000_000)


def _logon_flow(u: SimUser, ip: str, port: int, server: str, start: float, clock: _Clock,
                rng: random.Random) -> FlowSpec:
    build = wow.BUILD_A if u.version is ProtocolVersion.A else wow.BUILD_B
    cver = (2, 4, 3) if u.version is ProtocolVersion.A else (3, 3, 5)
    f = FlowSpec("wow-logon", ip, port, server, LOGON_PORT, clock.us(start), clock.us(start + 2.0), user=u.index)
    rnd = lambda n: bytes(rng.getrandbits(8) for _ in range(n))
    realm = rnd(rng.randint(120, 200) if u.version is ProtocolVersion.A else rng.randint(60, 100))
    f.messages = [
        Message(clock.us(start + 0.10), C2S, wow.build_logon_challenge(u.token, build, cver), "auth"),
        Message(clock.us(start + 0.20), S2C, wow.build_logon_response(rnd(32))),
        Message(clock.us(start + 0.40), C2S, bytes([wow.LOGON_PROOF]) + rnd(74)),
        Message(clock.us(start + 0.55), S2C, bytes([wow.LOGON_PROOF, 0]) + rnd(30)),
        Message(clock.us(start + 0.80), C2S, bytes([wow.LOGON_REALM_LIST, 0, 0, 0, 0])),
        Message(clock.us(start + 1.00), S2C, bytes([wow.LOGON_REALM_LIST]) + struct.pack("<H", len(realm)) + realm),
    ]
    return f


def _game_flow(sc: Scenario, u: SimUser, avatar: _Avatar, ip: str, port: int, server: str,
               start: float, end: float, clock: _Clock, rng: random.Random, mv) -> FlowSpec:
    v = u.version
    build = wow.BUILD_A if v is ProtocolVersion.A else wow.BUILD_B
    f = FlowSpec("wow-game", ip, port, server, GAME_PORT, clock.us(start), clock.us(end), user=u.index)
    msgs = f.messages
    msgs.append(Message(clock.us(start + 0.10), C2S,
                        wow.build_game_auth(u.token, build, rng.getrandbits(32)).encode(), "auth"))
    msgs.append(Message(clock.us(start + 0.15), S2C, wow.build_auth_challenge(rng.getrandbits(32)).encode()))

    t_lo, t_hi = start + 1.0, end - 0.5
    session_start_us = clock.us(start)
    for t, pos, tele, flags in _movement_track(avatar, mv, u.teleporter, t_lo, t_hi, rng):
        ts = clock.us(t)
        prev = msgs[-1].point if msgs and msgs[-1].point else None
        orient = 0.0
        if prev is not None and (pos[0], pos[1]) != (prev.x, prev.y):
            orient = math.atan2(pos[1] - prev.y, pos[0] - prev.x) % (2 * math.pi)
        m = wow.MovementMessage(u.avatar_id, pos[0], pos[1], pos[2], orientation=orient,
                                game_time_ms=((ts - session_start_us) // 1000) & 0xFFFFFFFF,
                                move_flags=flags)
        point = TrackPoint(ts, pos[0], pos[1], pos[2], tele)
        msgs.append(Message(ts, C2S, wow.build_movement(m, v).encode(), "movement", point))

    seq = 0
    t = start + mv.keepalive_s
    while t < t_hi:
        msgs.append(Message(clock.us(t), C2S, wow.build_ping(seq).encode()))
        msgs.append(Message(clock.us(t + 0.04), S2C, wow.build_pong(seq).encode()))
        seq += 1
        t += mv.keepalive_s
    for t in _poisson_times(rng, mv.chatter_hz, t_lo, t_hi):
        msgs.append(Message(clock.us(t), C2S, wow.build_opaque(bytes(rng.getrandbits(8) for _ in range(rng.randint(8, 40)))).encode()))
    for t in _poisson_times(rng, mv.chatter_hz, t_lo, t_hi):
        msgs.append(Message(clock.us(t), S2C, wow.build_opaque(bytes(rng.getrandbits(8) for _ in range(rng.randint(16, 120)))).encode()))
    x0, y0, z0 = avatar.pos
    for t in _poisson_times(rng, mv.object_update_hz, t_lo, t_hi):
        objs = []
        for _ in range(rng.randint(0, 6)):
            oid = wow.short_id(rng.getrandbits(32)) if v is ProtocolVersion.A else \
                wow.guid(rng.getrandbits(32), 0xF130, rng.randint(1, 8))
            objs.append((oid, f32(x0 + rng.uniform(-50, 50)), f32(y0 + rng.uniform(-50, 50)), f32(z0)))
        msgs.append(Message(clock.us(t), S2C, wow.build_object_update(objs, v).encode()))
    msgs.sort(key=lambda m: (m.ts_us, m.direction))
    return f


_HTTP_PATHS = ("index.html", "img/logo.png", "api/v1/items", "static/app.js", "news", "video/seg")


def _background_flow(sc: Scenario, rng: random.Random, ports: _Ports, clock: _Clock, n: int,
                     bytes_per_flow: int) -> FlowSpec:
    client = _ip((10, 2), rng.randrange(1, 4000))
    server = f"203.0.{113 + rng.randrange(2)}.{rng.randrange(1, 255)}"
    dur = rng.uniform(0.5, 5.0)
    start = rng.uniform(0, max(sc.duration_s - dur - 0.1, 0.0))
    f = FlowSpec("background", client, ports.take(client), server, rng.choice((80, 443, 8080)),
                 clock.us(start), clock.us(start + dur))
    if rng.random() < 0.5:
        req = f"GET /{rng.choice(_HTTP_PATHS)}?q={n} HTTP/1.1\r\nHost: example.net\r\n\r\n".encode()
        head = b"HTTP/1.1 200 OK\r\nContent-Type: application/octet-stream\r\n\r\n"
    else:
        req = b"\x16\x03\x01\x00\xa5\x01\x00\x00\xa1\x03\x03" + bytes(rng.getrandbits(8) for _ in range(60))
        head = b"\x16\x03\x03\x00\x5d\x02\x00\x00\x59\x03\x03"
    body_len = max(0, int(bytes_per_flow * rng.uniform(0.5, 1.5)) - len(head))
    body = head + bytes(rng.getrandbits(8) for _ in range(min(body_len, 64))) * (body_len // 64 + 1)
    body = body[:len(head) + body_len]
    f.messages = [Message(clock.us(start + 0.05), C2S, req), Message(clock.us(start + 0.10), S2C, body)]
    return f


def _adversarial_flow(sc: Scenario, rng: random.Random, ports: _Ports, clock: _Clock, n: int) -> FlowSpec:
    """Looks like WoW to step one, but the responder never answers with the WoW reply signature."""
    client = _ip((10, 3), rng.randrange(1, 4000))
    server = f"198.51.100.{rng.randrange(1, 255)}"
    dur = rng.uniform(0.5, 3.0)
    start = rng.uniform(0, max(sc.duration_s - dur - 0.1, 0.0))
    f = FlowSpec("adversarial", client, ports.take(client), server, rng.choice((3724, 8085, 80, 6112)),
                 clock.us(start), clock.us(start + dur))
    tail = bytes(rng.getrandbits(8) for _ in range(rng.randint(4, 40)))
    if n % 2 == 0:
        init = bytes([0x00, rng.getrandbits(8), rng.getrandbits(8), rng.getrandbits(8)]) + b"WoW" + tail
        reply = bytes([rng.randrange(1, 256)]) + tail
    else:
        init = bytes([rng.getrandbits(8), rng.getrandbits(8), 0xED, 0x01]) + tail
        bad = rng.choice([(0xED, 0x01), (0xEC, 0x02), (0x00, 0x01), (0xEE, 0x01)])
        reply = bytes([0x00, 0x06, *bad]) + tail
    f.messages = [Message(clock.us(start + 0.05), C2S, init), Message(clock.us(start + 0.10), S2C, reply)]
    return f


def simulate(sc: Scenario, seed: int | None = None) -> Simulation:
    """Build all flows for a scenario. ``seed`` overrides ``sc.seed``."""
    sc.validate()
    seed = sc.seed if seed is None else seed
    rng_pop = _rng(seed, "population")
    rng_ses = _rng(seed, "sessions")
    rng_mov = _rng(seed, "movement")
    rng_bg = _rng(seed, "background")
    clock = _Clock(sc)
    ports = _Ports(_rng(seed, "ports"))

    members, user_ips = _assign_ips(sc, rng_pop)
    n = sc.users.count
    tokens = _tokens(rng_pop, n)
    n_a = round(sc.version_mix.fraction_A * n)
    versions = [ProtocolVersion.A] * n_a + [ProtocolVersion.B] * (n - n_a)
    rng_pop.shuffle(versions)
    teleporters = set(rng_pop.sample(range(n), round(sc.movement.teleport_avatar_fraction * n))) if n else set()
    users = []
    for i in range(n):
        aid = wow.short_id(0x1000 + i) if versions[i] is ProtocolVersion.A else wow.guid(0x1000 + i, 0, 1)
        users.append(SimUser(i, tokens[i], versions[i], aid, sorted(user_ips[i]), i in teleporters))
    _plan_sessions(sc, users, members, rng_ses)

    label = {ip: ("tiger" if len(m) == 1 else "lion") for ip, m in members.items()}
    flows: list[FlowSpec] = []
    for u in users:
        avatar = _Avatar(rng_mov, sc.movement.waypoint_radius_wm)
        for ip, start, end in u.sessions:
            realm = 1 + (u.index % 4)
            logon_start = max(0.0, start - 5.0)
            flows.append(_logon_flow(u, ip, ports.take(ip), "172.16.0.1", logon_start, clock, rng_ses))
            mv = sc.movement_for(label[ip])
            flows.append(_game_flow(sc, u, avatar, ip, ports.take(ip), f"172.16.1.{realm}", start, end,
                                    clock, rng_mov, mv))

    bg = sc.background
    plain = bg.flow_count - bg.adversarial_count
    per_flow = bg.byte_volume_target // plain if plain else 0
    kinds = ["background"] * plain + ["adversarial"] * bg.adversarial_count
    rng_bg.shuffle(kinds)
    adv = 0
    for j, kind in enumerate(kinds):
        if kind == "background":
            flows.append(_background_flow(sc, rng_bg, ports, clock, j, per_flow))
        else:
            flows.append(_adversarial_flow(sc, rng_bg, ports, clock, adv))
            adv += 1
    udp = []
    for _ in range(bg.udp_packets):
        t = rng_bg.uniform(0, sc.duration_s)
        udp.append(UdpSpec(clock.us(t), _ip((10, 2), rng_bg.randrange(1, 4000)), "192.0.2.53",
                           ports.take("udp"), 53, bytes(rng_bg.getrandbits(8) for _ in range(rng_bg.randint(20, 80)))))
    return Simulation(sc, seed, flows, udp, users, members)

"""Traffic and behaviour statistics over dissected connections and users."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

import numpy as np

from .dpd import Connection, Kind
from .sessions import LION, TIGER, Groups, User, playing_time_us
from .wow import MovementMessage

logger = logging.getLogger(__name__)

SHORT_PLAY_S = 0.28 * 3600
LONG_PLAY_S = 2.8 * 3600
MIN_RATE_DURATION_S = 1.0
DEFAULT_TELEPORT_FACTOR = 100.0
DEFAULT_SLOT_MINUTES = 60
US_PER_MIN = 60_000_000


@dataclass
class Cdf:
    """Empirical CDF with one point per sample."""

    values: np.ndarray
    fractions: np.ndarray
    label: str = ""

    @classmethod
    def from_samples(cls, samples: Iterable[float], label: str = "") -> "Cdf":
        v = np.sort(np.asarray(list(samples), dtype=float))
        n = len(v)
        return cls(v, np.arange(1, n + 1, dtype=float) / n if n else np.zeros(0), label)

    def __len__(self) -> int:
        return len(self.values)

    def fraction_below(self, x: float) -> float:
        if not len(self.values):
            return 0.0
        return float(np.searchsorted(self.values, x, side="left")) / len(self.values)

    def fraction_above(self, x: float) -> float:
        if not len(self.values):
            return 0.0
        return 1.0 - float(np.searchsorted(self.values, x, side="right")) / len(self.values)

    def quantile(self, q):
        return np.quantile(self.values, q)


# --------------------------------------------------------------------------- flow statistics


@dataclass
class FlowStats:
    sizes: Cdf
    rates: Cdf
    throughputs: Cdf


def flow_stats(connections: list[Connection], kind: Kind, direction: str) -> FlowStats:
    """Per-packet payload sizes, per-connection packet rate and throughput.

    Connections shorter than a second are left out of rate and throughput.
    """
    sizes: list[int] = []
    rates, tputs = [], []
    for c in connections:
        if not c.confirmed or c.kind is not kind:
            continue
        f = c.flow
        sizes.extend(f.payload_sizes[direction])
        if f.duration >= MIN_RATE_DURATION_S:
            rates.append(f.payload_pkts[direction] / f.duration)
            tputs.append(f.payload_bytes[direction] / f.duration)
    tag = f"{kind.value}_{direction}"
    return FlowStats(Cdf.from_samples(sizes, f"size_{tag}"), Cdf.from_samples(rates, f"rate_{tag}"),
                     Cdf.from_samples(tputs, f"throughput_{tag}"))


def movement_counts(connections: list[Connection]) -> tuple[int, int]:
    """(movement packets, payload-bearing client packets) over confirmed game connections."""
    num = den = 0
    for c in connections:
        if c.is_game and c.game is not None:
            num += c.game.movement_packets
            den += c.game.c2s_payload_packets
    return num, den


def movement_share(connections: list[Connection]) -> float:
    num, den = movement_counts(connections)
    return num / den if den else 0.0


# --------------------------------------------------------------------------- durations


@dataclass
class Membership:
    """One (user, client IP) pair; users on several IPs appear once per IP."""

    token: str
    ip: str
    label: str
    playing_us: int


def memberships(users: dict[str, User], groups: Groups) -> list[Membership]:
    out = []
    for u in users.values():
        for ip in sorted(u.client_ips):
            out.append(Membership(u.token, ip, groups.label_of(ip), playing_time_us(u, ip)))
    return out


@dataclass
class DurationResult:
    connections: Cdf
    users: Cdf
    by_class: dict[str, Cdf]
    frac_below_short: float
    frac_above_long: float


def duration_cdfs(connections: list[Connection], users: dict[str, User], groups: Groups) -> DurationResult:
    conn = Cdf.from_samples((c.flow.duration for c in connections if c.is_game), "duration_game")
    per_user = Cdf.from_samples((playing_time_us(u) / 1e6 for u in users.values()), "playing_user")
    ms = memberships(users, groups)
    by_class = {lab: Cdf.from_samples((m.playing_us / 1e6 for m in ms if m.label == lab), f"playing_{lab}")
                for lab in (TIGER, LION)}
    return DurationResult(conn, per_user, by_class,
                          per_user.fraction_below(SHORT_PLAY_S), per_user.fraction_above(LONG_PLAY_S))


# --------------------------------------------------------------------------- time of day


@dataclass
class TimeOfDayMatrix:
    tokens: list[str]
    classes: list[str]
    slot_minutes: int
    cells_us: np.ndarray  # int64, users x slots

    @property
    def minutes(self) -> np.ndarray:
        return self.cells_us / US_PER_MIN

    def row_minutes(self, i: int) -> float:
        return int(self.cells_us[i].sum()) / US_PER_MIN


def time_of_day(users: dict[str, User], slot_minutes: int, trace_start_us: int,
                trace_end_us: int | None = None, user_class: Callable[[User], str] | None = None,
                tz_offset_s: int = 0) -> TimeOfDayMatrix:
    """Minutes played per time-of-day slot, columns rotated so column 0 holds trace start."""
    if slot_minutes <= 0 or 60 % slot_minutes:
        raise ValueError("slot_minutes must divide 60")
    slot_us = slot_minutes * US_PER_MIN
    n_slots = 24 * 60 // slot_minutes
    tz_us = tz_offset_s * 1_000_000
    col0 = ((trace_start_us + tz_us) // slot_us) % n_slots

    rows = []
    for u in users.values():
        rows.append(((user_class(u) if user_class else TIGER), u.token, u))
    order = {TIGER: 0, LION: 1}
    rows.sort(key=lambda r: (order.get(r[0], 2), r[1]))

    cells = np.zeros((len(rows), n_slots), dtype=np.int64)
    for i, (_cls, _tok, u) in enumerate(rows):
        for a, b in u.playing_intervals:
            lo = max(a, trace_start_us)
            hi = b if trace_end_us is None else min(b, trace_end_us)
            if (lo, hi) != (a, b):
                logger.warning("playing interval of %s clipped to the trace span", u.token)
            t = lo
            while t < hi:
                local = t + tz_us
                slot_end = (local // slot_us + 1) * slot_us - tz_us
                e = min(slot_end, hi)
                cells[i, ((local // slot_us) - col0) % n_slots] += e - t
                t = e
    return TimeOfDayMatrix([r[1] for r in rows], [r[0] for r in rows], slot_minutes, cells)


# --------------------------------------------------------------------------- avatar paths


@dataclass
class Step:
    distance: float
    dt: float
    ts_us: int
    tag: Hashable = None

    @property
    def speed(self) -> float:
        return self.distance / self.dt


@dataclass
class PathStats:
    avatar: bytes
    steps: list[Step] = field(default_factory=list)
    total_distance: float = 0.0
    filtered_total: float = 0.0
    outlier_steps: int = 0
    retained: list[Step] | None = None

    @property
    def kept(self) -> list[Step]:
        return self.steps if self.retained is None else self.retained

    def mean_speed(self, filtered: bool = True) -> float | None:
        """Distance over time spent moving; zero-distance steps (pauses) are left out."""
        steps = [s for s in (self.kept if filtered else self.steps) if s.distance > 0]
        if not steps:
            return None
        return math.fsum(s.distance for s in steps) / math.fsum(s.dt for s in steps)

    def distance_by_tag(self, filtered: bool = True) -> dict:
        out: dict = {}
        for s in (self.kept if filtered else self.steps):
            out.setdefault(s.tag, []).append(s.distance)
        return {k: math.fsum(v) for k, v in out.items()}


def path_stats(movements: dict[Hashable, list[MovementMessage]],
               tags: dict[Hashable, list] | None = None) -> dict[Hashable, PathStats]:
    """Euclidean step distances and capture-time speeds per avatar.

    Messages sharing a timestamp with their predecessor fold their distance
    into the previous step.
    """
    out = {}
    for avatar, msgs in movements.items():
        order = sorted(range(len(msgs)), key=lambda i: msgs[i].ts_us)
        ps = PathStats(avatar)
        carry = 0.0
        for j in range(1, len(order)):
            p, q = msgs[order[j - 1]], msgs[order[j]]
            d = math.sqrt((q.x - p.x) ** 2 + (q.y - p.y) ** 2 + (q.z - p.z) ** 2)
            dt_us = q.ts_us - p.ts_us
            if dt_us == 0:
                if ps.steps:
                    ps.steps[-1].distance += d
                else:
                    carry += d
                continue
            tag = tags[avatar][order[j]] if tags else None
            ps.steps.append(Step(d + carry, dt_us / 1e6, q.ts_us, tag))
            carry = 0.0
        ps.total_distance = math.fsum(s.distance for s in ps.steps)
        ps.filtered_total = ps.total_distance
        out[avatar] = ps
    return out


@dataclass
class TeleportReport:
    factor: float
    median_speed: float
    threshold: float
    affected: dict[Hashable, int]  # avatar -> removed steps
    n_avatars: int

    @property
    def affected_fraction(self) -> float:
        return len(self.affected) / self.n_avatars if self.n_avatars else 0.0


def teleport_filter(paths: dict[Hashable, PathStats], factor: float = DEFAULT_TELEPORT_FACTOR):
    """Drop steps faster than ``factor`` x the median raw step speed.

    Returns (filtered paths, report). Avatars whose every step is removed
    stay in the report but have no filtered speed.
    """
    if factor <= 1:
        raise ValueError("factor must be > 1")
    speeds = [s.speed for ps in paths.values() for s in ps.steps]
    median = float(np.median(speeds)) if speeds else 0.0
    threshold = factor * median if speeds else math.inf
    out, affected = {}, {}
    for avatar, ps in paths.items():
        keep = [s for s in ps.steps if s.speed <= threshold]
        removed = len(ps.steps) - len(keep)
        if removed:
            affected[avatar] = removed
        out[avatar] = PathStats(avatar, ps.steps, ps.total_distance,
                                math.fsum(s.distance for s in keep), removed, keep)
    n = sum(1 for ps in paths.values() if ps.steps)
    return out, TeleportReport(factor, median, threshold, affected, n)


def mean_avatar_speed(paths: dict[Hashable, PathStats], filtered: bool = True) -> float:
    speeds = [v for v in (ps.mean_speed(filtered) for ps in paths.values()) if v is not None]
    return float(np.mean(speeds)) if speeds else 0.0


def class_distances(paths: dict[Hashable, PathStats], groups: Groups) -> dict[str, list[float]]:
    """Filtered travel distance per (user, IP) membership, split Tiger/Lion."""
    per_member: dict[tuple[str, str], list[float]] = {}
    for ps in paths.values():
        for tag, d in ps.distance_by_tag().items():
            if tag is None:
                continue
            per_member.setdefault(tag, []).append(d)
    out = {TIGER: [], LION: []}
    for (token, ip), ds in sorted(per_member.items()):
        if ip in groups.records:
            out[groups.label_of(ip)].append(math.fsum(ds))
    return out


# --------------------------------------------------------------------------- summary


def summary(analysis) -> dict:
    """Headline trace numbers plus everything needed to verify a run."""
    st = analysis.totals
    users = analysis.users
    play_h = [playing_time_us(u) / 3.6e9 for u in users.values()]
    mv_num, mv_den = movement_counts(analysis.connections)
    tele = analysis.teleport
    conns = analysis.connections
    return {
        "trace": {
            "first_ts_us": st["first_ts_us"] or 0,
            "last_ts_us": st["last_ts_us"] or 0,
            "total_packets": st["packets"],
            "total_bytes": st["bytes"],
            "other_packets": st["other_packets"],
            "other_bytes": st["other_bytes"],
        },
        "wow": {
            "packets": st["wow_packets"],
            "bytes": st["wow_bytes"],
            "packet_share": st["wow_packets"] / st["packets"] if st["packets"] else 0.0,
            "byte_share": st["wow_bytes"] / st["bytes"] if st["bytes"] else 0.0,
        },
        "connections": {
            "total": len(conns),
            "logon_confirmed": sum(c.is_logon for c in conns),
            "game_confirmed": sum(c.is_game for c in conns),
            "candidates_rejected": sum(c.kind is not None and not c.confirmed for c in conns),
            "rejected": sum(not c.confirmed for c in conns),
            "unattributed": len(analysis.unattributed),
            "gapped": sum(c.flow.gapped for c in conns),
        },
        "users": {
            "count": len(users),
            "avg_playing_hours": float(np.mean(play_h)) if play_h else 0.0,
            "frac_below_0.28h": analysis.durations.frac_below_short,
            "frac_above_2.8h": analysis.durations.frac_above_long,
        },
        "movement": {
            "movement_packets": mv_num,
            "c2s_packets": mv_den,
            "share": mv_num / mv_den if mv_den else 0.0,
            "malformed": sum(c.game.malformed_movements for c in conns if c.game),
        },
        "speed": {
            "mean_filtered_wm_s": mean_avatar_speed(analysis.paths, True),
            "mean_unfiltered_wm_s": mean_avatar_speed(analysis.paths, False),
            "n_avatars": tele.n_avatars,
            "median_step_speed": tele.median_speed,
            "teleport_factor": tele.factor,
            "teleport_threshold": tele.threshold if math.isfinite(tele.threshold) else None,
            "affected_avatars": len(tele.affected),
            "affected_fraction": tele.affected_fraction,
            "removed_steps": sum(tele.affected.values()),
        },
        "groups": [
            {"size": r.size, "n_ips": r.n_ips, "n_users": r.n_users, "volume_share": r.volume_share}
            for r in analysis.groups.table
        ],
        "cdfs": {name: len(cdf) for name, cdf in sorted(analysis.cdfs.items())},
    }

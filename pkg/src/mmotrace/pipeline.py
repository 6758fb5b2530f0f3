"""End-to-end analysis: pcap -> flows -> detection -> users -> statistics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Hashable

from . import analytics as an
from .capture import C2S, S2C, Flow, Trace, TraceStats, read_trace, reassemble
from .dpd import Connection, Kind, detect
from .sessions import LION, TIGER, Groups, User, attribute, classify_groups
from .wow import MovementMessage


@dataclass
class Analysis:
    stats: TraceStats
    totals: dict
    connections: list[Connection]
    users: dict[str, User]
    unattributed: list[Connection]
    groups: Groups
    durations: an.DurationResult
    timeofday: an.TimeOfDayMatrix
    raw_paths: dict[Hashable, an.PathStats]
    paths: dict[Hashable, an.PathStats]
    teleport: an.TeleportReport
    avatar_owner: dict[Hashable, str | None]
    cdfs: dict[str, an.Cdf]
    slot_minutes: int

    def summary(self) -> dict:
        return an.summary(self)


def _totals(stats: TraceStats, flows: list[Flow], conns: list[Connection]) -> dict:
    dups = sum(f.duplicates for f in flows)
    dup_bytes = sum(f.duplicate_bytes for f in flows)
    wow = [c for c in conns if c.confirmed]
    return {
        "packets": stats.total_packets - dups,
        "bytes": stats.total_bytes - dup_bytes,
        "other_packets": stats.other_packets,
        "other_bytes": stats.other_bytes,
        "duplicates": dups,
        "wow_packets": sum(c.flow.pkts[C2S] + c.flow.pkts[S2C] for c in wow),
        "wow_bytes": sum(c.flow.wire_bytes for c in wow),
        "first_ts_us": stats.first_ts_us,
        "last_ts_us": stats.last_ts_us,
    }


def collect_movements(conns: list[Connection]):
    """Group movement messages by avatar, tagging each with its (token, client IP)."""
    moves: dict[bytes, list[MovementMessage]] = {}
    tags: dict[bytes, list] = {}
    owner: dict[bytes, str | None] = {}
    for c in conns:
        if not c.is_game or c.game is None:
            continue
        tag = (c.token, c.client_ip) if c.token is not None else None
        for m in c.game.movements:
            moves.setdefault(m.avatar_id, []).append(m)
            tags.setdefault(m.avatar_id, []).append(tag)
            if c.token is not None:
                owner.setdefault(m.avatar_id, c.token)
    for a in moves:
        owner.setdefault(a, None)
    return moves, tags, owner


def analyze(source: str | Path | Trace, slot_minutes: int = an.DEFAULT_SLOT_MINUTES,
            teleport_factor: float = an.DEFAULT_TELEPORT_FACTOR, tz_offset_s: int = 0) -> Analysis:
    trace = source if isinstance(source, Trace) else read_trace(source)
    flows = reassemble(trace.packets)
    conns = detect(flows)
    att = attribute(conns)
    groups = classify_groups(att.users, conns)
    durations = an.duration_cdfs(conns, att.users, groups)
    start = trace.stats.first_ts_us or 0
    tod = an.time_of_day(att.users, slot_minutes, start, trace.stats.last_ts_us,
                         user_class=groups.user_class, tz_offset_s=tz_offset_s)
    moves, tags, owner = collect_movements(conns)
    raw_paths = an.path_stats(moves, tags)
    paths, tele = an.teleport_filter(raw_paths, teleport_factor)

    cdfs: dict[str, an.Cdf] = {}
    for kind in (Kind.LOGON, Kind.GAME):
        for d in (C2S, S2C):
            fs = an.flow_stats(conns, kind, d)
            cdfs[f"size_{kind.value}_{d}"] = fs.sizes
            cdfs[f"rate_{kind.value}_{d}"] = fs.rates
            cdfs[f"throughput_{kind.value}_{d}"] = fs.throughputs
    cdfs["duration_game_all"] = durations.connections
    cdfs["playing_user_all"] = durations.users
    for lab in (TIGER, LION):
        cdfs[f"playing_user_all_{lab}"] = durations.by_class[lab]
    cdfs["distance_avatar_all"] = an.Cdf.from_samples(p.filtered_total for p in paths.values() if p.steps)
    for lab, ds in an.class_distances(paths, groups).items():
        cdfs[f"distance_avatar_all_{lab}"] = an.Cdf.from_samples(ds)
    cdfs["speed_avatar_all"] = an.Cdf.from_samples(
        v for v in (p.mean_speed(True) for p in paths.values()) if v is not None)
    for name, cdf in cdfs.items():
        cdf.label = name

    return Analysis(trace.stats, _totals(trace.stats, flows, conns), conns, att.users, att.unattributed,
                    groups, durations, tod, raw_paths, paths, tele, owner, cdfs, slot_minutes)

"""User attribution, playing time, and Tiger/Lion grouping by shared client IP."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .dpd import Connection

LOGON_LINK_WINDOW_US = 300 * 1_000_000
TIGER = "tiger"
LION = "lion"
SIZE_ROWS = ("1", "2", "3", "4", ">4")


@dataclass
class User:
    token: str
    connections: list[Connection] = field(default_factory=list)
    client_ips: set[str] = field(default_factory=set)

    @property
    def game_connections(self) -> list[Connection]:
        return [c for c in self.connections if c.is_game]

    @property
    def playing_intervals(self) -> list[tuple[int, int]]:
        return union_intervals((c.first_ts_us, c.last_ts_us) for c in self.game_connections)


@dataclass
class Attribution:
    users: dict[str, User]
    unattributed: list[Connection]


def union_intervals(intervals) -> list[tuple[int, int]]:
    """Merge closed intervals into a sorted, pairwise-disjoint list."""
    merged: list[list[int]] = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def attribute(connections: list[Connection]) -> Attribution:
    """Bind confirmed WoW connections to account tokens.

    Game connections use the token in their auth frame. One whose auth frame
    is malformed borrows the token of the most recent logon from the same
    client IP no more than 300 s earlier.
    """
    wow = sorted((c for c in connections if c.confirmed),
                 key=lambda c: (c.first_ts_us, c.conn_id))
    last_logon: dict[str, list[Connection]] = defaultdict(list)
    users: dict[str, User] = {}
    unattributed = []
    for c in wow:
        if c.is_logon and c.token is not None:
            last_logon[c.client_ip].append(c)
        if c.token is None and c.is_game:
            for lg in reversed(last_logon[c.client_ip]):
                if c.first_ts_us - lg.first_ts_us <= LOGON_LINK_WINDOW_US:
                    c.token = lg.token
                    c.extra["linked_via_logon"] = lg.conn_id
                break
        if c.token is None:
            unattributed.append(c)
            continue
        u = users.setdefault(c.token, User(c.token))
        u.connections.append(c)
        u.client_ips.add(c.client_ip)
    return Attribution(dict(sorted(users.items())), unattributed)


def playing_time_us(user: User, client_ip: str | None = None) -> int:
    conns = [c for c in user.game_connections if client_ip is None or c.client_ip == client_ip]
    return sum(b - a for a, b in union_intervals((c.first_ts_us, c.last_ts_us) for c in conns))


def playing_time(user: User, client_ip: str | None = None) -> float:
    """Seconds covered by the union of the user's game connections (optionally from one IP)."""
    return playing_time_us(user, client_ip) / 1e6


def size_row(size: int) -> str:
    return str(size) if size <= 4 else ">4"


def label_for(size: int) -> str:
    return TIGER if size == 1 else LION


@dataclass
class GroupRecord:
    ip: str
    users: frozenset[str]
    wow_bytes: int = 0

    @property
    def size(self) -> int:
        return len(self.users)

    @property
    def label(self) -> str:
        return label_for(self.size)


@dataclass
class GroupRow:
    size: str
    n_ips: int = 0
    n_users: int = 0
    wow_bytes: int = 0
    volume_share: float = 0.0


@dataclass
class Groups:
    records: dict[str, GroupRecord]
    table: list[GroupRow]

    def label_of(self, ip: str) -> str:
        return self.records[ip].label

    def user_class(self, user: User) -> str:
        """Lion if the user ever shared an IP with another player."""
        labels = {self.records[ip].label for ip in user.client_ips if ip in self.records}
        return LION if LION in labels else TIGER


def classify_groups(users: dict[str, User], connections: list[Connection]) -> Groups:
    tokens_by_ip: dict[str, set[str]] = defaultdict(set)
    for u in users.values():
        for ip in u.client_ips:
            tokens_by_ip[ip].add(u.token)
    records = {ip: GroupRecord(ip, frozenset(toks)) for ip, toks in sorted(tokens_by_ip.items())}
    for c in connections:
        if c.confirmed and c.client_ip in records:
            f = c.flow
            records[c.client_ip].wow_bytes += f.payload_bytes["c2s"] + f.payload_bytes["s2c"]

    rows = {s: GroupRow(s) for s in SIZE_ROWS}
    for rec in records.values():
        row = rows[size_row(rec.size)]
        row.n_ips += 1
        row.n_users += rec.size
        row.wow_bytes += rec.wow_bytes
    total = sum(r.wow_bytes for r in rows.values())
    for r in rows.values():
        r.volume_share = r.wow_bytes / total if total else 0.0
    return Groups(records, list(rows.values()))

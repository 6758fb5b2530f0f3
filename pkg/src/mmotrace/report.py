"""Report bundle serialization and keyed-hash pseudonyms.

All metrics are computed on raw IPs and tokens; pseudonyms are applied only
here, while writing.
"""

from __future__ import annotations

import csv
import hashlib
import hmac
import io
import json
import math
from pathlib import Path

from .pipeline import Analysis
from .sessions import playing_time_us

FLOAT_FMT = ".6g"
CONNECTION_FIELDS = ("conn_id", "client_ip", "client_port", "server_ip", "server_port", "kind", "state",
                     "version", "start_us", "end_us", "c2s_pkts", "c2s_bytes", "s2c_pkts", "s2c_bytes",
                     "user", "gapped")
USER_FIELDS = ("token", "class", "ips", "group_sizes", "playing_s", "distance_wm", "mean_speed_wm_s")
GROUP_FIELDS = ("size", "n_ips", "n_users", "volume_share")
CDF_FIELDS = ("value", "fraction")


class Pseudonymizer:
    """HMAC-SHA256 of the value under ``salt``, truncated to 16 hex digits.

    With no salt the value passes through unchanged.
    """

    def __init__(self, salt: str | bytes | None = None):
        if isinstance(salt, str):
            salt = bytes.fromhex(salt)
        self.key = salt

    @property
    def active(self) -> bool:
        return self.key is not None

    def __call__(self, value: str | None) -> str:
        if value is None or value == "":
            return ""
        if self.key is None:
            return value
        return hmac.new(self.key, value.encode("utf-8"), hashlib.sha256).hexdigest()[:16]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        if not math.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        return format(x, FLOAT_FMT)
    return str(x)


def round_floats(obj):
    """Recursively pin floats to 6 significant digits for stable JSON."""
    if isinstance(obj, float):
        return float(format(obj, FLOAT_FMT)) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


# --------------------------------------------------------------------------- tables


def connection_rows(a: Analysis, anon: Pseudonymizer) -> list[dict]:
    rows = []
    for c in a.connections:
        f = c.flow
        rows.append({
            "conn_id": c.conn_id,
            "client_ip": anon(f.key.client_ip),
            "client_port": f.key.client_port,
            "server_ip": anon(f.key.server_ip),
            "server_port": f.key.server_port,
            "kind": c.kind.value if c.kind else "none",
            "state": c.state.value,
            "version": c.version.value if c.version else "",
            "start_us": f.first_ts_us,
            "end_us": f.last_ts_us,
            "c2s_pkts": f.pkts["c2s"],
            "c2s_bytes": f.payload_bytes["c2s"],
            "s2c_pkts": f.pkts["s2c"],
            "s2c_bytes": f.payload_bytes["s2c"],
            "user": anon(c.token) if c.confirmed else "",
            "gapped": f.gapped,
        })
    return rows


def user_metrics(a: Analysis) -> dict[str, tuple[float, float | None]]:
    """token -> (filtered distance, mean filtered speed) over the user's avatars."""
    dist: dict[str, list[float]] = {}
    speed: dict[str, list[float]] = {}
    for avatar, ps in a.paths.items():
        for tag, d in ps.distance_by_tag().items():
            if tag is not None:
                dist.setdefault(tag[0], []).append(d)
        owner = a.avatar_owner.get(avatar)
        v = ps.mean_speed(True)
        if owner is not None and v is not None:
            speed.setdefault(owner, []).append(v)
    out = {}
    for tok in a.users:
        vs = speed.get(tok)
        out[tok] = (math.fsum(dist.get(tok, [])), math.fsum(vs) / len(vs) if vs else None)
    return out


def user_rows(a: Analysis, anon: Pseudonymizer) -> list[dict]:
    metrics = user_metrics(a)
    rows = []
    for tok, u in a.users.items():
        ips = sorted(u.client_ips)
        dist, speed = metrics[tok]
        rows.append({
            "token": anon(tok),
            "class": a.groups.user_class(u),
            "ips": ";".join(anon(ip) for ip in ips),
            "group_sizes": ";".join(str(a.groups.records[ip].size) for ip in ips),
            "playing_s": playing_time_us(u) / 1e6,
            "distance_wm": dist,
            "mean_speed_wm_s": speed,
        })
    if anon.active:
        rows.sort(key=lambda r: r["token"])
    return rows


def group_rows(a: Analysis) -> list[dict]:
    return [{"size": r.size, "n_ips": r.n_ips, "n_users": r.n_users, "volume_share": r.volume_share}
            for r in a.groups.table]


def timeofday_rows(a: Analysis, anon: Pseudonymizer) -> tuple[list[str], list[dict]]:
    m = a.timeofday
    n = m.cells_us.shape[1] if m.cells_us.ndim == 2 else 24 * 60 // m.slot_minutes
    header = ["token", "class"] + [f"slot_{i}" for i in range(n)]
    rows = []
    for i, tok in enumerate(m.tokens):
        row = {"token": anon(tok), "class": m.classes[i]}
        for j in range(n):
            row[f"slot_{j}"] = int(m.cells_us[i, j]) / 60e6
        rows.append(row)
    return header, rows


# --------------------------------------------------------------------------- writing


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r[h]) for h in header])
    return buf.getvalue()


def _json_text(rows) -> str:
    return json.dumps(round_floats(rows), indent=1) + "\n"


def bundle(a: Analysis, salt: str | bytes | None = None) -> dict[str, tuple]:
    """name -> (header, rows) for every table in the bundle."""
    anon = Pseudonymizer(salt)
    tables = {
        "connections": (list(CONNECTION_FIELDS), connection_rows(a, anon)),
        "users": (list(USER_FIELDS), user_rows(a, anon)),
        "groups": (list(GROUP_FIELDS), group_rows(a)),
        "timeofday": timeofday_rows(a, anon),
    }
    for name, cdf in sorted(a.cdfs.items()):
        rows = [{"value": float(v), "fraction": float(f)} for v, f in zip(cdf.values, cdf.fractions)]
        tables[f"cdf_{name}"] = (list(CDF_FIELDS), rows)
    return tables


def write_bundle(a: Analysis, out_dir: str | Path, salt: str | bytes | None = None,
                 fmt_: str = "csv") -> list[Path]:
    """Write every table plus summary.json; returns the paths written."""
    if fmt_ not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (header, rows) in bundle(a, salt).items():
        p = out / f"{name}.{fmt_}"
        text = _csv_text(header, rows) if fmt_ == "csv" else _json_text([{h: r[h] for h in header} for r in rows])
        p.write_text(text, encoding="utf-8")
        written.append(p)
    summary = a.summary()
    summary["anonymized"] = salt is not None
    summary["slot_minutes"] = a.slot_minutes
    p = out / "summary.json"
    p.write_text(json.dumps(round_floats(summary), indent=2) + "\n", encoding="utf-8")
    written.append(p)
    return written

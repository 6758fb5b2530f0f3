"""Compare a written report bundle against a generator manifest."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .report import Pseudonymizer
from .synthgen.emit import Manifest


class SchemaError(ValueError):
    """The report or manifest does not have the expected shape."""


@dataclass
class Check:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


def _read_csv(path: Path, required: tuple[str, ...]) -> list[dict]:
    if not path.is_file():
        raise SchemaError(f"{path.name} missing from report")
    with path.open(newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        missing = [c for c in required if c not in (r.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path.name}: missing columns {missing}")
        return list(r)


def _read_table(report: Path, name: str, required: tuple[str, ...]) -> list[dict]:
    p = report / f"{name}.json"
    if (report / f"{name}.csv").is_file() or not p.is_file():
        return _read_csv(report / f"{name}.csv", required)
    rows = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(rows, list) or any(not isinstance(r, dict) or any(c not in r for c in required) for r in rows):
        raise SchemaError(f"{p.name}: unexpected shape")
    return [{k: "" if v is None else str(v) for k, v in r.items()} for r in rows]


def _get(d: dict, *path):
    for k in path:
        if not isinstance(d, dict) or k not in d:
            raise SchemaError("summary.json: missing " + ".".join(path))
        d = d[k]
    return d


def load_manifest_checked(path: str | Path) -> Manifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Manifest.from_dict(data)
    except (TypeError, KeyError, AttributeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"manifest: {exc}") from exc


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b else abs(a - b)


def verify(report_dir: str | Path, manifest: Manifest, playing_tol: float = 0.01, speed_tol: float = 0.02,
           group_tol: int = 0, salt: str | None = None) -> list[Check]:
    """Run every check; raises SchemaError if the report cannot be read."""
    report = Path(report_dir)
    if not report.is_dir():
        raise FileNotFoundError(f"report directory {report} not found")
    sp = report / "summary.json"
    if not sp.is_file():
        raise SchemaError("summary.json missing from report")
    try:
        summary = json.loads(sp.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"summary.json: {exc}") from exc
    users = _read_table(report, "users", ("token", "playing_s"))
    groups = _read_table(report, "groups", ("size", "n_ips", "n_users"))
    anon = Pseudonymizer(salt)
    checks = []

    n_rep = _get(summary, "users", "count")
    checks.append(Check("user-count", n_rep == len(manifest.users) == len(users),
                        f"report {n_rep}, manifest {len(manifest.users)}"))

    want = {g["size"]: g for g in manifest.groups}
    got = {g["size"]: g for g in groups}
    bad = []
    for size, g in want.items():
        r = got.get(size)
        if r is None:
            bad.append(f"row {size} missing")
            continue
        for col in ("n_ips", "n_users"):
            if abs(int(r[col]) - g[col]) > group_tol:
                bad.append(f"row {size} {col} {r[col]} vs {g[col]}")
    checks.append(Check("group-table", not bad, "; ".join(bad) or f"{len(want)} rows match (tol {group_tol})"))

    by_token = {r["token"]: r for r in users}
    worst, missing, bad = 0.0, [], []
    for u in manifest.users:
        r = by_token.get(anon(u.token))
        if r is None:
            missing.append(u.token)
            continue
        try:
            err = _rel(float(r["playing_s"]), u.playing_s)
        except ValueError as exc:
            raise SchemaError(f"users: bad playing_s {r['playing_s']!r}") from exc
        worst = max(worst, err)
        if err > playing_tol:
            bad.append(u.token)
    detail = f"max rel err {worst:.3g} (tol {playing_tol})"
    if missing:
        detail += f"; {len(missing)} users missing from report"
    if bad:
        detail += f"; {len(bad)} users out of tolerance"
    checks.append(Check("playing-time", not missing and not bad, detail))

    got_speed = _get(summary, "speed", "mean_filtered_wm_s")
    ref = manifest.speed["walk_speed_wm_s"]
    if manifest.speed.get("n_avatars", 0):
        err = _rel(float(got_speed), ref)
        checks.append(Check("mean-speed", err <= speed_tol,
                            f"report {got_speed} vs {ref} Wm/s, rel err {err:.3g} (tol {speed_tol})"))
    else:
        checks.append(Check("mean-speed", True, "no moving avatars in manifest"))

    num = _get(summary, "movement", "movement_packets")
    den = _get(summary, "movement", "c2s_packets")
    mnum, mden = manifest.movement["movement_packets"], manifest.movement["c2s_packets"]
    checks.append(Check("movement-share", num * mden == mnum * den and (den == 0) == (mden == 0),
                        f"report {num}/{den}, manifest {mnum}/{mden}"))
    return checks

"""Scenario description for the trace generator, loaded from JSON."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

MIN_SESSION_S = 20.0
LOGON_LEAD_S = 6.0
SESSION_TAIL_S = 1.0


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario: " + "; ".join(problems))


@dataclass
class DurationModel:
    mu: float = math.log(1800.0)
    sigma: float = 1.0


@dataclass
class SessionModel:
    sessions_per_user_mean: float = 1.0
    start_hour_weights: list[float] = field(default_factory=lambda: [1.0] * 24)
    duration_lognormal: DurationModel = field(default_factory=DurationModel)
    # durations at evenly spaced lognormal quantiles instead of random draws
    stratified: bool = False
    # explicit [start_s, end_s] game sessions (relative to trace start) for every user
    fixed_sessions: list[list[float]] | None = None


@dataclass
class UsersConfig:
    count: int = 0
    group_size_histogram: dict[int, int] = field(default_factory=dict)
    session_model: SessionModel = field(default_factory=SessionModel)


@dataclass
class MovementConfig:
    walk_speed_wm_s: float = 4.25
    movement_hz: float = 2.0
    waypoint_pause_s: float = 5.0
    teleport_avatar_fraction: float = 0.0
    teleport_speed_factor: float = 1000.0
    teleport_step_fraction: float = 0.1
    waypoint_radius_wm: float = 150.0
    chatter_hz: float = 0.2
    object_update_hz: float = 0.5
    keepalive_s: float = 30.0


@dataclass
class VersionMix:
    fraction_A: float = 1.0


@dataclass
class BackgroundConfig:
    flow_count: int = 0
    adversarial_count: int = 0
    byte_volume_target: int = 0
    udp_packets: int = 0


@dataclass
class Scenario:
    duration_s: float = 3600.0
    trace_start_epoch: int = 1218196800  # 2008-08-08 12:00 UTC
    seed: int = 0
    users: UsersConfig = field(default_factory=UsersConfig)
    movement: MovementConfig = field(default_factory=MovementConfig)
    version_mix: VersionMix = field(default_factory=VersionMix)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    # per-class tweaks: {"tiger"|"lion": {session_model or movement field: value}}
    class_overrides: dict[str, dict] = field(default_factory=dict)

    @property
    def slots(self) -> int:
        return sum(size * n for size, n in self.users.group_size_histogram.items())

    def session_model_for(self, label: str) -> SessionModel:
        over = self.class_overrides.get(label, {})
        names = {f.name for f in fields(SessionModel)}
        kw = {k: v for k, v in over.items() if k in names}
        if isinstance(kw.get("duration_lognormal"), dict):
            kw["duration_lognormal"] = DurationModel(**kw["duration_lognormal"])
        return replace(self.users.session_model, **kw)

    def movement_for(self, label: str) -> MovementConfig:
        over = self.class_overrides.get(label, {})
        names = {f.name for f in fields(MovementConfig)}
        return replace(self.movement, **{k: v for k, v in over.items() if k in names})

    def validate(self) -> "Scenario":
        problems = []
        if not self.duration_s > 0:
            problems.append("duration_s must be > 0")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        u = self.users
        for size, n in u.group_size_histogram.items():
            if size < 1:
                problems.append(f"users.group_size_histogram: size {size} < 1")
            if n < 0:
                problems.append(f"users.group_size_histogram[{size}]: negative IP count")
        if u.count < 0:
            problems.append("users.count must be >= 0")
        if u.count > self.slots:
            problems.append(f"users.count {u.count} exceeds the {self.slots} user slots in group_size_histogram")
        biggest = max((s for s, n in u.group_size_histogram.items() if n > 0), default=0)
        if u.count and biggest > u.count:
            problems.append(f"users.group_size_histogram: group of {biggest} needs at least that many users")
        if self.slots and not u.count:
            problems.append("users.count is 0 but group_size_histogram has slots")
        sm = u.session_model
        if len(sm.start_hour_weights) != 24 or any(w < 0 for w in sm.start_hour_weights) \
                or not sum(sm.start_hour_weights) > 0:
            problems.append("users.session_model.start_hour_weights needs 24 non-negative weights")
        if sm.sessions_per_user_mean < 1:
            problems.append("users.session_model.sessions_per_user_mean must be >= 1")
        if sm.duration_lognormal.sigma < 0:
            problems.append("users.session_model.duration_lognormal.sigma must be >= 0")
        if sm.fixed_sessions:
            for a, b in sm.fixed_sessions:
                if not 0 <= a < b <= self.duration_s:
                    problems.append(f"users.session_model.fixed_sessions: [{a}, {b}] outside trace")
        if u.count and not sm.fixed_sessions:
            # every user-IP slot needs room for at least one session
            # the slot filler spreads surplus slots, so nobody holds more than ceil(slots/count) + 1 IPs
            worst = max(math.ceil(sm.sessions_per_user_mean), math.ceil(self.slots / u.count) + 1)
            need = worst * (MIN_SESSION_S + LOGON_LEAD_S + SESSION_TAIL_S)
            if need > self.duration_s:
                problems.append(f"duration_s {self.duration_s} too short for the requested sessions per user")
        m = self.movement
        if not 0 < m.movement_hz <= 10:
            problems.append("movement.movement_hz must be in (0, 10]")
        if not m.walk_speed_wm_s > 0:
            problems.append("movement.walk_speed_wm_s must be > 0")
        if m.waypoint_pause_s < 0:
            problems.append("movement.waypoint_pause_s must be >= 0")
        for name in ("teleport_avatar_fraction", "teleport_step_fraction"):
            if not 0 <= getattr(m, name) <= 1:
                problems.append(f"movement.{name} must be in [0, 1]")
        if m.teleport_speed_factor < 1:
            problems.append("movement.teleport_speed_factor must be >= 1")
        if not 0 <= self.version_mix.fraction_A <= 1:
            problems.append("version_mix.fraction_A must be in [0, 1]")
        b = self.background
        if b.flow_count < 0 or b.adversarial_count < 0 or b.byte_volume_target < 0 or b.udp_packets < 0:
            problems.append("background counts must be >= 0")
        if b.adversarial_count > b.flow_count:
            problems.append("background.adversarial_count exceeds background.flow_count")
        for label in self.class_overrides:
            if label not in ("tiger", "lion"):
                problems.append(f"class_overrides: unknown class {label!r}")
        if problems:
            raise ScenarioError(problems)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["users"]["group_size_histogram"] = {str(k): v for k, v in sorted(self.users.group_size_histogram.items())}
        return d

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _build(cls, data: dict, where: str, problems: list[str]):
    names = {f.name: f for f in fields(cls)}
    kw = {}
    for key, value in data.items():
        if key not in names:
            problems.append(f"{where}{key}: unknown field")
            continue
        kw[key] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        problems.append(f"{where}: {exc}")
        return cls()


def from_dict(data: dict) -> Scenario:
    """Build and validate a Scenario; every bad field is reported at once."""
    problems: list[str] = []
    data = dict(data)
    users = dict(data.pop("users", {}))
    sm = dict(users.pop("session_model", {}))
    dl = sm.pop("duration_lognormal", {})
    hist_raw = users.pop("group_size_histogram", {})
    hist = {}
    for k, v in hist_raw.items():
        try:
            hist[int(k)] = int(v)
        except (TypeError, ValueError):
            problems.append(f"users.group_size_histogram.{k}: not an integer")
    session = _build(SessionModel, sm, "users.session_model.", problems)
    session.duration_lognormal = _build(DurationModel, dl, "users.session_model.duration_lognormal.", problems)
    uc = _build(UsersConfig, users, "users.", problems)
    uc.group_size_histogram = hist
    uc.session_model = session
    parts = {
        "movement": _build(MovementConfig, data.pop("movement", {}), "movement.", problems),
        "version_mix": _build(VersionMix, data.pop("version_mix", {}), "version_mix.", problems),
        "background": _build(BackgroundConfig, data.pop("background", {}), "background.", problems),
    }
    sc = _build(Scenario, data, "", problems)
    sc.users = uc
    for k, v in parts.items():
        setattr(sc, k, v)
    if problems:
        raise ScenarioError(problems)
    return sc.validate()


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"not valid JSON: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ScenarioError(["top level must be an object"])
    return from_dict(data)

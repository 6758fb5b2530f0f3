"""WoW-like wire format: builders and parsers for logon and game messages.

Game connections carry frames of ``u16 size (big-endian) | u16 opcode
(little-endian) | body``, where ``size`` counts the opcode plus body. The
auth opcodes 0x01ED / 0x01EC therefore appear as ``?? ?? ED 01`` and
``?? ?? EC 01`` at the start of each direction.

Logon connections carry single-byte-opcode messages; the client's first
message is the challenge::

    u8 0x00 | u8 reserved | u16 LE remaining | "WoW" | u8 major | u8 minor |
    u8 patch | u16 LE build | u8 account_len | account
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

from .capture import DirectionalStream

OP_AUTH_CHALLENGE = 0x01EC  # server -> client
OP_AUTH_SESSION = 0x01ED  # client -> server
OP_MOVE = 0x01EE
OP_OBJECT_UPDATE = 0x01EF
OP_PING = 0x01F1
OP_PONG = 0x01F2
OP_OPAQUE = 0x01F5
KNOWN_OPCODES = frozenset({OP_AUTH_SESSION, OP_AUTH_CHALLENGE, OP_MOVE, OP_OBJECT_UPDATE,
                           OP_PING, OP_PONG, OP_OPAQUE})

LOGON_CHALLENGE = 0x00
LOGON_PROOF = 0x01
LOGON_REALM_LIST = 0x10

BUILD_A = 8606  # 2.4.3
BUILD_B = 12340  # 3.3.5a
VERSION_A_MAX_BUILD = 8606

MAX_ACCOUNT_LEN = 64


class ProtocolVersion(enum.Enum):
    A = "A"
    B = "B"

    @property
    def id_width(self) -> int:
        return 4 if self is ProtocolVersion.A else 12

    @property
    def movement_body_len(self) -> int:
        return self.id_width + _MOVE_TAIL.size

    @property
    def movement_wire_len(self) -> int:
        return 4 + self.movement_body_len

    @classmethod
    def from_build(cls, build: int) -> "ProtocolVersion":
        return cls.A if build <= VERSION_A_MAX_BUILD else cls.B

    @classmethod
    def from_movement_body(cls, n: int) -> "ProtocolVersion | None":
        for v in cls:
            if v.movement_body_len == n:
                return v
        return None


class MalformedMessage(ValueError):
    pass


class MalformedLogon(MalformedMessage):
    pass


class MalformedAuth(MalformedMessage):
    pass


class MalformedMovement(MalformedMessage):
    pass


# move_flags, move_flags2, game_time, x, y, z, orientation, fall_time, pitch, reserved
_MOVE_TAIL = struct.Struct("<IHIffffIfB")
_F32 = struct.Struct("<f")


def f32(x: float) -> float:
    """Round to the nearest single-precision value."""
    return _F32.unpack(_F32.pack(x))[0]


def guid(low: int, high: int = 0, realm: int = 0) -> bytes:
    """Version-B 12-byte object id: three little-endian u32 words."""
    return struct.pack("<III", low, high, realm)


def short_id(n: int) -> bytes:
    """Version-A 4-byte object id."""
    return struct.pack("<I", n)


@dataclass(frozen=True)
class GameFrame:
    opcode: int
    body: bytes

    @property
    def size(self) -> int:
        return len(self.body) + 2

    @property
    def wire_len(self) -> int:
        return len(self.body) + 4

    def encode(self) -> bytes:
        return struct.pack(">H", self.size) + struct.pack("<H", self.opcode) + self.body


@dataclass
class FrameSplit:
    frames: list[tuple[GameFrame, int | None, int]] = field(default_factory=list)  # frame, ts_us, offset
    consumed: int = 0
    truncated: int = 0  # 1 if a trailing partial frame was dropped
    dropped_bytes: int = 0
    malformed_at: int | None = None


def split_frames(stream: DirectionalStream | bytes) -> FrameSplit:
    """Cut a game stream into frames.

    A trailing partial frame is dropped and counted; a size field below 2
    marks the rest of the stream malformed.
    """
    if isinstance(stream, DirectionalStream):
        data, ts_of = stream.data, stream.ts_at
    else:
        data, ts_of = bytes(stream), None
    out = FrameSplit()
    pos, n = 0, len(data)
    while pos < n:
        if n - pos < 4:
            out.truncated, out.dropped_bytes = 1, n - pos
            break
        size = (data[pos] << 8) | data[pos + 1]
        if size < 2:
            out.malformed_at = pos
            out.dropped_bytes = n - pos
            break
        if pos + 2 + size > n:
            out.truncated, out.dropped_bytes = 1, n - pos
            break
        opcode = data[pos + 2] | (data[pos + 3] << 8)
        frame = GameFrame(opcode, data[pos + 4:pos + 2 + size])
        out.frames.append((frame, ts_of(pos) if ts_of else None, pos))
        pos += 2 + size
    out.consumed = pos
    return out


# --------------------------------------------------------------------------- logon


@dataclass(frozen=True)
class LogonInfo:
    account_token: str
    version: ProtocolVersion
    build: int
    client_version: tuple[int, int, int] = (0, 0, 0)


def _token(raw: bytes) -> str:
    if raw and all(0x21 <= b < 0x7F and b not in b',"' for b in raw):
        return raw.decode("ascii")
    return "0x" + raw.hex()


def build_logon_challenge(account: str, build: int, client_version: tuple[int, int, int] = (2, 4, 3)) -> bytes:
    acct = account.encode("ascii")
    rest = b"WoW" + bytes(client_version) + struct.pack("<HB", build, len(acct)) + acct
    return struct.pack("<BBH", LOGON_CHALLENGE, 0, len(rest)) + rest


def parse_logon_challenge(data: bytes) -> LogonInfo:
    if len(data) < 14 or data[0] != LOGON_CHALLENGE or data[4:7] != b"WoW":
        raise MalformedLogon("not a logon challenge")
    major, minor, patch = data[7], data[8], data[9]
    build, alen = struct.unpack_from("<HB", data, 10)
    if alen == 0 or alen > MAX_ACCOUNT_LEN or 13 + alen > len(data):
        raise MalformedLogon(f"bad account length {alen}")
    return LogonInfo(_token(data[13:13 + alen]), ProtocolVersion.from_build(build), build,
                     (major, minor, patch))


def build_logon_response(server_token: bytes) -> bytes:
    return bytes([LOGON_CHALLENGE, 0]) + server_token


# --------------------------------------------------------------------------- game auth


def build_game_auth(account: str, build: int, client_seed: int) -> GameFrame:
    acct = account.encode("ascii")
    return GameFrame(OP_AUTH_SESSION, struct.pack("<HB", build, len(acct)) + acct
                     + struct.pack("<I", client_seed))


def parse_game_auth(frame: GameFrame) -> tuple[str, int]:
    if frame.opcode != OP_AUTH_SESSION:
        raise MalformedAuth(f"opcode 0x{frame.opcode:04x}")
    body = frame.body
    if len(body) < 3:
        raise MalformedAuth("short auth body")
    build, alen = struct.unpack_from("<HB", body)
    if alen == 0 or alen > MAX_ACCOUNT_LEN or len(body) != 3 + alen + 4:
        raise MalformedAuth("bad auth body length")
    return _token(body[3:3 + alen]), build


def build_auth_challenge(server_seed: int) -> GameFrame:
    return GameFrame(OP_AUTH_CHALLENGE, struct.pack("<I", server_seed))


# --------------------------------------------------------------------------- movement


@dataclass(frozen=True)
class MovementMessage:
    avatar_id: bytes
    x: float
    y: float
    z: float
    orientation: float = 0.0
    game_time_ms: int = 0
    fall_time_ms: int = 0
    pitch: float = 0.0
    move_flags: int = 0
    move_flags2: int = 0
    ts_us: int | None = None

    @property
    def ts(self) -> float | None:
        return None if self.ts_us is None else self.ts_us / 1e6


def build_movement(msg: MovementMessage, version: ProtocolVersion) -> GameFrame:
    if len(msg.avatar_id) != version.id_width:
        raise ValueError(f"avatar id must be {version.id_width} bytes for version {version.value}")
    body = msg.avatar_id + _MOVE_TAIL.pack(msg.move_flags, msg.move_flags2, msg.game_time_ms,
                                           msg.x, msg.y, msg.z, msg.orientation,
                                           msg.fall_time_ms, msg.pitch, 0)
    return GameFrame(OP_MOVE, body)


def parse_movement(frame: GameFrame, version: ProtocolVersion, ts_us: int | None = None) -> MovementMessage:
    if frame.opcode != OP_MOVE:
        raise MalformedMovement(f"opcode 0x{frame.opcode:04x}")
    if len(frame.body) != version.movement_body_len:
        raise MalformedMovement(f"body length {len(frame.body)} for version {version.value}")
    w = version.id_width
    flags, flags2, gtime, x, y, z, o, fall, pitch, _ = _MOVE_TAIL.unpack_from(frame.body, w)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise MalformedMovement("non-finite coordinates")
    return MovementMessage(frame.body[:w], x, y, z, o, gtime, fall, pitch, flags, flags2, ts_us)


# --------------------------------------------------------------------------- object updates

_XYZ = struct.Struct("<fff")


@dataclass
class ObjectUpdate:
    objects: list[tuple[bytes, float, float, float]]
    malformed: bool = False


def build_object_update(objects: list[tuple[bytes, float, float, float]], version: ProtocolVersion) -> GameFrame:
    body = bytearray([len(objects)])
    for oid, x, y, z in objects:
        if len(oid) != version.id_width:
            raise ValueError("object id width does not match version")
        body += oid + _XYZ.pack(x, y, z)
    return GameFrame(OP_OBJECT_UPDATE, bytes(body))


def parse_object_update(frame: GameFrame, version: ProtocolVersion) -> ObjectUpdate:
    body = frame.body
    if frame.opcode != OP_OBJECT_UPDATE or not body:
        return ObjectUpdate([], malformed=True)
    count = body[0]
    block = version.id_width + 12
    out = ObjectUpdate([])
    pos = 1
    for _ in range(count):
        if pos + block > len(body):
            out.malformed = True
            break
        oid = body[pos:pos + version.id_width]
        x, y, z = _XYZ.unpack_from(body, pos + version.id_width)
        out.objects.append((oid, x, y, z))
        pos += block
    if pos != len(body):
        out.malformed = True
    return out


# --------------------------------------------------------------------------- chatter


def build_ping(seq: int) -> GameFrame:
    return GameFrame(OP_PING, struct.pack("<I", seq))


def build_pong(seq: int) -> GameFrame:
    return GameFrame(OP_PONG, struct.pack("<I", seq))


def build_opaque(body: bytes) -> GameFrame:
    """Stand-in for an encrypted message; the body is never interpreted."""
    return GameFrame(OP_OPAQUE, body)


# --------------------------------------------------------------------------- per-connection


@dataclass
class GameDissection:
    token: str | None = None
    build: int | None = None
    version: ProtocolVersion | None = None
    auth_malformed: bool = False
    movements: list[MovementMessage] = field(default_factory=list)
    movement_packets: int = 0  # c2s packets carrying exactly one valid movement frame
    c2s_payload_packets: int = 0
    object_updates: int = 0
    objects: int = 0
    frame_counts: dict[int, int] = field(default_factory=dict)
    unknown_frames: int = 0
    malformed_movements: int = 0
    malformed_object_updates: int = 0
    truncated_frames: int = 0
    malformed_streams: int = 0


def _movement_version(d: GameDissection, split: FrameSplit) -> ProtocolVersion | None:
    if d.version is not None:
        return d.version
    # unattributed connection: fall back to the first movement frame's length
    for frame, _ts, _off in split.frames:
        if frame.opcode == OP_MOVE:
            v = ProtocolVersion.from_movement_body(len(frame.body))
            if v is not None:
                return v
    return None


def dissect_game(c2s: DirectionalStream, s2c: DirectionalStream) -> GameDissection:
    d = GameDissection()
    up = split_frames(c2s)
    down = split_frames(s2c)
    for split in (up, down):
        d.truncated_frames += split.truncated
        d.malformed_streams += split.malformed_at is not None
        for frame, _ts, _off in split.frames:
            d.frame_counts[frame.opcode] = d.frame_counts.get(frame.opcode, 0) + 1
            if frame.opcode not in KNOWN_OPCODES:
                d.unknown_frames += 1

    if up.frames and up.frames[0][0].opcode == OP_AUTH_SESSION:
        try:
            d.token, d.build = parse_game_auth(up.frames[0][0])
            d.version = ProtocolVersion.from_build(d.build)
        except MalformedAuth:
            d.auth_malformed = True
    else:
        d.auth_malformed = True

    version = _movement_version(d, up)
    move_offsets = set()
    for frame, ts, off in up.frames:
        if frame.opcode != OP_MOVE:
            continue
        if version is None:
            d.malformed_movements += 1
            continue
        try:
            d.movements.append(parse_movement(frame, version, ts))
            move_offsets.add((off, frame.wire_len))
        except MalformedMovement:
            d.malformed_movements += 1

    d.c2s_payload_packets = len(c2s.segments)
    d.movement_packets = sum(1 for s in c2s.segments if (s.offset, s.length) in move_offsets)

    if version is not None:
        for frame, _ts, _off in down.frames:
            if frame.opcode == OP_OBJECT_UPDATE:
                upd = parse_object_update(frame, version)
                d.object_updates += 1
                d.objects += len(upd.objects)
                d.malformed_object_updates += upd.malformed
    return d


def dissect_logon(c2s: DirectionalStream) -> LogonInfo | None:
    try:
        return parse_logon_challenge(c2s.data)
    except MalformedLogon:
        return None

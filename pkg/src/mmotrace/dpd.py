"""Two-step dynamic protocol detection.

Step one looks at the initiator's first bytes and makes the connection a
logon or game *candidate*; step two confirms the candidate only if the
responder's first bytes carry the matching reply signature.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .capture import Flow
from .wow import GameDissection, LogonInfo, ProtocolVersion, dissect_game, dissect_logon


class Kind(enum.Enum):
    LOGON = "logon"
    GAME = "game"


class DpdState(enum.Enum):
    UNKNOWN = "unknown"
    CANDIDATE = "candidate"
    CONFIRMED = "confirmed"
    REJECTED = "rejected"


def match_initiator(payload: bytes) -> Kind | None:
    """``^\\x00...WoW`` -> logon, ``^..\\xed\\x01`` -> game; logon wins a double match."""
    if len(payload) >= 7 and payload[0] == 0x00 and payload[4:7] == b"WoW":
        return Kind.LOGON
    if len(payload) >= 4 and payload[2] == 0xED and payload[3] == 0x01:
        return Kind.GAME
    return None


def confirm_responder(kind: Kind, payload: bytes) -> DpdState:
    if kind is Kind.LOGON:
        ok = len(payload) >= 1 and payload[0] == 0x00
    else:
        ok = len(payload) >= 4 and payload[2] == 0xEC and payload[3] == 0x01
    return DpdState.CONFIRMED if ok else DpdState.REJECTED


class Detector:
    """Per-connection state machine: Unknown -> Candidate -> {Confirmed, Rejected}."""

    def __init__(self):
        self.state = DpdState.UNKNOWN
        self.kind: Kind | None = None
        self.reason = ""

    def _reject(self, reason: str) -> None:
        self.state = DpdState.REJECTED
        self.reason = reason

    def on_initiator(self, payload: bytes) -> None:
        if self.state is not DpdState.UNKNOWN or not payload:
            return
        kind = match_initiator(payload)
        if kind is None:
            self._reject("no initiator signature")
        else:
            self.state, self.kind = DpdState.CANDIDATE, kind

    def on_responder(self, payload: bytes) -> None:
        if self.state is not DpdState.CANDIDATE or not payload:
            return
        self.state = confirm_responder(self.kind, payload)
        if self.state is DpdState.REJECTED:
            self.reason = "responder signature mismatch"

    def close(self) -> None:
        if self.state is DpdState.UNKNOWN:
            self._reject("no initiator payload")
        elif self.state is DpdState.CANDIDATE:
            self._reject("no responder payload")


@dataclass
class Connection:
    flow: Flow
    state: DpdState
    kind: Kind | None
    reason: str = ""
    logon: LogonInfo | None = None
    game: GameDissection | None = None
    token: str | None = None
    conn_id: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def confirmed(self) -> bool:
        return self.state is DpdState.CONFIRMED

    @property
    def is_game(self) -> bool:
        return self.confirmed and self.kind is Kind.GAME

    @property
    def is_logon(self) -> bool:
        return self.confirmed and self.kind is Kind.LOGON

    @property
    def key(self):
        return self.flow.key

    @property
    def client_ip(self) -> str:
        return self.flow.key.client_ip

    @property
    def first_ts_us(self) -> int:
        return self.flow.first_ts_us

    @property
    def last_ts_us(self) -> int:
        return self.flow.last_ts_us

    @property
    def version(self) -> ProtocolVersion | None:
        if self.game is not None and self.game.version is not None:
            return self.game.version
        if self.logon is not None:
            return self.logon.version
        return None

    @property
    def attributed(self) -> bool:
        return self.token is not None


def classify(flow: Flow) -> Connection:
    """Run detection over a reassembled flow and dissect it if confirmed."""
    det = Detector()
    if flow.midstream:
        # the first payload was not observed; the signatures cannot be trusted
        det._reject("mid-stream flow")
    else:
        det.on_initiator(flow.c2s.data[:16])
        det.on_responder(flow.s2c.data[:16])
        det.close()
    conn = Connection(flow, det.state, det.kind, det.reason)
    if conn.is_logon:
        conn.logon = dissect_logon(flow.c2s)
        conn.token = conn.logon.account_token if conn.logon else None
    elif conn.is_game:
        conn.game = dissect_game(flow.c2s, flow.s2c)
        conn.token = conn.game.token
    return conn


def detect(flows: list[Flow]) -> list[Connection]:
    conns = [classify(f) for f in flows]
    for i, c in enumerate(conns):
        c.conn_id = i
    return conns


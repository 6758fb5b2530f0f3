import math
import struct

import pytest
from hypothesis import given, settings, strategies as st

from mmotrace import wow
from mmotrace.wow import GameFrame, ProtocolVersion as V

u32 = st.integers(0, 2**32 - 1)
u16 = st.integers(0, 2**16 - 1)
f32s = st.floats(width=32, allow_nan=False, allow_infinity=False)
f32_any = st.floats(width=32, allow_nan=False)


def movement(version, **kw):
    aid = wow.short_id(7) if version is V.A else wow.guid(5, 0, 1)
    return wow.MovementMessage(aid, kw.pop("x", 0.0), kw.pop("y", 0.0), kw.pop("z", 0.0), **kw)


def test_movement_frame_sizes():
    fa = wow.build_movement(movement(V.A), V.A)
    fb = wow.build_movement(movement(V.B), V.B)
    assert len(fa.encode()) == 43 and fa.size == 41 and fa.opcode == 0x01EE
    assert len(fb.encode()) == 51


def test_split_single_movement_frame():
    data = wow.build_movement(movement(V.A), V.A).encode()
    sp = wow.split_frames(data)
    assert len(sp.frames) == 1
    frame, _, off = sp.frames[0]
    assert (frame.size, frame.opcode, off) == (41, 0x01EE, 0)


def test_split_partition():
    a = wow.build_ping(1).encode()
    b = wow.build_movement(movement(V.B), V.B).encode()
    sp = wow.split_frames(a + b)
    assert [f.opcode for f, _, _ in sp.frames] == [wow.OP_PING, wow.OP_MOVE]
    assert [off for _, _, off in sp.frames] == [0, len(a)]
    assert sum(2 + f.size for f, _, _ in sp.frames) + sp.dropped_bytes == sp.consumed == len(a + b)


def test_split_truncated_suffix():
    full = wow.build_movement(movement(V.A), V.A).encode()
    sp = wow.split_frames(full[:-1])
    assert sp.frames == [] and sp.truncated == 1 and sp.dropped_bytes == 42


def test_unknown_opcode_is_skipped():
    data = GameFrame(0x0999, b"zz").encode() + wow.build_ping(3).encode()
    sp = wow.split_frames(data)
    assert [f.opcode for f, _, _ in sp.frames] == [0x0999, wow.OP_PING]


@pytest.mark.parametrize("build, account, version", [(8606, "AXKQ", V.A), (12340, "B7", V.B)])
def test_logon_challenge(build, account, version):
    info = wow.parse_logon_challenge(wow.build_logon_challenge(account, build))
    assert info.account_token == account and info.version is version and info.build == build


def test_logon_zero_account_length():
    raw = bytearray(wow.build_logon_challenge("AXKQ", 8606))
    raw[12] = 0
    with pytest.raises(wow.MalformedLogon):
        wow.parse_logon_challenge(bytes(raw))


def test_logon_signature_bytes():
    raw = wow.build_logon_challenge("AXKQ", 8606)
    assert raw[0] == 0 and raw[4:7] == b"WoW"


@pytest.mark.parametrize("build, account, seed", [(8606, "AXKQ", 7), (12340, "B7", 0)])
def test_game_auth_round_trip(build, account, seed):
    frame = wow.build_game_auth(account, build, seed)
    assert wow.parse_game_auth(frame) == (account, build)
    assert frame.encode()[2:4] == b"\xed\x01"


def test_game_auth_truncated_before_seed():
    frame = wow.build_game_auth("AXKQ", 8606, 7)
    with pytest.raises(wow.MalformedAuth):
        wow.parse_game_auth(GameFrame(frame.opcode, frame.body[:-2]))


def test_auth_challenge_signature():
    assert wow.build_auth_challenge(9).encode()[:4] == b"\x00\x06\xec\x01"


def test_movement_at_origin():
    m = wow.parse_movement(wow.build_movement(movement(V.A), V.A), V.A)
    assert (m.x, m.y, m.z) == (0.0, 0.0, 0.0)


def test_movement_wrong_length():
    frame = wow.build_movement(movement(V.A), V.A)
    with pytest.raises(wow.MalformedMovement):
        wow.parse_movement(GameFrame(frame.opcode, frame.body + b"\x00"), V.A)
    with pytest.raises(wow.MalformedMovement):
        wow.parse_movement(frame, V.B)


def test_version_b_guid():
    m = wow.parse_movement(wow.build_movement(movement(V.B), V.B), V.B)
    assert len(m.avatar_id) == 12 and struct.unpack("<III", m.avatar_id) == (5, 0, 1)


def test_object_update_shapes():
    assert wow.parse_object_update(wow.build_object_update([], V.A), V.A).objects == []
    objs_a = [(wow.short_id(i), 1.0, 2.0, 3.0) for i in range(3)]
    fa = wow.build_object_update(objs_a, V.A)
    assert len(fa.body) == 1 + 3 * 16
    assert wow.parse_object_update(fa, V.A).objects == objs_a
    objs_b = [(wow.guid(i, 1, 2), 1.0, 2.0, 3.0) for i in range(2)]
    fb = wow.build_object_update(objs_b, V.B)
    assert len(fb.body) == 1 + 2 * 24
    assert wow.parse_object_update(fb, V.B).objects == objs_b


def test_object_update_count_overrun_is_malformed():
    f = wow.build_object_update([(wow.short_id(1), 0.0, 0.0, 0.0)], V.A)
    bad = GameFrame(f.opcode, bytes([2]) + f.body[1:])
    assert wow.parse_object_update(bad, V.A).malformed


@settings(max_examples=300, deadline=None)
@given(st.sampled_from([V.A, V.B]), st.data(), f32s, f32s, f32s, f32_any, u32, u32, f32_any, u32, u16)
def test_movement_fuzz_round_trip(version, data, x, y, z, o, gtime, fall, pitch, flags, flags2):
    aid = data.draw(st.binary(min_size=version.id_width, max_size=version.id_width))
    msg = wow.MovementMessage(aid, x, y, z, o, gtime, fall, pitch, flags, flags2)
    frame = wow.build_movement(msg, version)
    wire = frame.encode()
    assert len(wire) == (43 if version is V.A else 51)
    (parsed, _, _), = wow.split_frames(wire).frames
    back = wow.parse_movement(parsed, version)
    for name in ("avatar_id", "x", "y", "z", "game_time_ms", "fall_time_ms", "move_flags", "move_flags2"):
        assert getattr(back, name) == getattr(msg, name)
    for name in ("orientation", "pitch"):
        a, b = getattr(back, name), getattr(msg, name)
        assert a == b or (math.isinf(a) and a == b)


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=st.characters(min_codepoint=0x30, max_codepoint=0x5A), min_size=1, max_size=32),
       u16, u32)
def test_auth_fuzz_round_trip(account, build, seed):
    assert wow.parse_game_auth(wow.build_game_auth(account, build, seed)) == (account, build)


def test_version_threshold():
    assert V.from_build(8606) is V.A and V.from_build(8607) is V.B

import random

import pytest

from sermt import crypto, wire
from sermt.wire import Frame, FrameFormatError, MsgType

GBK = b"global-key-for-tests"


def test_round_trip_every_type():
    rng = random.Random(1)
    for msg_type in MsgType:
        frame = wire.make_frame(
            msg_type, rng.randrange(2**32), rng.randbytes(rng.randrange(0, 100)),
            gbk=GBK, session_key=b"sess", chain_key=rng.randbytes(20) if rng.random() < 0.5 else b"",
        )
        assert wire.decode_frame(wire.encode_frame(frame)) == frame


def test_wire_layout_is_bit_exact():
    frame = wire.make_frame(MsgType.TEST, 0x01020304, b"ab", gbk=GBK, chain_key=b"\xAA\xBB")
    buf = wire.encode_frame(frame)
    assert buf[0] == 1                      # type
    assert buf[1:5] == b"\x01\x02\x03\x04"  # sender_id
    assert buf[5:7] == b"\x00\x02"          # payload_len
    assert buf[7:9] == b"ab"
    assert buf[9] == 2                      # chain_key_len
    assert buf[10:12] == b"\xAA\xBB"
    assert buf[12:] == frame.mac
    assert len(buf) == frame.wire_len
    assert frame.wire_bits == 8 * len(buf)


def test_decode_rejects_malformed_buffers():
    frame = wire.make_frame(MsgType.DATA, 7, b"xyz", gbk=GBK, session_key=b"k")
    buf = wire.encode_frame(frame)
    with pytest.raises(FrameFormatError):
        wire.decode_frame(buf[:4])
    with pytest.raises(FrameFormatError):
        wire.decode_frame(buf[:-1])
    with pytest.raises(FrameFormatError):
        wire.decode_frame(buf + b"\x00")
    with pytest.raises(FrameFormatError):
        wire.decode_frame(b"\x63" + buf[1:])  # unknown type byte


def test_encode_enforces_field_limits():
    with pytest.raises(FrameFormatError):
        wire.encode_frame(Frame(MsgType.ACK, 2**32, b""))
    with pytest.raises(FrameFormatError):
        wire.encode_frame(Frame(MsgType.ACK, 1, b"x" * 70000))
    with pytest.raises(FrameFormatError):
        wire.encode_frame(Frame(MsgType.ACK, 1, b"", chain_key=b"k" * 300))
    with pytest.raises(FrameFormatError):
        wire.encode_frame(Frame(MsgType.ACK, 1, b"", mac=b"short"))


def test_gbk_mac_verification():
    frame = wire.make_frame(MsgType.RQM, 42, b"evaluate", gbk=GBK, chain_key=b"\x01" * 20)
    assert wire.verify_frame(frame, gbk=GBK)
    assert not wire.verify_frame(frame, gbk=b"wrong")
    # MAC covers every field, including the chain key and the type byte
    for mutated in (
        Frame(MsgType.TEST, 42, b"evaluate", b"\x01" * 20, frame.mac),
        Frame(MsgType.RQM, 43, b"evaluate", b"\x01" * 20, frame.mac),
        Frame(MsgType.RQM, 42, b"evaluatf", b"\x01" * 20, frame.mac),
        Frame(MsgType.RQM, 42, b"evaluate", b"\x02" * 20, frame.mac),
    ):
        assert not wire.verify_frame(mutated, gbk=GBK)


def test_nested_mac_needs_both_keys():
    frame = wire.make_frame(MsgType.EMD, 9, b"cipher", gbk=GBK, session_key=b"xk")
    assert wire.verify_frame(frame, gbk=GBK, session_key=b"xk")
    assert not wire.verify_frame(frame, gbk=GBK, session_key=b"other")
    assert not wire.verify_frame(frame, gbk=b"other", session_key=b"xk")
    assert not wire.verify_frame(frame, gbk=GBK)  # no session key at all
    with pytest.raises(ValueError):
        wire.make_frame(MsgType.DATA, 9, b"cipher", gbk=GBK)


def test_nested_mac_matches_manual_two_step():
    frame = wire.make_frame(MsgType.DATA, 5, b"pp", gbk=GBK, session_key=b"sk")
    base = wire.mac_base(MsgType.DATA, 5, b"pp", b"")
    assert frame.mac == crypto.hmac_tag(GBK, crypto.hmac_tag(b"sk", base))


def test_forged_random_macs_rejected():
    rng = random.Random(3)
    for _ in range(100):
        forged = Frame(MsgType.ANCHOR_BCAST, 1, b"new anchor", b"", rng.randbytes(20))
        assert not wire.verify_frame(forged, gbk=GBK)

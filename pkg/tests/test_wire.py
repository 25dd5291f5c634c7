import json
import struct
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmec.errors import InvariantViolation, MalformedFrame, NeedMoreBytes
from fedmec.wire import (
    AIR,
    ULA,
    AuthenticationRequest,
    AuthenticationResponse,
    FrameBuffer,
    InitialContextSetupRequest,
    InitialContextSetupResponse,
    InitialUEMessage,
    MAX_FRAME_LENGTH,
    MESSAGE_TYPES,
    RelayHeader,
    StateFetchResp,
    SubscriptionRecord,
    UEContextRelease,
    decode_frame,
    encode_frame,
    frame_type,
    iter_frames,
)

from strategies import ALL_TYPES, any_message, message_strategy

VECTORS = json.loads((Path(__file__).parent / "vectors" / "wire_golden.json").read_text())

# message objects for each golden vector; expected bytes come from the
# hand-written canonical body in the vector file, never from the encoder
GOLDEN_MESSAGES = {
    "initial_ue": InitialUEMessage("001010000000001"),
    "auth_request": AuthenticationRequest(bytes(16), b"\xff" * 16),
    "auth_response": AuthenticationResponse(bytes(range(8))),
    "icsr": InitialContextSetupRequest(1, "10.0.2.2"),
    "icsr_response": InitialContextSetupResponse(),
    "release_non_ascii": UEContextRelease("détach"),
    "air": AIR("mme.B;00000001", "001010000000001", "00102"),
    "ula": ULA("mme.B;00000001", SubscriptionRecord("001010000000001", "00101", True, {"home": "A"})),
    "state_fetch_error": StateFetchResp("A", "B", "ams.B/000001", None, "SourceStateGone"),
    "relay_header": RelayHeader("B", "A", "0000000000000001", "s6a", 42),
}


def expected_frame(vector) -> bytes:
    body = vector["body"].encode("ascii")
    return struct.pack("!IB", len(body) + 1, vector["msg_type"]) + body


def test_initial_ue_message_exact_bytes():
    assert encode_frame(InitialUEMessage("001010000000001")) == b'\x00\x00\x00\x1b\x10{"imsi":"001010000000001"}'


@pytest.mark.parametrize("vector", VECTORS, ids=[v["name"] for v in VECTORS])
def test_golden_vector_encode(vector):
    assert encode_frame(GOLDEN_MESSAGES[vector["name"]]) == expected_frame(vector)


@pytest.mark.parametrize("vector", VECTORS, ids=[v["name"] for v in VECTORS])
def test_golden_vector_decode(vector):
    frame = expected_frame(vector)
    msg, used = decode_frame(frame)
    assert used == len(frame)
    assert msg == GOLDEN_MESSAGES[vector["name"]]


def test_every_type_code_is_unique_and_one_byte():
    assert len({cls.MSG_TYPE for cls in MESSAGE_TYPES.values()}) == len(MESSAGE_TYPES)
    assert all(0 <= code <= 0xFF for code in MESSAGE_TYPES)


@pytest.mark.parametrize("cls", ALL_TYPES, ids=lambda c: c.__name__)
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_roundtrip_per_type(cls, data):
    msg = data.draw(message_strategy(cls))
    frame = encode_frame(msg)
    back, used = decode_frame(frame)
    assert back == msg and used == len(frame)
    assert encode_frame(back) == frame


@settings(max_examples=200, deadline=None)
@given(msgs=st.lists(any_message, min_size=1, max_size=5), cut=st.integers(0, 50))
def test_stream_reassembly(msgs, cut):
    stream = b"".join(encode_frame(m) for m in msgs)
    assert list(iter_frames(stream)) == msgs
    buf = FrameBuffer()
    cut = min(cut, len(stream))
    out = buf.feed(stream[:cut]) + buf.feed(stream[cut:])
    assert out == msgs


@settings(max_examples=300, deadline=None)
@given(data=st.binary(max_size=64))
def test_fuzz_decode_only_raises_codec_errors(data):
    try:
        decode_frame(data)
    except (MalformedFrame, NeedMoreBytes):
        pass


def _frame(msg_type: int, body: bytes) -> bytes:
    return struct.pack("!IB", len(body) + 1, msg_type) + body


@pytest.mark.parametrize("body", [
    b'{"imsi": "001010000000001"}',                   # non-canonical whitespace
    b'{"imsi":"0010100000',                           # truncated JSON
    b'{"imsi":"001010000000001","x":1}',              # unknown field
    b'{}',                                            # missing field
    b'{"imsi":"12345"}',                              # bad imsi
    b'{"imsi":1.5}',                                  # float
    b'{"imsi":NaN}',                                  # non-finite constant
    b'[1,2]',                                         # not a field map
    b'{"imsi":"00101000000000\\u0031"}',              # escaped where canonical form is literal
    b'\xff\xfe',                                      # not text
])
def test_malformed_bodies_rejected(body):
    with pytest.raises(MalformedFrame):
        decode_frame(_frame(InitialUEMessage.MSG_TYPE, body))


def test_duplicate_keys_rejected():
    body = b'{"imsi":"001010000000001","imsi":"001010000000002"}'
    with pytest.raises(MalformedFrame):
        decode_frame(_frame(InitialUEMessage.MSG_TYPE, body))


def test_unknown_type_and_bad_lengths():
    with pytest.raises(MalformedFrame):
        decode_frame(b"\x00\x00\x00\x01\xee")
    with pytest.raises(MalformedFrame):
        decode_frame(b"\x00\x00\x00\x00\x10")
    with pytest.raises(MalformedFrame):
        decode_frame(struct.pack("!IB", MAX_FRAME_LENGTH + 1, 0x10))
    with pytest.raises(MalformedFrame):
        frame_type(b"\x00\x00\x00\x01\xee")


def test_short_buffers_ask_for_more():
    frame = encode_frame(InitialUEMessage("001010000000001"))
    with pytest.raises(NeedMoreBytes) as exc:
        decode_frame(frame[:3])
    assert exc.value.needed == 2
    with pytest.raises(NeedMoreBytes) as exc:
        decode_frame(frame[:-4])
    assert exc.value.needed == 4


def test_bad_base64_rejected():
    with pytest.raises(MalformedFrame):
        decode_frame(_frame(AuthenticationResponse.MSG_TYPE, b'{"res":"!!!!"}'))


@pytest.mark.parametrize("msg", [
    InitialUEMessage("00101"),
    AuthenticationResponse(b"short"),
    InitialContextSetupRequest(0, "10.0.2.2"),
    InitialContextSetupRequest(1, "10.0.2.300"),
    StateFetchResp("A", "B", "f", None, ""),
    RelayHeader("B", "A", "XYZ", "s6a", 1),
])
def test_encoder_refuses_invalid_messages(msg):
    with pytest.raises(InvariantViolation):
        encode_frame(msg)


def test_frame_size_cap():
    big = UEContextRelease("x" * MAX_FRAME_LENGTH)
    with pytest.raises(InvariantViolation):
        encode_frame(big)

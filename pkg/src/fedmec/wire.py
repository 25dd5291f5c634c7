"""Length-prefixed, type-tagged framing for every message in the federation.

Frame layout::

    [4 bytes  length, big-endian]   = len(body) + 1
    [1 byte   msg_type]
    [N bytes  body]                 canonical JSON field map, keys sorted,
                                    compact separators, non-ASCII as JSON escapes

Byte fields travel as standard padded base64 strings.  A message without
fields has an empty body.  Decoding re-encodes the parsed message and
rejects the frame unless the bytes match, so every message value has
exactly one valid encoding.
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import ipaddress
import json
import struct
import typing
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Union

from fedmec.errors import InvariantViolation, MalformedFrame, NeedMoreBytes

HEADER = struct.Struct("!IB")
HEADER_SIZE = HEADER.size
MAX_FRAME_LENGTH = 16 * 1024 * 1024

_U32 = 2**32
_U64 = 2**64

MESSAGE_TYPES: dict[int, type] = {}
_HINTS: dict[type, dict[str, Any]] = {}


def message(code: int):
    """Register a message class under a unique one-byte type code."""

    def wrap(cls):
        if not 0 <= code <= 0xFF:
            raise ValueError(f"msg_type {code} does not fit in one byte")
        if code in MESSAGE_TYPES:
            raise ValueError(f"msg_type 0x{code:02x} already used by {MESSAGE_TYPES[code].__name__}")
        cls.MSG_TYPE = code
        MESSAGE_TYPES[code] = cls
        return cls

    return wrap


# ---------------------------------------------------------------------------
# field checks


def check_imsi(imsi: str) -> None:
    if not (isinstance(imsi, str) and len(imsi) == 15 and imsi.isascii() and imsi.isdigit()):
        raise InvariantViolation(f"imsi must be 15 decimal digits, got {imsi!r}")


def check_plmn(plmn: str) -> None:
    if not (isinstance(plmn, str) and len(plmn) in (5, 6) and plmn.isascii() and plmn.isdigit()):
        raise InvariantViolation(f"PLMN id must be 5-6 digits, got {plmn!r}")


def check_ipv4(ip: str) -> None:
    try:
        parsed = ipaddress.IPv4Address(ip)
    except (ipaddress.AddressValueError, ValueError) as exc:
        raise InvariantViolation(f"bad IPv4 address {ip!r}") from exc
    if str(parsed) != ip:
        raise InvariantViolation(f"non-canonical IPv4 address {ip!r}")


def _check_len(name: str, value: bytes, n: int) -> None:
    if len(value) != n:
        raise InvariantViolation(f"{name} must be {n} bytes, got {len(value)}")


def _check_corr(corr_id: str) -> None:
    if len(corr_id) != 16 or any(c not in "0123456789abcdef" for c in corr_id):
        raise InvariantViolation(f"corr_id must be 16 lowercase hex digits, got {corr_id!r}")


class Message:
    """Mixin for wire messages; subclasses are frozen dataclasses."""

    MSG_TYPE: int = -1

    def check(self) -> None:
        """Type-specific invariants; raise InvariantViolation."""

    @property
    def name(self) -> str:
        return type(self).__name__


# ---------------------------------------------------------------------------
# nested record types carried inside messages


@dataclass(frozen=True)
class AuthVector:
    rand: bytes
    xres: bytes
    autn: bytes

    def check(self) -> None:
        _check_len("rand", self.rand, 16)
        _check_len("xres", self.xres, 8)
        _check_len("autn", self.autn, 16)


@dataclass(frozen=True)
class SubscriptionRecord:
    imsi: str
    home_plmn: str
    mec_entitlement: bool
    profile: dict[str, str] = field(default_factory=dict)

    def check(self) -> None:
        check_imsi(self.imsi)
        check_plmn(self.home_plmn)
        if not self.imsi.startswith(self.home_plmn):
            raise InvariantViolation("home_plmn must prefix the imsi")

    def __hash__(self):
        return hash((self.imsi, self.home_plmn, self.mec_entitlement, tuple(sorted(self.profile.items()))))


@dataclass(frozen=True)
class AppState:
    user_id: str
    app_id: str
    version: int
    blob: bytes
    updated_at_ms: int

    def check(self) -> None:
        check_imsi(self.user_id)


# ---------------------------------------------------------------------------
# S1-lite (UE <-> eNB <-> MME, mirrored to the MEC Manager)


@message(0x10)
@dataclass(frozen=True)
class InitialUEMessage(Message):
    imsi: str

    def check(self):
        check_imsi(self.imsi)


@message(0x11)
@dataclass(frozen=True)
class AuthenticationRequest(Message):
    rand: bytes
    autn: bytes

    def check(self):
        _check_len("rand", self.rand, 16)
        _check_len("autn", self.autn, 16)


@message(0x12)
@dataclass(frozen=True)
class AuthenticationResponse(Message):
    res: bytes

    def check(self):
        _check_len("res", self.res, 8)


@message(0x13)
@dataclass(frozen=True)
class InitialContextSetupRequest(Message):
    teid: int
    ue_ip: str

    def check(self):
        if not 0 < self.teid < _U32:
            raise InvariantViolation(f"teid must be a nonzero u32, got {self.teid}")
        check_ipv4(self.ue_ip)


@message(0x14)
@dataclass(frozen=True)
class InitialContextSetupResponse(Message):
    pass


@message(0x15)
@dataclass(frozen=True)
class UEContextRelease(Message):
    reason: str


@message(0x16)
@dataclass(frozen=True)
class UEContextModification(Message):
    ue_ip: str

    def check(self):
        check_ipv4(self.ue_ip)


@message(0x17)
@dataclass(frozen=True)
class AuthenticationFailure(Message):
    cause: str


@message(0x18)
@dataclass(frozen=True)
class AttachReject(Message):
    cause: str


S1_TYPES = (
    InitialUEMessage,
    AuthenticationRequest,
    AuthenticationResponse,
    InitialContextSetupRequest,
    InitialContextSetupResponse,
    UEContextRelease,
    UEContextModification,
    AuthenticationFailure,
    AttachReject,
)


# ---------------------------------------------------------------------------
# S6a-lite (MME <-> HSS, possibly relayed)


@message(0x20)
@dataclass(frozen=True)
class AIR(Message):
    session_id: str
    imsi: str
    visited_plmn: str

    def check(self):
        check_imsi(self.imsi)
        check_plmn(self.visited_plmn)


@message(0x21)
@dataclass(frozen=True)
class AIA(Message):
    session_id: str
    auth_vectors: tuple[AuthVector, ...]
    error: str = ""

    def check(self):
        if self.error and self.auth_vectors:
            raise InvariantViolation("AIA with an error carries no vectors")
        if not self.error and not self.auth_vectors:
            raise InvariantViolation("AIA must carry at least one auth vector")


@message(0x22)
@dataclass(frozen=True)
class ULR(Message):
    session_id: str
    imsi: str
    mme_id: str

    def check(self):
        check_imsi(self.imsi)


@message(0x23)
@dataclass(frozen=True)
class ULA(Message):
    session_id: str
    subscription: Optional[SubscriptionRecord]
    error: str = ""

    def check(self):
        if (self.subscription is None) == (not self.error):
            raise InvariantViolation("ULA carries exactly one of subscription or error")


S6A_TYPES = (AIR, AIA, ULR, ULA)


# ---------------------------------------------------------------------------
# FS3A federation messages; every one carries routing headers


@message(0x30)
@dataclass(frozen=True)
class SubscriptionFetchReq(Message):
    source_network: str
    destination_network: str
    flow_id: str
    imsi: str

    def check(self):
        check_imsi(self.imsi)


@message(0x31)
@dataclass(frozen=True)
class SubscriptionFetchResp(Message):
    source_network: str
    destination_network: str
    flow_id: str
    record: Optional[SubscriptionRecord]
    error: str = ""

    def check(self):
        if (self.record is None) == (not self.error):
            raise InvariantViolation("SubscriptionFetchResp carries exactly one of record or error")


@message(0x32)
@dataclass(frozen=True)
class MobilityAdvertise(Message):
    source_network: str
    destination_network: str
    user_id: str
    app_id: str
    source_platform: str

    def check(self):
        check_imsi(self.user_id)


@message(0x33)
@dataclass(frozen=True)
class WatchRequest(Message):
    source_network: str
    destination_network: str
    user_id: str
    requester: str

    def check(self):
        check_imsi(self.user_id)


@message(0x34)
@dataclass(frozen=True)
class UEArrivalNotice(Message):
    source_network: str
    destination_network: str
    user_id: str
    platform: str

    def check(self):
        check_imsi(self.user_id)


@message(0x35)
@dataclass(frozen=True)
class StateFetchReq(Message):
    source_network: str
    destination_network: str
    flow_id: str
    user_id: str
    app_id: str

    def check(self):
        check_imsi(self.user_id)


@message(0x36)
@dataclass(frozen=True)
class StateFetchResp(Message):
    source_network: str
    destination_network: str
    flow_id: str
    app_state: Optional[AppState]
    error: str = ""

    def check(self):
        if (self.app_state is None) == (not self.error):
            raise InvariantViolation("StateFetchResp carries exactly one of app_state or error")


@message(0x37)
@dataclass(frozen=True)
class NetworkRegister(Message):
    source_network: str
    destination_network: str
    network_id: str
    plmn_prefix: str
    address: str

    def check(self):
        check_plmn(self.plmn_prefix)


@message(0x38)
@dataclass(frozen=True)
class RelayHeader(Message):
    """Inter-proxy envelope; the relayed frame follows it byte for byte."""

    source_network: str
    destination_network: str
    corr_id: str
    kind: str
    inner_length: int

    def check(self):
        _check_corr(self.corr_id)
        if self.kind not in ("s6a", "mec"):
            raise InvariantViolation(f"relay kind must be s6a or mec, got {self.kind!r}")


@message(0x39)
@dataclass(frozen=True)
class IdentityQuery(Message):
    source_network: str
    destination_network: str
    flow_id: str
    source_ip: str
    app_id: str

    def check(self):
        check_ipv4(self.source_ip)


@message(0x3A)
@dataclass(frozen=True)
class IdentityAnswer(Message):
    source_network: str
    destination_network: str
    flow_id: str
    imsi: str
    error: str = ""


@message(0x3B)
@dataclass(frozen=True)
class SessionNotice(Message):
    source_network: str
    destination_network: str
    user_id: str
    app_id: str

    def check(self):
        check_imsi(self.user_id)


@message(0x3C)
@dataclass(frozen=True)
class MobilityRegister(Message):
    source_network: str
    destination_network: str
    user_id: str
    app_id: str

    def check(self):
        check_imsi(self.user_id)


@message(0x3D)
@dataclass(frozen=True)
class StateStore(Message):
    source_network: str
    destination_network: str
    app_state: AppState


FS3A_TYPES = (
    SubscriptionFetchReq,
    SubscriptionFetchResp,
    MobilityAdvertise,
    WatchRequest,
    UEArrivalNotice,
    StateFetchReq,
    StateFetchResp,
    NetworkRegister,
    RelayHeader,
    IdentityQuery,
    IdentityAnswer,
    SessionNotice,
    MobilityRegister,
    StateStore,
)


# ---------------------------------------------------------------------------
# application layer (UE <-> app server <-> OIDC provider)


@message(0x40)
@dataclass(frozen=True)
class LoginStart(Message):
    app_id: str


@message(0x41)
@dataclass(frozen=True)
class OidcAuthRequest(Message):
    client_id: str
    redirect_ref: str


@message(0x42)
@dataclass(frozen=True)
class OidcAuthResponse(Message):
    token: str


@message(0x43)
@dataclass(frozen=True)
class TokenPresent(Message):
    token: str


@message(0x44)
@dataclass(frozen=True)
class LoginOk(Message):
    session_id: str


@message(0x45)
@dataclass(frozen=True)
class Resume(Message):
    session_id: str


@message(0x46)
@dataclass(frozen=True)
class Data(Message):
    payload: bytes


@message(0x47)
@dataclass(frozen=True)
class TokenValidateReq(Message):
    flow_id: str
    app_id: str
    token: str
    source_ip: str

    def check(self):
        check_ipv4(self.source_ip)


@message(0x48)
@dataclass(frozen=True)
class TokenValidateResp(Message):
    flow_id: str
    subject: str
    error: str = ""


@message(0x49)
@dataclass(frozen=True)
class LoginFailed(Message):
    reason: str


APP_TYPES = (
    LoginStart,
    OidcAuthRequest,
    OidcAuthResponse,
    TokenPresent,
    LoginOk,
    Resume,
    Data,
    TokenValidateReq,
    TokenValidateResp,
    LoginFailed,
)

OIDC_TYPES = (LoginStart, OidcAuthRequest, OidcAuthResponse)


# ---------------------------------------------------------------------------
# value <-> JSON-able conversion


def _hints(cls) -> dict[str, Any]:
    hints = _HINTS.get(cls)
    if hints is None:
        hints = typing.get_type_hints(cls)
        _HINTS[cls] = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
        hints = _HINTS[cls]
    return hints


def _to_plain(value: Any, tp: Any) -> Any:
    origin = typing.get_origin(tp)
    if origin is Union:
        if value is None:
            return None
        (inner,) = [a for a in typing.get_args(tp) if a is not type(None)]
        return _to_plain(value, inner)
    if origin is tuple:
        if not isinstance(value, (tuple, list)):
            raise InvariantViolation(f"expected sequence, got {type(value).__name__}")
        inner = typing.get_args(tp)[0]
        return [_to_plain(v, inner) for v in value]
    if origin is dict:
        if not isinstance(value, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in value.items()
        ):
            raise InvariantViolation("expected str -> str map")
        return dict(value)
    if tp is bytes:
        if not isinstance(value, (bytes, bytearray)):
            raise InvariantViolation(f"expected bytes, got {type(value).__name__}")
        return base64.b64encode(value).decode("ascii")
    if tp is bool:
        if not isinstance(value, bool):
            raise InvariantViolation(f"expected bool, got {type(value).__name__}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < _U64:
            raise InvariantViolation(f"expected u64, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise InvariantViolation(f"expected str, got {type(value).__name__}")
        return value
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, tp):
            raise InvariantViolation(f"expected {tp.__name__}, got {type(value).__name__}")
        value.check()
        return {name: _to_plain(getattr(value, name), t) for name, t in _hints(tp).items()}
    raise TypeError(f"unsupported field type {tp!r}")


def _from_plain(value: Any, tp: Any) -> Any:
    origin = typing.get_origin(tp)
    if origin is Union:
        if value is None:
            return None
        (inner,) = [a for a in typing.get_args(tp) if a is not type(None)]
        return _from_plain(value, inner)
    if origin is tuple:
        if not isinstance(value, list):
            raise MalformedFrame("expected list")
        inner = typing.get_args(tp)[0]
        return tuple(_from_plain(v, inner) for v in value)
    if origin is dict:
        if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
            raise MalformedFrame("expected str -> str map")
        return dict(value)
    if tp is bytes:
        if not isinstance(value, str):
            raise MalformedFrame("expected base64 string")
        try:
            return base64.b64decode(value.encode("ascii"), validate=True)
        except (binascii.Error, UnicodeEncodeError) as exc:
            raise MalformedFrame(f"bad base64: {exc}") from exc
    if tp is bool:
        if not isinstance(value, bool):
            raise MalformedFrame("expected bool")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise MalformedFrame("expected integer")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise MalformedFrame("expected string")
        return value
    if dataclasses.is_dataclass(tp):
        return _build(tp, value)
    raise TypeError(f"unsupported field type {tp!r}")


def _build(cls, plain: Any):
    if not isinstance(plain, dict):
        raise MalformedFrame(f"{cls.__name__}: expected field map")
    hints = _hints(cls)
    if set(plain) != set(hints):
        raise MalformedFrame(f"{cls.__name__}: fields {sorted(plain)} != {sorted(hints)}")
    return cls(**{name: _from_plain(plain[name], t) for name, t in hints.items()})


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise MalformedFrame(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(name):
    raise MalformedFrame(f"non-finite number {name}")


def _reject_float(text):
    raise MalformedFrame(f"float {text} not allowed")


def _canonical(plain: dict) -> bytes:
    if not plain:
        return b""
    return json.dumps(plain, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


# ---------------------------------------------------------------------------
# public codec


def encode_body(msg: Message) -> bytes:
    cls = type(msg)
    if cls.MSG_TYPE not in MESSAGE_TYPES or MESSAGE_TYPES[cls.MSG_TYPE] is not cls:
        raise InvariantViolation(f"{cls.__name__} is not a registered message")
    plain = _to_plain(msg, cls)
    msg.check()
    return _canonical(plain)


def encode_frame(msg: Message) -> bytes:
    """Encode one message as ``length || msg_type || body``."""
    body = encode_body(msg)
    if len(body) + 1 > MAX_FRAME_LENGTH:
        raise InvariantViolation(f"frame body of {len(body)} bytes exceeds the 16 MiB cap")
    return HEADER.pack(len(body) + 1, type(msg).MSG_TYPE) + body


def decode_frame(data: bytes) -> tuple[Message, int]:
    """Decode the first frame in *data*.

    Returns ``(message, consumed)``.  Raises NeedMoreBytes when the buffer
    holds less than one full frame and MalformedFrame for anything that is
    not a canonical encoding of a known message.
    """
    data = memoryview(data)
    if len(data) < HEADER_SIZE:
        raise NeedMoreBytes(HEADER_SIZE - len(data))
    length, msg_type = HEADER.unpack_from(data)
    if length < 1:
        raise MalformedFrame("length must cover the msg_type byte")
    if length > MAX_FRAME_LENGTH:
        raise MalformedFrame(f"length {length} exceeds the 16 MiB cap")
    cls = MESSAGE_TYPES.get(msg_type)
    if cls is None:
        raise MalformedFrame(f"unknown msg_type 0x{msg_type:02x}")
    total = 4 + length
    if len(data) < total:
        raise NeedMoreBytes(total - len(data))
    body = bytes(data[HEADER_SIZE:total])
    return _decode_body(cls, body), total


def _decode_body(cls, body: bytes) -> Message:
    try:
        if body:
            plain = json.loads(
                body.decode("utf-8"),
                object_pairs_hook=_reject_duplicates,
                parse_float=_reject_float,
                parse_constant=_reject_constant,
            )
        else:
            plain = {}
        msg = _build(cls, plain)
        if encode_body(msg) != body:
            raise MalformedFrame(f"{cls.__name__}: non-canonical body")
    except MalformedFrame:
        raise
    except InvariantViolation as exc:
        raise MalformedFrame(f"{cls.__name__}: {exc}") from exc
    except (ValueError, TypeError, RecursionError) as exc:
        raise MalformedFrame(f"{cls.__name__}: {exc}") from exc
    return msg


def iter_frames(data: bytes) -> Iterator[Message]:
    """Decode a concatenation of complete frames."""
    offset = 0
    view = memoryview(data)
    while offset < len(view):
        msg, used = decode_frame(view[offset:])
        offset += used
        yield msg


class FrameBuffer:
    """Incremental decoder for stream transports."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[Message]:
        self._buf.extend(chunk)
        out = []
        while True:
            try:
                msg, used = decode_frame(bytes(self._buf))
            except NeedMoreBytes:
                return out
            del self._buf[:used]
            out.append(msg)


def frame_type(frame: bytes) -> type:
    """Message class named by a frame header, without decoding the body."""
    if len(frame) < HEADER_SIZE:
        raise NeedMoreBytes(HEADER_SIZE - len(frame))
    cls = MESSAGE_TYPES.get(frame[4])
    if cls is None:
        raise MalformedFrame(f"unknown msg_type 0x{frame[4]:02x}")
    return cls

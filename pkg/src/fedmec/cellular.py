"""Minimal LTE control plane: UE, eNB, MME and HSS with EPS-AKA-style attach.

The AKA construction keeps the message pattern of EPS-AKA but replaces
MILENAGE with the project MAC::

    xres = MAC(k, rand || "res")[:8]
    autn = MAC(k, rand || sqn(6 bytes) || "autn")[:16]

The UE recovers the sequence number by trying the next ``SQN_WINDOW``
values above the last one it accepted, so a replayed vector never verifies.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Optional

from fedmec import names
from fedmec.crypto import mac, mac_equal
from fedmec.entity import Entity
from fedmec.errors import NetworkAuthFailure, NotAttached, ResFailure, UnknownSubscriber
from fedmec.netsim import base_name
from fedmec.wire import (
    AIA,
    AIR,
    ULA,
    ULR,
    AttachReject,
    AuthenticationFailure,
    AuthenticationRequest,
    AuthenticationResponse,
    AuthVector,
    Data,
    InitialContextSetupRequest,
    InitialContextSetupResponse,
    InitialUEMessage,
    LoginFailed,
    LoginOk,
    LoginStart,
    OidcAuthRequest,
    OidcAuthResponse,
    Resume,
    SubscriptionFetchReq,
    SubscriptionFetchResp,
    SubscriptionRecord,
    TokenPresent,
    UEContextModification,
    UEContextRelease,
    check_imsi,
    encode_frame,
)

log = logging.getLogger(__name__)

SQN_MAX = 2**48 - 1
SQN_WINDOW = 32


@dataclass
class SimCredential:
    imsi: str
    k: bytes
    sqn: int = 0

    def __post_init__(self):
        check_imsi(self.imsi)
        if len(self.k) != 32:
            raise ValueError("k must be 32 bytes")


def sqn_bytes(sqn: int) -> bytes:
    return sqn.to_bytes(6, "big")


def compute_xres(k: bytes, rand: bytes) -> bytes:
    return mac(k, rand + b"res")[:8]


def compute_autn(k: bytes, rand: bytes, sqn: int) -> bytes:
    return mac(k, rand + sqn_bytes(sqn) + b"autn")[:16]


def ue_answer_challenge(cred: SimCredential, rand: bytes, autn: bytes) -> bytes:
    """Authenticate the network, then return RES.  Advances cred.sqn."""
    for sqn in range(cred.sqn + 1, min(cred.sqn + SQN_WINDOW, SQN_MAX) + 1):
        if mac_equal(compute_autn(cred.k, rand, sqn), autn):
            cred.sqn = sqn
            return compute_xres(cred.k, rand)
    raise NetworkAuthFailure(f"{cred.imsi}: AUTN does not verify within the SQN window")


@dataclass
class Subscriber:
    k: bytes
    sqn: int
    record: SubscriptionRecord
    serving_mme: str = ""


class Hss(Entity):
    def __init__(self, network: str, plmn: str, seed: int = 0):
        super().__init__(names.hss(network))
        self.network = network
        self.plmn = plmn
        self.subscribers: dict[str, Subscriber] = {}
        self._rng = random.Random(f"hss:{network}:{seed}")

    def provision(self, record: SubscriptionRecord, k: bytes, sqn: int = 0) -> None:
        record.check()
        self.subscribers[record.imsi] = Subscriber(k, sqn, record)

    def hss_generate_vectors(self, imsi: str, count: int = 1) -> list[AuthVector]:
        sub = self.subscribers.get(imsi)
        if sub is None:
            raise UnknownSubscriber(imsi)
        out = []
        for _ in range(count):
            sub.sqn += 1
            rand = self._rng.randbytes(16)
            out.append(AuthVector(rand, compute_xres(sub.k, rand), compute_autn(sub.k, rand, sub.sqn)))
        return out

    def subscription(self, imsi: str) -> SubscriptionRecord:
        sub = self.subscribers.get(imsi)
        if sub is None:
            raise UnknownSubscriber(imsi)
        return sub.record

    def on_AIR(self, net, msg: AIR, src, dst, frame):
        try:
            vectors = tuple(self.hss_generate_vectors(msg.imsi, 1))
        except UnknownSubscriber:
            self.send(net, src, AIA(msg.session_id, (), "UnknownSubscriber"))
            return
        self.send(net, src, AIA(msg.session_id, vectors))

    def on_ULR(self, net, msg: ULR, src, dst, frame):
        sub = self.subscribers.get(msg.imsi)
        if sub is None:
            self.send(net, src, ULA(msg.session_id, None, "UnknownSubscriber"))
            return
        sub.serving_mme = msg.mme_id
        self.send(net, src, ULA(msg.session_id, sub.record))

    def on_SubscriptionFetchReq(self, net, msg: SubscriptionFetchReq, src, dst, frame):
        sub = self.subscribers.get(msg.imsi)
        resp = SubscriptionFetchResp(
            self.network, msg.source_network, msg.flow_id,
            sub.record if sub else None, "" if sub else "UnknownSubscriber",
        )
        self.send(net, src, resp)


@dataclass
class _Attach:
    imsi: str
    channel: str
    session_id: str
    vector: Optional[AuthVector] = None
    teid: int = 0
    ue_ip: str = ""
    done: bool = False


class Mme(Entity):
    """Serving MME; reaches foreign HSSs through the proxy's virtual HSS."""

    def __init__(self, network: str, plmn: str, ip_prefix: str):
        super().__init__(names.mme(network))
        self.network = network
        self.plmn = plmn
        self.ip_prefix = ip_prefix
        self.contexts: dict[str, _Attach] = {}
        self._by_session: dict[str, str] = {}
        self._teid = 0
        self._session = 0
        self._ips: set[str] = set()
        self.released: list[str] = []

    def s6a_peer(self, imsi: str) -> str:
        return names.hss(self.network) if imsi.startswith(self.plmn) else names.proxy(self.network)

    def allocate_ip(self) -> str:
        for n in range(2, 255):
            ip = f"{self.ip_prefix}.{n}"
            if ip not in self._ips:
                self._ips.add(ip)
                return ip
        raise RuntimeError(f"{self.network}: IP pool exhausted")

    def active_ips(self) -> set[str]:
        return set(self._ips)

    def _ctx(self, session_id: str) -> Optional[_Attach]:
        channel = self._by_session.get(session_id)
        return self.contexts.get(channel) if channel else None

    def _reject(self, net, ctx: _Attach, cause: str) -> None:
        self.send(net, ctx.channel, AttachReject(cause))
        self.contexts.pop(ctx.channel, None)

    def on_InitialUEMessage(self, net, msg: InitialUEMessage, src, dst, frame):
        self._session += 1
        ctx = _Attach(msg.imsi, src, f"{self.name};{self._session:08d}")
        self.contexts[src] = ctx
        self._by_session[ctx.session_id] = src
        self.send(net, self.s6a_peer(msg.imsi), AIR(ctx.session_id, msg.imsi, self.plmn))

    def on_AIA(self, net, msg: AIA, src, dst, frame):
        ctx = self._ctx(msg.session_id)
        if ctx is None:
            return
        if msg.error:
            self._reject(net, ctx, msg.error)
            return
        ctx.vector = msg.auth_vectors[0]
        self.send(net, ctx.channel, AuthenticationRequest(ctx.vector.rand, ctx.vector.autn))

    def on_AuthenticationResponse(self, net, msg: AuthenticationResponse, src, dst, frame):
        ctx = self.contexts.get(src)
        if ctx is None or ctx.vector is None:
            return
        if not mac_equal(msg.res, ctx.vector.xres):
            self._reject(net, ctx, ResFailure.__name__)
            return
        self.send(net, self.s6a_peer(ctx.imsi), ULR(ctx.session_id, ctx.imsi, self.name))

    def on_AuthenticationFailure(self, net, msg, src, dst, frame):
        self.contexts.pop(src, None)

    def on_ULA(self, net, msg: ULA, src, dst, frame):
        ctx = self._ctx(msg.session_id)
        if ctx is None:
            return
        if msg.error:
            self._reject(net, ctx, msg.error)
            return
        self._teid += 1
        ctx.teid = self._teid
        ctx.ue_ip = self.allocate_ip()
        self.send(net, ctx.channel, InitialContextSetupRequest(ctx.teid, ctx.ue_ip))

    def on_InitialContextSetupResponse(self, net, msg, src, dst, frame):
        ctx = self.contexts.get(src)
        if ctx is not None:
            ctx.done = True

    def on_UEContextRelease(self, net, msg: UEContextRelease, src, dst, frame):
        ctx = self.contexts.pop(src, None)
        if ctx is None:
            return
        self._by_session.pop(ctx.session_id, None)
        self._ips.discard(ctx.ue_ip)
        self.released.append(ctx.imsi)
        self.send(net, src, UEContextRelease("released"))

    def rotate_ip(self, net, imsi: str) -> str:
        """Give an attached UE a fresh address (periodic IP change)."""
        ctx = next((c for c in self.contexts.values() if c.imsi == imsi and c.done), None)
        if ctx is None:
            raise NotAttached(imsi)
        new_ip = self.allocate_ip()
        self._ips.discard(ctx.ue_ip)
        ctx.ue_ip = new_ip
        self.send(net, ctx.channel, UEContextModification(new_ip))
        return new_ip


class Enb(Entity):
    """Relays NAS between UEs and the MME and mirrors every S1 frame to the MEC tap."""

    def __init__(self, network: str):
        super().__init__(names.enb(network))
        self.network = network
        self.mme = names.mme(network)
        self.tap = names.mecmgr(network)
        self.ue_ips: dict[str, str] = {}

    def _channel(self, ue_name: str) -> str:
        return f"{self.name}#{ue_name}"

    def _uplink(self, net, src, frame):
        channel = self._channel(base_name(src))
        net.send(channel, self.mme, frame)
        net.send(channel, self.tap, frame)

    def _downlink(self, net, dst, frame):
        ue_name = dst.split("#", 1)[1]
        net.send(self.name, ue_name, frame)
        net.send(dst, self.tap, frame)
        return ue_name

    def on_InitialUEMessage(self, net, msg, src, dst, frame):
        self._uplink(net, src, frame)

    def on_AuthenticationResponse(self, net, msg, src, dst, frame):
        self._uplink(net, src, frame)

    def on_AuthenticationFailure(self, net, msg, src, dst, frame):
        self._uplink(net, src, frame)

    def on_AuthenticationRequest(self, net, msg, src, dst, frame):
        self._downlink(net, dst, frame)

    def on_AttachReject(self, net, msg, src, dst, frame):
        self._downlink(net, dst, frame)

    def on_InitialContextSetupRequest(self, net, msg: InitialContextSetupRequest, src, dst, frame):
        # bind the address before the UE can see it: on a threaded transport
        # the UE may send from it as soon as the frame is forwarded
        ue_name = dst.split("#", 1)[1]
        self.ue_ips[ue_name] = msg.ue_ip
        net.alias(msg.ue_ip, ue_name)
        self._downlink(net, dst, frame)
        resp = encode_frame(InitialContextSetupResponse())
        net.send(dst, self.mme, resp)
        net.send(dst, self.tap, resp)

    def on_UEContextModification(self, net, msg: UEContextModification, src, dst, frame):
        ue_name = dst.split("#", 1)[1]
        old = self.ue_ips.get(ue_name)
        if old:
            net.unalias(old)
        self.ue_ips[ue_name] = msg.ue_ip
        net.alias(msg.ue_ip, ue_name)
        self._downlink(net, dst, frame)

    def on_UEContextRelease(self, net, msg, src, dst, frame):
        if "#" in dst:  # downlink release from the MME
            ue_name = self._downlink(net, dst, frame)
        else:
            ue_name = base_name(src)
            self._uplink(net, src, frame)
        ip = self.ue_ips.pop(ue_name, None)
        if ip:
            net.unalias(ip)


@dataclass
class AttachResult:
    imsi: str
    teid: int
    ue_ip: str
    serving_network: str
    timeline: list[tuple[str, float, float]] = field(default_factory=list)


class Ue(Entity):
    """A handset: SIM credential, NAS state machine and a scripted app client.

    The harness sets ``login_mode`` ("reauth", "token" or None), ``app_id``
    and ``resume`` before attaching; the UE then runs login and session
    resumption by itself as the replies come in.
    """

    def __init__(self, cred: SimCredential):
        super().__init__(names.ue(cred.imsi))
        self.cred = cred
        self.serving: Optional[str] = None
        self.ip: Optional[str] = None
        self.teid = 0
        self.attached = False
        self.last_attach: Optional[AttachResult] = None
        self.last_error: Optional[str] = None
        self.tokens: dict[str, str] = {}
        self.sessions: dict[str, str] = {}
        self.received: list[bytes] = []
        self.login_mode: Optional[str] = None
        self.app_id: Optional[str] = None
        self.resume = False
        self._t_start = 0.0
        self._t_challenge = 0.0

    @property
    def imsi(self) -> str:
        return self.cred.imsi

    # -- cellular

    def attach(self, net, network: str) -> None:
        self.serving = network
        self.attached = False
        self.last_error = None
        self._t_start = net.now_ms
        net.mark("U1.start")
        self.send(net, names.enb(network), InitialUEMessage(self.imsi))

    def detach(self, net) -> None:
        if not self.attached:
            raise NotAttached(self.imsi)
        self.send(net, names.enb(self.serving), UEContextRelease("detach"))
        self.attached = False
        self.ip = None

    def on_AuthenticationRequest(self, net, msg: AuthenticationRequest, src, dst, frame):
        self._t_challenge = net.now_ms
        try:
            res = ue_answer_challenge(self.cred, msg.rand, msg.autn)
        except NetworkAuthFailure:
            self.last_error = NetworkAuthFailure.__name__
            self.send(net, src, AuthenticationFailure("NetworkAuthFailure"))
            return
        self.send(net, src, AuthenticationResponse(res))

    def on_AttachReject(self, net, msg: AttachReject, src, dst, frame):
        self.last_error = msg.cause

    def on_InitialContextSetupRequest(self, net, msg: InitialContextSetupRequest, src, dst, frame):
        self.teid, self.ip, self.attached = msg.teid, msg.ue_ip, True
        now = net.now_ms
        self.last_attach = AttachResult(
            self.imsi, msg.teid, msg.ue_ip, self.serving,
            [("U1", self._t_start, now), ("aka", self._t_challenge, now)],
        )
        net.mark("U1.end")
        self._start_login(net)

    def on_UEContextModification(self, net, msg: UEContextModification, src, dst, frame):
        self.ip = msg.ue_ip

    def on_UEContextRelease(self, net, msg, src, dst, frame):
        pass

    # -- application client

    def app_endpoint(self) -> str:
        return names.app(self.app_id, self.serving)

    def _start_login(self, net) -> None:
        if not self.login_mode or not self.app_id:
            return
        token = self.tokens.get(self.app_id)
        if self.login_mode == "token" and token:
            self.send(net, self.app_endpoint(), TokenPresent(token), src=self.ip)
        else:
            self.send(net, self.app_endpoint(), LoginStart(self.app_id), src=self.ip)

    def on_OidcAuthRequest(self, net, msg: OidcAuthRequest, src, dst, frame):
        self.send(net, msg.redirect_ref, msg, src=self.ip)

    def on_OidcAuthResponse(self, net, msg: OidcAuthResponse, src, dst, frame):
        self.tokens[self.app_id] = msg.token
        self.send(net, self.app_endpoint(), TokenPresent(msg.token), src=self.ip)

    def on_LoginOk(self, net, msg: LoginOk, src, dst, frame):
        self.sessions[self.app_id] = msg.session_id
        if self.resume:
            self.send(net, self.app_endpoint(), Resume(msg.session_id), src=self.ip)

    def on_LoginFailed(self, net, msg: LoginFailed, src, dst, frame):
        self.last_error = msg.reason

    def on_Data(self, net, msg: Data, src, dst, frame):
        self.received.append(msg.payload)
        net.mark("U3.end")


def attach(net, ue: Ue, network: str) -> AttachResult:
    """Run one attach to completion on an otherwise idle network."""
    ue.attach(net, network)
    net.run_until_idle()
    if not ue.attached:
        err = ue.last_error or "attach did not complete"
        if err == NetworkAuthFailure.__name__:
            raise NetworkAuthFailure(ue.imsi)
        if err == ResFailure.__name__:
            raise ResFailure(ue.imsi)
        if err == UnknownSubscriber.__name__:
            raise UnknownSubscriber(ue.imsi)
        raise RuntimeError(err)
    return ue.last_attach


def detach(net, ue: Ue) -> None:
    ue.detach(net)
    net.run_until_idle()

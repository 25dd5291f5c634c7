"""Transparent inter-operator proxy: S6a relay plus MEC (FS3A) relay.

Each network runs one proxy.  Local entities talk to it as if it were
their remote peer (a *virtual counterpart*); the proxy wraps the frame,
untouched, behind a :class:`RelayHeader` and ships it to the proxy of the
destination network, which delivers it with its own counterpart address as
the apparent source.  Responses retrace the path via correlation ids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from fedmec import names
from fedmec.errors import CorrelationLost, DuplicatePrefix, MalformedFrame, UnroutableRealm
from fedmec.netsim import base_name
from fedmec.wire import (
    AIA,
    AIR,
    ULA,
    ULR,
    MobilityAdvertise,
    RelayHeader,
    StateFetchReq,
    StateFetchResp,
    SubscriptionFetchReq,
    SubscriptionFetchResp,
    decode_frame,
    encode_frame,
)

log = logging.getLogger(__name__)

S6A = "s6a"
MEC = "mec"

# request type -> (relay kind, entity impersonated towards the receiver, receiving entity)
_REQUESTS = {
    AIR: (S6A, "vMME", names.hss),
    ULR: (S6A, "vMME", names.hss),
    SubscriptionFetchReq: (MEC, "vMECManager", names.mecmgr),
    StateFetchReq: (MEC, "vAMC", names.amc),
    MobilityAdvertise: (MEC, "vAMC", names.amc),
}
# response type -> counterpart impersonated towards the original requester
_RESPONSES = {AIA: "vHSS", ULA: "vHSS", SubscriptionFetchResp: "vMECManager", StateFetchResp: "vAMC"}
_ONE_WAY = (MobilityAdvertise,)


@dataclass(frozen=True)
class VirtualCounterpart:
    impersonates: str  # HSS | MME | AMC | MECManager
    for_network: str


@dataclass(frozen=True)
class RouteEntry:
    network_id: str
    plmn_prefix: str
    address: str


class RoutingTable:
    """Federation membership: network id / PLMN prefix -> proxy address."""

    def __init__(self):
        self.entries: dict[str, RouteEntry] = {}
        self.generation = 0
        self.counterparts: dict[str, tuple[VirtualCounterpart, ...]] = {}

    def register_network(self, network_id: str, plmn_prefix: str, address: str) -> "RoutingTable":
        for entry in self.entries.values():
            if entry.network_id != network_id and (
                plmn_prefix.startswith(entry.plmn_prefix) or entry.plmn_prefix.startswith(plmn_prefix)
            ):
                raise DuplicatePrefix(f"{plmn_prefix} already claimed by {entry.network_id}")
        self.entries[network_id] = RouteEntry(network_id, plmn_prefix, address)
        self.counterparts[network_id] = tuple(
            VirtualCounterpart(kind, network_id) for kind in ("HSS", "MME", "AMC", "MECManager")
        )
        self.generation += 1
        return self

    def lookup(self, network_id: str) -> RouteEntry:
        try:
            return self.entries[network_id]
        except KeyError:
            raise UnroutableRealm(network_id) from None

    def lookup_imsi(self, imsi: str) -> RouteEntry:
        for entry in self.entries.values():
            if imsi.startswith(entry.plmn_prefix):
                return entry
        raise UnroutableRealm(f"no network owns {imsi}")

    def network_of_address(self, address: str) -> Optional[str]:
        for entry in self.entries.values():
            if entry.address == address:
                return entry.network_id
        return None


@dataclass(frozen=True)
class AuditRecord:
    at_ms: float
    src: str
    reason: str
    size: int


class Proxy:
    def __init__(self, network: str, table: RoutingTable):
        self.name = names.proxy(network)
        self.network = network
        self.table = table
        self.local_peers = {names.mme(network), names.hss(network), names.mecmgr(network), names.amc(network)}
        self.pending_out: dict[str, str] = {}  # corr -> local requester address
        self.pending_in: dict[tuple[str, str, str], tuple[str, str]] = {}  # (kind, type, id) -> (corr, origin)
        self.audit: list[AuditRecord] = []
        self.relayed: list[tuple[str, str, bytes]] = []  # (direction, corr, inner frame)
        self._corr = 0

    # -- helpers

    def _counterpart(self, role: str, network: str) -> str:
        return f"{self.name}#{role}.{network}"

    def _next_corr(self) -> str:
        self._corr += 1
        return f"{self._corr:016x}"

    def _drop(self, net, src: str, reason: str, frame: bytes) -> None:
        log.warning("%s: dropped frame from %s: %s", self.name, src, reason)
        self.audit.append(AuditRecord(net.now_ms, src, reason, len(frame)))

    @staticmethod
    def _key(msg) -> tuple[str, str]:
        if isinstance(msg, (AIR, AIA, ULR, ULA)):
            return S6A, msg.session_id
        return MEC, msg.flow_id

    # -- dispatch

    def on_frame(self, net, src: str, dst: str, frame: bytes) -> None:
        origin = base_name(src)
        try:
            msg, used = decode_frame(frame)
        except MalformedFrame as exc:
            self._drop(net, src, f"malformed: {exc}", frame)
            return
        if origin in self.local_peers:
            self._from_local(net, src, msg, frame)
        elif isinstance(msg, RelayHeader) and self.table.network_of_address(origin) is not None:
            inner = frame[used:]
            if len(inner) != msg.inner_length:
                self._drop(net, src, "relay length mismatch", frame)
                return
            self._from_peer(net, origin, msg, inner)
        else:
            self._drop(net, src, "source not in routing table", frame)

    def _wrap(self, net, dst_network: str, corr: str, kind: str, inner: bytes) -> None:
        route = self.table.lookup(dst_network)
        header = encode_frame(RelayHeader(self.network, dst_network, corr, kind, len(inner)))
        self.relayed.append(("out", corr, inner))
        net.send(self.name, route.address, header + inner)

    def _from_local(self, net, src: str, msg, frame: bytes) -> None:
        mtype = type(msg)
        if mtype in _REQUESTS:
            kind, _, _ = _REQUESTS[mtype]
            try:
                route = (self.table.lookup_imsi(msg.imsi) if kind == S6A
                         else self.table.lookup(msg.destination_network))
            except UnroutableRealm as exc:
                self._reject(net, src, msg, exc)
                return
            corr = self._next_corr()
            if mtype not in _ONE_WAY:
                self.pending_out[corr] = src
            self._wrap(net, route.network_id, corr, kind, frame)
        elif mtype in _RESPONSES:
            kind, ident = self._key(msg)
            hit = self.pending_in.pop((kind, mtype.__name__, ident), None)
            if hit is None:
                self._drop(net, src, f"{CorrelationLost.__name__}: {mtype.__name__} {ident}", frame)
                return
            corr, origin_network = hit
            self._wrap(net, origin_network, corr, kind, frame)
        else:
            self._drop(net, src, f"not relayable: {mtype.__name__}", frame)

    def _reject(self, net, src, msg, exc) -> None:
        log.warning("%s: %s", self.name, exc)
        self.audit.append(AuditRecord(net.now_ms, src, f"UnroutableRealm: {exc}", 0))
        err = UnroutableRealm.__name__
        if isinstance(msg, AIR):
            answer = AIA(msg.session_id, (), err)
        elif isinstance(msg, ULR):
            answer = ULA(msg.session_id, None, err)
        elif isinstance(msg, SubscriptionFetchReq):
            answer = SubscriptionFetchResp(msg.destination_network, msg.source_network, msg.flow_id, None, err)
        elif isinstance(msg, StateFetchReq):
            answer = StateFetchResp(msg.destination_network, msg.source_network, msg.flow_id, None, err)
        else:
            return
        net.send(self._counterpart(_RESPONSES[type(answer)], "unknown"), src, encode_frame(answer))

    def _from_peer(self, net, origin: str, header: RelayHeader, inner: bytes) -> None:
        origin_network = self.table.network_of_address(origin)
        try:
            msg, _ = decode_frame(inner)
        except MalformedFrame as exc:
            self._drop(net, origin, f"malformed inner frame: {exc}", inner)
            return
        mtype = type(msg)
        self.relayed.append(("in", header.corr_id, inner))
        if mtype in _REQUESTS:
            kind, role, receiver = _REQUESTS[mtype]
            if mtype not in _ONE_WAY:
                self.pending_in[(kind, _response_for(mtype), self._key(msg)[1])] = (header.corr_id, origin_network)
            net.send(self._counterpart(role, origin_network), receiver(self.network), inner)
        elif mtype in _RESPONSES:
            requester = self.pending_out.pop(header.corr_id, None)
            if requester is None:
                self._drop(net, origin, f"{CorrelationLost.__name__}: corr {header.corr_id}", inner)
                return
            net.send(self._counterpart(_RESPONSES[mtype], origin_network), requester, inner)
        else:
            self._drop(net, origin, f"not relayable: {mtype.__name__}", inner)


def _response_for(request_type) -> str:
    return {AIR: "AIA", ULR: "ULA", SubscriptionFetchReq: "SubscriptionFetchResp",
            StateFetchReq: "StateFetchResp"}[request_type]

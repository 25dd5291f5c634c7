"""MEC Manager: S1 tap, UE identification and prefetch triggers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from fedmec import names
from fedmec.entity import Entity
from fedmec.errors import HomeUnreachable, OrphanContext
from fedmec.mecsys.datastore import Datastore
from fedmec.wire import (
    InitialContextSetupRequest,
    InitialUEMessage,
    Message,
    SubscriptionFetchReq,
    SubscriptionFetchResp,
    UEArrivalNotice,
    UEContextModification,
    UEContextRelease,
)

log = logging.getLogger(__name__)

ON_DEMAND = "on_demand"
PREFETCH = "prefetch"
ON_ARRIVAL = "on_arrival"


@dataclass
class _Fetch:
    imsi: str
    mode: str
    waiters: list[tuple[str, str, str]] = field(default_factory=list)
    local: bool = True


class MecManager(Entity):
    def __init__(self, network: str, datastore: Datastore, federation: dict[str, str],
                 subscription_fetch: str = ON_DEMAND, state_fetch: str = ON_ARRIVAL):
        super().__init__(names.mecmgr(network))
        self.network = network
        self.ds = datastore
        self.federation = dict(federation)  # PLMN prefix -> network id
        self.subscription_fetch = subscription_fetch
        self.state_fetch = state_fetch
        self.pending_imsi: dict[str, str] = {}
        self.watches: dict[str, set[str]] = {}
        self.fetches: dict[str, _Fetch] = {}
        self._fetch_flows: dict[str, str] = {}
        self.orphans: list[str] = []

    def home_network(self, imsi: str) -> str:
        for prefix, net_id in self.federation.items():
            if imsi.startswith(prefix):
                return net_id
        raise HomeUnreachable(f"no federated network owns {imsi}")

    # -- S1 tap

    def tap_s1(self, net, channel: str, msg: Message) -> list[str]:
        """Consume one mirrored S1 message; returns the triggers it fired."""
        fired: list[str] = []
        if isinstance(msg, InitialUEMessage):
            self.pending_imsi[channel] = msg.imsi
        elif isinstance(msg, InitialContextSetupRequest):
            imsi = self.pending_imsi.get(channel)
            if imsi is None:
                log.warning("%s: %s", self.name, OrphanContext(channel))
                self.orphans.append(channel)
                return fired
            home_plmn = next((p for p in self.federation if imsi.startswith(p)), imsi[:5])
            self.ds.activate(imsi, msg.teid, msg.ue_ip, home_plmn, net.now_ms)
            if self.subscription_fetch == PREFETCH and self.ds.is_foreign(imsi):
                self.fetch_subscription(net, imsi, PREFETCH)
                fired.append("subscription")
            if self.state_fetch == PREFETCH and imsi in self.watches:
                self._notify_arrival(net, imsi)
                fired.append("state")
        elif isinstance(msg, UEContextRelease):
            imsi = self.pending_imsi.pop(channel, None)
            if imsi is not None:
                self.ds.deactivate(imsi)
        elif isinstance(msg, UEContextModification):
            imsi = self.pending_imsi.get(channel)
            if imsi is not None:
                self.ds.update_ip(imsi, msg.ue_ip)
        return fired

    def _tap(self, net, msg, src, dst, frame):
        self.tap_s1(net, src, msg)

    on_InitialUEMessage = _tap
    on_InitialContextSetupRequest = _tap
    on_UEContextRelease = _tap
    on_UEContextModification = _tap

    def _ignore(self, net, msg, src, dst, frame):
        pass

    on_AuthenticationRequest = _ignore
    on_AuthenticationResponse = _ignore
    on_AuthenticationFailure = _ignore
    on_InitialContextSetupResponse = _ignore
    on_AttachReject = _ignore

    # -- subscription data (M1)

    def fetch_subscription(self, net, imsi: str, mode: str,
                           waiter: Optional[tuple[str, str, str]] = None) -> None:
        """Bring imsi's subscription into the datastore; coalesces concurrent calls."""
        entry = self.ds.subscription(imsi)
        if entry is not None:
            if waiter:
                self._answer(net, waiter, entry.record, "")
            return
        inflight = self.fetches.get(imsi)
        if inflight is not None:
            if waiter:
                inflight.waiters.append(waiter)
            return
        home = self.home_network(imsi)
        # fetches relayed in from a visited network are that network's M1
        local = waiter is None or "#" not in waiter[0]
        fetch = _Fetch(imsi, mode, [waiter] if waiter else [], local)
        self.fetches[imsi] = fetch
        if local:
            net.mark("M1.start")
        flow = self.next_flow()
        self._fetch_flows[flow] = imsi
        req = SubscriptionFetchReq(self.network, home, flow, imsi)
        target = names.hss(self.network) if home == self.network else names.proxy(self.network)
        self.send(net, target, req)

    def _answer(self, net, waiter, record, error):
        dst, flow, requester_net = waiter
        self.send(net, dst, SubscriptionFetchResp(self.network, requester_net, flow, record, error))

    def on_SubscriptionFetchReq(self, net, msg: SubscriptionFetchReq, src, dst, frame):
        waiter = (src, msg.flow_id, msg.source_network)
        try:
            self.fetch_subscription(net, msg.imsi, ON_DEMAND, waiter)
        except HomeUnreachable as exc:
            self._answer(net, waiter, None, type(exc).__name__)

    def on_SubscriptionFetchResp(self, net, msg: SubscriptionFetchResp, src, dst, frame):
        imsi = self._fetch_flows.pop(msg.flow_id, None)
        fetch = self.fetches.pop(imsi, None) if imsi else None
        if fetch is None:
            log.warning("%s: unsolicited subscription answer %s", self.name, msg.flow_id)
            return
        if msg.record is not None:
            self.ds.store_subscription(msg.record, net.now_ms)
            if fetch.local:
                net.mark("M1.end")
        for waiter in fetch.waiters:
            self._answer(net, waiter, msg.record, msg.error)

    # -- mobility watches

    def on_WatchRequest(self, net, msg, src, dst, frame):
        self.watches.setdefault(msg.user_id, set()).add(msg.requester)
        net.mark("M3.end")
        if self.state_fetch == PREFETCH and self.ds.active(msg.user_id):
            self._notify_arrival(net, msg.user_id)

    def on_SessionNotice(self, net, msg, src, dst, frame):
        if msg.user_id in self.watches:
            self._notify_arrival(net, msg.user_id)

    def _notify_arrival(self, net, imsi: str) -> None:
        for requester in sorted(self.watches.pop(imsi, ())):
            self.send(net, requester, UEArrivalNotice(self.network, self.network, imsi, names.platform(self.network)))

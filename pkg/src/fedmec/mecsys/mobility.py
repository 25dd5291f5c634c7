"""Application mobility: the host-level AMS and the system-level AMC.

Setup: the app registers a user with its AMS, which advertises through the
AMC to every neighbour platform.  Each neighbour AMS keeps a watch and asks
its MEC Manager to report the user's arrival.  On arrival (or at the
context-setup tap in prefetch mode) the target AMS pulls the latest state
back from the source platform and caches it for the local app.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from fedmec import names
from fedmec.entity import Entity
from fedmec.errors import NoNeighbors, NoRoute, StaleWatch
from fedmec.netsim import base_name
from fedmec.wire import (
    AppState,
    MobilityAdvertise,
    StateFetchReq,
    StateFetchResp,
    UEArrivalNotice,
    WatchRequest,
)

log = logging.getLogger(__name__)

WATCH_TTL_MS = 24 * 3600 * 1000

# where a target AMS downloads state from
SOURCE_PLATFORM = "proxy"
SOURCE_CLOUD = "cloud"


@dataclass
class MobilityWatch:
    user_id: str
    app_id: str
    source_network: str
    source_platform: str
    created_at_ms: float


@dataclass
class _Inflight:
    key: tuple[str, str]
    waiters: list[tuple[str, str]] = field(default_factory=list)  # (app endpoint, flow)


class Ams(Entity):
    def __init__(self, network: str, state_source: str = SOURCE_PLATFORM, watch_ttl_ms: float = WATCH_TTL_MS):
        super().__init__(names.ams(network))
        self.network = network
        self.state_source = state_source
        self.watch_ttl_ms = watch_ttl_ms
        self.watches: dict[tuple[str, str], MobilityWatch] = {}
        self.cache: dict[tuple[str, str], AppState] = {}
        self.inflight: dict[str, _Inflight] = {}  # our flow -> fetch
        self._serving: dict[str, str] = {}  # flow -> requester (source role)
        self.timeline: list[tuple[str, str, float, float]] = []
        self._started: dict[str, float] = {}

    @property
    def amc(self) -> str:
        return names.amc(self.network)

    def expire(self, now_ms: float) -> int:
        stale = [k for k, w in self.watches.items() if now_ms - w.created_at_ms >= self.watch_ttl_ms]
        for k in stale:
            del self.watches[k]
        return len(stale)

    # -- setup stage

    def on_MobilityRegister(self, net, msg, src, dst, frame):
        self.send(net, self.amc, MobilityAdvertise(self.network, self.network, msg.user_id, msg.app_id,
                                                   names.platform(self.network)))

    def on_MobilityAdvertise(self, net, msg: MobilityAdvertise, src, dst, frame):
        self.watches[(msg.user_id, msg.app_id)] = MobilityWatch(
            msg.user_id, msg.app_id, msg.source_network, msg.source_platform, net.now_ms
        )
        self.send(net, names.mecmgr(self.network),
                  WatchRequest(self.network, self.network, msg.user_id, self.name))

    # -- transfer stage (target role)

    def _fetching(self, key) -> _Inflight | None:
        return next((f for f in self.inflight.values() if f.key == key), None)

    def handover_state(self, net, user_id: str, app_id: str, waiter=None) -> None:
        """Pull (user, app) state from its source; raises StaleWatch without a watch."""
        key = (user_id, app_id)
        self.expire(net.now_ms)
        if key in self.cache:
            if waiter:
                self._answer(net, waiter, self.cache[key], "")
            return
        inflight = self._fetching(key)
        if inflight is not None:
            if waiter:
                inflight.waiters.append(waiter)
            return
        watch = self.watches.pop(key, None)
        if watch is None:
            raise StaleWatch(f"{user_id}/{app_id} at {self.name}")
        flow = self.next_flow()
        self.inflight[flow] = _Inflight(key, [waiter] if waiter else [])
        self._started[flow] = net.now_ms
        net.mark("M2.start")
        if self.state_source == SOURCE_CLOUD:
            self.send(net, names.CLOUD, StateFetchReq(self.network, names.CLOUD, flow, user_id, app_id))
        else:
            self.send(net, self.amc, StateFetchReq(self.network, watch.source_network, flow, user_id, app_id))

    def on_UEArrivalNotice(self, net, msg: UEArrivalNotice, src, dst, frame):
        for user_id, app_id in sorted(k for k in self.watches if k[0] == msg.user_id):
            self.handover_state(net, user_id, app_id)

    def _answer(self, net, waiter, state, error):
        dst, flow = waiter
        self.send(net, dst, StateFetchResp(self.network, self.network, flow, state, error))

    def on_StateFetchReq(self, net, msg: StateFetchReq, src, dst, frame):
        if base_name(src) == self.amc:
            # source role: hand the request to the app's state interface
            self._serving[msg.flow_id] = src
            self.send(net, names.app(msg.app_id, self.network), msg)
            return
        waiter = (src, msg.flow_id)
        try:
            self.handover_state(net, msg.user_id, msg.app_id, waiter)
        except StaleWatch as exc:
            self._answer(net, waiter, None, type(exc).__name__)

    def on_StateFetchResp(self, net, msg: StateFetchResp, src, dst, frame):
        requester = self._serving.pop(msg.flow_id, None)
        if requester is not None:
            self.send(net, self.amc, msg)
            return
        fetch = self.inflight.pop(msg.flow_id, None)
        if fetch is None:
            log.warning("%s: unsolicited state answer %s", self.name, msg.flow_id)
            return
        net.mark("M2.end")
        self.timeline.append(("M2", msg.flow_id, self._started.pop(msg.flow_id), net.now_ms))
        if msg.app_state is not None:
            self.cache[fetch.key] = msg.app_state
        for waiter in fetch.waiters:
            self._answer(net, waiter, msg.app_state, msg.error)


class Amc(Entity):
    """Relays advertisements and state requests between local AMS and the proxy."""

    def __init__(self, network: str, neighbors: list[str]):
        super().__init__(names.amc(network))
        self.network = network
        self.neighbors = [n for n in neighbors if n != network]
        self.failures: list[tuple[str, str]] = []

    def advertise(self, net, msg: MobilityAdvertise) -> int:
        if not self.neighbors:
            log.warning("%s: %s", self.name, NoNeighbors(msg.user_id))
            return 0
        sent = 0
        for nb in self.neighbors:
            out = MobilityAdvertise(self.network, nb, msg.user_id, msg.app_id, msg.source_platform)
            try:
                self.send(net, names.proxy(self.network), out)
                sent += 1
            except NoRoute as exc:
                log.warning("%s: advertise to %s failed: %s", self.name, nb, exc)
                self.failures.append((nb, str(exc)))
        return sent

    def _relay(self, net, msg, frame):
        if msg.destination_network == self.network:
            net.send(self.name, names.ams(self.network), frame)
        else:
            net.send(self.name, names.proxy(self.network), frame)

    def on_MobilityAdvertise(self, net, msg, src, dst, frame):
        if msg.destination_network == self.network and base_name(src) == names.ams(self.network):
            self.advertise(net, msg)
        else:
            self._relay(net, msg, frame)

    def on_StateFetchReq(self, net, msg, src, dst, frame):
        self._relay(net, msg, frame)

    def on_StateFetchResp(self, net, msg, src, dst, frame):
        self._relay(net, msg, frame)

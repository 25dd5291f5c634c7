"""Build a complete federation (cellular cores, MEC systems, proxies, cloud) from config."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Union

from fedmec import names
from fedmec.cellular import Enb, Hss, Mme, SimCredential, Ue
from fedmec.fedproxy import Proxy, RoutingTable
from fedmec.harness.config import CLOUD, PREFETCH, LinkClass, ScenarioConfig
from fedmec.mecsys import Cloud, MecSystem
from fedmec.mecsys.mobility import SOURCE_CLOUD, SOURCE_PLATFORM
from fedmec.netsim import LoopbackNetwork, Network
from fedmec.wire import SubscriptionRecord

log = logging.getLogger(__name__)

SIM = "sim"
LOOPBACK = "loopback"


@dataclass
class CellularCore:
    enb: Enb
    mme: Mme
    hss: Hss


@dataclass
class Federation:
    config: ScenarioConfig
    net: Union[Network, LoopbackNetwork]
    cores: dict[str, CellularCore]
    systems: dict[str, MecSystem]
    proxies: dict[str, Proxy]
    table: RoutingTable
    cloud: Cloud
    ues: dict[str, Ue] = field(default_factory=dict)

    @property
    def ue(self) -> Ue:
        return self.ues[self.config.subscriber.imsi]

    def app(self, network: str, app_id: Optional[str] = None):
        return self.systems[network].apps[app_id or self.config.app.id]

    def close(self) -> None:
        if isinstance(self.net, LoopbackNetwork):
            self.net.close()


def combine(*classes: LinkClass) -> LinkClass:
    """Several hops collapsed into one link: latencies add, bandwidth is the bottleneck."""
    return LinkClass(sum(c.latency_ms for c in classes), min(c.bandwidth_mbps for c in classes))


def ue_app_class(cfg: ScenarioConfig) -> LinkClass:
    return combine(cfg.link("ue_enb"), cfg.link("enb_mec"))


def ue_cloud_class(cfg: ScenarioConfig) -> LinkClass:
    return combine(cfg.link("ue_enb"), cfg.link("enb_mec"), cfg.link("mec_epc"), cfg.link("cloud"))


def enb_mme_class(cfg: ScenarioConfig) -> LinkClass:
    return combine(cfg.link("enb_mec"), cfg.link("mec_epc"))


def link_plan(cfg: ScenarioConfig) -> list[tuple[str, str, LinkClass]]:
    """Every link of the federation with its parameters.  Shared with the test oracle."""
    L = cfg.link
    plan: list[tuple[str, str, LinkClass]] = []
    app_ids = [a.id for a in cfg.apps]
    for n in cfg.networks:
        N = n.id
        mec = [names.mecmgr(N), names.oidc(N), names.ams(N), names.amc(N)]
        apps = [names.app(a, N) for a in app_ids]
        plan += [
            (names.enb(N), names.mme(N), enb_mme_class(cfg)),
            (names.enb(N), names.mecmgr(N), L("enb_mec")),
            (names.mme(N), names.hss(N), L("epc_internal")),
            (names.hss(N), names.mecmgr(N), L("mec_epc")),
            (names.mme(N), names.proxy(N), L("epc_proxy")),
            (names.hss(N), names.proxy(N), L("epc_proxy")),
            (names.mecmgr(N), names.proxy(N), L("mec_proxy")),
            (names.amc(N), names.proxy(N), L("mec_proxy")),
            (names.oidc(N), CLOUD, L("cloud")),
            (names.ams(N), CLOUD, L("cloud")),
        ]
        plan += [(a, b, L("mec_internal")) for a, b in combinations(mec, 2)]
        for app in apps:
            plan += [
                (app, names.ams(N), L("app_ams")),
                (app, names.oidc(N), L("app_mec")),
                (app, names.mecmgr(N), L("app_mec")),
                (app, CLOUD, L("cloud")),
            ]
        for s in cfg.subscribers:
            ue = names.ue(s.imsi)
            plan.append((ue, names.enb(N), L("ue_enb")))
            plan.append((ue, names.oidc(N), ue_app_class(cfg)))
            plan += [(ue, app, ue_app_class(cfg)) for app in apps]
    for s in cfg.subscribers:
        plan.append((names.ue(s.imsi), CLOUD, ue_cloud_class(cfg)))
    for a, b in combinations([n.id for n in cfg.networks], 2):
        plan.append((names.proxy(a), names.proxy(b), L("proxy_proxy")))
    return plan


def build_federation(cfg: ScenarioConfig, transport: str = SIM, *, state_fetch: Optional[str] = None,
                     state_location: Optional[str] = None) -> Federation:
    if transport == SIM:
        net = Network()
    elif transport == LOOPBACK:
        net = LoopbackNetwork()
    else:
        raise ValueError(f"unknown transport {transport!r}")
    state_fetch = state_fetch or cfg.state_fetch
    state_location = state_location or cfg.state_location
    federation_map = {n.plmn: n.id for n in cfg.networks}
    app_keys = {a.id: a.key_bytes for a in cfg.apps}
    table = RoutingTable()
    cores, systems, proxies = {}, {}, {}
    for n in cfg.networks:
        table.register_network(n.id, n.plmn, names.proxy(n.id))
        hss = Hss(n.id, n.plmn, cfg.seed)
        for s in cfg.subscribers:
            if s.home == n.id:
                record = SubscriptionRecord(s.imsi, n.plmn, s.mec_entitlement, {"home": n.id})
                hss.provision(record, s.key, s.sqn)
        cores[n.id] = CellularCore(Enb(n.id), Mme(n.id, n.plmn, n.ip_prefix), hss)
        systems[n.id] = MecSystem.build(
            n.id, n.plmn, federation_map, app_keys,
            auth_server=cfg.auth_server_location,
            state_source=SOURCE_CLOUD if state_location == CLOUD else SOURCE_PLATFORM,
            subscription_fetch=cfg.subscription_fetch,
            state_fetch=state_fetch,
            token_lifetime_ms=cfg.token_lifetime_ms,
            watch_ttl_ms=cfg.watch_ttl_ms,
            cloud_sync=state_location == CLOUD,
            seed=cfg.seed,
        )
        proxies[n.id] = Proxy(n.id, table)
    cloud = Cloud(app_keys, {n.ip_prefix: n.id for n in cfg.networks}, cfg.token_lifetime_ms, cfg.seed)
    fed = Federation(cfg, net, cores, systems, proxies, table, cloud)
    for core in cores.values():
        for e in (core.enb, core.mme, core.hss):
            net.add_endpoint(e)
    for system in systems.values():
        for e in system.entities():
            net.add_endpoint(e)
    for p in proxies.values():
        net.add_endpoint(p)
    net.add_endpoint(cloud)
    for s in cfg.subscribers:
        ue = Ue(SimCredential(s.imsi, s.key, s.sqn))
        fed.ues[s.imsi] = ue
        net.add_endpoint(ue)
    for a, b, lc in link_plan(cfg):
        net.add_link(a, b, lc.latency_ms, lc.bandwidth_mbps, established=cfg.warm_links)
    log.debug("federation built: %d endpoints, %d links", len(net.endpoints), len(net.links))
    return fed


def uses_prefetch(cfg: ScenarioConfig) -> bool:
    return cfg.subscription_fetch == PREFETCH or cfg.state_fetch == PREFETCH

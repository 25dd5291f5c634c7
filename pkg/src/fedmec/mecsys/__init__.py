"""MEC system entities of one network and a bundle wiring them together."""

from __future__ import annotations

from dataclasses import dataclass, field

from fedmec import names
from fedmec.mecsys.app import AppServer, Session
from fedmec.mecsys.cloud import Cloud
from fedmec.mecsys.datastore import Datastore, SubscriberDatastoreEntry, UEContext
from fedmec.mecsys.manager import ON_ARRIVAL, ON_DEMAND, PREFETCH, MecManager
from fedmec.mecsys.mobility import WATCH_TTL_MS, Amc, Ams, MobilityWatch
from fedmec.mecsys.oidc import DEFAULT_TOKEN_LIFETIME_MS, OidcModule

__all__ = [
    "Amc", "Ams", "AppServer", "Cloud", "Datastore", "MecManager", "MecSystem", "MobilityWatch",
    "OidcModule", "Session", "SubscriberDatastoreEntry", "UEContext",
    "ON_ARRIVAL", "ON_DEMAND", "PREFETCH", "WATCH_TTL_MS", "DEFAULT_TOKEN_LIFETIME_MS",
]


@dataclass
class MecSystem:
    network: str
    datastore: Datastore
    manager: MecManager
    oidc: OidcModule
    ams: Ams
    amc: Amc
    apps: dict[str, AppServer] = field(default_factory=dict)

    @classmethod
    def build(cls, network: str, plmn: str, federation: dict[str, str], app_keys: dict[str, bytes], *,
              auth_server: str = "mec", state_source: str = "proxy",
              subscription_fetch: str = ON_DEMAND, state_fetch: str = ON_ARRIVAL,
              token_lifetime_ms: int = DEFAULT_TOKEN_LIFETIME_MS, watch_ttl_ms: float = WATCH_TTL_MS,
              cloud_sync: bool = False, seed: int = 0) -> "MecSystem":
        """``auth_server`` is "mec" (local OIDC module) or "cloud"."""
        ds = Datastore(network, plmn)
        auth = names.oidc(network) if auth_server == "mec" else names.CLOUD
        system = cls(
            network=network,
            datastore=ds,
            manager=MecManager(network, ds, federation, subscription_fetch, state_fetch),
            oidc=OidcModule(network, ds, app_keys, token_lifetime_ms, seed),
            ams=Ams(network, state_source, watch_ttl_ms),
            amc=Amc(network, sorted(set(federation.values()))),
        )
        for app_id in sorted(app_keys):
            system.apps[app_id] = AppServer(app_id, network, ds, auth, cloud_sync=cloud_sync)
        return system

    def entities(self) -> list:
        return [self.manager, self.oidc, self.ams, self.amc, *self.apps.values()]

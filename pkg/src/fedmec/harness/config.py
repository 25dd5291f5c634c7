"""Scenario configuration: topology, link classes, subscribers, apps, toggles.

The document is JSON.  ``DEFAULT_CONFIG`` is the complete default; a file
only needs the keys it changes (nested mappings are merged, lists replace).
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Optional

from fedmec.errors import ConfigError, ConfigMismatch

MEC = "mec"
CLOUD = "cloud"
ON_DEMAND = "on_demand"
PREFETCH = "prefetch"
ON_ARRIVAL = "on_arrival"
REAUTH = "reauth"
TOKEN_REUSE = "token_reuse"
PROXY = "proxy"

# canonical scenario order: placement (M|C), signalling (P|U), auth (T|A)
SCENARIO_CODES = ("CUA", "CUT", "CPA", "CPT", "MUA", "MUT", "MPA", "MPT")

LINK_CLASSES = (
    "ue_enb", "enb_mec", "mec_epc", "epc_internal", "epc_proxy",
    "mec_internal", "app_mec", "app_ams", "mec_proxy", "proxy_proxy", "cloud",
)

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 7,
    "home": "A",
    "visited": "B",
    "networks": [
        {"id": "A", "plmn": "00101", "ip_prefix": "10.0.1"},
        {"id": "B", "plmn": "00102", "ip_prefix": "10.0.2"},
    ],
    "links": {
        "ue_enb": {"latency_ms": 2.0, "bandwidth_mbps": 100.0},
        "enb_mec": {"latency_ms": 1.0, "bandwidth_mbps": 100.0},
        "mec_epc": {"latency_ms": 2.0, "bandwidth_mbps": 100.0},
        "epc_internal": {"latency_ms": 0.5, "bandwidth_mbps": 100.0},
        "epc_proxy": {"latency_ms": 2.0, "bandwidth_mbps": 100.0},
        "mec_internal": {"latency_ms": 0.5, "bandwidth_mbps": 1000.0},
        "app_mec": {"latency_ms": 0.5, "bandwidth_mbps": 1000.0},
        "app_ams": {"latency_ms": 0.5, "bandwidth_mbps": 1000.0},
        "mec_proxy": {"latency_ms": 1.0, "bandwidth_mbps": 100.0},
        "proxy_proxy": {"latency_ms": 10.0, "bandwidth_mbps": 100.0},
        "cloud": {"latency_ms": 40.0, "bandwidth_mbps": 20.0},
    },
    "warm_links": True,
    "subscribers": [
        {"imsi": "001010000000001", "k": "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f",
         "home": "A", "sqn": 0, "mec_entitlement": True},
        {"imsi": "001010000000002", "k": "202122232425262728292a2b2c2d2e2f303132333435363738393a3b3c3d3e3f",
         "home": "A", "sqn": 0, "mec_entitlement": True},
    ],
    "apps": [
        {"id": "game", "key": "6170702d6b65792d67616d652d30303030303030303030303030303030303030",
         "state_size_bytes": 1048576},
    ],
    "auth_server_location": MEC,
    "subscription_fetch": ON_DEMAND,
    "state_fetch": ON_ARRIVAL,
    "state_location": PROXY,
    "auth_mode": REAUTH,
    "token_lifetime_ms": 300000,
    "watch_ttl_ms": 86400000,
}

_CHOICES = {
    "auth_server_location": (MEC, CLOUD),
    "subscription_fetch": (ON_DEMAND, PREFETCH),
    "state_fetch": (ON_ARRIVAL, PREFETCH),
    "state_location": (PROXY, CLOUD),
    "auth_mode": (REAUTH, TOKEN_REUSE),
}


@dataclass(frozen=True)
class LinkClass:
    latency_ms: float
    bandwidth_mbps: float


@dataclass(frozen=True)
class NetworkSpec:
    id: str
    plmn: str
    ip_prefix: str


@dataclass(frozen=True)
class SubscriberSpec:
    imsi: str
    k: str
    home: str
    sqn: int = 0
    mec_entitlement: bool = True

    @property
    def key(self) -> bytes:
        return bytes.fromhex(self.k)


@dataclass(frozen=True)
class AppSpec:
    id: str
    key: str
    state_size_bytes: int

    @property
    def key_bytes(self) -> bytes:
        return bytes.fromhex(self.key)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    home: str
    visited: str
    networks: tuple[NetworkSpec, ...]
    links: dict[str, LinkClass]
    warm_links: bool
    subscribers: tuple[SubscriberSpec, ...]
    apps: tuple[AppSpec, ...]
    auth_server_location: str
    subscription_fetch: str
    state_fetch: str
    state_location: str
    auth_mode: str
    token_lifetime_ms: int
    watch_ttl_ms: int

    # -- lookups

    def network(self, net_id: str) -> NetworkSpec:
        for n in self.networks:
            if n.id == net_id:
                return n
        raise ConfigError(f"unknown network {net_id!r}")

    def link(self, cls: str) -> LinkClass:
        return self.links[cls]

    @property
    def app(self) -> AppSpec:
        return self.apps[0]

    @property
    def subscriber(self) -> SubscriberSpec:
        return self.subscribers[0]

    @property
    def code(self) -> str:
        return (
            ("C" if self.auth_server_location == CLOUD else "M")
            + ("P" if self.subscription_fetch == PREFETCH else "U")
            + ("T" if self.auth_mode == TOKEN_REUSE else "A")
        )

    def with_code(self, code: str) -> "ScenarioConfig":
        if code not in SCENARIO_CODES:
            raise ConfigMismatch(f"unknown scenario code {code!r}")
        return replace(
            self,
            auth_server_location=CLOUD if code[0] == "C" else MEC,
            subscription_fetch=PREFETCH if code[1] == "P" else ON_DEMAND,
            auth_mode=TOKEN_REUSE if code[2] == "T" else REAUTH,
        )

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def with_links(self, **classes: dict) -> "ScenarioConfig":
        links = dict(self.links)
        for name, change in classes.items():
            if name not in links:
                raise ConfigError(f"unknown link class {name!r}")
            links[name] = replace(links[name], **change)
        return replace(self, links=links)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["networks"] = [asdict(n) for n in self.networks]
        d["subscribers"] = [asdict(s) for s in self.subscribers]
        d["apps"] = [asdict(a) for a in self.apps]
        d["links"] = {k: asdict(v) for k, v in self.links.items()}
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def from_dict(doc: dict) -> ScenarioConfig:
    unknown = set(doc) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    d = _merge(DEFAULT_CONFIG, doc)
    try:
        for key, allowed in _CHOICES.items():
            if d[key] not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {d[key]!r}")
        missing = set(LINK_CLASSES) - set(d["links"])
        extra = set(d["links"]) - set(LINK_CLASSES)
        if missing or extra:
            raise ConfigError(f"link classes mismatch: missing {sorted(missing)}, unknown {sorted(extra)}")
        links = {}
        for name, spec in d["links"].items():
            lc = LinkClass(float(spec["latency_ms"]), float(spec["bandwidth_mbps"]))
            if lc.latency_ms < 0 or lc.bandwidth_mbps <= 0:
                raise ConfigError(f"link class {name}: latency must be >= 0 and bandwidth > 0")
            links[name] = lc
        cfg = ScenarioConfig(
            seed=int(d["seed"]),
            home=d["home"],
            visited=d["visited"],
            networks=tuple(NetworkSpec(**n) for n in d["networks"]),
            links=links,
            warm_links=bool(d["warm_links"]),
            subscribers=tuple(SubscriberSpec(**s) for s in d["subscribers"]),
            apps=tuple(AppSpec(**a) for a in d["apps"]),
            auth_server_location=d["auth_server_location"],
            subscription_fetch=d["subscription_fetch"],
            state_fetch=d["state_fetch"],
            state_location=d["state_location"],
            auth_mode=d["auth_mode"],
            token_lifetime_ms=int(d["token_lifetime_ms"]),
            watch_ttl_ms=int(d["watch_ttl_ms"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    ids = [n.id for n in cfg.networks]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate network ids")
    for net_id in (cfg.home, cfg.visited):
        cfg.network(net_id)
    if cfg.home == cfg.visited:
        raise ConfigError("home and visited network must differ")
    if not cfg.subscribers:
        raise ConfigError("at least one subscriber is required")
    if not cfg.apps:
        raise ConfigError("at least one app is required")
    for s in cfg.subscribers:
        home = cfg.network(s.home)
        if not s.imsi.startswith(home.plmn):
            raise ConfigError(f"subscriber {s.imsi} does not carry its home PLMN {home.plmn}")
        if len(_hex(s.k, f"subscriber {s.imsi} k")) != 32:
            raise ConfigError(f"subscriber {s.imsi}: k must be 32 bytes")
    for a in cfg.apps:
        _hex(a.key, f"app {a.id} key")
        if a.state_size_bytes < 0:
            raise ConfigError(f"app {a.id}: negative state size")
    if cfg.token_lifetime_ms <= 0 or cfg.watch_ttl_ms <= 0:
        raise ConfigError("token lifetime and watch TTL must be positive")


def _hex(text: str, what: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} is not hex") from None


def default_config() -> ScenarioConfig:
    return from_dict({})


FIXTURES = Path(__file__).parent / "fixtures"
# shipped config overlays, addressable by name wherever a config path is accepted
NAMED_CONFIGS = {"paper-calibrated": FIXTURES / "paper_calibrated.json"}


def load_config(path: Optional[str | Path]) -> ScenarioConfig:
    """Load a config overlay from ``path`` (or a name in NAMED_CONFIGS); None -> defaults."""
    if path is None:
        return default_config()
    path = NAMED_CONFIGS.get(str(path), path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(doc)


def print_default() -> str:
    return json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True) + "\n"

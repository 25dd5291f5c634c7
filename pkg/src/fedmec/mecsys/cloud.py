"""Cloud-hosted identity provider and state store used by the baseline scenarios.

The cloud has no S1 visibility, so every identity decision is delegated to
the OIDC module of the network that owns the requesting IP address.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from fedmec import names
from fedmec.entity import Entity
from fedmec.errors import FedMecError, SubjectIpMismatch, UnknownSourceIP
from fedmec.mecsys import tokens
from fedmec.mecsys.oidc import DEFAULT_TOKEN_LIFETIME_MS
from fedmec.wire import (
    AppState,
    IdentityAnswer,
    IdentityQuery,
    LoginFailed,
    OidcAuthRequest,
    OidcAuthResponse,
    StateFetchReq,
    StateFetchResp,
    StateStore,
    TokenValidateReq,
    TokenValidateResp,
)

log = logging.getLogger(__name__)


@dataclass
class _Pending:
    kind: str  # "login" | "validate"
    requester: str
    app_id: str
    source_ip: str
    flow_id: str = ""
    subject: str = ""


class Cloud(Entity):
    def __init__(self, app_keys: dict[str, bytes], ip_prefixes: dict[str, str],
                 token_lifetime_ms: int = DEFAULT_TOKEN_LIFETIME_MS, seed: int = 0):
        super().__init__(names.CLOUD)
        self.app_keys = dict(app_keys)
        self.ip_prefixes = dict(ip_prefixes)  # "10.0.2" -> network id
        self.token_lifetime_ms = token_lifetime_ms
        self.states: dict[tuple[str, str], AppState] = {}
        self._pending: dict[str, _Pending] = {}
        self._rng = random.Random(f"cloud:{seed}")

    def network_for_ip(self, ip: str) -> str:
        prefix = ip.rsplit(".", 1)[0]
        try:
            return self.ip_prefixes[prefix]
        except KeyError:
            raise UnknownSourceIP(ip) from None

    def _query(self, net, pending: _Pending) -> None:
        owner = self.network_for_ip(pending.source_ip)
        flow = self.next_flow()
        self._pending[flow] = pending
        self.send(net, names.oidc(owner), IdentityQuery(names.CLOUD, owner, flow, pending.source_ip, pending.app_id))

    # -- identity provider

    def on_OidcAuthRequest(self, net, msg: OidcAuthRequest, src, dst, frame):
        try:
            self._query(net, _Pending("login", src, msg.client_id, src))
        except FedMecError as exc:
            self.send(net, src, LoginFailed(type(exc).__name__))

    def on_TokenValidateReq(self, net, msg: TokenValidateReq, src, dst, frame):
        try:
            key = self.app_keys[msg.app_id]
            tok = tokens.verify(msg.token, msg.app_id, key, net.now_ms)
            self._query(net, _Pending("validate", src, msg.app_id, msg.source_ip, msg.flow_id, tok.subject))
        except KeyError:
            self.send(net, src, TokenValidateResp(msg.flow_id, "", "NotEntitled"))
        except FedMecError as exc:
            self.send(net, src, TokenValidateResp(msg.flow_id, "", type(exc).__name__))

    def on_IdentityAnswer(self, net, msg: IdentityAnswer, src, dst, frame):
        p = self._pending.pop(msg.flow_id, None)
        if p is None:
            log.warning("cloud: unsolicited identity answer %s", msg.flow_id)
            return
        if p.kind == "login":
            if msg.error:
                self.send(net, p.requester, LoginFailed(msg.error))
                return
            tok = tokens.sign(self.app_keys[p.app_id], names.CLOUD, msg.imsi, p.app_id, net.now_ms,
                              self.token_lifetime_ms, self._rng.randbytes(16))
            self.send(net, p.requester, OidcAuthResponse(tok.encode()))
            return
        error = msg.error
        if not error and msg.imsi != p.subject:
            error = SubjectIpMismatch.__name__
        self.send(net, p.requester, TokenValidateResp(p.flow_id, "" if error else msg.imsi, error))

    # -- state store

    def on_StateStore(self, net, msg: StateStore, src, dst, frame):
        st = msg.app_state
        key = (st.user_id, st.app_id)
        prev = self.states.get(key)
        if prev is None or prev.version <= st.version:
            self.states[key] = st

    def on_StateFetchReq(self, net, msg: StateFetchReq, src, dst, frame):
        st = self.states.get((msg.user_id, msg.app_id))
        error = "" if st is not None else "SourceStateGone"
        self.send(net, src, StateFetchResp(names.CLOUD, msg.source_network, msg.flow_id, st, error))

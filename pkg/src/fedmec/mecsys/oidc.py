"""Cellular OIDC module: identifies UEs by source IP and issues/checks tokens."""

from __future__ import annotations

import logging
import random
from typing import Callable

from fedmec import names
from fedmec.entity import Entity
from fedmec.errors import (
    FedMecError,
    NotEntitled,
    SubjectIpMismatch,
    SubscriptionPending,
    UnknownSourceIP,
)
from fedmec.mecsys import tokens
from fedmec.mecsys.datastore import Datastore
from fedmec.wire import (
    IdentityAnswer,
    IdentityQuery,
    LoginFailed,
    OidcAuthRequest,
    OidcAuthResponse,
    SubscriptionFetchReq,
    TokenValidateReq,
    TokenValidateResp,
)

log = logging.getLogger(__name__)

DEFAULT_TOKEN_LIFETIME_MS = 300_000


class OidcModule(Entity):
    def __init__(self, network: str, datastore: Datastore, app_keys: dict[str, bytes],
                 token_lifetime_ms: int = DEFAULT_TOKEN_LIFETIME_MS, seed: int = 0):
        super().__init__(names.oidc(network))
        self.network = network
        self.ds = datastore
        self.app_keys = dict(app_keys)
        self.token_lifetime_ms = token_lifetime_ms
        self._rng = random.Random(f"oidc:{network}:{seed}")
        self._parked: dict[str, list[Callable]] = {}
        self._fetching: dict[str, str] = {}

    # -- synchronous operations

    def identify(self, source_ip: str, net=None) -> str:
        """IMSI bound to source_ip, provided the subscriber is entitled."""
        ctx = self.ds.context_for_ip(source_ip)
        if ctx is None:
            raise UnknownSourceIP(source_ip)
        if net is not None:
            net.mark("M1.need")
        entry = self.ds.subscription(ctx.imsi)
        if entry is None:
            raise SubscriptionPending(ctx.imsi)
        if not entry.record.mec_entitlement:
            raise NotEntitled(ctx.imsi)
        return ctx.imsi

    def oidc_authenticate(self, app_id: str, source_ip: str, now_ms: float, net=None) -> str:
        imsi = self.identify(source_ip, net)
        tok = tokens.sign(self.app_keys[app_id], self.network, imsi, app_id, now_ms,
                          self.token_lifetime_ms, self._rng.randbytes(16))
        self.ds.record_issue(now_ms, imsi, app_id, source_ip)
        return tok.encode()

    def validate_token(self, app_id: str, token: str, source_ip: str, now_ms: float, net=None) -> str:
        key = self.app_keys.get(app_id)
        if key is None:
            raise NotEntitled(f"unknown app {app_id}")
        tok = tokens.verify(token, app_id, key, now_ms)
        ctx = self.ds.context_for_ip(source_ip)
        if ctx is None or ctx.imsi != tok.subject:
            raise SubjectIpMismatch(f"{source_ip} is not bound to {tok.subject}")
        return self.identify(source_ip, net)

    # -- message handlers

    def _run(self, net, attempt: Callable[[], None], on_error: Callable[[FedMecError], None]) -> None:
        try:
            attempt()
        except SubscriptionPending as pending:
            imsi = str(pending)
            self._parked.setdefault(imsi, []).append(lambda: self._run(net, attempt, on_error))
            if imsi not in self._fetching.values():
                flow = self.next_flow()
                self._fetching[flow] = imsi
                self.send(net, names.mecmgr(self.network), SubscriptionFetchReq(self.network, self.network, flow, imsi))
        except FedMecError as exc:
            on_error(exc)

    def on_SubscriptionFetchResp(self, net, msg, src, dst, frame):
        imsi = self._fetching.pop(msg.flow_id, None)
        if imsi is None:
            return
        retries = self._parked.pop(imsi, [])
        if msg.error:
            log.warning("%s: subscription for %s failed: %s", self.name, imsi, msg.error)
        for retry in retries:
            retry()

    def on_OidcAuthRequest(self, net, msg: OidcAuthRequest, src, dst, frame):
        def attempt():
            token = self.oidc_authenticate(msg.client_id, src, net.now_ms, net)
            self.send(net, src, OidcAuthResponse(token))

        self._run(net, attempt, lambda exc: self.send(net, src, LoginFailed(type(exc).__name__)))

    def on_TokenValidateReq(self, net, msg: TokenValidateReq, src, dst, frame):
        def attempt():
            subject = self.validate_token(msg.app_id, msg.token, msg.source_ip, net.now_ms, net)
            self.send(net, src, TokenValidateResp(msg.flow_id, subject))

        def fail(exc):
            self.send(net, src, TokenValidateResp(msg.flow_id, "", type(exc).__name__))

        self._run(net, attempt, fail)

    def on_IdentityQuery(self, net, msg: IdentityQuery, src, dst, frame):
        def attempt():
            imsi = self.identify(msg.source_ip, net)
            self.send(net, src, IdentityAnswer(self.network, msg.source_network, msg.flow_id, imsi))

        def fail(exc):
            self.send(net, src, IdentityAnswer(self.network, msg.source_network, msg.flow_id, "", type(exc).__name__))

        self._run(net, attempt, fail)

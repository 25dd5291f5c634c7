"""MEC application server: login, sessions, resumable state."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from fedmec import names
from fedmec.entity import Entity
from fedmec.errors import NoSession
from fedmec.mecsys import tokens
from fedmec.mecsys.datastore import Datastore
from fedmec.wire import (
    AppState,
    Data,
    LoginFailed,
    LoginOk,
    MobilityRegister,
    OidcAuthRequest,
    Resume,
    SessionNotice,
    StateFetchReq,
    StateFetchResp,
    StateStore,
    TokenPresent,
    TokenValidateReq,
    TokenValidateResp,
)

log = logging.getLogger(__name__)

DEFAULT_CAPABILITIES = ("resume", "state")


@dataclass(frozen=True)
class Session:
    session_id: str
    user_id: str
    app_id: str
    network: str
    capabilities: tuple[str, ...]
    ue_ip: str
    established_at_ms: float
    token_nonce: str

    def comparable(self) -> tuple:
        """Session fields that must not depend on how it was established."""
        return (self.user_id, self.app_id, self.network, self.capabilities)


class AppServer(Entity):
    """One application instance on a MEC platform.

    ``auth_server`` is the endpoint validating tokens and running the OIDC
    login: the platform's OIDC module or the cloud IdP.  ``cloud_sync``
    uploads every state update to the cloud store as well.
    """

    def __init__(self, app_id: str, network: str, datastore: Datastore, auth_server: str,
                 capabilities: tuple[str, ...] = DEFAULT_CAPABILITIES, cloud_sync: bool = False):
        super().__init__(names.app(app_id, network))
        self.app_id = app_id
        self.network = network
        self.ds = datastore
        self.auth_server = auth_server
        self.capabilities = tuple(capabilities)
        self.cloud_sync = cloud_sync
        self.sessions: dict[str, Session] = {}
        self.states: dict[str, AppState] = {}
        self.evicted: set[str] = set()
        self._validating: dict[str, tuple[str, str]] = {}
        self._resuming: dict[str, list[str]] = {}  # flow -> [ue ip]
        self._state_flows: dict[str, str] = {}  # flow -> user
        self._session_seq = 0

    @property
    def ams(self) -> str:
        return names.ams(self.network)

    # -- state interface

    def app_update_state(self, net, session_id: str, blob: bytes) -> AppState:
        session = self.sessions.get(session_id)
        if session is None or self.ds.active(session.user_id) is None:
            raise NoSession(session_id)
        prev = self.states.get(session.user_id)
        state = AppState(session.user_id, self.app_id, (prev.version if prev else 0) + 1,
                         bytes(blob), int(net.now_ms))
        self.states[session.user_id] = state
        self.evicted.discard(session.user_id)
        if self.cloud_sync:
            self.send(net, names.CLOUD, StateStore(self.network, names.CLOUD, state))
        return state

    def evict(self, user_id: str) -> None:
        self.states.pop(user_id, None)
        self.evicted.add(user_id)

    def adopt_state(self, state: AppState) -> None:
        """Keep a handed-over state unless a newer local version exists."""
        prev = self.states.get(state.user_id)
        if prev is None or prev.version <= state.version:
            self.states[state.user_id] = state

    # -- login

    def on_LoginStart(self, net, msg, src, dst, frame):
        self.send(net, src, OidcAuthRequest(self.app_id, self.auth_server))

    def on_TokenPresent(self, net, msg: TokenPresent, src, dst, frame):
        flow = self.next_flow()
        self._validating[flow] = (src, msg.token)
        self.send(net, self.auth_server, TokenValidateReq(flow, self.app_id, msg.token, src))

    def on_TokenValidateResp(self, net, msg: TokenValidateResp, src, dst, frame):
        pending = self._validating.pop(msg.flow_id, None)
        if pending is None:
            log.warning("%s: unsolicited validation answer %s", self.name, msg.flow_id)
            return
        ue_ip, token = pending
        if msg.error:
            self.send(net, ue_ip, LoginFailed(msg.error))
            return
        self._session_seq += 1
        nonce = tokens.parse(token).nonce.hex()
        session = Session(f"{self.name};{self._session_seq:08d}", msg.subject, self.app_id,
                          self.network, self.capabilities, ue_ip, net.now_ms, nonce)
        self.sessions[session.session_id] = session
        net.mark("U2.end")
        self.send(net, ue_ip, LoginOk(session.session_id))
        self.send(net, names.mecmgr(self.network), SessionNotice(self.network, self.network, msg.subject, self.app_id))
        net.mark("M3.start")
        self.send(net, self.ams, MobilityRegister(self.network, self.network, msg.subject, self.app_id))

    # -- session resumption

    def on_Resume(self, net, msg: Resume, src, dst, frame):
        session = self.sessions.get(msg.session_id)
        if session is None:
            self.send(net, src, LoginFailed(NoSession.__name__))
            return
        net.mark("state.demand")
        state = self.states.get(session.user_id)
        if state is not None:
            self._deliver(net, src, state)
            return
        flow = self.next_flow()
        self._state_flows[flow] = session.user_id
        self._resuming[flow] = [src]
        self.send(net, self.ams, StateFetchReq(self.network, self.network, flow, session.user_id, self.app_id))

    def _deliver(self, net, ue_ip: str, state: AppState) -> None:
        net.mark("state.delivered")
        self.send(net, ue_ip, Data(state.blob))

    def on_StateFetchResp(self, net, msg: StateFetchResp, src, dst, frame):
        self._state_flows.pop(msg.flow_id, None)
        waiting = self._resuming.pop(msg.flow_id, [])
        if msg.app_state is None:
            log.warning("%s: state unavailable: %s", self.name, msg.error)
            for ue_ip in waiting:
                self.send(net, ue_ip, LoginFailed(msg.error or "NoState"))
            return
        self.adopt_state(msg.app_state)
        for ue_ip in waiting:
            self._deliver(net, ue_ip, self.states[msg.app_state.user_id])

    def on_StateFetchReq(self, net, msg: StateFetchReq, src, dst, frame):
        """Source-side state interface, called by the local AMS."""
        state = self.states.get(msg.user_id)
        error = "" if state is not None else "SourceStateGone"
        self.send(net, src, StateFetchResp(msg.destination_network, msg.source_network, msg.flow_id, state, error))

    def session_for(self, user_id: str) -> Optional[Session]:
        hits = [s for s in self.sessions.values() if s.user_id == user_id]
        return hits[-1] if hits else None

"""System-wide subscriber datastore of one MEC system.

Holds the identity triples learnt from S1 (IMSI, TEID, IP), the
subscription entries fetched from the local HSS or the home MEC, and an
audit log of issued tokens.  One logical store per MEC system; every
entity of that system reads it in-process.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

from fedmec.errors import InvariantViolation
from fedmec.wire import SubscriptionRecord

LOCAL_HSS = "local-HSS"
HOME_MEC = "home-MEC-via-proxy"


@dataclass
class UEContext:
    imsi: str
    teid: int
    ue_ip: str
    home_plmn: str
    active: bool
    attached_at_ms: float


@dataclass(frozen=True)
class SubscriberDatastoreEntry:
    imsi: str
    record: SubscriptionRecord
    source: str
    fetched_at_ms: float


class Datastore:
    def __init__(self, network: str, plmn: str):
        self.network = network
        self.plmn = plmn
        self.contexts: dict[str, UEContext] = {}
        self.subscriptions: dict[str, SubscriberDatastoreEntry] = {}
        self.issued: list[tuple[float, str, str, str]] = []
        self._lock = threading.RLock()

    def is_foreign(self, imsi: str) -> bool:
        return not imsi.startswith(self.plmn)

    # -- UE contexts

    def activate(self, imsi: str, teid: int, ue_ip: str, home_plmn: str, now_ms: float) -> UEContext:
        with self._lock:
            for other in self.contexts.values():
                if other.active and other.ue_ip == ue_ip and other.imsi != imsi:
                    other.active = False
            ctx = UEContext(imsi, teid, ue_ip, home_plmn, True, now_ms)
            self.contexts[imsi] = ctx
            return ctx

    def deactivate(self, imsi: str) -> Optional[UEContext]:
        with self._lock:
            ctx = self.contexts.get(imsi)
            if ctx is not None:
                ctx.active = False
            return ctx

    def update_ip(self, imsi: str, ue_ip: str) -> Optional[UEContext]:
        with self._lock:
            ctx = self.contexts.get(imsi)
            if ctx is not None and ctx.active:
                ctx.ue_ip = ue_ip
            return ctx

    def context_for_ip(self, ue_ip: str) -> Optional[UEContext]:
        with self._lock:
            hits = [c for c in self.contexts.values() if c.active and c.ue_ip == ue_ip]
            if len(hits) > 1:
                raise InvariantViolation(f"ambiguous active contexts for {ue_ip}")
            return hits[0] if hits else None

    def active(self, imsi: str) -> Optional[UEContext]:
        with self._lock:
            ctx = self.contexts.get(imsi)
            return ctx if ctx is not None and ctx.active else None

    # -- subscriptions

    def store_subscription(self, record: SubscriptionRecord, now_ms: float) -> SubscriberDatastoreEntry:
        source = HOME_MEC if self.is_foreign(record.imsi) else LOCAL_HSS
        entry = SubscriberDatastoreEntry(record.imsi, record, source, now_ms)
        with self._lock:
            self.subscriptions[record.imsi] = entry
        return entry

    def subscription(self, imsi: str) -> Optional[SubscriberDatastoreEntry]:
        with self._lock:
            return self.subscriptions.get(imsi)

    def record_issue(self, now_ms: float, subject: str, audience: str, ue_ip: str) -> None:
        with self._lock:
            self.issued.append((now_ms, subject, audience, ue_ip))

    def snapshot(self) -> dict:
        """Comparable view of the store without timestamps."""
        with self._lock:
            return {
                "subscriptions": {k: (e.record, e.source) for k, e in sorted(self.subscriptions.items())},
                "contexts": {
                    k: (c.teid, c.ue_ip, c.home_plmn, c.active) for k, c in sorted(self.contexts.items())
                },
            }

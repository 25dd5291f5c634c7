"""Message-driven actor base shared by every simulated entity."""

from __future__ import annotations

import logging

from fedmec.errors import MalformedFrame
from fedmec.wire import Message, decode_frame, encode_frame

log = logging.getLogger(__name__)


class Entity:
    """Decodes each delivered frame and dispatches to ``on_<MessageName>``.

    Handlers receive ``(net, msg, src, dst, frame)`` and must never wait for
    another entity; multi-step flows keep continuations keyed by flow id.
    """

    def __init__(self, name: str):
        self.name = name
        self.inbox: list[tuple[float, str, Message]] = []
        self._flow_seq = 0

    def on_frame(self, net, src: str, dst: str, frame: bytes) -> None:
        try:
            msg, used = decode_frame(frame)
        except MalformedFrame:
            log.warning("%s: dropping malformed frame from %s", self.name, src)
            return
        self.inbox.append((net.now_ms, src, msg))
        handler = getattr(self, f"on_{msg.name}", None)
        if handler is None:
            log.warning("%s: no handler for %s from %s", self.name, msg.name, src)
            return
        handler(net, msg, src, dst, frame)

    def send(self, net, dst: str, msg: Message, src: str | None = None) -> None:
        net.send(src or self.name, dst, encode_frame(msg))

    def next_flow(self) -> str:
        self._flow_seq += 1
        return f"{self.name}/{self._flow_seq:06d}"

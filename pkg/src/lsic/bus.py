"""Confidence gating and pub/sub command fan-out.

A prediction only becomes bus traffic when its confidence clears the gate
threshold (default 0.75, boundary accepts) AND its (object, action) pair
is one a real device supports. The loopback bus implements the same
contract as the MQTT client so the end-to-end path runs without a broker:
topic filters with the "+" single-level wildcard, per-source seq ordering,
and serial handler invocation.
"""

from __future__ import annotations

import itertools
import json
import threading
import time
from collections import deque
from dataclasses import dataclass

from .errors import ConfigInvalid, NotConnected
from .labels import CANONICAL
from .nn.model import Prediction

COMMAND_TOPIC = "rpi/broadcast"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CommandMsg:
    """One gated intent command on the wire."""

    intent: str
    action: str
    object: str
    confidence: float
    source: str
    seq: int
    ts_ms: int
    v: int = SCHEMA_VERSION


def encode_command(msg: CommandMsg) -> bytes:
    """Canonical wire form: fixed field order, so equal messages are
    byte-identical."""
    return json.dumps({
        "v": msg.v, "intent": msg.intent, "action": msg.action,
        "object": msg.object, "confidence": msg.confidence,
        "source": msg.source, "seq": msg.seq, "ts_ms": msg.ts_ms,
    }, separators=(",", ":")).encode("utf-8")


def decode_command(payload: bytes) -> CommandMsg:
    d = json.loads(payload.decode("utf-8"))
    return CommandMsg(intent=d["intent"], action=d["action"], object=d["object"],
                      confidence=d["confidence"], source=d["source"],
                      seq=d["seq"], ts_ms=d["ts_ms"], v=d["v"])


@dataclass(frozen=True)
class GateConfig:
    threshold: float = 0.75

    def validate(self) -> "GateConfig":
        if not (0.0 < self.threshold <= 1.0):
            raise ConfigInvalid("gate threshold must be in (0, 1]")
        return self


LOW_CONFIDENCE = "low_confidence"
INVALID_PAIR = "invalid_pair"


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    msg: CommandMsg | None = None
    reason: str | None = None


def gate(pred: Prediction, cfg: GateConfig, *, source: str, seq: int,
         ts_ms: int | None = None) -> GateResult:
    """Accept with a populated CommandMsg, or reject with a reason.

    Confidence exactly at the threshold accepts; pairs no device supports
    are rejected regardless of confidence.
    """
    cfg.validate()
    if (pred.object is None or pred.action is None
            or not CANONICAL.is_valid_pair(pred.object, pred.action)):
        return GateResult(False, reason=INVALID_PAIR)
    if pred.confidence < cfg.threshold:
        return GateResult(False, reason=LOW_CONFIDENCE)
    msg = CommandMsg(intent=pred.intent, action=pred.action, object=pred.object,
                     confidence=pred.confidence, source=source, seq=seq,
                     ts_ms=int(time.time() * 1000) if ts_ms is None else ts_ms)
    return GateResult(True, msg=msg)


def topic_matches(filter_: str, topic: str) -> bool:
    """MQTT-style match with the "+" single-level wildcard."""
    f_parts = filter_.split("/")
    t_parts = topic.split("/")
    if len(f_parts) != len(t_parts):
        return False
    return all(f == "+" or f == t for f, t in zip(f_parts, t_parts))


@dataclass(frozen=True)
class DeliveryReceipt:
    topic: str
    delivery_id: int


class Subscription:
    """Handle returned by subscribe(); drop (close) to stop deliveries."""

    def __init__(self, bus, filter_: str, handler):
        self.bus = bus
        self.filter = filter_
        self.handler = handler
        self.active = True

    def close(self) -> None:
        self.active = False


class LoopbackBus:
    """In-process bus with the external client's contract.

    Delivery happens on the publishing thread; a publish issued from
    inside a handler is queued and drained by the outer dispatch loop, so
    handlers never nest and per-source order is preserved.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._pending: deque = deque()
        self._dispatching = False
        self._delivery_ids = itertools.count(1)
        self._connected = True

    def close(self) -> None:
        self._connected = False

    @property
    def connected(self) -> bool:
        return self._connected

    def subscribe(self, topic_filter: str, handler) -> Subscription:
        if not self._connected:
            raise NotConnected("bus is closed")
        sub = Subscription(self, topic_filter, handler)
        with self._lock:
            self._subs.append(sub)
        return sub

    def publish(self, topic: str, payload: bytes) -> DeliveryReceipt:
        if not self._connected:
            raise NotConnected("bus is closed")
        delivery_id = next(self._delivery_ids)
        with self._lock:
            self._pending.append((topic, bytes(payload)))
            if self._dispatching:
                return DeliveryReceipt(topic, delivery_id)
            self._dispatching = True
        try:
            while True:
                with self._lock:
                    if not self._pending:
                        self._dispatching = False
                        break
                    item_topic, item_payload = self._pending.popleft()
                    subs = [s for s in self._subs
                            if s.active and topic_matches(s.filter, item_topic)]
                for sub in subs:
                    sub.handler(item_topic, item_payload)
        except BaseException:
            with self._lock:
                self._dispatching = False
            raise
        return DeliveryReceipt(topic, delivery_id)


def publish_command(bus, msg: CommandMsg, topic: str = COMMAND_TOPIC) -> DeliveryReceipt:
    """Serialize and publish one gated command."""
    return bus.publish(topic, encode_command(msg))

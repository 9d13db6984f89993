"""Minimal MQTT 3.1.1 client: QoS 1, clean session, "+" filters.

Implements exactly the subset the command bus needs — CONNECT/CONNACK,
PUBLISH/PUBACK (QoS 1), SUBSCRIBE/SUBACK, UNSUBSCRIBE/UNSUBACK,
PINGREQ/PINGRESP, DISCONNECT — over a plain TCP socket. Packet codecs are
module-level functions so they can be exercised without a broker.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass

from .bus import DeliveryReceipt, Subscription, topic_matches
from .errors import NotConnected, PublishTimeout

CONNECT, CONNACK, PUBLISH, PUBACK = 1, 2, 3, 4
SUBSCRIBE, SUBACK, UNSUBSCRIBE, UNSUBACK = 8, 9, 10, 11
PINGREQ, PINGRESP, DISCONNECT = 12, 13, 14

PROTOCOL_NAME = b"\x00\x04MQTT"
PROTOCOL_LEVEL = 4


def encode_varint(n: int) -> bytes:
    if n < 0 or n > 268_435_455:
        raise ValueError("remaining length out of range")
    out = bytearray()
    while True:
        n, digit = divmod(n, 128)
        out.append(digit | (0x80 if n else 0))
        if not n:
            return bytes(out)


def decode_varint(data: bytes, pos: int) -> tuple[int, int]:
    """Returns (value, next_pos); raises ValueError on malformed input."""
    value, shift = 0, 0
    for _ in range(4):
        if pos >= len(data):
            raise ValueError("truncated varint")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
    raise ValueError("varint too long")


def _mqtt_string(s: str | bytes) -> bytes:
    b = s.encode("utf-8") if isinstance(s, str) else s
    return struct.pack(">H", len(b)) + b


def make_packet(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_varint(len(body)) + body


def encode_connect(client_id: str, keepalive: int = 60, clean_session: bool = True) -> bytes:
    flags = 0x02 if clean_session else 0x00
    body = (PROTOCOL_NAME + bytes([PROTOCOL_LEVEL, flags])
            + struct.pack(">H", keepalive) + _mqtt_string(client_id))
    return make_packet(CONNECT, 0, body)


def encode_publish(topic: str, payload: bytes, packet_id: int | None,
                   qos: int = 1, dup: bool = False) -> bytes:
    flags = (0x08 if dup else 0) | (qos << 1)
    body = _mqtt_string(topic)
    if qos > 0:
        if packet_id is None:
            raise ValueError("QoS > 0 publish needs a packet id")
        body += struct.pack(">H", packet_id)
    return make_packet(PUBLISH, flags, body + payload)


def encode_puback(packet_id: int) -> bytes:
    return make_packet(PUBACK, 0, struct.pack(">H", packet_id))


def encode_subscribe(packet_id: int, topic_filter: str, qos: int = 1) -> bytes:
    body = struct.pack(">H", packet_id) + _mqtt_string(topic_filter) + bytes([qos])
    return make_packet(SUBSCRIBE, 0x02, body)


def encode_unsubscribe(packet_id: int, topic_filter: str) -> bytes:
    body = struct.pack(">H", packet_id) + _mqtt_string(topic_filter)
    return make_packet(UNSUBSCRIBE, 0x02, body)


def encode_pingreq() -> bytes:
    return make_packet(PINGREQ, 0, b"")


def encode_disconnect() -> bytes:
    return make_packet(DISCONNECT, 0, b"")


@dataclass(frozen=True)
class Packet:
    ptype: int
    flags: int
    body: bytes


def parse_packets(buffer: bytearray) -> list[Packet]:
    """Consume complete packets from the front of `buffer`."""
    packets = []
    while True:
        if len(buffer) < 2:
            return packets
        try:
            length, header_end = decode_varint(bytes(buffer), 1)
        except ValueError:
            return packets
        total = header_end + length
        if len(buffer) < total:
            return packets
        first = buffer[0]
        packets.append(Packet(first >> 4, first & 0x0F, bytes(buffer[header_end:total])))
        del buffer[:total]


def parse_publish(pkt: Packet) -> tuple[str, bytes, int | None, int]:
    """Returns (topic, payload, packet_id, qos)."""
    qos = (pkt.flags >> 1) & 0x03
    (topic_len,) = struct.unpack_from(">H", pkt.body, 0)
    topic = pkt.body[2:2 + topic_len].decode("utf-8")
    pos = 2 + topic_len
    packet_id = None
    if qos > 0:
        (packet_id,) = struct.unpack_from(">H", pkt.body, pos)
        pos += 2
    return topic, pkt.body[pos:], packet_id, qos


def parse_broker_url(url: str) -> tuple[str, int]:
    url = url.strip()
    if url.startswith("mqtt://"):
        url = url[len("mqtt://"):]
    host, _, port = url.partition(":")
    return host or "127.0.0.1", int(port) if port else 1883


class MqttClient:
    """QoS-1 clean-session client over TCP; same surface as LoopbackBus."""

    def __init__(self, host: str, port: int = 1883, client_id: str = "lsic",
                 keepalive: int = 60, ack_timeout: float = 5.0):
        self.host = host
        self.port = port
        self.client_id = client_id
        self.keepalive = keepalive
        self.ack_timeout = ack_timeout
        self._sock: socket.socket | None = None
        self._reader: threading.Thread | None = None
        self._pinger: threading.Thread | None = None
        self._stop = threading.Event()
        self._send_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._acks: dict[tuple[int, int], threading.Event] = {}
        self._next_packet_id = 1
        self._connack = threading.Event()
        self._connack_code: int | None = None

    @classmethod
    def from_url(cls, url: str, client_id: str = "lsic", **kwargs) -> "MqttClient":
        host, port = parse_broker_url(url)
        return cls(host, port, client_id=client_id, **kwargs)

    @property
    def connected(self) -> bool:
        return self._sock is not None and not self._stop.is_set()

    def connect(self) -> "MqttClient":
        try:
            self._sock = socket.create_connection((self.host, self.port),
                                                  timeout=self.ack_timeout)
        except OSError as exc:
            raise NotConnected(f"cannot reach broker {self.host}:{self.port}: {exc}") from None
        self._sock.settimeout(0.2)
        self._stop.clear()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._send(encode_connect(self.client_id, self.keepalive))
        if not self._connack.wait(self.ack_timeout) or self._connack_code != 0:
            self.close()
            raise NotConnected(f"broker refused connection (rc={self._connack_code})")
        self._pinger = threading.Thread(target=self._ping_loop, daemon=True)
        self._pinger.start()
        return self

    def close(self) -> None:
        if self._sock is not None and not self._stop.is_set():
            try:
                self._send(encode_disconnect())
            except NotConnected:
                pass
        self._stop.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _send(self, data: bytes) -> None:
        with self._send_lock:
            if self._sock is None:
                raise NotConnected("client is not connected")
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise NotConnected(f"send failed: {exc}") from None

    def _alloc_packet_id(self, ack_type: int) -> tuple[int, threading.Event]:
        with self._state_lock:
            pid = self._next_packet_id
            self._next_packet_id = pid % 65535 + 1
            event = threading.Event()
            self._acks[(ack_type, pid)] = event
        return pid, event

    def publish(self, topic: str, payload: bytes) -> DeliveryReceipt:
        """QoS-1 publish; blocks until PUBACK or raises PublishTimeout."""
        if not self.connected:
            raise NotConnected("client is not connected")
        pid, event = self._alloc_packet_id(PUBACK)
        self._send(encode_publish(topic, payload, pid, qos=1))
        if not event.wait(self.ack_timeout):
            with self._state_lock:
                self._acks.pop((PUBACK, pid), None)
            raise PublishTimeout(f"no PUBACK for packet {pid} within {self.ack_timeout}s")
        return DeliveryReceipt(topic, pid)

    def subscribe(self, topic_filter: str, handler) -> Subscription:
        if not self.connected:
            raise NotConnected("client is not connected")
        pid, event = self._alloc_packet_id(SUBACK)
        sub = Subscription(self, topic_filter, handler)
        with self._state_lock:
            self._subs.append(sub)
        self._send(encode_subscribe(pid, topic_filter, qos=1))
        if not event.wait(self.ack_timeout):
            sub.active = False
            raise PublishTimeout(f"no SUBACK for packet {pid} within {self.ack_timeout}s")
        return sub

    def _read_loop(self) -> None:
        buffer = bytearray()
        while not self._stop.is_set():
            try:
                chunk = self._sock.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            buffer += chunk
            for pkt in parse_packets(buffer):
                self._handle(pkt)

    def _handle(self, pkt: Packet) -> None:
        if pkt.ptype == CONNACK:
            self._connack_code = pkt.body[1] if len(pkt.body) >= 2 else -1
            self._connack.set()
        elif pkt.ptype in (PUBACK, SUBACK, UNSUBACK):
            (pid,) = struct.unpack_from(">H", pkt.body, 0)
            with self._state_lock:
                event = self._acks.pop((pkt.ptype, pid), None)
            if event is not None:
                event.set()
        elif pkt.ptype == PUBLISH:
            topic, payload, pid, qos = parse_publish(pkt)
            if qos > 0 and pid is not None:
                try:
                    self._send(encode_puback(pid))
                except NotConnected:
                    return
            with self._state_lock:
                subs = [s for s in self._subs
                        if s.active and topic_matches(s.filter, topic)]
            for sub in subs:
                sub.handler(topic, payload)

    def _ping_loop(self) -> None:
        interval = max(self.keepalive / 2.0, 1.0)
        while not self._stop.wait(interval):
            try:
                self._send(encode_pingreq())
            except NotConnected:
                return

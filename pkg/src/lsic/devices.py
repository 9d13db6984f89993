"""Virtual smart-home fleet: one node per device kind, driven by bus commands.

State machines are pure and deterministic: on/off and open/close are
idempotent sets, fan speed and speaker volume step by one within bounds,
and adjust-while-off is a warning no-op. Nodes deduplicate QoS-1 repeats
by (source, seq) and publish their state after every transition.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace

from .bus import COMMAND_TOPIC, CommandMsg, decode_command
from .errors import NotConnected, WrongDevice
from .labels import DEVICE_ACTIONS

FAN_SPEED_RANGE = (1, 3)
VOLUME_RANGE = (0, 10)
FAN_DEFAULT_SPEED = 2
SPEAKER_DEFAULT_VOLUME = 5

# Demo actuator behind each device kind.
ACTUATORS = {
    "alarm": "buzzer",
    "door": "servo",
    "fan": "dc motor",
    "lights": "bulb",
    "camera": "blue led",
    "tv": "yellow led",
    "fridge": "red led",
    "speaker": "speaker",
}


@dataclass(frozen=True)
class DeviceState:
    """Snapshot of one device; fields beyond `power`/`position` apply only
    to the kinds that have them (fan speed, speaker volume)."""

    kind: str
    power: str | None = None          # "on" | "off"
    position: str | None = None       # door: "open" | "closed"
    speed: int | None = None          # fan, defined only while on
    volume: int | None = None         # speaker, defined only while on

    def as_dict(self) -> dict:
        out = {"kind": self.kind}
        for k in ("power", "position", "speed", "volume"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


def initial_state(kind: str) -> DeviceState:
    if kind == "door":
        return DeviceState(kind=kind, position="closed")
    return DeviceState(kind=kind, power="off")


@dataclass(frozen=True)
class Effect:
    """What the actuation did (or why nothing happened)."""

    description: str
    warning: bool = False


def apply_command(state: DeviceState, msg: CommandMsg) -> tuple[DeviceState, Effect]:
    """Deterministic transition for one command against one device."""
    if msg.object != state.kind:
        raise WrongDevice(f"{state.kind} node got a command for {msg.object!r}")
    action = msg.action
    if action not in DEVICE_ACTIONS[state.kind]:
        raise WrongDevice(f"{state.kind} does not support action {action!r}")
    actuator = ACTUATORS[state.kind]

    if state.kind == "door":
        position = "open" if action == "open" else "closed"
        return replace(state, position=position), Effect(f"{actuator} -> {position}")

    if action == "on":
        if state.power == "on":
            return state, Effect(f"{actuator} already on")
        new = replace(state, power="on")
        if state.kind == "fan":
            new = replace(new, speed=FAN_DEFAULT_SPEED)
        elif state.kind == "speaker":
            new = replace(new, volume=SPEAKER_DEFAULT_VOLUME)
        return new, Effect(f"{actuator} -> on")
    if action == "off":
        if state.power == "off":
            return state, Effect(f"{actuator} already off")
        return (replace(state, power="off", speed=None, volume=None),
                Effect(f"{actuator} -> off"))

    if action in ("increase_speed", "decrease_speed"):
        if state.power != "on":
            return state, Effect(f"{actuator} is off; speed unchanged", warning=True)
        step = 1 if action == "increase_speed" else -1
        speed = int(min(max(state.speed + step, FAN_SPEED_RANGE[0]), FAN_SPEED_RANGE[1]))
        return replace(state, speed=speed), Effect(f"{actuator} -> speed {speed}")
    if action in ("increase_volume", "decrease_volume"):
        if state.power != "on":
            return state, Effect(f"{actuator} is off; volume unchanged", warning=True)
        step = 1 if action == "increase_volume" else -1
        volume = int(min(max(state.volume + step, VOLUME_RANGE[0]), VOLUME_RANGE[1]))
        return replace(state, volume=volume), Effect(f"{actuator} -> volume {volume}")

    raise WrongDevice(f"{state.kind} does not understand action {action!r}")


def state_topic(device_id: str) -> str:
    return f"devices/{device_id}/state"


class DeviceNode:
    """One virtual board: subscribes to commands, keeps its state machine,
    publishes state after every transition."""

    def __init__(self, bus, kind: str, command_topic: str = COMMAND_TOPIC):
        self.bus = bus
        self.kind = kind
        self.client_id = f"esp32-{kind}"
        self.state = initial_state(kind)
        self.last_effect: Effect | None = None
        self._last_seq: dict[str, int] = {}
        self._subscription = bus.subscribe(command_topic, self._on_message)
        self._publish_state(last_seq=None)

    def _on_message(self, topic: str, payload: bytes) -> None:
        try:
            msg = decode_command(payload)
        except (ValueError, KeyError):
            return  # not a command; other traffic on the topic is ignored
        if msg.object != self.kind:
            return
        seen = self._last_seq.get(msg.source)
        if seen is not None and msg.seq <= seen:
            return  # QoS-1 duplicate or stale replay
        self._last_seq[msg.source] = msg.seq
        self.state, self.last_effect = apply_command(self.state, msg)
        self._publish_state(last_seq=msg.seq)

    def _publish_state(self, last_seq: int | None) -> None:
        payload = json.dumps({
            "device_id": self.client_id,
            "kind": self.kind,
            "state": self.state.as_dict(),
            "last_seq": last_seq,
            "ts_ms": int(time.time() * 1000),
        }, separators=(",", ":")).encode("utf-8")
        self.bus.publish(state_topic(self.client_id), payload)

    def shutdown(self) -> None:
        self._subscription.close()


class Fleet:
    """Handle over the running nodes; supports orderly shutdown."""

    def __init__(self, nodes: dict[str, DeviceNode]):
        self.nodes = nodes

    def states(self) -> dict[str, DeviceState]:
        return {kind: node.state for kind, node in self.nodes.items()}

    def shutdown(self) -> None:
        for node in self.nodes.values():
            node.shutdown()


def run_fleet(bus, kinds=None, command_topic: str = COMMAND_TOPIC) -> Fleet:
    """Bring one node per device kind online (all 8 by default)."""
    if hasattr(bus, "connected") and not bus.connected:
        raise NotConnected("bus is not connected")
    kinds = tuple(kinds) if kinds else tuple(DEVICE_ACTIONS)
    return Fleet({kind: DeviceNode(bus, kind, command_topic) for kind in kinds})

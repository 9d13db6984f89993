"""Canonical label taxonomy: 8 devices, 8 actions, 20 valid intents.

The intent string is always "<object>_<action>" in lowercase snake case.
Not every (object, action) combination is a real intent — slot-filling
models can emit pairs like ("lights", "decrease_volume") that no device
understands, so the valid pair set is the source of truth for gating.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Device -> actions it supports.
DEVICE_ACTIONS: dict[str, tuple[str, ...]] = {
    "lights": ("on", "off"),
    "alarm": ("on", "off"),
    "tv": ("on", "off"),
    "fridge": ("on", "off"),
    "camera": ("on", "off"),
    "door": ("open", "close"),
    "fan": ("on", "off", "increase_speed", "decrease_speed"),
    "speaker": ("on", "off", "increase_volume", "decrease_volume"),
}


def intent_name(obj: str, action: str) -> str:
    return f"{obj}_{action}"


@dataclass(frozen=True)
class LabelMaps:
    """Index maps for intents, actions, and objects."""

    intents: tuple[str, ...]
    actions: tuple[str, ...]
    objects: tuple[str, ...]
    valid_pairs: frozenset[tuple[str, str]]
    intent_index: dict[str, int] = field(default_factory=dict)
    action_index: dict[str, int] = field(default_factory=dict)
    object_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "intent_index", {s: i for i, s in enumerate(self.intents)})
        object.__setattr__(self, "action_index", {s: i for i, s in enumerate(self.actions)})
        object.__setattr__(self, "object_index", {s: i for i, s in enumerate(self.objects)})

    def split_intent(self, intent: str) -> tuple[str, str]:
        """Recover (object, action) from a canonical intent string."""
        for obj in self.objects:
            prefix = obj + "_"
            if intent.startswith(prefix) and intent[len(prefix):] in self.actions:
                return obj, intent[len(prefix):]
        raise KeyError(intent)

    def is_valid_pair(self, obj: str, action: str) -> bool:
        return (obj, action) in self.valid_pairs


def canonical_labels() -> LabelMaps:
    """The 20-intent / 8-action / 8-object home-automation taxonomy."""
    objects = tuple(DEVICE_ACTIONS)
    actions = ("on", "off", "open", "close",
               "increase_speed", "decrease_speed",
               "increase_volume", "decrease_volume")
    pairs = [(obj, act) for obj, acts in DEVICE_ACTIONS.items() for act in acts]
    intents = tuple(intent_name(obj, act) for obj, act in pairs)
    return LabelMaps(
        intents=intents,
        actions=actions,
        objects=objects,
        valid_pairs=frozenset(pairs),
    )


CANONICAL = canonical_labels()

"""The tunable system configuration (all pipeline stages in one flat map)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from ..errors import ConfigError

STAGES = ("pre", "rank", "re")


@dataclass(frozen=True)
class SystemConfig:
    """Immutable ``stage.name -> value`` map; equality is canonical-string equality."""

    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, value in self.params.items():
            if name.split(".", 1)[0] not in STAGES or "." not in name:
                raise ConfigError(f"parameter {name!r} lacks a stage prefix (pre./rank./re.)", name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"parameter {name!r} must be numeric, got {value!r}", name)
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(f"parameter {name!r} is not finite", name)
            clean[name] = value
        object.__setattr__(self, "params", dict(sorted(clean.items())))

    def canonical(self) -> str:
        return json.dumps(self.params, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_canonical(cls, text: str) -> "SystemConfig":
        return cls(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, SystemConfig) and self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())

    def __getitem__(self, name: str) -> float:
        try:
            return self.params[name]
        except KeyError:
            raise ConfigError(f"missing parameter {name!r}", name) from None

    def __contains__(self, name) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def get(self, name, default=None):
        return self.params.get(name, default)

    def replace(self, **updates: float) -> "SystemConfig":
        return SystemConfig({**self.params, **updates})

    def merged(self, other: Mapping[str, float] | "SystemConfig") -> "SystemConfig":
        """Return ``other`` overlaid with this config (this config wins)."""
        base = other.params if isinstance(other, SystemConfig) else other
        return SystemConfig({**base, **self.params})

    def stage(self, stage: str) -> dict[str, float]:
        prefix = stage + "."
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}
